"""Trajectories and k-volumes of the variational flow."""

import numpy as np

from kcontract.model import example31
from kcontract.sim import (
    SimConfig, detect_equilibrium, equilibrium_roots, fig2_initials, integrate,
    integrate_with_variational, log_slope, random_frame,
)

net = example31()
cfg = SimConfig(200.0)

# every sampled start settles on an equilibrium (9 e3, 3 e3, e3)
for i, x0 in enumerate(fig2_initials(42), start=1):
    tr = integrate(net, x0, cfg)
    print(i, np.round(x0, 3), "->", detect_equilibrium(tr, net), f"({tr.steps} steps)")

print("e3 candidates:", np.round(equilibrium_roots(), 5))

# 2-volumes shrink exponentially even though several equilibria coexist
_, vol = integrate_with_variational(net, fig2_initials(42)[0], random_frame(3, 2, 1), SimConfig(50.0))
print("log 2-volume slope:", log_slope(vol.times, vol.logvol))
