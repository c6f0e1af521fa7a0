"""Certifying k-contraction: sampled matrix inequalities and interval bounds."""

import numpy as np

from kcontract.certify import DomainGrid, certify_lti_lurie, certify_networked, certify_thm1, monotone_escalate
from kcontract.model import Box, example31, tridiagonal_chain, tridiagonal_theta

# a linear plant in feedback with a sector nonlinearity, constant metric P = I
A = -0.8 * np.eye(3) + np.array([[0, 1.0, 0], [-1, 0, 0.5], [0, -0.5, 0]])
B = C = 0.3 * np.eye(3)
cert = certify_lti_lurie(A, B, C, ["tanh(y1)", "0.5*tanh(y2)", "sin(y3)"], np.eye(3), 2,
                         DomainGrid(Box.cube(3, -5, 5), points_per_axis=5))
print(cert.summary())

# a nonlinear tridiagonal chain with a state-dependent diagonal metric
chain = tridiagonal_chain(6)
metric = tridiagonal_theta(chain)
grid = DomainGrid(chain.state_domain, chain.input_domain, points_per_axis=2, refine=500, seed=1)
for k in (1, 2, 3):
    c = certify_thm1(chain, metric, k, grid)
    print(f"chain k={k}: {c.verdict}, rate {c.rate:.4f}, conclusion holds: {c.details['conclusion_holds']}")

# networked systems: the certificate only needs derivative bounds
for label in ("implied", "literal"):
    r = monotone_escalate(example31(label), 1)
    print(f"biochemical circuit ({label} bounds): smallest certified k = {r.k_star}, slacks {r.slacks}")
print(certify_networked(example31("implied"), 2).to_json())
