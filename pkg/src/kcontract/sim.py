"""Closed-loop trajectories, the variational equation and k-volumes.

The integrator is the Dormand-Prince 5(4) pair with FSAL, local error
control on the fifth-order solution and cubic Hermite dense output.  The
variational matrix ``W`` (``W' = J_cl(x) W``) is co-integrated with the
state; after every accepted step it is re-orthonormalised (``W = QR``,
keep ``Q``) and ``log|det R|`` is accumulated, so k-volumes neither
underflow nor lose accuracy to column alignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .compound import mult_compound
from .model import Box, GlsModel, MetricSpec, NetworkedModel, theta_eval
from .rng import SplitMix64

__all__ = [
    "SimConfig", "Trajectory", "VolumeTrace", "SimulationError", "StepSizeError",
    "LinearField", "integrate", "integrate_with_variational", "detect_equilibrium",
    "sample_initials", "random_frame", "fig2_initials", "equilibrium_residual_1d", "equilibrium_roots",
    "write_trajectory_csv", "write_volume_csv", "log_slope",
]


class SimulationError(RuntimeError):
    pass


class StepSizeError(SimulationError):
    """Step size fell below round-off level (stiff or singular problem)."""


@dataclass(frozen=True)
class SimConfig:
    t_end: float
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    seed: int = 0
    t0: float = 0.0
    first_step: float | None = None
    fixed_step: float | None = None  # constant step size, no error control
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.fixed_step is not None and not self.fixed_step > 0:
            raise ValueError("fixed_step must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    steps: int = 0
    rejected: int = 0
    evaluations: int = 0

    def __len__(self):
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t) -> np.ndarray:
        """Cubic Hermite interpolation between accepted steps."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError("time outside the integrated interval")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        h = t1 - t0
        s = ((t - t0) / h)[..., None]
        h = h[..., None]
        y0, y1 = self.states[i], self.states[i + 1]
        f0, f1 = self.derivs[i], self.derivs[i + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


@dataclass
class VolumeTrace:
    """log k-volumes of the variational flow at accepted steps.

    ``basis[i]`` is the stored (orthonormalised) ``W`` and ``log_scale[i]``
    the accumulated log factor, so that ``W(t_i)`` spans the same subspace
    with ``|W^(k)(t_i)|_2 = |basis[i]^(k)|_2 * exp(log_scale[i])``.
    """

    k: int
    times: np.ndarray
    logvol: np.ndarray
    weighted_logvol: np.ndarray
    basis: np.ndarray
    log_scale: np.ndarray


class LinearField:
    """``x' = A x`` in the interface expected by the integrators."""

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.n = self.A.shape[0]

    def closed_loop_field(self, x):
        return np.asarray(x, dtype=float) @ self.A.T

    def closed_loop_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape).copy()


def _dynamics(model) -> tuple[Callable, Callable]:
    if isinstance(model, NetworkedModel):
        return model.field, model.jacobian
    if hasattr(model, "closed_loop_field"):
        return model.closed_loop_field, model.closed_loop_jacobian
    if isinstance(model, tuple) and len(model) == 2:
        return model
    raise TypeError(f"cannot integrate object of type {type(model).__name__}")


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [np.array(a) for a in [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _checked(fun, t, y):
    dy = fun(t, y)
    if not np.all(np.isfinite(dy)):
        raise SimulationError(f"non-finite vector field at t={t:.6g}")
    return dy


def _initial_step(fun, t0, y0, f0, rtol, atol, t_span):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_span)
    f1 = _checked(fun, t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_span)


def _dopri(fun, y0, cfg: SimConfig, on_accept=None):
    """Core loop.  ``on_accept(t, y)`` may return a replacement state."""
    t = cfg.t0
    y = np.array(y0, dtype=float)
    f = _checked(fun, t, y)
    nfev = 1
    times, states, derivs = [t], [y.copy()], [f.copy()]
    fixed = cfg.fixed_step is not None
    if fixed:
        h = cfg.fixed_step
    elif cfg.first_step is not None:
        h = cfg.first_step
    else:
        h = _initial_step(fun, t, y, f, cfg.rtol, cfg.atol, cfg.t_end - t)
        nfev += 1
    h = min(h, cfg.max_step)
    K = np.empty((7,) + y.shape)
    steps = rejected = 0
    while t < cfg.t_end:
        if steps + rejected >= cfg.max_steps:
            raise SimulationError(f"maximum number of steps ({cfg.max_steps}) reached at t={t:.6g}")
        if h < 16 * np.spacing(max(abs(t), 1.0)):
            raise StepSizeError(f"step size underflow at t={t:.6g} (problem may be stiff)")
        last = t + h >= cfg.t_end
        if last:
            h = cfg.t_end - t
        K[0] = f
        for s in range(1, 7):
            dy = _A[s] @ K[:s]
            K[s] = _checked(fun, t + _C[s] * h, y + h * dy)
        nfev += 6
        y_new = y + h * (_B5 @ K)
        if fixed:
            accept, err = True, 0.0
        else:
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = np.sqrt(np.mean((h * (_E @ K) / scale) ** 2))
            accept = err <= 1.0
        if accept:
            t = cfg.t_end if last else t + h
            y = y_new
            f = K[6].copy()
            if on_accept is not None:
                repl = on_accept(t, y)
                if repl is not None:
                    y = repl
                    f = _checked(fun, t, y)
                    nfev += 1
            times.append(t)
            states.append(y.copy())
            derivs.append(f.copy())
            steps += 1
            if not fixed:
                fac = 10.0 if err == 0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
                h = min(h * fac, cfg.max_step)
        else:
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
    return np.array(times), np.array(states), np.array(derivs), steps, rejected, nfev


def integrate(model, x0, config: SimConfig) -> Trajectory:
    """Integrate ``x' = f_cl(x)`` from ``x0`` over ``[t0, t_end]``."""
    field_fn, _ = _dynamics(model)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    times, states, derivs, steps, rej, nfev = _dopri(lambda t, x: field_fn(x), x0, config)
    return Trajectory(times, states, derivs, steps, rej, nfev)


def integrate_with_variational(model, x0, W0, config: SimConfig,
                               metric: MetricSpec | None = None,
                               renormalize: bool = True) -> tuple[Trajectory, VolumeTrace]:
    """Co-integrate the state and ``W' = J_cl(x) W`` and record k-volumes.

    ``k`` is the number of columns of ``W0``.  ``weighted_logvol`` uses
    ``Theta^(k)(x)`` from ``metric`` (identity when omitted).  With
    ``renormalize=False`` W is only rescaled by powers of two when its
    k-volume approaches underflow.
    """
    field_fn, jac_fn = _dynamics(model)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.size
    W0 = np.asarray(W0, dtype=float)
    if W0.ndim == 1:
        W0 = W0[:, None]
    if W0.shape[0] != n or W0.shape[1] > n:
        raise ValueError(f"W0 must be {n} x k with k <= {n}")
    k = W0.shape[1]
    if np.linalg.matrix_rank(W0) < k:
        raise ValueError("W0 must have full column rank")

    def rhs(t, z):
        x = z[:n]
        W = z[n:].reshape(n, k)
        return np.concatenate([field_fn(x), (jac_fn(x) @ W).ravel()])

    scale = {"log": 0.0, "lost": False}
    offsets = []

    def on_accept(t, z):
        if scale["lost"]:
            offsets.append(-math.inf)
            return None
        W = z[n:].reshape(n, k)
        if renormalize:
            Q, R = np.linalg.qr(W)
            d = np.abs(np.diag(R)).prod()
            if d == 0 or not np.isfinite(d):
                scale["lost"] = True
                offsets.append(-math.inf)
                return None
            sign = np.sign(np.diag(R))
            Q = Q * sign
            scale["log"] += float(np.sum(np.log(np.abs(np.diag(R)))))
            offsets.append(scale["log"])
            return np.concatenate([z[:n], Q.ravel()])
        vol = np.linalg.norm(mult_compound(W, k))
        if vol < 1e-280 and vol > 0:
            e = -math.frexp(vol)[1] // k
            scale["log"] -= e * k * math.log(2.0)
            offsets.append(scale["log"])
            return np.concatenate([z[:n], np.ldexp(W, e).ravel()])
        offsets.append(scale["log"])
        return None

    z0 = np.concatenate([x0, W0.ravel()])
    times, Z, dZ, steps, rej, nfev = _dopri(rhs, z0, config, on_accept)
    traj = Trajectory(times, Z[:, :n].copy(), dZ[:, :n].copy(), steps, rej, nfev)
    basis = Z[:, n:].reshape(-1, n, k)
    log_scale = np.array([0.0] + offsets)
    Wk = mult_compound(basis, k)[..., 0]
    logvol = np.log(np.linalg.norm(Wk, axis=-1)) + log_scale
    if metric is None:
        weighted = logvol.copy()
    else:
        Tk = mult_compound(theta_eval(metric, _as_model(model), traj.states).theta, k)
        weighted = np.log(np.linalg.norm((Tk @ Wk[..., None])[..., 0], axis=-1)) + log_scale
    lost = ~np.isfinite(log_scale)
    logvol[lost] = -np.inf
    weighted[lost] = -np.inf
    return traj, VolumeTrace(k, times, logvol, weighted, basis, log_scale)


def _as_model(model):
    return model.as_gls() if isinstance(model, NetworkedModel) else model


def detect_equilibrium(traj: Trajectory, model, tol: float = 1e-6) -> np.ndarray | None:
    """Final state if the field vanishes there and the state settled over
    the last 10% of the horizon, else None."""
    field_fn, _ = _dynamics(model)
    e = traj.final
    if not np.linalg.norm(field_fn(e)) < tol:
        return None
    t0, t1 = traj.times[0], traj.times[-1]
    tail = traj.times >= t1 - 0.1 * (t1 - t0)
    if np.max(np.linalg.norm(traj.states[tail] - e, axis=-1)) >= tol:
        return None
    return e.copy()


def sample_initials(box: Box, count: int, seed: int) -> np.ndarray:
    """``count`` uniform points in ``box`` from SplitMix64(seed)."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if not box.bounded:
        raise ValueError("cannot sample an unbounded box")
    return SplitMix64(seed).uniform(box.low, box.high, (count, box.dim))


def random_frame(n: int, k: int, seed: int) -> np.ndarray:
    """Seeded ``n x k`` matrix with entries uniform in [-1, 1) and full column rank."""
    rng = SplitMix64(seed)
    while True:
        W = rng.uniform(-1.0, 1.0, (n, k))
        if np.linalg.matrix_rank(W) == k:
            return W


def fig2_initials(seed: int = 42, count: int = 5) -> np.ndarray:
    """Staggered starts ``(i, i/3, i/9) + 0.5*U[0,1)^3`` for ``i = 1..count``.

    The offsets place each start near the ray ``x1 = 3 x2 = 9 x3`` on which
    the equilibria lie; for ``i = 5`` the first coordinate may exceed 5.
    """
    base = np.array([[i, i / 3, i / 9] for i in range(1, count + 1)], dtype=float)
    return base + 0.5 * SplitMix64(seed).random((count, 3))


def equilibrium_residual_1d(e3) -> float | np.ndarray:
    """``sin(9 e3) + 1/2 - (1 + e3)/(2 + e3)``; zeros give equilibria
    ``(9 e3, 3 e3, e3)`` of the three-state biochemical example."""
    e3 = np.asarray(e3, dtype=float)
    out = np.sin(9 * e3) + 0.5 - (1 + e3) / (2 + e3)
    return float(out) if out.ndim == 0 else out


def equilibrium_roots(upper: float = 7.0, points: int = 8001, xtol: float = 1e-15) -> list[float]:
    """All sign-change roots of the residual on ``[0, upper]`` (plus 0)."""
    grid = np.linspace(0.0, upper, points)
    r = equilibrium_residual_1d(grid)
    roots = [0.0]
    for a, b, ra, rb in zip(grid[:-1], grid[1:], r[:-1], r[1:]):
        if a == 0.0:
            continue
        if ra == 0.0:
            roots.append(float(a))
        elif ra * rb < 0:
            roots.append(float(brentq(equilibrium_residual_1d, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)))
    return roots


def log_slope(times, values) -> float:
    """Least-squares slope of ``values`` against ``times``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    return float(np.polyfit(t, v, 1)[0])


def _write_csv(path, header: Sequence[str], rows: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    return path


def write_trajectory_csv(path, traj: Trajectory) -> Path:
    n = traj.states.shape[1]
    return _write_csv(path, ["t"] + [f"x{i + 1}" for i in range(n)],
                      np.column_stack([traj.times, traj.states]))


def write_volume_csv(path, vol: VolumeTrace) -> Path:
    return _write_csv(path, ["t", "logvol", "weighted_logvol"],
                      np.column_stack([vol.times, vol.logvol, vol.weighted_logvol]))
