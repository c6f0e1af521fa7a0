"""Sufficient conditions for k-contraction and their certificates.

Two kinds of evidence are produced:

* sampled: the "for all x, u" quantifiers are replaced by a tensor grid plus
  optional uniform random refinement (:class:`DomainGrid`).  These
  certificates resist falsification but are not proofs.
* interval: the user supplies derivative bounds (networked / biochemical
  systems) and the conditions are checked exactly on those bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .compound import add_compound, mult_compound
from .expr import VectorFunction
from .model import (
    Box, GlsModel, MetricSpec, ModelError, NetworkedModel, _as_gls, lti_lurie,
    metric_bounds, theta_eval,
)
from .rng import SplitMix64
from .spectral import singular_values_desc, sym

__all__ = [
    "Certificate", "DomainGrid", "GridCapError", "EscalationResult",
    "h_matrix", "certify_thm1", "ari_constant_theta", "certify_lti_lurie",
    "certify_networked", "certify_biochem", "monotone_escalate", "alpha_k",
    "EPS_STRICT",
]

EPS_STRICT = 1e-12
EIG_TOL = 1e-9
CONCLUSION_TOL = 1e-8
CHUNK = 20_000


class GridCapError(ValueError):
    pass


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class Certificate:
    """Outcome of one certification run.

    ``rate`` is ``(eta1 + eta2) / 2``; a certified verdict means the
    closed loop is k-contracting with that rate in the reported metric
    (for sampled evidence: on the sampled points).
    """

    k: int
    eta1: float
    eta2: float
    verdict: str
    mode: str
    worst_margin: float
    argmin_point: list | None = None
    sigma1: float | None = None
    sigma2: float | None = None
    samples: int = 0
    seed: int | None = None
    grid_shape: list | None = None
    metric: dict | None = None
    details: dict = field(default_factory=dict)
    rate: float = field(init=False)

    def __post_init__(self):
        self.rate = (self.eta1 + self.eta2) / 2
        if self.verdict not in ("certified", "not-certified"):
            raise ValueError(f"bad verdict {self.verdict!r}")
        if self.verdict == "certified" and not (self.eta1 + self.eta2 > 0 and self.worst_margin >= 0):
            raise ValueError("certified verdict requires eta1 + eta2 > 0 and a nonnegative margin")

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("eta1", "eta2", "rate", "worst_margin", "sigma1", "sigma2"):
            d[key] = _finite_or_none(d[key])
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), default=_json_default, **kw)

    def summary(self) -> str:
        lines = [
            f"mode={self.mode} k={self.k} verdict={self.verdict}",
            f"eta1={self.eta1:.6g} eta2={self.eta2:.6g} rate={self.rate:.6g}",
            f"worst_margin={self.worst_margin:.6g}",
        ]
        if "alpha_k" in self.details:
            lines.append(f"alpha_{self.k}={self.details['alpha_k']:.6g}")
        if self.samples:
            lines.append(f"samples={self.samples} (evidence: {self.details.get('evidence', 'sampled')})")
        return "\n".join(lines)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


# ------------------------------------------------------------- sampling

@dataclass(frozen=True)
class DomainGrid:
    """Sample points over the x box and, optionally, the u box.

    The tensor grid has ``points_per_axis`` points on every axis (1 = the
    centre, 0 = no grid); ``refine`` adds uniform random points drawn with
    SplitMix64(``seed``).  Without a u box, u is set to the closed-loop
    input ``-Phi(g(x))`` at each x.
    """

    x_box: Box
    u_box: Box | None = None
    points_per_axis: int = 3
    refine: int = 0
    seed: int = 0
    cap: int = 200_000

    @property
    def dims(self) -> int:
        return self.x_box.dim + (self.u_box.dim if self.u_box else 0)

    @property
    def grid_count(self) -> int:
        return self.points_per_axis ** self.dims if self.points_per_axis > 0 else 0

    @property
    def count(self) -> int:
        return self.grid_count + self.refine

    @property
    def shape(self) -> list[int]:
        return [self.points_per_axis] * self.dims

    def samples(self) -> tuple[np.ndarray, np.ndarray | None]:
        if self.count > self.cap:
            raise GridCapError(f"{self.count} samples exceed the cap of {self.cap}")
        if self.count == 0:
            raise GridCapError("grid is empty")
        boxes = [self.x_box] + ([self.u_box] if self.u_box else [])
        low = np.concatenate([b.low for b in boxes])
        high = np.concatenate([b.high for b in boxes])
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise GridCapError("sampling needs bounded boxes")
        parts = []
        P = self.points_per_axis
        if P > 0:
            axes = [np.array([(lo + hi) / 2]) if P == 1 else np.linspace(lo, hi, P)
                    for lo, hi in zip(low, high)]
            parts.append(np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(low)))
        if self.refine:
            parts.append(SplitMix64(self.seed).uniform(low, high, (self.refine, len(low))))
        pts = np.concatenate(parts, axis=0)
        n = self.x_box.dim
        return pts[:, :n], (pts[:, n:] if self.u_box else None)

    @classmethod
    def for_model(cls, model: GlsModel, points_per_axis: int = 3, refine: int = 0,
                  seed: int = 0, use_input_domain: bool = True, **kw) -> "DomainGrid":
        if model.state_domain is None:
            raise ModelError("model has no state domain to sample")
        u_box = model.input_domain if use_input_domain else None
        return cls(model.state_domain, u_box, points_per_axis, refine, seed, **kw)


# ------------------------------------------------- sampled inequality core

def _top_k(S: np.ndarray, k: int) -> np.ndarray:
    w = np.linalg.eigvalsh(sym(S))
    return w[..., S.shape[-1] - k:].sum(axis=-1)


def _blocks(model: GlsModel, metric: MetricSpec, X: np.ndarray, U: np.ndarray) -> dict:
    te = theta_eval(metric, model, X, U)
    T, Ti = te.theta, te.theta_inv
    y = model.output(X)
    fx = model.fx(X, U)
    fu = model.fu(X, U)
    gx = model.gx(X)
    Jphi = model.phiy(y)
    Jol = T @ fx @ Ti + te.dtheta_ol @ Ti
    Bt = T @ fu
    Ct = gx @ Ti
    return dict(te=te, fx=fx, fu=fu, gx=gx, Jphi=Jphi, Jol=Jol, Bt=Bt, Ct=Ct)


def h_matrix(model, metric: MetricSpec, x, u=None) -> np.ndarray:
    """``Jol~ + Jol~^T + Theta fu fu^T Theta^T + Theta^-T gx^T gx Theta^-1``.

    ``u=None`` evaluates at the closed-loop input.
    """
    model = _as_gls(model)
    x = np.asarray(x, dtype=float)
    u = model.closed_loop_input(x) if u is None else np.asarray(u, dtype=float)
    b = _blocks(model, metric, x, u)
    H = b["Jol"] + np.swapaxes(b["Jol"], -1, -2)
    H = H + b["Bt"] @ np.swapaxes(b["Bt"], -1, -2) + np.swapaxes(b["Ct"], -1, -2) @ b["Ct"]
    return sym(H)


def _side_matrices(b: dict) -> tuple[np.ndarray, np.ndarray]:
    Jphi = b["Jphi"]
    m, p = Jphi.shape[-2:]
    Bt, Ct = b["Bt"], b["Ct"]
    SB = Bt @ (Jphi @ np.swapaxes(Jphi, -1, -2) - np.eye(m)) @ np.swapaxes(Bt, -1, -2)
    SC = np.swapaxes(Ct, -1, -2) @ (np.swapaxes(Jphi, -1, -2) @ Jphi - np.eye(p)) @ Ct
    return SB, SC


def _chunks(X, U):
    for i in range(0, X.shape[0], CHUNK):
        yield X[i:i + CHUNK], U[i:i + CHUNK]


def _check_k(k: int, n: int):
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")


def _thm1_scan(model: GlsModel, metric: MetricSpec, k: int, X: np.ndarray, U: np.ndarray):
    h, b_side, c_side, jcl = [], [], [], []
    for Xc, Uc in _chunks(X, U):
        b = _blocks(model, metric, Xc, Uc)
        H = b["Jol"] + np.swapaxes(b["Jol"], -1, -2)
        H = H + b["Bt"] @ np.swapaxes(b["Bt"], -1, -2) + np.swapaxes(b["Ct"], -1, -2) @ b["Ct"]
        h.append(_top_k(H, k))
        SB, SC = _side_matrices(b)
        b_side.append(_top_k(SB, k))
        c_side.append(_top_k(SC, k))
        te = theta_eval(metric, model, Xc)
        Jt = te.theta @ model.closed_loop_jacobian(Xc) @ te.theta_inv + te.dtheta_cl @ te.theta_inv
        jcl.append(_top_k(Jt + np.swapaxes(Jt, -1, -2), k))
    return tuple(np.concatenate(a) for a in (h, b_side, c_side, jcl))


def _assemble(k, mode_prefix, h, bs, cs, jcl, X, U, sig, grid, metric, eta1=None, extra=None):
    if eta1 is None:
        eta1 = float(-h.max()) + 0.0
    eta2_b = float(-bs.max()) + 0.0
    eta2_c = float(-cs.max()) + 0.0
    side = "B" if eta2_b >= eta2_c else "C"
    eta2 = max(eta2_b, eta2_c)
    per_sample = -h - (bs if side == "B" else cs)
    i = int(np.argmin(per_sample))
    total = eta1 + eta2
    conclusion_slack = float((-total - jcl).min())
    details = {
        "evidence": "sampled",
        "eta2_B": eta2_b,
        "eta2_C": eta2_c,
        "side": side,
        "conclusion_slack": conclusion_slack,
        "conclusion_holds": conclusion_slack >= -CONCLUSION_TOL,
        "argmin_input": U[i].tolist(),
        "u_scope": "box" if grid.u_box is not None else "closed-loop",
    }
    if extra:
        details.update(extra)
    return Certificate(
        k=k, eta1=eta1, eta2=eta2,
        verdict="certified" if total > 0 else "not-certified",
        mode=mode_prefix if mode_prefix in ("ari", "lti") else f"thm1-{side}",
        worst_margin=float(per_sample[i]),
        argmin_point=X[i].tolist(),
        sigma1=sig[0], sigma2=sig[1],
        samples=int(X.shape[0]),
        seed=grid.seed if grid is not None else None,
        grid_shape=grid.shape if grid is not None else None,
        metric=metric.describe(),
        details=details,
    )


def certify_thm1(model, metric: MetricSpec, k: int, grid: DomainGrid) -> Certificate:
    """Evaluate the eigenvalue conditions on every sample.

    eta1 = -max top-k eigen-sum of H; eta2 is computed from both the B-side
    and the C-side condition and the larger value is kept.  The conclusion
    ``sum_k lambda(Jcl~ + Jcl~^T) <= -(eta1 + eta2)`` is re-checked on the
    x samples and reported in ``details``.
    """
    model = _as_gls(model)
    _check_k(k, model.n)
    X, U = grid.samples()
    if U is None:
        U = model.closed_loop_input(X)
    h, bs, cs, jcl = _thm1_scan(model, metric, k, X, U)
    sig = metric_bounds(metric, X)
    return _assemble(k, "thm1", h, bs, cs, jcl, X, U, sig, grid, metric)


# ----------------------------------------------------------------- ARI

def _spd_sqrt(P) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1, np.abs(P).max())):
        raise ModelError("P must be a symmetric matrix")
    P = sym(P)
    w, V = np.linalg.eigh(P)
    if w.min() <= 0:
        raise ModelError(f"P is not positive definite (lambda_min = {w.min():.3g})")
    return (V * np.sqrt(w)) @ V.T, P


def _ari_lhs(fx, fu, gx, Theta, k) -> tuple[np.ndarray, np.ndarray]:
    """Left-hand side of the compound Riccati inequality, and P^(k)."""
    P = Theta.T @ Theta
    Pk = mult_compound(P, k)
    Thk = mult_compound(Theta, k)
    ThTk = mult_compound(Theta.T, k)
    Ti = np.linalg.inv(Theta)
    Fk = add_compound(fx, k)
    Bt = Theta @ fu
    Ct = gx @ Ti
    M = Bt @ np.swapaxes(Bt, -1, -2) + np.swapaxes(Ct, -1, -2) @ Ct
    L = Pk @ Fk + np.swapaxes(Fk, -1, -2) @ Pk + ThTk @ add_compound(M, k) @ Thk
    return sym(L), Pk


def _max_eta_bisection(L: np.ndarray, Pk: np.ndarray, tol: float = 1e-13) -> float:
    """Largest eta with ``L + eta P^(k) <= 0`` at every sample, by bisection."""
    def feasible(eta):
        return np.linalg.eigvalsh(L + eta * Pk)[..., -1].max() <= 0.0

    scale = np.abs(np.linalg.eigvalsh(L)).max() / np.linalg.eigvalsh(Pk)[0] + 1.0
    lo, hi = -scale, scale
    if not feasible(lo):
        lo = -2 * scale
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(lo)):
            break
    return lo


def ari_constant_theta(model, P, k: int, grid: DomainGrid) -> Certificate:
    """Riccati-inequality form of the eta1 condition for a constant metric.

    With ``P = Theta^T Theta`` the largest eta1 such that
    ``P^(k) fx^[k] + (fx^[k])^T P^(k) + (Theta^T)^(k) M^[k] Theta^(k) <= -eta1 P^(k)``
    holds on all samples is found by bisection and compared with the
    eigenvalue form.  eta2 is computed as in :func:`certify_thm1`.
    """
    model = _as_gls(model)
    _check_k(k, model.n)
    Theta, P = _spd_sqrt(P)
    metric = MetricSpec.constant(Theta)
    X, U = grid.samples()
    if U is None:
        U = model.closed_loop_input(X)
    L, Pk = _ari_lhs(model.fx(X, U), model.fu(X, U), model.gx(X), Theta, k)
    eta1_ari = float(_max_eta_bisection(L, Pk))
    h, bs, cs, jcl = _thm1_scan(model, metric, k, X, U)
    eta1_eig = float(-h.max())
    sig = metric_bounds(metric, X)
    gap = float(abs(eta1_ari - eta1_eig))
    extra = {"eta1_eigen_form": eta1_eig, "ari_gap": gap,
             "ari_agrees": gap <= 1e-6 * max(1.0, abs(eta1_eig))}
    return _assemble(k, "ari", h, bs, cs, jcl, X, U, sig, grid, metric, eta1=eta1_ari, extra=extra)


# -------------------------------------------------------------- LTI Lurie

def certify_lti_lurie(A, B, C, Phi, P, k: int, y_grid: DomainGrid) -> Certificate:
    """Lurie system ``x' = Ax + Bu, y = Cx, u = -Phi(y)`` with constant
    symmetric metric ``Theta = P^(1/2)``.

    eta1 comes from the (constant) H matrix; eta2 from the B- or C-side
    condition on ``J_Phi(y)`` sampled over ``y_grid`` (its x box is read as
    the y box).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
        raise ModelError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
    m, p = B.shape[1], C.shape[0]
    _check_k(k, n)
    Theta, P = _spd_sqrt(P)
    Ti = np.linalg.inv(Theta)
    phi = Phi if isinstance(Phi, VectorFunction) else VectorFunction.parse(Phi, ny=p)
    if phi.ny != p or phi.output_dim != m:
        raise ModelError(f"Phi must map R^{p} -> R^{m}")
    if y_grid.x_box.dim != p:
        raise ModelError(f"y grid has dimension {y_grid.x_box.dim}, expected {p}")
    Y, _ = y_grid.samples()
    Jphi = phi.compiled_jacobian("y")(y=Y)
    Bt, Ct = Theta @ B, C @ Ti
    Jol = Theta @ A @ Ti
    H = sym(Jol + Jol.T + Bt @ Bt.T + Ct.T @ Ct)
    h = _top_k(H, k)
    eta1 = float(-h) + 0.0
    L, Pk = _ari_lhs(A, B, C, Theta, k)
    SB, SC = _side_matrices({"Bt": Bt, "Ct": Ct, "Jphi": Jphi})
    bs, cs = _top_k(SB, k), _top_k(SC, k)
    eta2_b, eta2_c = float(-bs.max()) + 0.0, float(-cs.max()) + 0.0
    side = "B" if eta2_b >= eta2_c else "C"
    eta2 = max(eta2_b, eta2_c)
    per_sample = -h - (bs if side == "B" else cs)
    i = int(np.argmin(per_sample))
    w = np.linalg.eigvalsh(Theta.T @ Theta)
    return Certificate(
        k=k, eta1=eta1, eta2=eta2,
        verdict="certified" if eta1 + eta2 > 0 else "not-certified",
        mode="lti", worst_margin=float(per_sample[i]), argmin_point=Y[i].tolist(),
        sigma1=float(w[0]), sigma2=float(w[-1]), samples=int(Y.shape[0]),
        seed=y_grid.seed, grid_shape=y_grid.shape,
        metric=MetricSpec.constant(Theta).describe(),
        details={
            "evidence": "sampled", "side": side, "eta2_B": eta2_b, "eta2_C": eta2_c,
            "eq21_residual": float(np.linalg.eigvalsh(L + eta1 * Pk)[-1]),
            "theta": Theta.tolist(),
        },
    )


# ------------------------------------------------------ networked systems

def alpha_k(bounds: Sequence[tuple[float, float]], k: int) -> float:
    """k-total dissipation: mean of the k smallest lower derivative bounds."""
    lows = sorted(float(lo) for lo, _ in bounds)
    _check_k(k, len(lows))
    return sum(lows[:k]) / k


def _padded_sv(W, k):
    s = singular_values_desc(W)
    out = np.zeros(max(k, s.size))
    out[:s.size] = s
    return out[:k]


def _small_gain_certificate(k, a_k, lhs, mode, details, eps, extra_ok=True, extra_margin=math.inf):
    rhs = a_k * a_k * k
    slack = rhs - lhs
    ok = a_k > eps and slack > eps and extra_ok
    details = dict(details, alpha_k=a_k, lhs=lhs, rhs=rhs, slack=slack, evidence="interval")
    if not ok:
        return Certificate(k=k, eta1=0.0, eta2=0.0, verdict="not-certified", mode=mode,
                           worst_margin=min(slack, a_k, extra_margin), details=details)
    gamma_lo = math.sqrt(lhs / k)
    gamma = math.sqrt(gamma_lo * a_k) if gamma_lo > 0 else 0.5 * a_k
    p = a_k / gamma ** 2
    eta1 = (a_k ** 2 - gamma ** 2) / a_k
    eta2 = (k - lhs / gamma ** 2) / p
    details.update(gamma=gamma, p=p, gamma_range=[gamma_lo, a_k])
    return Certificate(
        k=k, eta1=eta1, eta2=eta2, verdict="certified", mode=mode,
        worst_margin=min(slack, extra_margin), sigma1=p, sigma2=p,
        metric={"kind": "scalar", "q": math.sqrt(p)}, details=details,
    )


def certify_networked(net: NetworkedModel, k: int, eps_strict: float = EPS_STRICT) -> Certificate:
    """Small-gain test ``sup||J_f||^2 sum_i s_i(W1)^2 s_i(W2)^2 < alpha_k^2 k``.

    On success gamma is the geometric mean of the admissible extremes
    ``sqrt(lhs/k)`` and ``alpha_k``, the metric is ``Theta = sqrt(p) I`` with
    ``p = alpha_k / gamma^2`` and ``eta1 = (alpha_k^2 - gamma^2) / alpha_k``.
    A failing test gives a not-certified certificate carrying the slack.
    """
    if net.derivative_bounds is None or net.jf_norm_bound is None:
        raise ModelError("certify_networked needs derivative_bounds and jf_norm_bound")
    _check_k(k, net.n)
    a_k = alpha_k(net.derivative_bounds, k)
    s1 = _padded_sv(net.W1, k)
    s2 = _padded_sv(net.W2, k)
    lhs = float(net.jf_norm_bound ** 2 * np.sum(s1 ** 2 * s2 ** 2))
    lows = np.array([lo for lo, _ in net.derivative_bounds])
    subset = sorted((np.argsort(lows, kind="stable")[:k] + 1).tolist())
    return _small_gain_certificate(k, a_k, lhs, "networked",
                                   {"argmin_subset": subset}, eps_strict)


def certify_biochem(r_prime_bound: float, d_bounds: Sequence[tuple[float, float]], k: int,
                    eps_strict: float = EPS_STRICT) -> Certificate:
    """Feedback-chain test: ``alpha_k > 1`` and ``max r'^2 < alpha_k^2``."""
    a_k = alpha_k(d_bounds, k)
    r2 = float(r_prime_bound) ** 2
    cond_alpha = a_k - 1.0 > eps_strict
    cond_r = a_k * a_k - r2 > eps_strict
    lhs = max(r2, 1.0) * k
    details = {"alpha_gt_1": cond_alpha, "r_condition": cond_r, "r_prime_bound": float(r_prime_bound)}
    margin = min(a_k - 1.0, a_k * a_k - r2)
    cert = _small_gain_certificate(k, a_k, lhs, "biochem", details, eps_strict,
                                   extra_ok=cond_alpha and cond_r, extra_margin=margin)
    return cert


@dataclass
class EscalationResult:
    k_star: int | None
    certificates: dict[int, Certificate]

    @property
    def slacks(self) -> dict[int, float]:
        return {k: c.details.get("slack", math.nan) for k, c in self.certificates.items()}


def monotone_escalate(net: NetworkedModel, k: int) -> EscalationResult:
    """Smallest order >= k that passes :func:`certify_networked`.

    Passing at some order implies passing at every larger order; this is
    verified on every order up to n.
    """
    _check_k(k, net.n)
    certs = {j: certify_networked(net, j) for j in range(k, net.n + 1)}
    passing = [j for j, c in certs.items() if c.certified]
    if not passing:
        return EscalationResult(None, certs)
    k_star = passing[0]
    broken = [j for j in range(k_star, net.n + 1) if not certs[j].certified]
    if broken:
        raise RuntimeError(f"monotonicity violated: certified at {k_star} but not at {broken}")
    return EscalationResult(k_star, certs)
