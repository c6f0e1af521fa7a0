"""Generalized Lurie systems, metrics and the built-in example families.

A generalized Lurie system (GLS) is the feedback loop

    x' = f(x, u),   y = g(x),   u = -Phi(y),

with closed-loop field ``f_cl(x) = f(x, -Phi(g(x)))``.  Every evaluation
routine is vectorised: points are arrays whose last axis is the state (or
input) coordinate, so a whole sample grid is evaluated in one call.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .expr import (
    Const, Expr, ExprError, Var, VectorFunction, as_expr, compile_matrix, diff,
    free_vars, parse, substitute, to_string,
)

__all__ = [
    "Box", "GlsModel", "MetricSpec", "NetworkedModel", "ThetaEval",
    "ModelError", "SingularMetricError", "TridiagonalConditionError",
    "closed_loop_field", "closed_loop_jacobian", "theta_eval",
    "riemannian_jacobian", "metric_bounds", "tridiagonal_theta", "builtin",
    "lti_lurie", "hopfield", "networked", "biochem", "example31",
    "tridiagonal_chain", "load_config", "BUILTINS",
]

METRIC_COND_MAX = 1e10


class ModelError(ValueError):
    """Inconsistent model definition."""


class SingularMetricError(np.linalg.LinAlgError):
    pass


class TridiagonalConditionError(ModelError):
    def __init__(self, message: str, point=None):
        self.point = None if point is None else np.asarray(point).tolist()
        super().__init__(message if point is None else f"{message} at x={self.point}")


# ---------------------------------------------------------------- domains

@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``low <= x <= high`` (entries may be infinite)."""

    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        low = tuple(float(v) for v in self.low)
        high = tuple(float(v) for v in self.high)
        if len(low) != len(high):
            raise ModelError("box bounds have different lengths")
        if any(lo > hi for lo, hi in zip(low, high)) or any(map(math.isnan, low + high)):
            raise ModelError(f"empty box: low={low}, high={high}")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def cube(cls, n: int, lo: float, hi: float) -> "Box":
        return cls((lo,) * n, (hi,) * n)

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def bounded(self) -> bool:
        return all(map(math.isfinite, self.low + self.high))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.array(self.low) - tol) and np.all(x <= np.array(self.high) + tol))

    def to_dict(self) -> dict:
        enc = lambda v: v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {"low": [enc(v) for v in self.low], "high": [enc(v) for v in self.high]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Box":
        def dec(vals, default):
            return [default if v is None else float(v) for v in vals]
        return cls(tuple(dec(d["low"], -math.inf)), tuple(dec(d["high"], math.inf)))


# ------------------------------------------------------------------ GLS

def _as_matrix(a, rows=None, cols=None, name="matrix") -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or (rows is not None and a.shape[0] != rows) or (
        cols is not None and a.shape[1] != cols
    ):
        raise ModelError(f"{name} has shape {a.shape}, expected ({rows}, {cols})")
    return a


def linear_exprs(M, block: str) -> tuple[Expr, ...]:
    """Expressions for ``M @ block`` with zero coefficients dropped."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    out = []
    for row in M:
        e: Expr = Const(0.0)
        for j, c in enumerate(row):
            if c != 0.0:
                e = e + Const(float(c)) * Var(f"{block}{j + 1}")
        out.append(e)
    return tuple(out)


@dataclass(frozen=True)
class GlsModel:
    """Open-loop system ``(f, g)`` closed by the static nonlinearity ``Phi``.

    ``jacobian_overrides`` may replace any of the symbolic blocks ``fx``,
    ``fu``, ``gx``, ``phiy`` by explicit expression matrices.
    """

    f: VectorFunction
    g: VectorFunction
    phi: VectorFunction
    state_domain: Box | None = None
    input_domain: Box | None = None
    name: str = "gls"
    jacobian_overrides: Mapping[str, tuple] | None = field(default=None, compare=False)

    def __post_init__(self):
        n, m, p = self.n, self.m, self.p
        if self.f.nx != n or self.f.ny != 0:
            raise ModelError(f"f must map (R^{n}, R^{m}) -> R^{n}; declared nx={self.f.nx}")
        if m < 1 or p < 1:
            raise ModelError("input and output dimensions must be positive")
        if self.g.nx != n or self.g.nu or self.g.ny:
            raise ModelError(f"g must be a function of x in R^{n}")
        if self.phi.ny != p or self.phi.output_dim != m or self.phi.nx or self.phi.nu:
            raise ModelError(f"Phi must map R^{p} -> R^{m}")
        for dom, dim, what in ((self.state_domain, n, "state"), (self.input_domain, m, "input")):
            if dom is not None and dom.dim != dim:
                raise ModelError(f"{what} domain has dimension {dom.dim}, expected {dim}")
        if self.jacobian_overrides:
            shapes = {"fx": (n, n), "fu": (n, m), "gx": (p, n), "phiy": (m, p)}
            for key, mat in self.jacobian_overrides.items():
                if key not in shapes:
                    raise ModelError(f"unknown Jacobian override {key!r}")
                if (len(mat), len(mat[0])) != shapes[key]:
                    raise ModelError(f"override {key} must be {shapes[key]}")

    @classmethod
    def from_strings(cls, f: Sequence, g: Sequence, phi: Sequence, n: int, m: int,
                     p: int, **kw) -> "GlsModel":
        return cls(
            VectorFunction.parse(f, nx=n, nu=m),
            VectorFunction.parse(g, nx=n),
            VectorFunction.parse(phi, ny=p),
            **kw,
        )

    @property
    def n(self) -> int:
        return self.f.output_dim

    @property
    def m(self) -> int:
        return self.f.nu

    @property
    def p(self) -> int:
        return self.g.output_dim

    # compiled Jacobian blocks
    def _block(self, key: str, F: VectorFunction, wrt: str):
        if self.jacobian_overrides and key in self.jacobian_overrides:
            mat = self.jacobian_overrides[key]
            return compile_matrix([[as_expr(e) for e in row] for row in mat])
        return F.compiled_jacobian(wrt)

    @cached_property
    def _fx(self):
        return self._block("fx", self.f, "x")

    @cached_property
    def _fu(self):
        return self._block("fu", self.f, "u")

    @cached_property
    def _gx(self):
        return self._block("gx", self.g, "x")

    @cached_property
    def _phiy(self):
        return self._block("phiy", self.phi, "y")

    def fx(self, x, u):
        return self._fx(x=x, u=u)

    def fu(self, x, u):
        return self._fu(x=x, u=u)

    def gx(self, x):
        return self._gx(x=x)

    def phiy(self, y):
        return self._phiy(y=y)

    def field(self, x, u) -> np.ndarray:
        return self.f(x=x, u=u)

    def output(self, x) -> np.ndarray:
        return self.g(x=x)

    def closed_loop_input(self, x) -> np.ndarray:
        return -self.phi(y=self.g(x=x))

    def closed_loop_field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.f(x=x, u=self.closed_loop_input(x))

    def closed_loop_jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.g(x=x)
        u = -self.phi(y=y)
        return self.fx(x, u) - self.fu(x, u) @ self.phiy(y) @ self.gx(x)

    def describe(self) -> dict:
        return {
            "name": self.name, "n": self.n, "m": self.m, "p": self.p,
            "f": [to_string(e) for e in self.f.components],
            "g": [to_string(e) for e in self.g.components],
            "phi": [to_string(e) for e in self.phi.components],
        }


def _as_gls(model) -> GlsModel:
    return model.as_gls() if isinstance(model, NetworkedModel) else model


def closed_loop_field(model, x) -> np.ndarray:
    """``f(x, -Phi(g(x)))`` for a GLS or a networked model."""
    return _as_gls(model).closed_loop_field(x)


def closed_loop_jacobian(model, x) -> np.ndarray:
    """``df/dx - df/du dPhi/dy dg/dx`` evaluated along the closed loop."""
    return _as_gls(model).closed_loop_jacobian(x)


# --------------------------------------------------------------- metrics

@dataclass(frozen=True)
class MetricSpec:
    """The metric ``Theta(x)``.

    kinds: ``constant`` (fixed matrix), ``scalar`` (q*I), ``diagonal``
    (``diag(delta_1(x), ..., delta_n(x))``) and ``tridiagonal`` (a diagonal
    metric built by :func:`tridiagonal_theta`, delta_1 = 1).
    """

    kind: str
    n: int
    q: float = 1.0
    matrix: tuple[tuple[float, ...], ...] | None = None
    deltas: VectorFunction | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "scalar", "diagonal", "tridiagonal"):
            raise ModelError(f"unknown metric kind {self.kind!r}")
        if self.kind == "scalar" and not self.q > 0:
            raise ModelError("scalar metric needs q > 0")
        if self.kind == "constant":
            M = _as_matrix(self.matrix, self.n, self.n, "metric matrix")
            c = np.linalg.cond(M)
            if not np.isfinite(c) or c > METRIC_COND_MAX:
                raise SingularMetricError(f"constant metric is singular (cond {c:.3g})")
            object.__setattr__(self, "matrix", tuple(map(tuple, M.tolist())))
        if self.kind in ("diagonal", "tridiagonal"):
            if self.deltas is None or self.deltas.output_dim != self.n or self.deltas.nx != self.n:
                raise ModelError("diagonal metric needs n expressions in x")
            if self.kind == "tridiagonal" and self.deltas.components[0] != Const(1.0):
                raise ModelError("tridiagonal metric must have delta_1 = 1")

    @classmethod
    def identity(cls, n: int) -> "MetricSpec":
        return cls("scalar", n, q=1.0)

    @classmethod
    def scalar(cls, n: int, q: float) -> "MetricSpec":
        return cls("scalar", n, q=float(q))

    @classmethod
    def constant(cls, M) -> "MetricSpec":
        M = np.asarray(M, dtype=float)
        return cls("constant", M.shape[0], matrix=tuple(map(tuple, M.tolist())))

    @classmethod
    def diagonal(cls, deltas: Sequence, n: int) -> "MetricSpec":
        return cls("diagonal", n, deltas=VectorFunction.parse(deltas, nx=n))

    @property
    def is_constant(self) -> bool:
        return self.kind in ("constant", "scalar")

    def constant_matrix(self) -> np.ndarray:
        """Theta as a matrix, for the constant kinds only."""
        if self.kind == "scalar":
            return self.q * np.eye(self.n)
        if self.kind == "constant":
            return np.array(self.matrix)
        raise ModelError(f"metric kind {self.kind!r} is state dependent")

    def describe(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "scalar":
            d["q"] = self.q
        elif self.kind == "constant":
            d["matrix"] = [list(r) for r in self.matrix]
        else:
            d["delta"] = [to_string(e) for e in self.deltas.components]
        return d

    @classmethod
    def from_dict(cls, d: Mapping | None, n: int) -> "MetricSpec":
        if d is None:
            return cls.identity(n)
        kind = d.get("kind", "scalar")
        if kind == "scalar":
            return cls.scalar(n, d.get("q", 1.0))
        if kind == "constant":
            return cls.constant(d["matrix"])
        if kind == "diagonal":
            return cls.diagonal(d["delta"], n)
        raise ModelError(f"metric kind {kind!r} cannot be given explicitly")


class ThetaEval(NamedTuple):
    theta: np.ndarray
    theta_inv: np.ndarray
    dtheta_cl: np.ndarray
    dtheta_ol: np.ndarray


def _theta_dot(metric: MetricSpec, x: np.ndarray, fval: np.ndarray) -> np.ndarray:
    """Entrywise derivative of Theta along the field value ``fval``."""
    batch = np.broadcast_shapes(x.shape[:-1], fval.shape[:-1])
    n = metric.n
    out = np.zeros(batch + (n, n))
    if metric.is_constant:
        return out
    grad = metric.deltas.compiled_jacobian("x")(x=x)  # (..., n, n): row i = grad delta_i
    idx = np.arange(n)
    out[..., idx, idx] = np.einsum("...ij,...j->...i", grad, fval)
    return out


def _theta(metric: MetricSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    batch = x.shape[:-1]
    n = metric.n
    if metric.kind == "scalar":
        eye = np.eye(n)
        return (np.broadcast_to(metric.q * eye, batch + (n, n)),
                np.broadcast_to(eye / metric.q, batch + (n, n)))
    if metric.kind == "constant":
        M = np.array(metric.matrix)
        return (np.broadcast_to(M, batch + (n, n)),
                np.broadcast_to(np.linalg.inv(M), batch + (n, n)))
    d = metric.deltas(x=x)
    ad = np.abs(d)
    lo = ad.min(axis=-1)
    hi = ad.max(axis=-1)
    bad = ~(lo > 0) | (hi > METRIC_COND_MAX * np.where(lo > 0, lo, 1.0))
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad))[0]
        pt = x.reshape(-1, n)[where[0]] if x.ndim > 1 else x
        raise SingularMetricError(f"metric is singular at x={np.asarray(pt).tolist()}")
    idx = np.arange(n)
    T = np.zeros(batch + (n, n))
    Ti = np.zeros(batch + (n, n))
    T[..., idx, idx] = d
    Ti[..., idx, idx] = 1.0 / d
    return T, Ti


def theta_eval(metric: MetricSpec, model, x, u=None) -> ThetaEval:
    """Theta, its inverse, and its derivatives along the closed/open loop.

    With ``u=None`` the open-loop derivative is taken at the closed-loop input
    ``-Phi(g(x))``, through the same code path, so the two coincide exactly.
    """
    model = _as_gls(model)
    x = np.asarray(x, dtype=float)
    T, Ti = _theta(metric, x)
    u_cl = model.closed_loop_input(x)
    dcl = _theta_dot(metric, x, model.field(x, u_cl))
    if u is None:
        dol = dcl
    else:
        dol = _theta_dot(metric, x, model.field(x, np.asarray(u, dtype=float)))
    return ThetaEval(T, Ti, dcl, dol)


def riemannian_jacobian(model, metric: MetricSpec, x, u=None, which: str = "cl") -> np.ndarray:
    """``Theta J Theta^-1 + Theta' Theta^-1`` for the open or closed loop."""
    model = _as_gls(model)
    x = np.asarray(x, dtype=float)
    te = theta_eval(metric, model, x, u)
    if which == "cl":
        J = model.closed_loop_jacobian(x)
        return te.theta @ J @ te.theta_inv + te.dtheta_cl @ te.theta_inv
    if which == "ol":
        uu = model.closed_loop_input(x) if u is None else np.asarray(u, dtype=float)
        J = model.fx(x, uu)
        return te.theta @ J @ te.theta_inv + te.dtheta_ol @ te.theta_inv
    raise ValueError("which must be 'ol' or 'cl'")


def metric_bounds(metric: MetricSpec, x) -> tuple[float, float]:
    """Sampled ``(sigma1, sigma2)`` with ``sigma1 I <= Theta^T Theta <= sigma2 I``."""
    x = np.asarray(x, dtype=float)
    if metric.is_constant:
        x = x.reshape(-1, metric.n)[:1]
    T, _ = _theta(metric, x)
    w = np.linalg.eigvalsh(np.swapaxes(T, -1, -2) @ T)
    return float(w[..., 0].min()), float(w[..., -1].max())


def tridiagonal_theta(model: GlsModel, points=None) -> MetricSpec:
    """Diagonal metric making ``Theta df/dx Theta^-1`` diagonal + skew-symmetric.

    ``delta_1 = 1`` and ``delta_{i+1} = delta_i sqrt(-h_{i,i+1} / h_{i+1,i})``
    where ``h_{i,j}`` are the entries of the (tridiagonal) Jacobian of f.  The
    sign condition ``-h_{i,i+1} > 0``, ``h_{i+1,i} > 0`` is checked at
    ``points`` (default: a 5-point-per-axis grid of the bounded state domain).
    """
    n = model.n
    J = model.f.jacobian("x")
    for i in range(n):
        for j in range(n):
            e = J[i][j]
            if abs(i - j) > 1 and e != Const(0.0):
                raise TridiagonalConditionError(
                    f"df/dx is not tridiagonal: entry ({i + 1},{j + 1}) = {to_string(e)}"
                )
            if any(v.startswith("u") for v in free_vars(e)):
                raise TridiagonalConditionError("df/dx must not depend on u")
    deltas: list[Expr] = [Const(1.0)]
    for i in range(n - 1):
        ratio = (-J[i][i + 1]) / J[i + 1][i]
        deltas.append(deltas[-1] * _sqrt(ratio))
    if points is None:
        dom = model.state_domain
        if dom is None or not dom.bounded:
            raise ModelError("sign condition needs sample points or a bounded state domain")
        axes = [np.linspace(lo, hi, 5) for lo, hi in zip(dom.low, dom.high)]
        if n > 6:
            axes = [np.linspace(lo, hi, 2) for lo, hi in zip(dom.low, dom.high)]
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if n > 1:
        upper = compile_matrix([[-J[i][i + 1] for i in range(n - 1)],
                                [J[i + 1][i] for i in range(n - 1)]])(x=points)
        bad = np.argwhere(~(upper > 0))
        if bad.size:
            b, side, i = bad[0]
            which = f"-h_{{{i + 1},{i + 2}}}" if side == 0 else f"h_{{{i + 2},{i + 1}}}"
            raise TridiagonalConditionError(
                f"sign condition violated: {which} = {upper[b, side, i]:.6g} <= 0", points[b]
            )
    return MetricSpec("tridiagonal", n, deltas=VectorFunction(tuple(deltas), nx=n))


def _sqrt(e: Expr) -> Expr:
    from .expr import call
    return call("sqrt", e)


# ---------------------------------------------------------- networked

@dataclass(frozen=True, eq=False)
class NetworkedModel:
    """``x' = -d(x) + W1 f(W2 x) + v`` with scalar dissipations ``d_i(x_i)``.

    ``derivative_bounds[i]`` is an interval containing ``d_i'`` over the
    state domain and ``jf_norm_bound`` bounds ``||J_f(W2 x)||_2`` there.
    """

    W1: np.ndarray
    W2: np.ndarray
    d: VectorFunction
    f: VectorFunction
    v: np.ndarray
    derivative_bounds: tuple[tuple[float, float], ...] | None = None
    jf_norm_bound: float | None = None
    state_domain: Box | None = None
    name: str = "networked"
    family: str = "networked"
    r_prime_bound: float | None = None

    def __post_init__(self):
        W1 = _as_matrix(self.W1, name="W1")
        n, m = W1.shape
        W2 = _as_matrix(self.W2, cols=n, name="W2")
        q = W2.shape[0]
        v = np.zeros(n) if self.v is None else np.asarray(self.v, dtype=float).reshape(-1)
        if v.shape != (n,):
            raise ModelError(f"offset v must have length {n}")
        if self.d.output_dim != n or self.d.nx != n:
            raise ModelError(f"d must consist of {n} expressions in x")
        for i, e in enumerate(self.d.components):
            extra = free_vars(e) - {f"x{i + 1}"}
            if extra:
                raise ModelError(f"d_{i + 1} may only depend on x{i + 1}, found {sorted(extra)}")
        if self.f.ny != q or self.f.output_dim != m:
            raise ModelError(f"f must map R^{q} -> R^{m}")
        if self.derivative_bounds is not None:
            b = tuple((float(lo), float(hi)) for lo, hi in self.derivative_bounds)
            if len(b) != n or any(lo > hi for lo, hi in b):
                raise ModelError("derivative_bounds must be n valid intervals")
            object.__setattr__(self, "derivative_bounds", b)
        if self.jf_norm_bound is not None and not self.jf_norm_bound >= 0:
            raise ModelError("jf_norm_bound must be nonnegative")
        if self.state_domain is not None and self.state_domain.dim != n:
            raise ModelError("state domain dimension mismatch")
        W1.setflags(write=False)
        W2.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.W1.shape[0]

    @cached_property
    def _dprime(self):
        return compile_matrix([[diff(e, f"x{i + 1}") for i, e in enumerate(self.d.components)]])

    def dissipation_derivative(self, x) -> np.ndarray:
        """``(d_1'(x_1), ..., d_n'(x_n))``."""
        out = self._dprime(x=np.asarray(x, dtype=float))
        return out[..., 0, :]

    def field(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = x @ self.W2.T
        return -self.d(x=x) + self.f(y=z) @ self.W1.T + self.v

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = x @ self.W2.T
        Jf = self.f.compiled_jacobian("y")(y=z)
        J = self.W1 @ Jf @ self.W2
        idx = np.arange(self.n)
        J[..., idx, idx] -= self.dissipation_derivative(x)
        return J

    def as_gls(self, gamma: float = 1.0) -> GlsModel:
        """GLS form ``x' = -d(x) + v + gamma u``, ``y = x``,
        ``Phi(y) = -gamma^-1 W1 f(W2 y)``."""
        cache = self.__dict__.setdefault("_gls_cache", {})
        gamma = float(gamma)
        if gamma in cache:
            return cache[gamma]
        if not gamma > 0:
            raise ModelError("gamma must be positive")
        n = self.n
        fx = tuple(
            -di + Const(float(vi)) + Const(gamma) * Var(f"u{i + 1}")
            for i, (di, vi) in enumerate(zip(self.d.components, self.v))
        )
        z = linear_exprs(self.W2, "y")
        fz = [substitute(c, {f"y{j + 1}": z[j] for j in range(len(z))})
              for c in self.f.components]
        phi = []
        for i in range(n):
            e: Expr = Const(0.0)
            for j, fj in enumerate(fz):
                c = self.W1[i, j]
                if c != 0.0:
                    e = e + Const(float(-c / gamma)) * fj
            phi.append(e)
        model = GlsModel(
            VectorFunction(fx, nx=n, nu=n),
            VectorFunction(tuple(Var(f"x{i + 1}") for i in range(n)), nx=n),
            VectorFunction(tuple(phi), ny=n),
            state_domain=self.state_domain,
            name=self.name,
        )
        cache[gamma] = model
        return model

    def describe(self) -> dict:
        return {
            "name": self.name, "family": self.family, "n": self.n,
            "W1": self.W1.tolist(), "W2": self.W2.tolist(), "v": self.v.tolist(),
            "d": [to_string(e) for e in self.d.components],
            "f": [to_string(e) for e in self.f.components],
            "derivative_bounds": None if self.derivative_bounds is None
            else [list(b) for b in self.derivative_bounds],
            "jf_norm_bound": self.jf_norm_bound,
            "r_prime_bound": self.r_prime_bound,
        }


# ----------------------------------------------------------- builtins

def _per_coordinate(exprs: Sequence, n: int) -> VectorFunction:
    """Scalar functions written in ``s`` (or ``x_i``) placed on coordinate i."""
    comps = []
    for i, e in enumerate(exprs):
        e = as_expr(e)
        comps.append(substitute(e, {"s": f"x{i + 1}"}))
    if len(comps) != n:
        raise ModelError(f"expected {n} dissipation terms, got {len(comps)}")
    return VectorFunction(tuple(comps), nx=n)


def lti_lurie(A, B, C, phi: Sequence | None = None, state_domain: Box | None = None,
              input_domain: Box | None = None, name: str = "lti_lurie") -> GlsModel:
    """``x' = Ax + Bu``, ``y = Cx``, ``u = -Phi(y)``; ``phi=None`` means Phi = 0."""
    A = _as_matrix(A, name="A")
    n = A.shape[0]
    A = _as_matrix(A, n, n, "A")
    B = _as_matrix(B, rows=n, name="B")
    C = _as_matrix(C, cols=n, name="C")
    m, p = B.shape[1], C.shape[0]
    f = tuple(a + b for a, b in zip(linear_exprs(A, "x"), linear_exprs(B, "u")))
    if phi is None:
        phi = ["0"] * m
    return GlsModel(
        VectorFunction(f, nx=n, nu=m),
        VectorFunction(linear_exprs(C, "x"), nx=n),
        VectorFunction.parse(phi, ny=p),
        state_domain=state_domain, input_domain=input_domain, name=name,
    )


def _activation(h, k: int, arg_block: str = "y") -> list[Expr]:
    """Elementwise activation: a function name or an expression in ``s``."""
    h = h or "tanh"
    if isinstance(h, str):
        from .expr import FUNCTIONS
        base = parse(f"{h}(s)") if h in FUNCTIONS else parse(h)
        return [substitute(base, {"s": f"{arg_block}{j + 1}"}) for j in range(k)]
    return [as_expr(e) for e in h]


def hopfield(D, W1, W2, h="tanh", state_domain: Box | None = None,
             name: str = "hopfield") -> GlsModel:
    """``x' = -Dx + W1 h(W2 x)`` as the Lurie system ``x' = -Dx + u``, ``y = x``,
    ``Phi(y) = -W1 h(W2 y)``."""
    D = _as_matrix(D, name="D")
    n = D.shape[0]
    W1 = _as_matrix(W1, rows=n, name="W1")
    W2 = _as_matrix(W2, cols=n, name="W2")
    q = W1.shape[1]
    if W2.shape[0] != q and isinstance(h, str):
        raise ModelError("elementwise activation needs W2 rows == W1 cols")
    z = linear_exprs(W2, "y")
    hz = [substitute(e, {f"y{j + 1}": z[j] for j in range(len(z))})
          for e in _activation(h, W2.shape[0])]
    phi = []
    for i in range(n):
        e: Expr = Const(0.0)
        for j in range(q):
            if W1[i, j] != 0.0:
                e = e + Const(float(-W1[i, j])) * hz[j]
        phi.append(e)
    f = tuple(a + Var(f"u{i + 1}") for i, a in enumerate(linear_exprs(-D, "x")))
    return GlsModel(
        VectorFunction(f, nx=n, nu=n),
        VectorFunction(tuple(Var(f"x{i + 1}") for i in range(n)), nx=n),
        VectorFunction(tuple(phi), ny=n),
        state_domain=state_domain, name=name,
    )


def networked(W1, W2, d: Sequence, f: Sequence | str = "tanh", v=None,
              derivative_bounds=None, jf_norm_bound=None,
              state_domain: Box | None = None, name: str = "networked") -> NetworkedModel:
    W1 = _as_matrix(W1, name="W1")
    W2 = _as_matrix(W2, name="W2")
    n = W1.shape[0]
    q = W2.shape[0]
    if isinstance(f, str):
        fexprs = _activation(f, q)
    else:
        fexprs = [substitute(as_expr(e), {"s": "y1"}) if q == 1 else as_expr(e) for e in f]
    return NetworkedModel(
        W1, W2, _per_coordinate(d, n), VectorFunction(tuple(fexprs), ny=q),
        np.zeros(n) if v is None else v, derivative_bounds=derivative_bounds,
        jf_norm_bound=jf_norm_bound, state_domain=state_domain, name=name,
    )


def biochem(n: int, d: Sequence, r: str, d_bounds=None, r_prime_bound=None,
            name: str = "biochem") -> NetworkedModel:
    """Feedback chain ``x1' = -d1(x1) + r(xn)``, ``xi' = -di(xi) + x_{i-1}``.

    Written as a networked system with ``W1 = W2 = I``, ``v = 0`` and
    ``f(y) = (r(y_n), y_1, ..., y_{n-1})``; the state space is R^n_+.
    """
    r_e = substitute(as_expr(r), {"s": f"y{n}"})
    fexprs = [r_e] + [Var(f"y{i + 1}") for i in range(n - 1)]
    jf = None if r_prime_bound is None else max(abs(float(r_prime_bound)), 1.0)
    return NetworkedModel(
        np.eye(n), np.eye(n), _per_coordinate(d, n), VectorFunction(tuple(fexprs), ny=n),
        np.zeros(n), derivative_bounds=d_bounds, jf_norm_bound=jf,
        state_domain=Box.cube(n, 0.0, math.inf), name=name, family="biochem",
        r_prime_bound=None if r_prime_bound is None else float(r_prime_bound),
    )


# d1' = cos(x1): the literal range on R_+ is [-1, 1]; [0, 1] reproduces alpha_2 = 3/2
EXAMPLE31_BOUNDS = {
    "implied": ((0.0, 1.0), (3.0, 3.0), (3.0, 3.0)),
    "literal": ((-1.0, 1.0), (3.0, 3.0), (3.0, 3.0)),
}


def example31(bounds: str | Sequence = "implied") -> NetworkedModel:
    """Three-state biochemical circuit with d1 = sin(x1) + 1/2, d2 = 3x2,
    d3 = 3x3 and r(s) = (1+s)/(2+s), so that r' <= 1/4 on s >= 0."""
    b = EXAMPLE31_BOUNDS[bounds] if isinstance(bounds, str) else bounds
    return biochem(3, ["sin(s) + 0.5", "3*s", "3*s"], "(1+s)/(2+s)",
                   d_bounds=b, r_prime_bound=0.25, name="example31")


def tridiagonal_chain(n: int = 4, gain: float = 0.5, in_index: int = 1,
                      out_index: int | None = None, name: str = "tridiagonal_chain") -> GlsModel:
    """Nearest-neighbour chain with mildly nonlinear couplings and scalar feedback.

    The slope towards the left neighbour lies in [1.5, 1.6] and the slope
    towards the right neighbour in [-2.2, -1.8] on the default box
    [-1, 1]^n, so the tridiagonal sign condition holds there.  Feedback
    ``u = -gain*tanh(y)`` is read from ``x_{out_index}`` and enters the
    equation of ``x_{in_index}``.
    """
    out_index = n if out_index is None else out_index
    f = []
    for i in range(1, n + 1):
        e = f"-2*x{i} - tanh(x{i})"
        if i > 1:
            e += f" + 1.5*x{i - 1} + 0.1*tanh(x{i - 1})"
        if i < n:
            e += f" - 2*x{i + 1} - 0.2*sin(x{i + 1})/(2 + cos(x{i}))"
        if i == in_index:
            e += " + u1"
        f.append(e)
    return GlsModel.from_strings(
        f, [f"x{out_index}"], [f"{gain}*tanh(y1)"], n=n, m=1, p=1,
        state_domain=Box.cube(n, -1.0, 1.0), input_domain=Box((-gain,), (gain,)),
        name=name,
    )


BUILTINS = {
    "lti_lurie": lti_lurie,
    "hopfield": hopfield,
    "networked": networked,
    "biochem": biochem,
    "example31": example31,
    "tridiagonal_chain": tridiagonal_chain,
}


def builtin(name: str, **params):
    """Instantiate one of the built-in model families by name."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ModelError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
    try:
        return factory(**params)
    except (TypeError, ValueError, ExprError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"builtin {name}: {exc}") from exc


# -------------------------------------------------------------- config

def _box(d) -> Box | None:
    return None if d is None else Box.from_dict(d)


def load_config(source) -> tuple[object, MetricSpec, dict]:
    """Read a model config (path, JSON text or dict).

    Returns ``(model, metric, config)`` where model is a :class:`GlsModel` or
    a :class:`NetworkedModel`.
    """
    if isinstance(source, Mapping):
        cfg = dict(source)
    else:
        p = Path(source)
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ModelError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        if "builtin" in cfg:
            params = dict(cfg.get("params", {}))
            if "state_domain" in params and isinstance(params["state_domain"], Mapping):
                params["state_domain"] = _box(params["state_domain"])
            if "input_domain" in params and isinstance(params["input_domain"], Mapping):
                params["input_domain"] = _box(params["input_domain"])
            model = builtin(cfg["builtin"], **params)
        else:
            n, m, p = int(cfg["n"]), int(cfg["m"]), int(cfg["p"])
            model = GlsModel.from_strings(
                cfg["f"], cfg["g"], cfg["phi"], n=n, m=m, p=p,
                state_domain=_box(cfg.get("state_domain")),
                input_domain=_box(cfg.get("input_domain")),
                name=cfg.get("name", "gls"),
                jacobian_overrides=cfg.get("jacobian_overrides"),
            )
    except KeyError as exc:
        raise ModelError(f"config is missing field {exc}") from None
    n = model.n
    mcfg = cfg.get("metric")
    if isinstance(mcfg, Mapping) and mcfg.get("kind") == "tridiagonal":
        metric = tridiagonal_theta(_as_gls(model))
    else:
        metric = MetricSpec.from_dict(mcfg, n)
    return model, metric, cfg
