"""Multiplicative and additive compound matrices.

Rows and columns of a compound are indexed by the k-subsets of the row/column
indices in lexicographic order; that is the only ordering supported.  All
functions accept stacks of matrices (leading batch axes) where it is cheap to
do so.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

__all__ = [
    "CombinationIndex", "DimensionError", "lex_combinations", "mult_compound",
    "add_compound", "parallelotope_volume", "compound_similarity",
    "MAX_DIM", "MAX_COMBOS",
]

MAX_DIM = 20
MAX_COMBOS = 200_000
MAX_ENTRIES = 50_000_000


class DimensionError(ValueError):
    """Order out of range or compound too large to form."""


@dataclass(frozen=True)
class CombinationIndex:
    """All k-subsets of ``1..n`` (1-based tuples), lexicographically sorted."""

    n: int
    k: int
    combos: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.combos)

    @property
    def indices(self) -> np.ndarray:
        """0-based index array of shape ``(C(n,k), k)``."""
        return _index_array(self.n, self.k)


def _check_order(n: int, k: int, what: str = "n") -> None:
    if not 1 <= k <= n:
        raise DimensionError(f"order k={k} out of range [1, {what}={n}]")
    if n > MAX_DIM:
        raise DimensionError(f"dimension {n} exceeds the supported maximum {MAX_DIM}")
    if comb(n, k) > MAX_COMBOS:
        raise DimensionError(f"C({n},{k}) = {comb(n, k)} exceeds {MAX_COMBOS}")


def lex_combinations(n: int, k: int) -> CombinationIndex:
    if not 1 <= k <= n:
        raise DimensionError(f"order k={k} out of range [1, n={n}]")
    combos = tuple(itertools.combinations(range(1, n + 1), k))
    return CombinationIndex(n, k, combos)


@lru_cache(maxsize=256)
def _index_array(n: int, k: int) -> np.ndarray:
    arr = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
    arr.setflags(write=False)
    return arr


def _det_small(S: np.ndarray) -> np.ndarray:
    """Determinants over the last two axes (cofactor formulas for k <= 3)."""
    k = S.shape[-1]
    if k == 1:
        return S[..., 0, 0].copy()
    if k == 2:
        return S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]
    if k == 3:
        a = S[..., 0, 0] * (S[..., 1, 1] * S[..., 2, 2] - S[..., 1, 2] * S[..., 2, 1])
        b = S[..., 0, 1] * (S[..., 1, 0] * S[..., 2, 2] - S[..., 1, 2] * S[..., 2, 0])
        c = S[..., 0, 2] * (S[..., 1, 0] * S[..., 2, 1] - S[..., 1, 1] * S[..., 2, 0])
        return a - b + c
    # LU with partial pivoting (LAPACK getrf)
    return np.linalg.det(S)


def mult_compound(A, k: int) -> np.ndarray:
    """k-multiplicative compound: all k x k minors of ``A``.

    ``A`` may carry leading batch axes, shape ``(..., n, m)``; the result has
    shape ``(..., C(n,k), C(m,k))``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise DimensionError("expected a matrix")
    n, m = A.shape[-2:]
    _check_order(n, k)
    _check_order(m, k, "m")
    if comb(n, k) * comb(m, k) * k * k > MAX_ENTRIES:
        raise DimensionError(f"compound of a {n}x{m} matrix at k={k} is too large")
    R = _index_array(n, k)
    C = _index_array(m, k)
    sub = A[..., R[:, None, :, None], C[None, :, None, :]]
    return _det_small(sub)


@lru_cache(maxsize=256)
def _add_plan(n: int, k: int):
    """Index/sign tables for the entrywise additive-compound rule.

    Diagonal entry for combination a is the sum of a_ii over i in a.  An
    off-diagonal entry (a, b) is nonzero only when a and b differ in one
    element: a = c + {i}, b = c + {j}; it equals (-1)^(p+q) a_ij where p, q
    are the positions of i in a and j in b.
    """
    combos = list(itertools.combinations(range(n), k))
    pos = {c: r for r, c in enumerate(combos)}
    rows, cols, src_i, src_j, signs = [], [], [], [], []
    for r, alpha in enumerate(combos):
        aset = set(alpha)
        for p, i in enumerate(alpha):
            rest = alpha[:p] + alpha[p + 1:]
            for j in range(n):
                if j in aset:
                    continue
                beta = tuple(sorted(rest + (j,)))
                q = beta.index(j)
                rows.append(r)
                cols.append(pos[beta])
                src_i.append(i)
                src_j.append(j)
                signs.append(-1.0 if (p + q) % 2 else 1.0)
    diag = np.array(combos, dtype=np.intp).reshape(len(combos), k)
    return (
        diag,
        np.array(rows, dtype=np.intp),
        np.array(cols, dtype=np.intp),
        np.array(src_i, dtype=np.intp),
        np.array(src_j, dtype=np.intp),
        np.array(signs),
    )


def add_compound(A, k: int) -> np.ndarray:
    """k-additive compound, the first-order term of ``(I + eps*A)^(k)``."""
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError("additive compound needs a square matrix")
    n = A.shape[-1]
    _check_order(n, k)
    diag, rows, cols, si, sj, signs = _add_plan(n, k)
    r = diag.shape[0]
    out = np.zeros(A.shape[:-2] + (r, r))
    d = np.diagonal(A, axis1=-2, axis2=-1)
    out[..., np.arange(r), np.arange(r)] = d[..., diag].sum(axis=-1)
    if rows.size:
        out[..., rows, cols] = signs * A[..., si, sj]
    return out


def parallelotope_volume(vectors) -> float:
    """Volume of the parallelotope spanned by k vectors in R^n: ``|V^(k)|_2``."""
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[None, :]
    V = V.T  # vectors as columns
    n, k = V.shape
    _check_order(n, k)
    return float(np.linalg.norm(mult_compound(V, k)))


def compound_similarity(T, A, k: int, cond_tol: float = 1e12) -> np.ndarray:
    """``T^(k) A^[k] (T^(k))^-1``, which equals ``(T A T^-1)^[k]``."""
    T = np.asarray(T, dtype=float)
    A = np.asarray(A, dtype=float)
    if T.shape != A.shape or T.shape[0] != T.shape[1]:
        raise DimensionError("T and A must be square and of equal size")
    c = np.linalg.cond(T)
    if not np.isfinite(c) or c > cond_tol:
        raise np.linalg.LinAlgError(f"T is singular (condition number {c:.3g})")
    Tk = mult_compound(T, k)
    Ak = add_compound(A, k)
    # right-division by Tk without forming an explicit inverse
    return np.linalg.solve(Tk.T, (Tk @ Ak).T).T
