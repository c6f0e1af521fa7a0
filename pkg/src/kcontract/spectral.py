"""Symmetric eigenvalues, singular values and the L2 measure of compounds.

Eigenvalue lists are returned as 1-D arrays sorted descending, matching the
ordering lambda_1 >= lambda_2 >= ... used by every certification inequality.
Batched inputs (leading axes) are accepted by the eigen-sum helpers.
"""

from __future__ import annotations

import numpy as np

from .compound import add_compound, DimensionError

__all__ = [
    "NotSymmetricError", "sym_eigs_desc", "top_k_eig_sum", "singular_values_desc",
    "mu2_add_compound", "mu2_add_compound_direct", "is_psd", "sym",
]

SYM_TOL = 1e-9


class NotSymmetricError(ValueError):
    pass


def sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _checked_sym(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise DimensionError("expected a square matrix")
    asym = np.abs(S - np.swapaxes(S, -1, -2)).sum(axis=-1).max(axis=-1)
    scale = np.abs(S).sum(axis=-1).max(axis=-1)
    if np.any(asym > SYM_TOL * scale):
        raise NotSymmetricError(
            f"matrix is not symmetric (asymmetry {np.max(asym):.3g})"
        )
    return sym(S)


def sym_eigs_desc(S) -> np.ndarray:
    """Full real spectrum of a symmetric matrix, descending."""
    return np.linalg.eigvalsh(_checked_sym(S))[..., ::-1]


def top_k_eig_sum(S, k: int) -> np.ndarray | float:
    """Sum of the k largest eigenvalues of symmetric ``S`` (batched)."""
    S = _checked_sym(S)
    n = S.shape[-1]
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} out of range [1, {n}]")
    w = np.linalg.eigvalsh(S)
    out = w[..., n - k:].sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def singular_values_desc(A) -> np.ndarray:
    """Singular values, descending, ``min(rows, cols)`` of them."""
    A = np.asarray(A, dtype=float)
    if A.ndim < 2:
        raise DimensionError("expected a matrix")
    if A.size == 0:
        return np.zeros(A.shape[:-2] + (min(A.shape[-2:]),))
    return np.linalg.svd(A, compute_uv=False)


def mu2_add_compound(A, k: int):
    """L2 matrix measure of ``A^[k]``: the top-k eigen-sum of sym(A)."""
    return top_k_eig_sum(sym(A), k)


def mu2_add_compound_direct(A, k: int) -> float:
    """Same quantity formed explicitly: lambda_max of sym(A^[k])."""
    Ak = add_compound(A, k)
    return float(np.linalg.eigvalsh(sym(Ak))[-1])


def is_psd(S, tol: float = 0.0) -> bool:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return bool(np.linalg.eigvalsh(_checked_sym(S)).min() >= -tol)
