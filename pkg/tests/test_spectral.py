import numpy as np
import pytest

import oracles
from kcontract.compound import DimensionError, mult_compound
from kcontract.spectral import (
    NotSymmetricError, is_psd, mu2_add_compound, mu2_add_compound_direct, singular_values_desc,
    sym_eigs_desc, top_k_eig_sum,
)


def test_sym_eigs_desc_ordering(rng):
    S = rng.standard_normal((5, 5))
    S = S + S.T
    w = sym_eigs_desc(S)
    assert np.all(np.diff(w) <= 0)
    np.testing.assert_allclose(np.sort(w), np.sort(np.linalg.eigvals(S).real), atol=1e-12)
    with pytest.raises(NotSymmetricError):
        sym_eigs_desc([[0.0, 1.0], [0.0, 0.0]])


def test_top_k_eig_sum(rng):
    assert top_k_eig_sum(np.diag([3.0, -1.0, 2.0]), 2) == pytest.approx(5.0)
    S = rng.standard_normal((6, 6))
    S = S + S.T
    for k in range(1, 7):
        assert top_k_eig_sum(S, k) == pytest.approx(oracles.top_k_sum_by_sort(S, k), abs=1e-12)
    assert top_k_eig_sum(S, 6) == pytest.approx(np.trace(S))
    with pytest.raises(DimensionError):
        top_k_eig_sum(S, 7)
    batch = np.stack([S, 2 * S])
    np.testing.assert_allclose(top_k_eig_sum(batch, 2), [top_k_eig_sum(S, 2), 2 * top_k_eig_sum(S, 2)])


def test_singular_values(rng):
    np.testing.assert_allclose(singular_values_desc(np.diag([1.0, -3.0])), [3.0, 1.0])
    A = rng.standard_normal((4, 2))
    s = singular_values_desc(A)
    assert s.shape == (2,)
    np.testing.assert_allclose(s ** 2, np.sort(np.linalg.eigvalsh(A.T @ A))[::-1], rtol=1e-12)
    assert singular_values_desc(np.zeros((3, 0))).shape == (0,)


def test_mu2_of_additive_compound(rng):
    for _ in range(50):
        n = int(rng.integers(1, 7))
        k = int(rng.integers(1, n + 1))
        A = rng.standard_normal((n, n))
        half = 0.5 * top_k_eig_sum(A + A.T, k)
        assert mu2_add_compound(A, k) == pytest.approx(half, abs=1e-8)
        assert mu2_add_compound_direct(A, k) == pytest.approx(half, abs=1e-8)


def test_is_psd(rng):
    assert is_psd(np.eye(3))
    assert not is_psd(np.diag([1.0, -1.0]))
    assert is_psd(np.diag([1.0, -1e-12]), tol=1e-9)
    T = rng.standard_normal((4, 4))
    assert is_psd(T.T @ T, tol=1e-12)
    with pytest.raises(ValueError):
        is_psd(np.eye(2), tol=-1)


def test_gram_compound_sandwich(rng):
    # singular values of Theta in [sqrt(s1), sqrt(s2)] put the spectrum of
    # (Theta^T Theta)^(k) inside [s1^k, s2^k]
    s1, s2 = 0.5, 3.0
    for _ in range(30):
        n = int(rng.integers(1, 6))
        k = int(rng.integers(1, n + 1))
        U, _ = np.linalg.qr(rng.standard_normal((n, n)))
        V, _ = np.linalg.qr(rng.standard_normal((n, n)))
        Theta = U @ np.diag(np.sqrt(rng.uniform(s1, s2, n))) @ V.T
        w = np.linalg.eigvalsh(mult_compound(Theta.T @ Theta, k))
        assert w.min() >= s1 ** k * (1 - 1e-12)
        assert w.max() <= s2 ** k * (1 + 1e-12)
