"""Compound matrices: minors, spectra and parallelotope volumes."""

import numpy as np

from kcontract.compound import add_compound, mult_compound

rng = np.random.default_rng(0)

# the 2-compound of a 2 x 3 matrix is its row of 2 x 2 minors, in lex order
A = np.array([[1.0, 2, 3], [4, 5, 6]])
print("A^(2) =", mult_compound(A, 2))

# Cauchy-Binet: (AB)^(k) = A^(k) B^(k)
A, B = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
gap = np.abs(mult_compound(A @ B, 2) - mult_compound(A, 2) @ mult_compound(B, 2)).max()
print("Cauchy-Binet residual:", gap)

# eigenvalues of A^(2) are pairwise products, those of A^[2] pairwise sums
S = rng.standard_normal((4, 4))
S = S + S.T
lam = np.linalg.eigvalsh(S)
i, j = np.triu_indices(4, 1)
print("k-products:", np.allclose(np.sort(lam[i] * lam[j]), np.linalg.eigvalsh(mult_compound(S, 2))))
print("k-sums:    ", np.allclose(np.sort(lam[i] + lam[j]), np.linalg.eigvalsh(add_compound(S, 2))))

# the 2-volume spanned by the columns of V is |V^(2)|
V = rng.standard_normal((3, 2))
print("volume:", np.linalg.norm(mult_compound(V, 2)), "=", np.sqrt(np.linalg.det(V.T @ V)))
