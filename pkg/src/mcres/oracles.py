"""Brute-force references used by tests and the crosscheck command.

Nothing here uses the closed-form kernel or the continued branches: the free
and perturbed resolvents are obtained by sparse direct solves on a large
Dirichlet box, and eigenvalues by dense diagonalization of the truncated
Hamiltonian.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


CHUNK = 64


def laplacian_box(L: int, sparse: bool = True):
    n = 2 * L + 1
    lap = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csc")
    return lap if sparse else lap.toarray()


def dense_free_resolvent(z: complex, L: int) -> np.ndarray:
    return np.linalg.inv(laplacian_box(L, False) - z * np.eye(2 * L + 1))


def _decay_rate(z: complex) -> float:
    # |ζ| for the free kernel at z, from the characteristic roots
    b = 2 - z
    s = np.sqrt(b * b - 4 + 0j)
    r = min(abs((b + s) / 2), abs((b - s) / 2))
    return -math.log(r)


def big_box_for(zs, L: int, digits: float = 30.0, cap: int = 250_000) -> int:
    rate = min(_decay_rate(z) for z in zs)
    extra = math.ceil(digits / (2 * max(rate, 1e-12)))
    return min(L + extra, cap)


def hamiltonian_box(M: np.ndarray, L: int, V: Optional[np.ndarray] = None,
                    L_small: Optional[int] = None, omega: complex = 0.0):
    """Sparse H = Δ⊗I + I⊗M (+ ωV embedded on the central box [-L_small, L_small])."""
    dim = M.shape[0]
    H = sp.kron(laplacian_box(L), sp.identity(dim)) + sp.kron(sp.identity(2 * L + 1), sp.csc_matrix(M))
    H = H.tocsc().astype(complex)
    if V is not None and omega != 0:
        ls = L_small
        off = (L - ls) * dim
        nv = (2 * ls + 1) * dim
        Vs = sp.csc_matrix(np.asarray(V, dtype=complex))
        pad = sp.bmat([[sp.csc_matrix((off, off)), None, None],
                       [None, Vs, None],
                       [None, None, sp.csc_matrix((off, off))]], format="csc")
        assert pad.shape == H.shape and nv == Vs.shape[0]
        H = H + omega * pad
    return H


def weighted_resolvent_oracle(M: np.ndarray, z: complex, weights: np.ndarray, L_big: int,
                              V: Optional[np.ndarray] = None, omega: complex = 0.0) -> np.ndarray:
    """W (H - z)^{-1} W on the small box, W = weights ⊗ I, solved on [-L_big, L_big]."""
    M = np.asarray(M, dtype=complex)
    dim = M.shape[0]
    L = (len(weights) - 1) // 2
    H = hamiltonian_box(M, L_big, V, L, omega)
    A = (H - z * sp.identity(H.shape[0], format="csc")).tocsc()
    lu = spla.splu(A)
    off = (L_big - L) * dim
    nv = (2 * L + 1) * dim
    X = np.empty((nv, nv), dtype=complex)
    for c in range(0, nv, CHUNK):
        cols = min(CHUNK, nv - c)
        rhs = np.zeros((H.shape[0], cols), dtype=complex)
        rhs[off + c + np.arange(cols), np.arange(cols)] = 1.0
        X[:, c:c + cols] = lu.solve(rhs)[off:off + nv, :]
    w = np.repeat(weights, dim)
    return w[:, None] * X * w[None, :]


def box_eigenvalues(M: np.ndarray, V: np.ndarray, omega: complex, L: int, L_pot: int) -> np.ndarray:
    """Eigenvalues of the Dirichlet truncation of H_ω to [-L, L]."""
    H = hamiltonian_box(np.asarray(M, dtype=complex), L, V, L_pot, omega).toarray()
    if np.allclose(H, H.conj().T):
        return np.linalg.eigvalsh(H).astype(complex)
    return np.linalg.eigvals(H)
