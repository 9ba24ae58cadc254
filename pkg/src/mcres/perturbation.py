"""Potentials V(n, m) on l2(Z) ⊗ G and the Birman-Schwinger type families.

A potential is a sum of terms.  A site term places a block at one site pair;
a separable term is f(n) g(m) B with exponential profiles f, g.  In case B the
kernel is V = (1 ⊗ K*) U (1 ⊗ K) with U built from the same terms and a sign.

All numerical work goes through a low-rank factorization V_ρ = A C* of the
weighted potential: det(I + ω V_ρ R) = det(I_r + ω C* R A), so zeros are
searched on the small r × r family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadParams, DecayViolation, NotCaseB, NotSignDefinite
from .freeres import ContinuedResolvent, WeightScheme

DROP_TOL = 1e-14


@dataclass(frozen=True)
class SiteTerm:
    n: int
    m: int
    block: np.ndarray

    def profiles(self, sites):
        f = (sites == self.n).astype(float)
        g = (sites == self.m).astype(float)
        return f, g


@dataclass(frozen=True)
class SeparableTerm:
    """f(n) g(m) B with f(n) = s^n e^{-a|n|}, g(m) = t^m e^{-b|m|}."""

    left_rate: float
    right_rate: float
    block: np.ndarray
    left_sign: int = 1
    right_sign: int = 1

    def profiles(self, sites):
        f = np.exp(-self.left_rate * np.abs(sites)) * np.where(sites % 2 == 0, 1.0, float(self.left_sign))
        g = np.exp(-self.right_rate * np.abs(sites)) * np.where(sites % 2 == 0, 1.0, float(self.right_sign))
        return f, g


@dataclass(frozen=True)
class DecayReport:
    passed: bool
    constant: float
    rho: float
    worst_ratio: float
    margins: tuple  # (n, m, ‖V(n,m)‖ / (C e^{-ρ(|n|+|m|)}))


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    terms: tuple
    rho: float
    dim: int
    decay_constant: Optional[float] = None
    K: Optional[np.ndarray] = None
    sign: int = 1

    def __post_init__(self):
        if self.kind not in ("A", "B"):
            raise BadParams("potential kind must be 'A' or 'B'")
        for t in self.terms:
            b = np.asarray(t.block)
            if b.shape != (self.dim, self.dim):
                raise BadParams(f"block shape {b.shape} does not match dim {self.dim}")
        if self.kind == "B":
            if self.K is None:
                raise BadParams("case B potential needs the compact factor K")
            if np.asarray(self.K).shape != (self.dim, self.dim):
                raise BadParams("K must be dim x dim")
            if self.sign not in (1, -1):
                raise BadParams("sign must be +1 or -1")

    # -- kernel access -------------------------------------------------------
    def _kfac(self) -> np.ndarray:
        return np.eye(self.dim) if self.kind == "A" else np.asarray(self.K, dtype=complex)

    def channel_blocks(self) -> list:
        """Blocks of V per term, K* U K in case B (sign included)."""
        K = self._kfac()
        s = 1 if self.kind == "A" else self.sign
        return [s * (K.conj().T @ np.asarray(t.block, dtype=complex) @ K) for t in self.terms]

    def block_at(self, n: int, m: int) -> np.ndarray:
        sites = np.array([n, m])
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for t, B in zip(self.terms, self.channel_blocks()):
            f, _ = t.profiles(sites[:1])
            _, g = t.profiles(sites[1:])
            out += f[0] * g[0] * B
        return out

    def dense(self, W: WeightScheme, weighted: bool = False) -> np.ndarray:
        """V (or V_ρ) on the truncated space, site-major ordering."""
        sites = W.sites
        N = W.size * self.dim
        out = np.zeros((N, N), dtype=complex)
        for t, B in zip(self.terms, self.channel_blocks()):
            f, g = t.profiles(sites)
            if weighted:
                f = f * W.weights_plus
                g = g * W.weights_plus
            out += np.kron(np.outer(f, g), B)
        return out

    def lowrank(self, W: WeightScheme, tol: float = 1e-13):
        """Factors (A, C) with V_ρ = A C* on the truncation, compressed by SVD."""
        sites = W.sites
        As, Cs = [], []
        eye = np.eye(self.dim)
        for t, B in zip(self.terms, self.channel_blocks()):
            f, g = t.profiles(sites)
            f = f * W.weights_plus
            g = g * W.weights_plus
            As.append(np.kron(f[:, None], B))
            Cs.append(np.kron(np.conj(g)[:, None], eye))
        if not As:
            N = W.size * self.dim
            return np.zeros((N, 0), complex), np.zeros((N, 0), complex)
        A = np.hstack(As)
        C = np.hstack(Cs)
        Qa, Ra = np.linalg.qr(A)
        Qc, Rc = np.linalg.qr(C)
        U, s, Vh = np.linalg.svd(Ra @ Rc.conj().T)
        keep = s > tol * (s[0] if s.size and s[0] > 0 else 1.0)
        if s.size == 0 or s[0] == 0:
            keep[:] = False
        A = Qa @ (U[:, keep] * s[keep])
        C = Qc @ Vh[keep].conj().T
        return A, C

    def is_hermitian(self, W: WeightScheme) -> bool:
        V = self.dense(W)
        return np.allclose(V, V.conj().T, atol=1e-12 * max(1.0, np.abs(V).max()))

    def reflected(self) -> "PotentialSpec":
        """-J V J with J = diag((-1)^n): the potential of the reflected family.

        Case A negates the blocks; case B keeps U ⪰ 0 and flips the sign instead.
        """
        flip = -1 if self.kind == "A" else 1
        terms = []
        for t in self.terms:
            b = flip * np.asarray(t.block)
            if isinstance(t, SiteTerm):
                s = (-1) ** ((t.n + t.m) % 2)
                terms.append(SiteTerm(t.n, t.m, s * b))
            else:
                terms.append(SeparableTerm(t.left_rate, t.right_rate, b, -t.left_sign, -t.right_sign))
        sign = self.sign if self.kind == "A" else -self.sign
        return PotentialSpec(self.kind, tuple(terms), self.rho, self.dim, self.decay_constant,
                             self.K, sign)


def site_potential(blocks: dict, rho: float, dim: int, **kw) -> PotentialSpec:
    terms = tuple(SiteTerm(int(n), int(m), np.asarray(b, dtype=complex)) for (n, m), b in blocks.items())
    return PotentialSpec("A", terms, rho, dim, **kw)


def validate_decay(P: PotentialSpec, W: Optional[WeightScheme] = None, raise_on_fail: bool = True) -> DecayReport:
    """Check ‖V(n,m)‖ ≤ C e^{-ρ(|n|+|m|)} at every site pair of the lattice box.

    Without an explicit constant C defaults to the largest block norm.
    """
    box = W.box if W is not None else 60
    sites = np.arange(-box, box + 1)
    rho = P.rho
    blocks = P.channel_blocks()
    F = np.array([t.profiles(sites)[0] for t in P.terms]).reshape(len(P.terms), -1)
    G = np.array([t.profiles(sites)[1] for t in P.terms]).reshape(len(P.terms), -1)
    B = np.array(blocks).reshape(len(P.terms), P.dim, P.dim)
    norms = np.zeros((len(sites), len(sites)))
    for i in range(len(sites)):
        if not np.any(F[:, i]):
            continue
        blk = np.einsum("t,tm,tij->mij", F[:, i], G, B)
        norms[i] = np.linalg.norm(blk, 2, axis=(1, 2))
    keep = norms >= DROP_TOL
    C = float(norms.max()) if P.decay_constant is None else float(P.decay_constant)
    decay = np.exp(-rho * (np.abs(sites)[:, None] + np.abs(sites)[None, :]))
    margins = []
    worst = 0.0
    for i, j in zip(*np.nonzero(keep)):
        bound = C * decay[i, j]
        r = norms[i, j] / bound if bound > 0 else math.inf
        margins.append((int(sites[i]), int(sites[j]), float(r)))
        worst = max(worst, r)
    passed = worst <= 1 + 1e-9
    report = DecayReport(passed, C, rho, worst, tuple(margins))
    if raise_on_fail and not passed:
        raise DecayViolation(f"kernel exceeds {C:.3g} e^(-{rho}(|n|+|m|)) (worst ratio {worst:.3g})", report)
    return report


def check_sign_definite(P: PotentialSpec, W: WeightScheme, tol: float = 1e-10) -> None:
    """Require U Hermitian and U ⪰ 0 on the truncation (the sign is carried separately).

    Works on the compressed form Q H Q* = W_ρ U W_ρ, exact because Q spans
    the column and row spaces of every term.
    """
    if P.kind != "B":
        raise NotCaseB("sign-definiteness applies to case B potentials")
    Q, H = _compressed_u(P, W)
    scale = max(1.0, float(np.abs(H).max())) if H.size else 1.0
    if not np.allclose(H, H.conj().T, atol=1e-12 * scale, rtol=0):
        raise NotSignDefinite("U is not Hermitian")
    ev = np.linalg.eigvalsh((H + H.conj().T) / 2) if H.size else np.zeros(0)
    if ev.size and ev.min() < -tol * max(1.0, np.abs(ev).max()):
        raise NotSignDefinite(f"U has eigenvalue {ev.min():.3g} < 0")


def _compressed_u(P: PotentialSpec, W: WeightScheme):
    Fs, Gs, Bs = _u_factors(P, W, True)
    eye = np.eye(P.dim)
    A = np.hstack([np.kron(f[:, None], B) for f, B in zip(Fs, Bs)])
    C = np.hstack([np.kron(np.conj(g)[:, None], eye) for g in Gs])
    Q, _ = np.linalg.qr(np.hstack([A, C]))
    return Q, (Q.conj().T @ A) @ (C.conj().T @ Q)


def _u_factors(P: PotentialSpec, W: WeightScheme, weighted: bool):
    sites = W.sites
    Fs, Gs, Bs = [], [], []
    for t in P.terms:
        f, g = t.profiles(sites)
        if weighted:
            f = f * W.weights_plus
            g = g * W.weights_plus
        Fs.append(f)
        Gs.append(g)
        Bs.append(np.asarray(t.block, dtype=complex))
    return Fs, Gs, Bs


def _dense_u(P: PotentialSpec, W: WeightScheme, weighted: bool) -> np.ndarray:
    Fs, Gs, Bs = _u_factors(P, W, weighted)
    N = W.size * P.dim
    U = np.zeros((N, N), dtype=complex)
    for f, g, B in zip(Fs, Gs, Bs):
        U += np.kron(np.outer(f, g), B)
    return U


def weighted_u_sqrt(P: PotentialSpec, W: WeightScheme, tol: float = 1e-13) -> np.ndarray:
    """Factor Y (N × r) with Y Y* = 𝒰 = W_ρ U W_ρ for U ⪰ 0."""
    Q, H = _compressed_u(P, W)
    H = (H + H.conj().T) / 2
    ev, U = np.linalg.eigh(H)
    scale = max(1.0, np.abs(ev).max())
    if ev.min() < -1e-10 * scale:
        raise NotSignDefinite(f"U has eigenvalue {ev.min():.3g} < 0")
    keep = ev > tol * scale
    return Q @ (U[:, keep] * np.sqrt(ev[keep]))


def assemble_Vrho(P: PotentialSpec, W: WeightScheme, validate: bool = True) -> np.ndarray:
    if validate:
        validate_decay(P, W)
    return P.dense(W, weighted=True)


def assemble_P(P: PotentialSpec, omega: complex, R: ContinuedResolvent, k: complex,
               Vrho: Optional[np.ndarray] = None) -> np.ndarray:
    if Vrho is None:
        Vrho = assemble_Vrho(P, R.weights)
    if omega == 0:
        return np.zeros((R.size, R.size), dtype=complex)
    return omega * (Vrho @ R.matrix(k))


def factor_L(P: PotentialSpec, W: WeightScheme) -> np.ndarray:
    """Matrix 𝓛 (r × N) with V_ρ = sign·𝓛*𝓛, 𝓛 = (𝒰^{1/2})*(1 ⊗ K) restricted to Ran 𝒰.

    Case B terms describe U ⪰ 0; the sign of V is carried by ``P.sign``.
    """
    if P.kind != "B":
        raise NotCaseB("the symmetric factorization needs a case B potential")
    Y = weighted_u_sqrt(P, W)
    K = np.asarray(P.K, dtype=complex)
    return _apply_k_rows(Y.conj().T, K, W.size)


def _apply_k_rows(Yh: np.ndarray, K: np.ndarray, ns: int) -> np.ndarray:
    # Yh (1 ⊗ K) without forming the block-diagonal matrix
    r = Yh.shape[0]
    return (Yh.reshape(r, ns, -1) @ K).reshape(r, -1)


def assemble_X(P: PotentialSpec, omega: complex, R: ContinuedResolvent, k: complex,
               L: Optional[np.ndarray] = None) -> np.ndarray:
    """X_ω = sign·ω 𝓛 R(k) 𝓛* on Ran 𝒰 (the symmetric Birman-Schwinger form)."""
    if L is None:
        L = factor_L(P, R.weights)
    if omega == 0:
        return np.zeros((L.shape[0], L.shape[0]), dtype=complex)
    return P.sign * omega * (L @ R.apply(k, L.conj().T))


class ReducedFamily:
    """F(k) = I_r + ω C* R(k) A and its derivative; det F = det(I + ω V_ρ R(k)).

    The factors are compressed per channel in the lattice direction: with
    (I ⊗ Ψ_j*)A = U_j T_j and (I ⊗ Φ_j*)C = X_j Y_j, the channel contribution
    is Y_j*(X_j* K_j U_j)T_j, so one evaluation costs O(ns²·s) for site rank s.
    """

    def __init__(self, R: ContinuedResolvent, A: np.ndarray, C: np.ndarray, omega: complex):
        self.R = R
        self.A = A
        self.C = C
        self.omega = complex(omega)
        self._parts = self._compress() if self.rank else []

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def _compress(self):
        R = self.R
        ns, dim, r = R.weights.size, R.dim, self.rank
        A3 = self.A.reshape(ns, dim, r)
        C3 = self.C.reshape(ns, dim, r)
        parts = []
        for Phi, Psih in R.channel_factors():
            nu = Phi.shape[1]
            At = np.einsum("cd,ndr->ncr", Psih, A3).reshape(ns, nu * r)
            Ct = np.einsum("dc,ndr->ncr", Phi.conj(), C3).reshape(ns, nu * r)
            U, T = _site_split(At)
            X, Y = _site_split(Ct)
            if U.shape[1] == 0 or X.shape[1] == 0:
                parts.append(None)
                continue
            Yc = Y.reshape(X.shape[1], nu, r).conj()
            parts.append((U, T.reshape(U.shape[1], nu * r), X.conj().T, Yc))
        return parts

    def _core(self, kernels, which: int) -> np.ndarray:
        r = self.rank
        out = np.zeros((r, r), dtype=complex)
        for part, ker in zip(self._parts, kernels):
            if part is None:
                continue
            U, T, Xh, Yc = part
            K = ker[which] if isinstance(ker, tuple) else ker
            G = Xh @ (K @ U)  # t × s
            W1 = (G @ T).reshape(Yc.shape)  # t × ν × r
            out += Yc.reshape(-1, r).T @ W1.reshape(-1, r)
        return out

    def __call__(self, k: complex) -> np.ndarray:
        r = self.rank
        if self.omega == 0 or r == 0:
            return np.eye(r, dtype=complex)
        return np.eye(r) + self.omega * self._core(self.R.site_kernels(k), 0)

    def pair(self, k: complex):
        r = self.rank
        if self.omega == 0 or r == 0:
            return np.eye(r, dtype=complex), np.zeros((r, r), dtype=complex)
        kers = self.R.site_kernels(k, True)
        return (np.eye(r) + self.omega * self._core(kers, 0), self.omega * self._core(kers, 1))

    def derivative(self, k: complex) -> np.ndarray:
        return self.pair(k)[1]

    def perturbed_apply(self, k: complex, X: np.ndarray) -> np.ndarray:
        """𝓡_ω(k) X = R(I + ωV_ρR)^{-1} X via the Woodbury identity."""
        kers = self.R.site_kernels(k)
        if self.omega == 0 or self.rank == 0:
            return self.R.apply(k, X, kernels=kers)
        Y = self.R.apply(k, np.hstack([X, self.A]), kernels=kers)
        RX, RA = Y[:, : X.shape[1]], Y[:, X.shape[1]:]
        F = np.eye(self.rank) + self.omega * self._core(kers, 0)
        return RX - self.omega * RA @ np.linalg.solve(F, self.C.conj().T @ RX)


def _site_split(M: np.ndarray, tol: float = 1e-15):
    """M (ns × q) = U T with U orthonormal columns of minimal rank."""
    if not np.any(M):
        return np.zeros((M.shape[0], 0)), np.zeros((0, M.shape[1]))
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    keep = s > tol * s[0]
    return U[:, keep], s[keep, None] * Vh[keep]


def reduced_family(P: PotentialSpec, omega: complex, R: ContinuedResolvent, factors=None) -> ReducedFamily:
    A, C = factors if factors is not None else P.lowrank(R.weights)
    return ReducedFamily(R, A, C, complex(omega))
