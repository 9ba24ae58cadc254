"""Lattice Green function of Δ and its continuation in the local variable k.

For z off [0, 4] the kernel of (Δ - z)^{-1} is ζ^{|n-m|} / (1/ζ - ζ) with
ζ = e^{-iθ(z)} the root of ζ² - (2 - z)ζ + 1 = 0 inside the unit disk.  Near
a threshold λ_q the channel j sees z = z_j + k² with z_j = λ_q - λ_j, and each
channel gets its own analytic branch ζ_j(k) continued from the first quadrant.
All branch formulas are written through S = -sin θ so that D = 1/ζ - ζ = -2iS
never suffers cancellation near k = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ChannelOnThresholdCollision, OnSpectrum, OutsideDisk
from .model import ChannelSpectralData, ThresholdEntry

ON_SPECTRUM_TOL = 1e-14
CLASS_TOL = 1e-12


@dataclass(frozen=True)
class WeightScheme:
    rho: float
    box: int
    sites: np.ndarray = field(init=False, repr=False)
    weights_minus: np.ndarray = field(init=False, repr=False)
    weights_plus: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.rho > 0 or self.box < 1:
            raise ValueError("need rho > 0 and box >= 1")
        n = np.arange(-self.box, self.box + 1)
        w = np.exp(-self.rho * np.abs(n) / 2)
        w = w / np.linalg.norm(w)
        for name, val in (("sites", n), ("weights_minus", w), ("weights_plus", 1.0 / w)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @classmethod
    def default(cls, rho: float, box: Optional[int] = None) -> "WeightScheme":
        if box is None:
            box = default_box(rho)
        return cls(float(rho), int(box))

    @property
    def size(self) -> int:
        return 2 * self.box + 1

    def alternating(self) -> np.ndarray:
        return np.where(self.sites % 2 == 0, 1.0, -1.0) * self.weights_minus


def default_box(rho: float, floor: float = 1e-10) -> int:
    return int(math.floor(2 * math.log(1 / floor) / rho)) + 1


def _zeta(z):
    # root of ζ² - (2 - z)ζ + 1 = 0 with |ζ| < 1
    z = np.asarray(z, dtype=complex)
    b = 2 - z
    s = np.sqrt(b * b - 4)
    r1 = (b + s) / 2
    r2 = (b - s) / 2
    return np.where(np.abs(r1) < np.abs(r2), r1, r2)


def _dist_to_segment(z) -> float:
    z = complex(z)
    x = min(max(z.real, 0.0), 4.0)
    return abs(z - x)


def theta(z: complex) -> complex:
    """Solution of 2 - 2cos θ = z with Im θ < 0 and Re θ in (-π, π]."""
    if _dist_to_segment(z) < ON_SPECTRUM_TOL:
        raise OnSpectrum(f"z = {z} lies on [0, 4]")
    t = complex(1j * np.log(_zeta(z)))
    if t.real <= -math.pi:
        t += 2 * math.pi
    return t


def free_kernel(z: complex, n: int, m: int) -> complex:
    t = theta(z)
    return complex(np.exp(-1j * t * abs(n - m)) / (2j * np.sin(t)))


def free_kernel_column(z: complex, d: np.ndarray) -> np.ndarray:
    """Kernel values at offsets d = n - m (vectorized, no branch fix-ups)."""
    if _dist_to_segment(z) < ON_SPECTRUM_TOL:
        raise OnSpectrum(f"z = {z} lies on [0, 4]")
    zeta = complex(_zeta(z))
    return zeta ** np.abs(d) / (1 / zeta - zeta)


class ChannelBranch:
    """Analytic branch ζ(k) for the channel shift z0, continued from the first quadrant.

    Provides ζ, S = -sin θ and their k-derivatives; ζ = e^{-iθ}, D = -2iS.
    """

    def __init__(self, z0: complex):
        z0 = complex(z0)
        self.z0 = z0
        if abs(z0) <= CLASS_TOL:
            self.kind = "zero"
        elif abs(z0 - 4) <= CLASS_TOL:
            self.kind = "four"
        elif abs(z0.imag) <= CLASS_TOL and 0 < z0.real < 4:
            self.kind = "interior"
            self.z0 = complex(z0.real, 0.0)
        else:
            self.kind = "off"
        # distance from z0 to the nearest branch point of this channel
        if self.kind == "interior":
            self.reach = min(z0.real, 4 - z0.real)
        elif self.kind == "off":
            self.reach = min(abs(z0), abs(z0 - 4))
        elif self.kind == "zero":
            self.reach = 4.0
        else:
            self.reach = 4.0

    def evaluate(self, k):
        """Return (ζ, S, dζ/dk, dS/dk) at k (scalar or array)."""
        k = np.asarray(k, dtype=complex)
        if self.kind == "zero":
            r = np.sqrt(4 - k * k)
            S = k * r / 2
            zeta = 1 - k * k / 2 + 1j * S
            dS = (2 - k * k) / r
        elif self.kind == "four":
            r = np.sqrt(4 + k * k)
            zeta = -1 - k * k / 2 + k * r / 2
            S = -0.5j * k * r
            dS = -1j * (2 + k * k) / r
        elif self.kind == "interior":
            w = (2 - self.z0 - k * k) / 2
            S = np.sqrt(1 - w * w)
            zeta = w + 1j * S
            dS = w * k / S
        else:
            zeta = _zeta(self.z0 + k * k)
            w = (2 - self.z0 - k * k) / 2
            S = (zeta - w) / 1j
            dzeta = 2 * k * zeta * zeta / (1 - zeta * zeta)
            dS = (dzeta + k) / 1j
            return zeta, S, dzeta, dS
        dzeta = -k + 1j * dS
        return zeta, S, dzeta, dS

    def theta(self, k):
        zeta, S, _, _ = self.evaluate(k)
        if self.kind == "zero":
            return -2 * np.arcsin(np.asarray(k, dtype=complex) / 2)
        if self.kind == "interior":
            return -np.arccos((2 - self.z0 - np.asarray(k, dtype=complex) ** 2) / 2)
        return 1j * np.log(zeta)


def theta_continued(z0: complex, k: complex, eps0: float = 0.3) -> complex:
    if abs(k) >= eps0:
        raise OutsideDisk(f"|k| = {abs(k):.3g} >= eps0 = {eps0}")
    br = ChannelBranch(z0)
    if br.kind == "zero" and k == 0:
        raise OutsideDisk("k = 0 is excluded at the threshold itself")
    if br.kind == "four":
        return complex(-math.pi - 2j * np.arcsinh(k / 2))
    return complex(br.theta(k))


def default_eps0(S: ChannelSpectralData, q: int, partner: Optional[int] = None, cap: float = 0.3) -> float:
    """min(cap, half of sqrt(distance from the threshold to the nearest other critical set))."""
    lam = S.eigenvalues
    d = math.inf
    for j in range(len(lam)):
        if j == q or j == partner:
            continue
        z0 = complex(lam[q] - lam[j])
        if abs(z0.imag) <= CLASS_TOL and 0 < z0.real < 4:
            dist = min(z0.real, 4 - z0.real)
        else:
            dist = _dist_to_segment(z0)
        d = min(d, dist)
    if not math.isfinite(d):
        return cap
    return min(cap, 0.5 * math.sqrt(d))


class ContinuedResolvent:
    """Weighted free resolvent R(k) = Σ_j K_j(k) ⊗ π_j near the threshold λ_q.

    Ordering of the truncated space is site-major: index = (n + L)·dim + c.
    """

    def __init__(self, S: ChannelSpectralData, q: int, W: WeightScheme,
                 eps0: Optional[float] = None, partner: Optional[int] = None):
        self.spectral = S
        self.q = q
        self.weights = W
        self.partner = partner
        lam = S.eigenvalues
        self.shifts = np.array([lam[q] - lam[j] for j in range(len(lam))])
        self.branches = [ChannelBranch(z) for z in self.shifts]
        for j, br in enumerate(self.branches):
            if br.kind == "zero" and j != q:
                raise ChannelOnThresholdCollision(f"channel {j} duplicates threshold {lam[q]}")
            if br.kind == "four" and j != partner:
                raise ChannelOnThresholdCollision(
                    f"channel {j} has z_j = 4 but is not declared a degenerate partner"
                )
        self.eps0 = default_eps0(S, q, partner) if eps0 is None else float(eps0)
        self.eps0 = min(self.eps0, 0.5 * W.rho) if eps0 is None else self.eps0
        n = W.sites
        self._dist = np.abs(n[:, None] - n[None, :])
        self._ww = np.outer(W.weights_minus, W.weights_minus)
        self._proj = [np.asarray(p) for p in S.projections]
        # rank factorizations π_j = Φ_j Ψ_j*
        self._phi, self._psi_h = [], []
        for j in range(len(lam)):
            Phi = S.range_basis(j)
            self._phi.append(Phi)
            self._psi_h.append(Phi.conj().T @ self._proj[j])

    @property
    def dim(self) -> int:
        return self.spectral.dim

    @property
    def size(self) -> int:
        return self.weights.size * self.dim

    def z(self, k):
        return self.spectral.eigenvalues[self.q] + np.asarray(k) ** 2

    def _check(self, k):
        if abs(k) >= self.eps0:
            raise OutsideDisk(f"|k| = {abs(k):.3g} outside continuation disk {self.eps0:.3g}")
        if k == 0 and any(b.kind in ("zero", "four") for b in self.branches):
            raise OutsideDisk("k = 0 is the threshold itself")

    def site_kernels(self, k: complex, derivative: bool = False) -> list:
        """Weighted scalar kernels K_j(k) (and K_j'(k) if requested), one per channel."""
        self._check(k)
        out = []
        d = self._dist
        span = np.arange(self.weights.size)
        for br in self.branches:
            zeta, S, dzeta, dS = (complex(x) for x in br.evaluate(k))
            D = -2j * S
            pw = zeta ** span
            p = pw[d]
            K = p / D * self._ww
            if derivative:
                dD = -2j * dS
                dpw = np.zeros_like(pw)
                dpw[1:] = span[1:] * pw[:-1] * dzeta
                dK = (dpw[d] / D - p * dD / (D * D)) * self._ww
                out.append((K, dK))
            else:
                out.append(K)
        return out

    def matrix(self, k: complex) -> np.ndarray:
        return sum(np.kron(K, P) for K, P in zip(self.site_kernels(k), self._proj))

    def derivative(self, k: complex) -> np.ndarray:
        return sum(np.kron(dK, P) for (_, dK), P in zip(self.site_kernels(k, True), self._proj))

    def apply(self, k: complex, X: np.ndarray, derivative: bool = False, kernels=None) -> np.ndarray:
        """R(k) @ X (or R'(k) @ X) without forming the full matrix."""
        X = np.asarray(X, dtype=complex)
        ns, dim = self.weights.size, self.dim
        cols = X.shape[1]
        Xt = X.reshape(ns, dim, cols).transpose(1, 0, 2).reshape(dim, ns * cols)
        kers = kernels if kernels is not None else self.site_kernels(k, derivative)
        out = np.zeros((dim, ns * cols), dtype=complex)
        for ker, Phi, Psih in zip(kers, self._phi, self._psi_h):
            K = ker[1] if derivative else (ker[0] if isinstance(ker, tuple) else ker)
            nu = Phi.shape[1]
            Y = (Psih @ Xt).reshape(nu, ns, cols).transpose(1, 0, 2).reshape(ns, nu * cols)
            Z = (K @ Y).reshape(ns, nu, cols).transpose(1, 0, 2).reshape(nu, ns * cols)
            out += Phi @ Z
        return out.reshape(dim, ns, cols).transpose(1, 0, 2).reshape(ns * dim, cols)

    def channel_factors(self):
        return list(zip(self._phi, self._psi_h))

    def apply_pair(self, k: complex, X: np.ndarray):
        kers = self.site_kernels(k, True)
        return self.apply(k, X, False, kers), self.apply(k, X, True, kers)


def assemble_continued_resolvent(S: ChannelSpectralData, q: int, W: WeightScheme,
                                 eps0: Optional[float] = None,
                                 entry: Optional[ThresholdEntry] = None) -> ContinuedResolvent:
    partner = entry.degenerate_partner if entry is not None else None
    return ContinuedResolvent(S, q, W, eps0, partner)


def residue_kernels(W: WeightScheme):
    """Site kernels a_{-1} and b_{-1} of the pole part."""
    w = W.weights_minus
    a = 0.5j * np.outer(w, w)
    s = W.alternating()
    b = -0.5 * np.outer(s, s)
    return a, b


def pole_residue(R: ContinuedResolvent) -> np.ndarray:
    a, b = residue_kernels(R.weights)
    res = np.kron(a, R._proj[R.q])
    if R.partner is not None:
        res = res + np.kron(b, R._proj[R.partner])
    return res


def singular_split(R: ContinuedResolvent, entry: Optional[ThresholdEntry] = None):
    """Return (residue, G) with R(k) = residue / k + G(k), G holomorphic near 0."""
    if entry is not None and entry.degenerate_partner != R.partner:
        raise ValueError("catalog entry does not match the resolvent's degeneracy")
    res = pole_residue(R)

    def G(k: complex) -> np.ndarray:
        return R.matrix(k) - res / k

    return res, G
