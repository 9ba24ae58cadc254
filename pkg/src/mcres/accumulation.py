"""Case B near the threshold 0: Q_0, E_0, counting functions and sheet checks.

With V = ±(1 ⊗ K*) U (1 ⊗ K), ±U ⪰ 0, write the weighted positive factor as
𝓛 = (𝒰^{1/2})*(1 ⊗ K) so that V_ρ = sign·𝓛*𝓛.  Setting B = 𝓛 (w ⊗ Φ_0), with
Φ_0 an orthonormal basis of Ran π_0, gives Q_0 = B B*/2 and E_0 = B* B.
Resonances then sit near k = -(i/2)·sign·ω·e for the eigenvalues e of E_0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EpsilonOnSpectrum, NotCaseB
from .freeres import WeightScheme, residue_kernels
from .model import ChannelSpectralData
from .perturbation import PotentialSpec, factor_L

SPECTRAL_GAP = 0.1


@dataclass(frozen=True)
class CountingFunction:
    operator: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = np.asarray(self.operator)
        ev = np.linalg.eigvalsh((T + T.conj().T) / 2) if T.size else np.array([])
        object.__setattr__(self, "eigenvalues", ev)

    def count(self, a: float, b: float) -> int:
        """n_[a,b]: eigenvalues in the closed interval, with multiplicity."""
        ev = self.eigenvalues
        return int(np.sum((ev >= a) & (ev <= b)))

    def __call__(self, a: float, b: float) -> int:
        return self.count(a, b)

    def rank(self, rtol: float = 1e-10) -> int:
        ev = np.abs(self.eigenvalues)
        return int(np.sum(ev > rtol * max(ev.max(initial=0.0), 1e-300))) if ev.size else 0


@dataclass(frozen=True)
class SectorSpec:
    theta: float = 0.3
    a: float = 1e-6
    b: float = 0.3

    def __post_init__(self):
        if not (0 < self.a < self.b) or not (0 < self.theta < 1):
            raise ValueError("sector needs 0 < a < b and 0 < theta < 1")

    def contains(self, x: complex) -> bool:
        return self.a <= x.real <= self.b and abs(x.imag) <= self.theta * abs(x.real)


def _zero_basis(S: ChannelSpectralData) -> np.ndarray:
    if S.zero_index is None:
        raise NotCaseB("channel data carries no λ_0 = 0 block")
    return S.range_basis(S.zero_index)


def build_Q0_E0(P: PotentialSpec, W: WeightScheme, S: ChannelSpectralData):
    if P.kind != "B" or S.case != "B":
        raise NotCaseB("Q_0 and E_0 are defined for case B data")
    L = factor_L(P, W)
    Y = np.kron(W.weights_minus[:, None], _zero_basis(S))
    B = L @ Y
    Q0 = 0.5 * (B @ B.conj().T)
    E0 = B.conj().T @ B
    return (Q0 + Q0.conj().T) / 2, (E0 + E0.conj().T) / 2


def q0_from_residue(P: PotentialSpec, W: WeightScheme, S: ChannelSpectralData) -> np.ndarray:
    """Q_0 = -i 𝓛 (a_{-1} ⊗ π_0) 𝓛* assembled from the residue kernel (dense, for checks)."""
    L = factor_L(P, W)
    a, _ = residue_kernels(W)
    return -1j * (L @ np.kron(a, S.projections[S.zero_index]) @ L.conj().T)


def eps_sequence(E0: CountingFunction, count: int = 40, floor: float = 1e-12,
                 start: Optional[float] = None) -> list:
    """Geometric ε_j = start / 2^j, skipping values with an eigenvalue of E_0 within 10% of 2ε_j."""
    ev = E0.eigenvalues
    top = float(np.max(np.abs(ev))) if ev.size else 1.0
    eps = top if start is None else float(start)
    out = []
    while len(out) < count and eps > floor:
        if not _near_spectrum(ev, eps):
            out.append(eps)
        eps /= 2
    return out


def _near_spectrum(ev: np.ndarray, eps: float) -> bool:
    return bool(np.any(np.abs(ev - 2 * eps) < SPECTRAL_GAP * 2 * eps))


@dataclass
class SectorReport:
    passed: bool
    max_im: float
    max_rel_re: float
    theta: float
    count: int

    def as_dict(self):
        return dict(passed=self.passed, max_im_k_over_omega=self.max_im, max_rel_re=self.max_rel_re,
                    theta=self.theta, count=self.count)


def verify_sector(records: list, omega: complex, theta: float = 0.3, sign: int = 1,
                  tol: float = 1e-8) -> SectorReport:
    """sign·Im(k/ω) ≤ tol and |Re(k/ω)| ≤ θ|k/ω| for every record."""
    max_im = -math.inf
    max_re = 0.0
    for r in records:
        x = r.k / omega
        max_im = max(max_im, sign * x.imag)
        max_re = max(max_re, abs(x.real) / abs(x))
    if not records:
        max_im = 0.0
    return SectorReport(max_im <= tol and max_re <= theta, max_im, max_re, theta, len(records))


@dataclass
class CountingReport:
    passed: bool
    rows: list  # dicts with eps, count, expected, deviation, ratio
    saturation: int

    def as_dict(self):
        return dict(passed=self.passed, rows=self.rows, saturation=self.saturation)


def annulus_count(records: list, omega: complex, eps: float, eps0: float) -> int:
    a = abs(omega)
    return sum(r.mult_index for r in records if eps * a < abs(r.k) < eps0 * a)


def verify_counting(records: list, omega: complex, E0: CountingFunction, eps_list, eps0: float,
                    slack: int = 1) -> CountingReport:
    rows = []
    ok = True
    prev = -1
    for eps in eps_list:
        if _near_spectrum(E0.eigenvalues, eps):
            raise EpsilonOnSpectrum(f"eigenvalue of E_0 within 10% of 2ε = {2 * eps:.3g}")
        c = annulus_count(records, omega, eps, eps0)
        e = E0.count(2 * eps, 2.0)
        dev = c - e
        rows.append(dict(eps=float(eps), count=int(c), expected=int(e), deviation=int(dev),
                         ratio=(c / e if e else None)))
        if abs(dev) > slack or c < prev:
            ok = False
        prev = c
    return CountingReport(ok, rows, E0.rank())


@dataclass(frozen=True)
class SheetTag:
    actual: str
    expected: Optional[str]

    @property
    def match(self) -> bool:
        return self.expected is None or self.actual == self.expected


def expected_sheet(omega: complex, sign: int) -> Optional[str]:
    phi = abs(math.atan2(omega.imag, omega.real))
    if abs(phi - math.pi / 2) < 1e-12:
        return None
    positive_side = phi < math.pi / 2
    if sign > 0:
        return "second" if positive_side else "first"
    return "first" if positive_side else "second"


def classify_sheet(record, omega: complex, sign: int) -> SheetTag:
    actual = "first" if record.k.imag > 0 else "second"
    return SheetTag(actual, expected_sheet(complex(omega), sign))


def axis_angle(records: list) -> float:
    """Mean direction of the z-values (weighted by nothing; unit vectors averaged)."""
    if not records:
        return float("nan")
    u = sum(r.z / abs(r.z) for r in records)
    return math.atan2(u.imag, u.real)
