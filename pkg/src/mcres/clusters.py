"""Effective matrices on the range of the residue projector and cluster laws.

At a non-degenerate left threshold the residue of the weighted resolvent is
(i/2)|w><w| ⊗ π_q with w = W_{-ρ}; resonances cluster at -(i/2)α_j ω where α_j
are the eigenvalues of E_q = Π_q V_ρ Π_q on Ran Π_q.  At a degenerate one the
partner channel adds -(1/2)|w~><w~| ⊗ π_p with w~(n) = (-1)^n w(n) and the
centers are -β_j ω.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadParams, OmegaTooLarge
from .freeres import WeightScheme
from .model import ChannelSpectralData, ThresholdEntry

ALPHA_TOL = 1e-7


@dataclass(frozen=True)
class RangeProjector:
    """Π = Y Z with Z Y = I; Y spans Ran Π."""

    Y: np.ndarray
    Z: np.ndarray
    blocks: tuple  # (rank_q, rank_p)

    @property
    def rank(self) -> int:
        return self.Y.shape[1]

    def matrix(self) -> np.ndarray:
        return self.Y @ self.Z


def build_projector(entry: ThresholdEntry, S: ChannelSpectralData, W: WeightScheme) -> RangeProjector:
    w = W.weights_minus
    q = entry.channel
    Phi = S.range_basis(q)
    Ys = [np.kron(w[:, None], Phi)]
    Zs = [np.kron(w[None, :], Phi.conj().T @ S.projections[q])]
    blocks = [Phi.shape[1], 0]
    if entry.degenerate_partner is not None:
        p = entry.degenerate_partner
        wt = W.alternating()
        Php = S.range_basis(p)
        Ys.append(np.kron(wt[:, None], Php))
        Zs.append(np.kron(wt[None, :], Php.conj().T @ S.projections[p]))
        blocks[1] = Php.shape[1]
    return RangeProjector(np.hstack(Ys), np.vstack(Zs), tuple(blocks))


@dataclass(frozen=True)
class EffectiveMatrix:
    matrix: np.ndarray
    degenerate: bool
    threshold: str = ""


def build_effective_matrix(entry: ThresholdEntry, Vrho, proj: RangeProjector,
                           threshold_id: str = "") -> EffectiveMatrix:
    """E_q (or E_{q,p}) in the basis Y of Ran Π.

    ``Vrho`` is either the dense V_ρ or a low-rank pair (A, C) with V_ρ = A C*.
    """
    if isinstance(Vrho, tuple):
        A, C = Vrho
        VY = A @ (C.conj().T @ proj.Y)
    else:
        VY = np.asarray(Vrho) @ proj.Y
    E = proj.Z @ VY
    if entry.degenerate_partner is not None:
        nq, np_ = proj.blocks
        D = np.concatenate([0.5j * np.ones(nq), -0.5 * np.ones(np_)])
        E = E * D[None, :]
    return EffectiveMatrix(E, entry.degenerate_partner is not None, threshold_id)


def cluster_eigenvalues(E: np.ndarray, rtol: float = ALPHA_TOL) -> list:
    """Distinct eigenvalues with algebraic multiplicities, grouped within rtol."""
    vals = np.linalg.eigvals(E) if E.size else np.array([])
    scale = max(1e-300, float(np.max(np.abs(vals)))) if vals.size else 1.0
    groups: list = []
    for v in sorted(vals, key=lambda x: (x.real, x.imag)):
        for g in groups:
            if abs(np.mean(g) - v) <= rtol * scale:
                g.append(v)
                break
        else:
            groups.append([v])
    return [(complex(np.mean(g)), len(g)) for g in groups]


@dataclass
class ClusterPrediction:
    threshold: str
    eigenvalues: list  # [(α or β, m)]
    degenerate: bool
    omega: complex
    constant: float

    def coefficients(self) -> list:
        """c_j with center c_j ω."""
        if self.degenerate:
            return [-v for v, _ in self.eigenvalues]
        return [-0.5j * v for v, _ in self.eigenvalues]

    def centers(self, omega: Optional[complex] = None) -> list:
        w = self.omega if omega is None else omega
        return [c * w for c in self.coefficients()]

    def radii(self, omega: Optional[complex] = None) -> list:
        a = abs(self.omega if omega is None else omega)
        return [self.constant * a ** (1 + 1 / m) for _, m in self.eigenvalues]

    @property
    def total(self) -> int:
        return sum(m for _, m in self.eigenvalues)


def predict_clusters(E: EffectiveMatrix, omega: complex, constant: float = 1.0) -> ClusterPrediction:
    omega = complex(omega)
    if omega == 0:
        raise BadParams("cluster prediction needs ω ≠ 0")
    pred = ClusterPrediction(E.threshold, cluster_eigenvalues(E.matrix), E.degenerate, omega, float(constant))
    cs, rs = pred.centers(), pred.radii()
    for i in range(len(cs)):
        for j in range(i + 1, len(cs)):
            if abs(cs[i] - cs[j]) <= rs[i] + rs[j]:
                raise OmegaTooLarge(f"cluster disks {i} and {j} overlap at |ω| = {abs(omega):.3g}")
    return pred


@dataclass
class ClusterReport:
    passed: bool
    counts: list
    expected: list
    distances: list
    radii: list
    total: int
    expected_total: int
    measured_constant: float
    exact_count_required: bool
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed, "counts": self.counts, "expected": self.expected,
            "distances": self.distances, "radii": self.radii, "total": self.total,
            "expected_total": self.expected_total, "measured_constant": self.measured_constant,
            "exact_count_required": self.exact_count_required, "notes": self.notes,
        }


def verify_clusters(records: list, prediction: ClusterPrediction, selfadjoint: bool = False) -> ClusterReport:
    cs = prediction.centers(prediction.omega)
    rs = prediction.radii(prediction.omega)
    counts = [0] * len(cs)
    dmax = [0.0] * len(cs)
    a = abs(prediction.omega)
    measured = 0.0
    notes = []
    inside = True
    for rec in records:
        j = int(np.argmin([abs(rec.k - c) for c in cs]))
        rec.cluster_id = j
        d = abs(rec.k - cs[j])
        counts[j] += rec.mult_index
        dmax[j] = max(dmax[j], d)
        m = prediction.eigenvalues[j][1]
        measured = max(measured, d / a ** (1 + 1 / m))
        if d > rs[j]:
            inside = False
            notes.append(f"record k={rec.k:.6g} lies {d:.3g} from center {j}, radius {rs[j]:.3g}")
    expected = [m for _, m in prediction.eigenvalues]
    total = sum(counts)
    exact = selfadjoint and not prediction.degenerate
    if exact:
        ok_counts = counts == expected
    else:
        # part (i): at least one, at most m_j per cluster
        ok_counts = all(1 <= c <= m for c, m in zip(counts, expected))
        if prediction.degenerate:
            notes.append("degenerate threshold: counts reported, equality not enforced")
            ok_counts = all(c <= m for c, m in zip(counts, expected))
    passed = inside and ok_counts and (total == prediction.total if exact else True)
    return ClusterReport(passed, counts, expected, dmax, rs, total, prediction.total, measured, exact, notes)


def order_regression(omegas, errors) -> float:
    """Least-squares slope of log(error) against log|ω|."""
    x = np.log(np.abs(np.asarray(omegas, dtype=complex)))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
