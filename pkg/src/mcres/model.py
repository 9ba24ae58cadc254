"""Channel operator M: presets, diagonalization and the threshold taxonomy.

The full Hamiltonian acts on l2(Z) ⊗ G as H_0 = Δ ⊗ I + I ⊗ M.  Each
eigenvalue λ_q of M opens a band [λ_q, λ_q + 4]; the band edges are the
thresholds.  In case B the channel space is (a truncation of) an infinite
dimensional space and M has finite rank, so λ_0 = 0 carries the large
complementary projection π_0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import AmbiguousDegeneracy, BadParams, NonDiagonalizable

CLUSTER_TOL = 1e-9
DEGENERACY_TOL = 1e-12
COND_LIMIT = 1e10


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray
    rank_hint: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise BadParams("channel matrix must be square with dim >= 1")
        if not np.all(np.isfinite(a)):
            raise BadParams("channel matrix has non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ChannelSpectralData:
    """Distinct eigenvalues λ_q of M with Riesz projections π_q.

    In case B the first entry is λ_0 = 0 and ``zero_index`` is 0.
    """

    eigenvalues: np.ndarray
    projections: tuple
    multiplicities: tuple
    diagonalizable: bool
    condition: float
    case: str = "A"
    zero_index: Optional[int] = None
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.projections[0].shape[0]

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def index_of(self, value: complex, tol: float = 1e-8) -> int:
        d = np.abs(self.eigenvalues - value)
        q = int(np.argmin(d))
        if d[q] > tol * max(1.0, abs(value)):
            raise BadParams(f"no channel eigenvalue at {value}")
        return q

    def range_basis(self, q: int) -> np.ndarray:
        """Orthonormal basis of Ran π_q (QR with column pivoting)."""
        Q, R, _ = sla.qr(self.projections[q], pivoting=True, mode="economic")
        return Q[:, : self.multiplicities[q]]


def _group(values: np.ndarray, tol: float) -> list[list[int]]:
    # single-linkage grouping, deterministic order by (re, im)
    order = sorted(range(len(values)), key=lambda i: (values[i].real, values[i].imag))
    groups: list[list[int]] = []
    for i in order:
        for g in groups:
            if min(abs(values[i] - values[j]) for j in g) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    # merge chains that single pass may have split
    merged = True
    while merged:
        merged = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if min(abs(values[i] - values[j]) for i in groups[a] for j in groups[b]) <= tol:
                    groups[a].extend(groups.pop(b))
                    merged = True
                    break
            if merged:
                break
    groups.sort(key=lambda g: (np.mean(values[g]).real, np.mean(values[g]).imag))
    return groups


def _check_defective(a: np.ndarray, vals: np.ndarray, scale: float) -> None:
    # loose grouping exposes Jordan blocks that rounding splits apart
    for g in _group(vals, 1e-6 * scale):
        if len(g) < 2:
            continue
        lam = np.mean(vals[g])
        s = np.linalg.svd(a - lam * np.eye(a.shape[0]), compute_uv=False)
        nullity = int(np.sum(s <= 1e-7 * scale))
        if nullity < len(g):
            raise NonDiagonalizable(
                f"eigenvalue {lam:.6g} has algebraic multiplicity {len(g)} but geometric {nullity}"
            )


def diagonalize_channel(M: ChannelMatrix, case: str = "A") -> ChannelSpectralData:
    a = M.entries
    scale = max(1.0, float(np.linalg.norm(a, 2)))
    tol = CLUSTER_TOL * scale
    hermitian = np.allclose(a, a.conj().T, atol=1e-14 * scale, rtol=0)
    if hermitian:
        vals, vecs = np.linalg.eigh(a)
        vals = vals.astype(complex)
        vinv = vecs.conj().T
        cond = 1.0
    else:
        vals, vecs = np.linalg.eig(a)
        vecs = vecs / np.linalg.norm(vecs, axis=0)
        cond = float(np.linalg.cond(vecs))
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise NonDiagonalizable(f"eigenvector condition number {cond:.3g}")
        _check_defective(a, vals, scale)
        vinv = np.linalg.inv(vecs)
    groups = _group(vals, tol)
    zero_index = None
    if case == "B":
        zg = [i for i, g in enumerate(groups) if abs(np.mean(vals[g])) <= tol]
        if zg:
            groups.insert(0, groups.pop(zg[0]))
        zero_index = 0
    eigs, projs, mults = [], [], []
    for k, g in enumerate(groups):
        lam = complex(np.mean(vals[g]))
        if case == "B" and k == 0 and abs(lam) <= tol:
            lam = 0j
        p = vecs[:, g] @ vinv[g, :]
        p.setflags(write=False)
        eigs.append(lam)
        projs.append(p)
        mults.append(len(g))
    if case == "B" and (not eigs or eigs[0] != 0j):
        raise BadParams("case B requires a nontrivial kernel of M in the truncation")
    e = np.array(eigs)
    e.setflags(write=False)
    return ChannelSpectralData(e, tuple(projs), tuple(mults), True, cond, case, zero_index, a)


@dataclass(frozen=True)
class ThresholdEntry:
    value: complex
    side: str  # "left" | "right"
    channel: int
    degenerate_partner: Optional[int] = None
    klass: str = "A"

    @property
    def degenerate(self) -> bool:
        return self.degenerate_partner is not None

    @property
    def ident(self) -> str:
        v = self.value
        tag = f"{v.real:.6g}" if abs(v.imag) < 1e-12 else f"{v.real:.6g}{v.imag:+.6g}j"
        return f"{self.side[0].upper()}{self.channel}@{tag}"


@dataclass(frozen=True)
class ThresholdCatalog:
    entries: tuple
    case: str

    def find(self, value: complex, side: str = "left", tol: float = 1e-8) -> ThresholdEntry:
        for e in self.entries:
            if e.side == side and abs(e.value - value) <= tol * max(1.0, abs(value)):
                return e
        raise BadParams(f"no {side} threshold at {value}")

    def left(self, q: int) -> ThresholdEntry:
        return next(e for e in self.entries if e.side == "left" and e.channel == q)

    def right(self, q: int) -> ThresholdEntry:
        return next(e for e in self.entries if e.side == "right" and e.channel == q)

    @property
    def values(self) -> list:
        return [e.value for e in self.entries]


def classify_thresholds(S: ChannelSpectralData, case: Optional[str] = None) -> ThresholdCatalog:
    case = case or S.case
    lam = S.eigenvalues
    d = len(lam)
    pairs = {}
    for q in range(d):
        hits = [p for p in range(d) if p != q and abs(lam[q] - (lam[p] + 4)) <= DEGENERACY_TOL * max(1.0, abs(lam[q]))]
        if len(hits) > 1:
            raise AmbiguousDegeneracy(f"left threshold {lam[q]} coincides with several right edges")
        if hits:
            pairs[q] = hits[0]
    if len(set(pairs.values())) != len(pairs):
        raise AmbiguousDegeneracy("a right edge coincides with several left edges")
    partner_of_right = {p: q for q, p in pairs.items()}
    entries = []
    for q in range(d):
        klass = "B" if (case == "B" and q == S.zero_index) else "A"
        entries.append(ThresholdEntry(complex(lam[q]), "left", q, pairs.get(q), klass))
        entries.append(ThresholdEntry(complex(lam[q] + 4), "right", q, partner_of_right.get(q), klass))
    entries.sort(key=lambda e: (e.value.real, e.value.imag, e.side))
    return ThresholdCatalog(tuple(entries), case)


def preset(name: str, params: Optional[dict] = None) -> ChannelMatrix:
    """Channel matrices of the four example models.

    strip(N), semistrip(N, J), ring(m, g), pt2(kappa, gamma).
    """
    p = dict(params or {})
    if name == "strip":
        N = int(p.get("N", 2))
        if N < 1:
            raise BadParams("strip needs N >= 1")
        return ChannelMatrix(_dirichlet(N))
    if name == "semistrip":
        N = int(p.get("N", 2))
        J = int(p.get("J", 30))
        if N < 1 or J <= N:
            raise BadParams("semistrip needs 1 <= N < J")
        a = np.zeros((J, J))
        a[:N, :N] = _dirichlet(N)
        return ChannelMatrix(a, rank_hint=N)
    if name == "ring":
        m = int(p.get("m", 3))
        g = float(p.get("g", 0.0))
        if m < 2:
            raise BadParams("ring needs m >= 2")
        a = np.zeros((m, m))
        for k in range(m):
            a[(k - 1) % m, k] += np.exp(g)
            a[(k + 1) % m, k] += np.exp(-g)
        return ChannelMatrix(a)
    if name == "pt2":
        kappa = float(p.get("kappa", 1.0))
        gamma = float(p.get("gamma", 0.0))
        if kappa < 0 or gamma < 0:
            raise BadParams("pt2 needs kappa, gamma >= 0")
        return ChannelMatrix(np.array([[1j * gamma, kappa], [kappa, -1j * gamma]]))
    raise BadParams(f"unknown preset {name!r}")


def _dirichlet(N: int) -> np.ndarray:
    return 2 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)


def reflection_signs(sites: np.ndarray) -> np.ndarray:
    """Diagonal of the conjugation J = diag((-1)^n)."""
    return np.where(np.asarray(sites) % 2 == 0, 1.0, -1.0)


@dataclass(frozen=True)
class ReflectedModel:
    """Data of H' = Δ ⊗ I - I ⊗ M - ω J V J, unitarily equivalent to 4 - H_ω.

    A right threshold λ_q + 4 of H_ω becomes the left threshold -λ_q of H';
    a local variable k of the reflected problem maps back to z = λ_q + 4 - k².
    """

    spectral: ChannelSpectralData
    original: ChannelSpectralData

    def channel_of(self, q: int) -> int:
        return q

    def z_original(self, q: int, k) -> complex:
        return self.original.eigenvalues[q] + 4 - np.asarray(k) ** 2


def reflect_model(S: ChannelSpectralData) -> ReflectedModel:
    e = -S.eigenvalues
    e.setflags(write=False)
    mat = None if S.matrix is None else -S.matrix
    refl = ChannelSpectralData(
        e, S.projections, S.multiplicities, S.diagonalizable, S.condition, S.case, S.zero_index, mat
    )
    return ReflectedModel(refl, S)


def reflect_stencil(box: int) -> np.ndarray:
    """J Δ J on [-L, L]; equals 4 - Δ on the truncation."""
    n = 2 * box + 1
    lap = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    s = reflection_signs(np.arange(-box, box + 1))
    return s[:, None] * lap * s[None, :]


def bands(S: ChannelSpectralData) -> list:
    return [(complex(l), complex(l + 4)) for l in S.eigenvalues]
