"""Characteristic values of analytic matrix families.

A family is anything with ``pair(k) -> (F(k), F'(k))`` and ``__call__(k) -> F(k)``;
plain callables can be wrapped with :func:`as_family`.  The contour index is the
trapezoidal rule for (1/2πi)∮Tr(F^{-1}F') dk.  Zeros are located in an annulus
around k = 0 by recursive subdivision into log-polar cells whose index comes
from tracking arg det F along the cell boundary, followed by Newton on log det.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import (AtPole, BoundaryZero, NotConverged, OutsideDisk, RankAmbiguous,
                     SingularOnContour)
from .parallel import pmap

INDEX_TOL = 1e-8
INTEGER_TOL = 1e-6
SINGULAR_TOL = 1e-10
MAX_NODES = 4096
MIN_NODES = 32
_KEY_SPAN = 1 << 20


@dataclass(frozen=True)
class ContourSpec:
    center: complex
    radius: float
    nodes: int = MIN_NODES
    orientation: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("contour radius must be positive")
        if self.orientation != 1:
            raise ValueError("only positively oriented circles are supported")

    def points(self, n: int) -> np.ndarray:
        return self.center + self.radius * np.exp(2j * np.pi * np.arange(n) / n)


@dataclass
class ResonanceRecord:
    k: complex
    z: complex
    mult_index: int
    mult_residue: int
    sheet: str
    omega: complex
    threshold: str
    cluster_id: Optional[int] = None
    index_raw: float = 0.0

    @property
    def mult(self) -> int:
        return self.mult_index


class _Wrapped:
    def __init__(self, F, dF):
        self._F, self._dF = F, dF

    def __call__(self, k):
        return np.atleast_2d(np.asarray(self._F(k), dtype=complex))

    def pair(self, k):
        return self(k), np.atleast_2d(np.asarray(self._dF(k), dtype=complex))


def as_family(F, dF=None):
    if hasattr(F, "pair"):
        return F
    if dF is None:
        raise ValueError("a derivative is required")
    return _Wrapped(F, dF)


def _log_derivative(F: np.ndarray, dF: np.ndarray, guard: bool = True) -> complex:
    if guard:
        s = np.linalg.svd(F, compute_uv=False)
        if s.size and s[-1] < SINGULAR_TOL * max(1.0, s[0]):
            raise SingularOnContour(f"smallest singular value {s[-1]:.3g} on the contour")
    return complex(np.trace(np.linalg.solve(F, dF)))


def contour_index(family, gamma: ContourSpec, tol: float = INDEX_TOL,
                  max_nodes: int = MAX_NODES) -> float:
    """Raw (unrounded) quadrature of the index, complex part dropped."""
    fam = family
    n = max(gamma.nodes, 8)
    cache = {}

    def vals(n):
        pts = gamma.points(n)
        todo = [j for j in range(n) if (j * (_KEY_SPAN // n)) not in cache]
        res = pmap(lambda j: _log_derivative(*fam.pair(pts[j])), todo)
        for j, v in zip(todo, res):
            cache[j * (_KEY_SPAN // n)] = v
        f = np.array([cache[j * (_KEY_SPAN // n)] for j in range(n)])
        return gamma.radius / n * np.sum(f * np.exp(2j * np.pi * np.arange(n) / n))

    prev = vals(n)
    while True:
        n *= 2
        if n > max_nodes:
            raise NotConverged(f"contour index not converged with {max_nodes} nodes")
        cur = vals(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur


def index_on_contour(F, gamma: ContourSpec, dF=None, tol: float = INDEX_TOL,
                     max_nodes: int = MAX_NODES, return_raw: bool = False):
    raw = contour_index(as_family(F, dF), gamma, tol, max_nodes)
    idx = int(round(raw.real))
    if abs(raw - idx) > INTEGER_TOL:
        raise NotConverged(f"contour index {raw} is not an integer")
    return (idx, raw) if return_raw else idx


# -- zero localization ---------------------------------------------------------

@dataclass(frozen=True)
class Annulus:
    inner: float
    outer: float

    def __post_init__(self):
        if not 0 < self.inner < self.outer:
            raise ValueError("annulus needs 0 < inner < outer")

    def contains(self, k: complex) -> bool:
        return self.inner < abs(k) < self.outer


def punctured_disk(radius: float, puncture: float = 1e-4) -> Annulus:
    return Annulus(puncture * radius, radius)


@dataclass(frozen=True)
class _Cell:
    s1: float
    s2: float
    t1: float
    t2: float

    def center(self) -> complex:
        return math.exp((self.s1 + self.s2) / 2) * complex(math.cos((self.t1 + self.t2) / 2),
                                                           math.sin((self.t1 + self.t2) / 2))

    def contains(self, k: complex, slack: float = 0.0) -> bool:
        if k == 0:
            return False
        s = math.log(abs(k))
        t = math.atan2(k.imag, k.real)
        ds = (self.s2 - self.s1) * slack
        dt = (self.t2 - self.t1) * slack
        if not (self.s1 - ds <= s <= self.s2 + ds):
            return False
        t0 = self.t1 - dt
        t = t0 + ((t - t0) % (2 * math.pi))
        return t <= self.t2 + dt

    def size(self) -> float:
        return max(self.s2 - self.s1, self.t2 - self.t1)


def _wrap(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


class _PhaseTracker:
    TOL = 0.2
    MAX_TURN = 2.0
    MAX_DEPTH = 44
    SAMPLES = 4

    def __init__(self, family):
        self.family = family
        self.cache: dict = {}
        self.edges: dict = {}
        self.evaluations = 0

    def phase(self, k: complex):
        """(arg det F, log|det F|, Tr(F^{-1}F')) at k, cached."""
        v = self.cache.get(k)
        if v is None:
            F, dF = self.family.pair(k)
            self.evaluations += 1
            try:
                lu, piv = sla.lu_factor(F, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                raise BoundaryZero(f"F is not finite at k = {k}")
            d = np.diag(lu)
            if np.any(d == 0) or not np.all(np.isfinite(d)):
                raise BoundaryZero(f"det F vanishes at k = {k}")
            ph = float(np.sum(np.angle(d))) + math.pi * int(np.sum(piv != np.arange(len(piv))))
            la = float(np.sum(np.log(np.abs(d))))
            tau = complex(np.trace(sla.lu_solve((lu, piv), dF, check_finite=False)))
            v = (ph, la, tau)
            self.cache[k] = v
        return v

    @staticmethod
    def point(kind: str, fixed: float, t: float) -> complex:
        if kind == "arc":
            return complex(fixed * math.cos(t), fixed * math.sin(t))
        r = math.exp(t)
        return complex(r * math.cos(fixed), r * math.sin(fixed))

    def edge(self, kind: str, fixed: float, a: float, b: float) -> float:
        key = (kind, fixed, a, b)
        if key in self.edges:
            return self.edges[key]
        ts = np.linspace(a, b, self.SAMPLES + 1)
        total = 0.0
        for lo, hi in zip(ts[:-1], ts[1:]):
            total += self._segment(kind, fixed, float(lo), float(hi), 0)
        self.edges[key] = total
        return total

    def _segment(self, kind, fixed, lo, hi, depth) -> float:
        k0 = self.point(kind, fixed, lo)
        k1 = self.point(kind, fixed, hi)
        p0, l0, t0 = self.phase(k0)
        p1, l1, t1 = self.phase(k1)
        # trapezoid prediction of Δ log det; accepted only when it reproduces
        # both the measured modulus change and the measured phase mod 2π
        pred = 0.5 * (t0 + t1) * (k1 - k0)
        dph = _wrap(p1 - p0 - pred.imag)
        dmod = (l1 - l0) - pred.real
        if abs(dph) <= self.TOL and abs(dmod) <= self.TOL and abs(pred.imag) <= self.MAX_TURN:
            return pred.imag + dph
        if depth >= self.MAX_DEPTH or hi - lo <= 1e-15 * max(1.0, abs(lo)):
            raise BoundaryZero("zero of det F on or near a cell edge")
        mid = (lo + hi) / 2
        return self._segment(kind, fixed, lo, mid, depth + 1) + self._segment(kind, fixed, mid, hi, depth + 1)

    def cell_index(self, c: _Cell) -> int:
        r1, r2 = math.exp(c.s1), math.exp(c.s2)
        total = (self.edge("arc", r2, c.t1, c.t2) - self.edge("arc", r1, c.t1, c.t2)
                 - self.edge("ray", c.t2, c.s1, c.s2) + self.edge("ray", c.t1, c.s1, c.s2))
        w = total / (2 * math.pi)
        n = int(round(w))
        if abs(w - n) > 0.05:
            raise BoundaryZero(f"non-integer cell winding {w:.3f}")
        return n


def newton_refine(family, k0: complex, mult: int = 1, deflate=(), maxit: int = 80,
                  rtol: float = 1e-14) -> Optional[complex]:
    """Newton on log det F: k <- k - m / Tr(F^{-1}F'), with deflation of known zeros."""
    k = complex(k0)
    last = math.inf
    for it in range(maxit):
        try:
            F, dF = family.pair(k)
            tau = complex(np.trace(np.linalg.solve(F, dF)))
        except np.linalg.LinAlgError:
            return k
        except OutsideDisk:
            return None
        for kz, mz in deflate:
            tau -= mz / (k - kz)
        if tau == 0 or not np.isfinite(tau):
            return None
        step = mult / tau
        k = k - step
        if k == 0 or not np.isfinite(k):
            return None
        if abs(step) <= rtol * abs(k):
            return k
        if it > 20 and abs(step) > last:
            # stalled in the rounding floor
            if abs(step) < 1e-10 * abs(k):
                return k
        last = abs(step)
    return k if last < 1e-10 * abs(k) else None


class _Locator:
    def __init__(self, family, region: Annulus, tol: float, rng: np.random.Generator,
                 max_retries: int = 5):
        self.family = family
        self.region = region
        self.tol = tol
        self.rng = rng
        self.max_retries = max_retries
        self.tracker = _PhaseTracker(family)
        self.found: list = []

    def initial_cells(self, offset: float, jitter: bool) -> list:
        s1, s2 = math.log(self.region.inner), math.log(self.region.outer)
        nr = max(1, math.ceil((s2 - s1) / (math.pi / 2)))
        ss = np.linspace(s1, s2, nr + 1)
        if jitter and nr > 1:
            h = (s2 - s1) / nr
            ss[1:-1] += self.rng.uniform(-0.2, 0.2, nr - 1) * h
        ts = offset + np.arange(5) * (math.pi / 2)
        return [_Cell(float(ss[i]), float(ss[i + 1]), float(ts[j]), float(ts[j + 1]))
                for i in range(nr) for j in range(4)]

    def run(self) -> list:
        offset = 0.3
        for attempt in range(self.max_retries + 1):
            try:
                cells = self.initial_cells(offset, attempt > 0)
                idx = [self.tracker.cell_index(c) for c in cells]
                break
            except BoundaryZero:
                if attempt == self.max_retries:
                    raise
                offset = 0.3 + float(self.rng.uniform(-0.25, 0.25))
        for c, n in zip(cells, idx):
            self.process(c, n)
        return self.found

    def split(self, c: _Cell, fs: float = 0.5, ft: float = 0.5) -> list:
        ds, dt = c.s2 - c.s1, c.t2 - c.t1
        cut_s = ds >= 0.5 * dt
        cut_t = dt >= 0.5 * ds
        sm = c.s1 + fs * ds
        tm = c.t1 + ft * dt
        ss = [c.s1, sm, c.s2] if cut_s else [c.s1, c.s2]
        ts = [c.t1, tm, c.t2] if cut_t else [c.t1, c.t2]
        return [_Cell(ss[i], ss[i + 1], ts[j], ts[j + 1])
                for i in range(len(ss) - 1) for j in range(len(ts) - 1)]

    def children(self, c: _Cell, n: int):
        fs = ft = 0.5
        for attempt in range(self.max_retries + 1):
            try:
                kids = self.split(c, fs, ft)
                idx = [self.tracker.cell_index(k) for k in kids]
                if sum(idx) == n:
                    return kids, idx
            except BoundaryZero:
                pass
            fs, ft = (float(x) for x in self.rng.uniform(0.35, 0.65, 2))
        raise BoundaryZero("subdivision failed after perturbed retries")

    def process(self, c: _Cell, n: int):
        if n == 0:
            return
        if n < 0:
            raise NotConverged("negative cell index: F has a pole inside the search region")
        k0 = c.center()
        k = newton_refine(self.family, k0, n, self.found_pairs())
        if k is not None and c.contains(k) and self._confirm(k, n, c):
            self.found.append((k, n))
            return
        if c.size() < self.tol:
            raise NotConverged(f"cluster of {n} zeros near {k0} not resolved")
        kids, idx = self.children(c, n)
        for kc, kn in zip(kids, idx):
            self.process(kc, kn)

    def found_pairs(self):
        return list(self.found)

    def _confirm(self, k: complex, n: int, c: _Cell) -> bool:
        if n == 1:
            return True
        # a multiple zero: confirm by the index on a small circle
        rad = 1e-6 * abs(k)
        try:
            m = index_on_contour(self.family, ContourSpec(k, rad))
        except (NotConverged, SingularOnContour):
            return False
        return m == n


def locate_characteristic_values(F, region: Annulus, dF=None, tol: float = 1e-9,
                                 seed: int = 0) -> list:
    """Zeros of det F in the annulus with multiplicities, sorted by (|k|, arg k).

    ``tol`` is the smallest log-polar cell size before giving up on separating
    a cluster.  The multiplicities sum to the index of the annulus, which is
    cross-checked by quadrature on its two boundary circles.
    """
    fam = as_family(F, dF)
    loc = _Locator(fam, region, tol, np.random.default_rng(seed))
    found = loc.run()
    total = sum(m for _, m in found)
    outer = index_on_contour(fam, ContourSpec(0j, region.outer))
    inner = index_on_contour(fam, ContourSpec(0j, region.inner))
    if outer - inner != total:
        raise NotConverged(f"found {total} zeros but the annulus index is {outer - inner}")
    return sort_zeros(found)


def sort_zeros(items):
    return sorted(items, key=lambda x: (round(abs(x[0]), 12), math.atan2(x[0].imag, x[0].real)))


# -- residue rank ---------------------------------------------------------------

def residue_matrix(R: Callable, gamma: ContourSpec, rtol: float = 1e-10, max_nodes: int = MAX_NODES):
    """Trapezoidal (1/2πi)∮R(k)dk with node doubling; also returns ‖R‖ at the node of largest Frobenius norm."""
    n = max(gamma.nodes, 8)
    # doubling reuses the previous nodes: the new ones sit at the odd indices
    vals = pmap(R, gamma.points(n))
    norms = [np.linalg.norm(v) for v in vals]

    def integral(vals, n):
        I = sum(v * p for v, p in zip(vals, np.exp(2j * np.pi * np.arange(n) / n))) * (gamma.radius / n)
        return I

    def big():
        return np.linalg.norm(vals[int(np.argmax(norms))], 2)

    prev = integral(vals, n)
    while True:
        fresh = pmap(R, gamma.points(2 * n)[1::2])
        merged = [None] * (2 * n)
        merged[0::2], merged[1::2] = vals, fresh
        vals = merged
        norms = [x for pair in zip(norms, (np.linalg.norm(v) for v in fresh)) for x in pair]
        n *= 2
        cur = integral(vals, n)
        b = big()
        if np.linalg.norm(cur - prev, 2) <= rtol * max(gamma.radius * b, 1e-300):
            return cur, b
        if n >= max_nodes:
            raise NotConverged("residue quadrature not converged")
        prev = cur


def residue_rank(R: Callable, gamma: ContourSpec, rel_cut: float = 1e-8, return_info: bool = False):
    """Rank of (1/2πi)∮R dk.

    Singular values are compared to 1e-8 times the larger of the top singular
    value and radius·max‖R‖ on γ, so a holomorphic R reports rank 0 instead of
    the rank of quadrature noise.
    """
    I, big = residue_matrix(R, gamma)
    s = np.linalg.svd(I, compute_uv=False)
    top = s[0] if s.size else 0.0
    cut = rel_cut * max(top, gamma.radius * big)
    near = s[(s > cut / 10) & (s < cut * 10)]
    if near.size:
        raise RankAmbiguous(f"singular values {near} within a factor 10 of the cutoff {cut:.3g}")
    rank = int(np.sum(s > cut))
    return (rank, s) if return_info else rank


def perturbed_resolvent(R0, Vrho: np.ndarray, omega: complex, k: complex) -> np.ndarray:
    """𝓡_ω(k) = R0(k)(I + ω V_ρ R0(k))^{-1}, dense."""
    R = R0.matrix(k)
    if omega == 0:
        return R
    F = np.eye(R.shape[0]) + omega * (Vrho @ R)
    if np.linalg.cond(F) > 1e12:
        raise AtPole(f"I + P is singular at k = {k}")
    return np.linalg.solve(F.T, R.T).T
