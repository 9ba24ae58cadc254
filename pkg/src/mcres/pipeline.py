"""End-to-end resonance search near one threshold.

Left thresholds are analysed directly.  A right threshold λ_q + 4 is mapped to
the left threshold -λ_q of the reflected family (M -> -M, V -> -JVJ) and the
records are mapped back through z = λ_q + 4 - k².
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .charval import (Annulus, ContourSpec, ResonanceRecord, index_on_contour,
                      locate_characteristic_values, residue_rank)
from .errors import BadParams, NotConverged
from .freeres import ContinuedResolvent, WeightScheme
from .model import (ChannelMatrix, ChannelSpectralData, ThresholdEntry, classify_thresholds,
                    diagonalize_channel, reflect_model)
from .parallel import pmap
from .perturbation import (PotentialSpec, ReducedFamily, check_sign_definite, reduced_family,
                           validate_decay)

PUNCTURE = 1e-4
EXACT_PROBE_LIMIT = 400


@dataclass
class ThresholdProblem:
    spectral: ChannelSpectralData
    entry: ThresholdEntry
    analysed_entry: ThresholdEntry
    potential: PotentialSpec
    weights: WeightScheme
    resolvent: ContinuedResolvent
    factors: tuple
    reflected: bool = False
    seed: int = 0

    @property
    def eps0(self) -> float:
        return self.resolvent.eps0

    @property
    def threshold_id(self) -> str:
        return self.entry.ident

    def z_of(self, k):
        k = np.asarray(k)
        lam = self.spectral.eigenvalues[self.entry.channel]
        if self.reflected:
            return lam + 4 - k ** 2
        return lam + k ** 2

    def family(self, omega: complex) -> ReducedFamily:
        return reduced_family(self.potential, omega, self.resolvent, self.factors)

    def default_region(self, omega: complex, scale: str = "omega", puncture: float = PUNCTURE) -> Annulus:
        if scale == "omega":
            outer = self.eps0 * abs(omega)
        elif scale == "full":
            outer = self.eps0 * (1 - 1e-9)
        else:
            raise BadParams(f"unknown region scale {scale!r}")
        return Annulus(puncture * outer, outer)

    def zeros(self, omega: complex, region: Annulus, tol: float = 1e-9) -> list:
        if omega == 0:
            return []
        return locate_characteristic_values(self.family(omega), region, tol=tol, seed=self.seed)

    def probe(self, r: int) -> np.ndarray:
        N = self.resolvent.size
        if N <= EXACT_PROBE_LIMIT:
            return np.eye(N, dtype=complex)
        rng = np.random.default_rng(self.seed + 7919)
        s = min(N, r + 8)
        return rng.standard_normal((N, s)) + 1j * rng.standard_normal((N, s))

    def multiplicity_circle(self, k: complex, others: list, region_outer: float) -> ContourSpec:
        d = [abs(k - o) for o in others if o != k]
        rad = 0.4 * min(d + [abs(k)])
        rad = min(rad, 0.9 * (self.eps0 - abs(k)))
        return ContourSpec(k, rad)

    def records(self, omega: complex, region: Optional[Annulus] = None, tol: float = 1e-9,
                check_residue: bool = True) -> list:
        omega = complex(omega)
        if omega == 0:
            return []
        region = region or self.default_region(omega)
        fam = self.family(omega)
        zs = self.zeros(omega, region, tol)
        ks = [k for k, _ in zs]
        Omega = self.probe(fam.rank) if check_residue else None

        def one(item):
            k, m = item
            gamma = self.multiplicity_circle(k, ks, region.outer)
            mi, raw = index_on_contour(fam, gamma, return_raw=True)
            mr = residue_rank(lambda x: fam.perturbed_apply(x, Omega), gamma) if check_residue else mi
            z = complex(self.z_of(k))
            sheet = "first" if k.imag > 0 else "second"
            return ResonanceRecord(k=complex(k), z=z, mult_index=mi, mult_residue=mr, sheet=sheet,
                                   omega=omega, threshold=self.threshold_id, index_raw=float(raw.real))

        recs = pmap(one, zs)
        for rec, (_, m) in zip(recs, zs):
            if rec.mult_index != m:
                raise NotConverged(f"index {rec.mult_index} at k = {rec.k} disagrees with search multiplicity {m}")
        return recs


def build_problem(M: Union[ChannelMatrix, ChannelSpectralData], potential: PotentialSpec,
                  threshold: complex, side: str = "left", case: str = "A",
                  rho: Optional[float] = None, box: Optional[int] = None,
                  eps0: Optional[float] = None, seed: int = 0) -> ThresholdProblem:
    S = M if isinstance(M, ChannelSpectralData) else diagonalize_channel(M, case)
    cat = classify_thresholds(S, case)
    entry = cat.find(complex(threshold), side)
    rho = potential.rho if rho is None else float(rho)
    W = WeightScheme.default(rho, box)
    validate_decay(potential, W)
    if potential.kind == "B":
        check_sign_definite(potential, W)
    if side == "right":
        refl = reflect_model(S)
        S_an = refl.spectral
        entry_an = classify_thresholds(S_an, case).left(entry.channel)
        P_an = potential.reflected()
        reflected = True
    else:
        S_an, entry_an, P_an, reflected = S, entry, potential, False
    R = ContinuedResolvent(S_an, entry_an.channel, W, eps0, entry_an.degenerate_partner)
    factors = P_an.lowrank(W)
    return ThresholdProblem(S, entry, entry_an, P_an, W, R, factors, reflected, seed)
