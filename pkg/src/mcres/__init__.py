"""Threshold resonances of multichannel discrete Schrödinger operators Δ⊗I + I⊗M + ωV."""

from .accumulation import (CountingFunction, build_Q0_E0, classify_sheet, eps_sequence, expected_sheet,
                           verify_counting, verify_sector)
from .charval import (Annulus, ContourSpec, ResonanceRecord, index_on_contour, locate_characteristic_values,
                      residue_rank)
from .clusters import build_effective_matrix, build_projector, predict_clusters, verify_clusters
from .errors import *  # noqa: F401,F403
from .freeres import ContinuedResolvent, WeightScheme, free_kernel, theta
from .model import ChannelMatrix, classify_thresholds, diagonalize_channel, preset
from .perturbation import PotentialSpec, SeparableTerm, SiteTerm, reduced_family, validate_decay
from .pipeline import ThresholdProblem, build_problem

__version__ = "0.1.0"
