"""Nadaraya-Watson estimation of diffusion transition densities from
independent copies, with bandwidths chosen by penalized comparison to
overfitting."""

from .diffusion import ModelKind, ModelSpec, OuParams, PathEnsemble, extract_pairs, simulate_ensemble
from .errors import AlignmentError, ConfigError, DomainError, NwpcoError
from .estimators import (EstimatorGrid, EvalGrid, TruncationSpec, estimate_f, estimate_m,
                         estimate_p, estimate_s)
from .kernels import Bandwidth, BandwidthGrid, kernel_conv, kernel_eval, kernel_scaled
from .pco import PcoConfig, PcoSelection, select_ell, select_h
from .truth import bessel_i, stationary_density, transition_density

__version__ = "0.1.0"
