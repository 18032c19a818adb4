"""Wiener-Hopf Monte Carlo for Lévy processes.

Random walks driven by Wiener-Hopf factor draws give exact samples of the
terminal value and running supremum at a randomised horizon; the multilevel
estimator couples two grid resolutions by Poisson thinning.
"""
import os as _os

import numba as _numba

# the TBB layer warns on older TBB builds; results do not depend on the layer
if "NUMBA_THREADING_LAYER" not in _os.environ:
    _numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .coupling import coarsen_factors, coupled_gamma_batch, coupled_gamma_sample, coupled_T_batch, thin_indices
from .diagnostics import (
    complexity_study,
    fit_rates,
    gamma_time_moments,
    lemma_moment_identity_check,
    theoretical_rate_curves,
    validation_suite,
    variance_decay,
    wh_identity_check,
)
from .estimators import (
    LevelPlan,
    LevelStats,
    MlmcReport,
    allocate_samples,
    mlmc_estimate,
    mlmc_run,
    mse_decomposition,
    pilot_levels,
    single_level_estimate,
)
from .factors import FactorSampler, factor_options, factor_provider, find_zeros
from .models import BetaClass, BetaParams, BrownianMotion
from .payoffs import BarrierPayoff, LipschitzPayoff, make_payoff
from .rng import Purpose, StreamFamily
from .walk import gamma_horizon_batch, simulate_gamma_horizon, simulate_T_horizon_bm, T_horizon_batch

__version__ = "0.1.0"
