"""Functional nuisance posteriors from pointwise predictives, one-step
corrected Bayesian ATE estimation, and calibration diagnostics."""

from .data import (
    CausalDataset,
    CsvSchema,
    DgpSpec,
    OracleDGP,
    confounding_degree,
    generate_synthetic,
    load_csv,
    prior_bias_harness,
    save_csv,
    train_test_split,
)
from .diagnostics import (
    KsReport,
    R2Report,
    TvReport,
    VarianceOrderingReport,
    ks_to_uniform,
    normal_tv_distance,
    r2_check,
    tv_to_normal,
    variance_decomposition,
)
from .estimators import (
    AtePosterior,
    EifInputs,
    GaussianLaw,
    aiptw,
    bb_weights,
    cross_fit,
    eif,
    ospc_posterior,
    plug_in_estimate,
    plug_in_posterior,
    truncate_propensity,
    uncentered_eif,
)
from .external import (
    ExternalBackend,
    ProtocolCheckReport,
    external_handshake,
    run_protocol_check,
)
from .mp import (
    CopulaConfig,
    NuisanceDraw,
    PredictiveState,
    PropensityState,
    absorb_mp_draw,
    alpha_schedule,
    alpha_weight,
    bb_mixture_copula,
    draw_nuisance_posterior,
    gaussian_copula_density,
    mp_step_outcome,
    mp_step_propensity,
    r_source,
    sample_nuisance_draws,
)
from .ppd import (
    ConjugateConfig,
    ConjugateLinearOutcome,
    ConjugateLinearPropensity,
    KernelConfig,
    KernelOutcome,
    KernelPropensity,
    OutcomePredictive,
    PropensityPredictive,
    fit_outcome,
    fit_propensity,
)

__all__ = [name for name in dir() if not name.startswith("_")]
