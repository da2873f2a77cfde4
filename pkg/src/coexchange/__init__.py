"""Coexchangeable Bayesian hierarchical model for multi-model ensembles.

Fits the model by Metropolis-within-Gibbs sampling and ships the
diagnostics and validation tools needed to trust the fit.
"""
from .diagnostics import Summary, correlations, mcse_batch_means, psrf, summarize
from .gibbs import (
    ChainConfig,
    ConvergenceFailure,
    PosteriorSample,
    gibbs_sweep,
    mh_update_nu,
    run_chain,
    run_until_converged,
    sample_predictive,
    update_ensemble_block,
    update_model_block,
    update_reanalysis_block,
    update_system_block,
)
from .io import GridboxDataset, load_config, load_ensemble_csv, load_reanalysis_csv
from .model import (
    CoexModel,
    EnsembleData,
    InadequacyConfig,
    ModelRuns,
    ParameterState,
    PriorConfig,
    ReanalysisData,
    ReanalysisSpreadWarning,
    derived,
    log_joint,
    validate,
)
from .validation import (
    ERFit,
    SyntheticTruth,
    coexchangeable_shrinkage,
    dilution_expectation,
    ensemble_regression,
    generate_synthetic,
    ks_uniform,
    loo_cv_pit,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
