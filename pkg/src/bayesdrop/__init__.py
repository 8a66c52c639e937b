"""Dropout as variational inference over binary masks, with learned rates.

Logistic regression and a three-layer sigmoid network trained by SGD while
per-feature (or shared) dropout rates follow a score-function gradient of a
variational lower bound.  Exact enumeration oracles cover small problems.
"""

from .evaluation import (
    BEST_CELLS,
    GridSpec,
    RunSettings,
    accuracy,
    derive_seed,
    grid_search,
    run_experiment,
    write_experiment,
)
from .mask_distribution import (
    MaskDistribution,
    PriorMask,
    cross_entropy_with_prior,
    entropy,
    expected_mask,
    log_prob,
    regularizer_gradient,
    sample_mask,
    score_gradient,
)
from .models import (
    LogisticRegressionModel,
    PredictionVariant,
    ThreeLayerNet,
    predict_enumerate,
    predict_expected_mask,
    predict_mc,
)
from .synthetic_data import DataConfig, Dataset, bayes_optimal_accuracy, generate, load_csv, save_csv
from .training import (
    StepSchedule,
    TrainConfig,
    TrainingError,
    lower_bound_exact,
    marginal_log_likelihood_exact,
    posterior_exact,
    train_bayesian_dropout,
    train_em_like,
    train_mle,
    train_standard_dropout,
)

__all__ = [name for name in dir() if not name.startswith("_")]
