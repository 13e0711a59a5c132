"""Glimpse: complete truncated top-K logprob observations into full rank
distributions and run zero-shot machine-text detection on top of them."""

from __future__ import annotations

from .distribution import (
    ALPHA_GRID,
    BETA_GRID,
    EPS_MASS,
    EPS_MONO,
    EPS_NUM,
    EstimatorFn,
    GeometricParams,
    PartialObservation,
    RankDistribution,
    SumTable,
    ZipfianParams,
    build_sum_table,
    estimate_geometric,
    estimate_mlp,
    estimate_naive,
    estimate_zipfian,
    fit_zipfian,
    kl_divergence,
    load_sum_table,
    make_estimator,
    save_sum_table,
    solve_geometric_decay,
    truncate_observation,
)
from .errors import (
    AuthError,
    ClientError,
    ConfigError,
    CorruptFileError,
    DegenerateMassError,
    DegenerateVarianceError,
    DistributionError,
    DumpError,
    GlimpseError,
    ModelFileError,
    ObservationError,
    ProviderError,
    RateLimitExhaustedError,
    TopKUnsupportedError,
    TrainingDivergedError,
    VersionMismatchError,
)
from .evaluation import (
    ScoredPopulation,
    ThresholdReport,
    auroc,
    best_threshold,
    evaluate_population,
    kl_sweep,
    populations_from_scores,
    roc_curve,
    tpr_at_fpr,
    write_kl_csv,
    write_report,
    write_roc_points,
)
from .metrics import (
    METHODS,
    PassageScore,
    TokenMoments,
    curvature_score,
    entropy_score,
    likelihood_score,
    logrank_score,
    rank_of_token,
    rank_score,
    score_passage,
    token_moments,
)
from .mlp import (
    MlpModel,
    TrainConfig,
    TrainingExample,
    init_mlp,
    load_model,
    loss_and_grads,
    make_training_examples,
    mlp_forward,
    save_model,
    train_mlp,
)
from .scoring import (
    DumpWarning,
    PassageObservation,
    SynthConfig,
    SyntheticCorpus,
    gen_synthetic,
    read_dump,
    teacher_examples,
    truncate_passage,
    truth_matrix,
    write_dump,
)
from .client import ClientConfig, RateLimiter, fetch_observation

__version__ = "0.1.0"
