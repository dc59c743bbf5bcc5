"""Multi-level ensemble toolkit.

Train subsets of small upstream models jointly so any subset can keep serving
when servers fail; audit the information-theoretic generalization story on
finite problems; plan deployments and replay failure traces.
"""

from .data import (
    DataView,
    LabeledDataset,
    LabelHierarchy,
    SyntheticSpec,
    coarsify,
    gen_hierarchical,
    load_csv,
    process_dataset,
    save_csv,
)
from .ensemble import (
    EnsembleModel,
    EnsembleSpec,
    SpecError,
    SubsetId,
    all_subsets,
    build_ensemble,
    load_checkpoint,
    save_checkpoint,
    symmetric_spec,
)
from .failover import (
    ClusterScenario,
    FailureTrace,
    FamilyEntry,
    LatencyModel,
    ModelPart,
    PlacementError,
    PlacementPlan,
    ServerSpec,
    best_fit_place,
    detect_failures,
    ensemble_family,
    ensemble_latency,
    load_scenario,
    save_scenario,
    select_active_subset,
    simulate,
    split_latency,
)
from .genbounds import (
    FiniteLearningProblem,
    InfoReport,
    StochasticLearner,
    audit_random_instances,
    check_bounds,
    check_chain_identity,
    enumerate_gen_error,
    mutual_information,
)
from .nn import AdamW, BlockGraph, LrSchedule, NumericError, ShapeError, Tensor, cosine_lr
from .training import (
    ConfigError,
    MelWeights,
    TrainingError,
    TrainPlan,
    TrainReport,
    evaluate,
    mel_loss,
    run_strategy,
    small_spec,
    standard_spec,
    train_individual,
    train_mel,
    train_small,
    train_standalone,
)

__version__ = "0.1.0"
