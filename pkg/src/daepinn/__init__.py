from daepinn._version import version
from daepinn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from daepinn.dae_model import (
    DescriptorReduction,
    SemiExplicitDAE,
    ThreeBusParams,
    consistent_z,
    descriptor_to_semi_explicit,
    index1_margin,
    jacobians,
    linear_test_dae,
    model_from_name,
    model_names,
    three_bus,
)
from daepinn.errors import (
    AmbiguousRankError,
    ConfigError,
    DegenerateDenominatorError,
    IndexViolation,
    NotADAEError,
    NumericalFailure,
    RolloutDivergence,
    StepFailure,
    TrainingDivergence,
)
from daepinn.experiment import (
    ExperimentConfig,
    TruthSource,
    run_datagen,
    run_evaluation,
    run_grid,
    run_training,
    write_manifest,
)
from daepinn.global_config import GlobalConfig
from daepinn.network import (
    Activation,
    AssemblyMode,
    InputScaler,
    NetworkConfig,
    OutputFeature,
    PinnAssembly,
    build_assembly,
    forward,
    init_glorot_normal,
)
from daepinn.pinn_loss import LossBreakdown, PinnProblem, dynamic_residual_targets, loss_f, loss_g, total_loss
from daepinn.reference_solver import SolverConfig, dense_eval, irk_step, solve
from daepinn.rollout_eval import (
    EnsembleReport,
    IRKStagePredictor,
    compare_schemes,
    evaluate_ensemble,
    l2_relative_error,
    simulate,
)
from daepinn.tableau import (
    ButcherTableau,
    Scheme,
    backward_euler_tableau,
    gauss_legendre_tableau,
    read_tableau,
    tableau_for,
    verify_order_conditions,
    write_tableau,
)
from daepinn.trainer import PlateauConfig, TrainConfig, adam_step, make_datasets, penalty_train, train_inner
from daepinn.trajectory import Trajectory

__version__ = version
__version_info__ = version.split(".")
