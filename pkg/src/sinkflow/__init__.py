"""Sinkhorn-divergence gradient-flow generative modeling on point clouds."""

from .core_ot import (
    PlanReport,
    PointCloud,
    PotentialPair,
    SinkhornConfig,
    SolverError,
    dual_value,
    pairwise_cost,
    plan_diagnostics,
    potential_gradient,
    sinkhorn_divergence,
    sinkhorn_mapping,
    sinkhorn_potentials,
    symmetric_potential,
)
from .data_eval import DATASET_NAMES, DatasetSpec, EvalReport, dataset_sampler, evaluate, exact_w2, sample_dataset
from .flow import (
    FlowConfig,
    FlowSimulation,
    FlowSolveError,
    PoolMeta,
    TrajectoryPool,
    TrajectoryRecord,
    build_pool,
    data_diameter,
    empirical_velocity,
    euler_step,
    objective_trace,
    simulate_flow,
)
from .neural import (
    AdamState,
    MlpGrads,
    MlpParams,
    MlpSpec,
    TrainConfig,
    TrainResult,
    TrainingError,
    adam_step,
    forward,
    init_mlp,
    mlp_forward,
    mlp_loss_grad,
    train_nsf,
    train_time_predictor,
    train_velocity_matching,
)
from .sampler import (
    InferenceResult,
    NsgfPpConfig,
    SamplingError,
    TwoPhaseResult,
    nsgf_infer,
    nsgf_infer_refined,
    nsgf_pp_infer,
)

__version__ = "0.1.0"
