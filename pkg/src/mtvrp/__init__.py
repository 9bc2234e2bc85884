"""Multi-task vehicle routing with constraint-aware context and step-wise node refinement."""

from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .decoder import Decoder, select
from .encoder import Encoder, NodeFeatures, node_features
from .env import (
    ContractViolation,
    EnvState,
    StepOutcome,
    Trajectory,
    Verdict,
    Violation,
    VRPEnv,
    finalize_reward,
    route_legs,
    route_length,
    validate_solution,
)
from .evaluation import (
    GapReport,
    InvalidSolution,
    SweepRow,
    evaluate,
    gap_percent,
    random_rollout_objectives,
    sweep_p_test,
)
from .instances import (
    HORIZON_INF,
    Instance,
    ParseError,
    VariantSpec,
    all_variants,
    format_solomon,
    generate,
    generate_batch,
    in_distribution_variants,
    load_instances,
    parse_solomon,
    save_instances,
    variant_from_name,
)
from .layers import NumericFailure
from .oracle import OracleCapacityError, OracleResult, oracle_optimal
from .policy import ModelConfig, Rollout, RoutingPolicy
from .rgcr import RGCR, ConstraintAttributes, constraint_attributes
from .trainer import FitResult, TrainConfig, TrainingAborted, fit, lr_at_epoch, reinforce_loss, rollout
from .tsnr import TSNR, DistanceBias, distance_bias, gate_update

__version__ = "0.1.0"
