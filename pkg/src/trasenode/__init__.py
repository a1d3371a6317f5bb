"""Trajectory-sensitivity-aware neural ODE system identification.

Learns continuous-time dynamics ``dx/dt = f(x, t, u, y)`` from sampled
trajectories, optionally augmenting the state with its sensitivity to the
control set-point ``u`` so that one training scenario carries enough
information to generalize across set-points.  Gradients come from the
adjoint method (backward-integrated, memory efficient); the augmented
variant contracts the adjoint against exact mixed second derivatives of
the network.
"""

from .adjoint import (
    AdjointGradResult,
    NodeForwardResult,
    node_adjoint_grad,
    node_forward,
    node_loss,
)
from .augmented import (
    aug_adjoint_rhs,
    g_eval,
    g_state_jacobian,
    trase_adjoint_grad,
    trase_forward,
    trase_loss,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateNormalizationError,
    DimensionMismatchError,
    DivergenceError,
    IntegrationDivergedError,
    StiffnessError,
    TraseNodeError,
)
from .estimators import NeuralODERegressor
from .metrics import (
    NORMALIZATION_NOTE,
    MetricsReport,
    nmse,
    normalized_error,
    predict_scenario,
    sweep,
)
from .network import (
    LayerSpec,
    ModelInput,
    NetSpec,
    ParamVector,
    SensRhsJacobians,
    eval_f,
    init_params,
    jac_theta,
    jac_u,
    jac_x,
    load_checkpoint,
    pack_params,
    param_count,
    save_checkpoint,
    sens_rhs,
    sens_rhs_jacobians,
    unpack_params,
)
from .solvers import (
    ReverseAccumResult,
    SolverConfig,
    integrate,
    integrate_reverse_with_accumulator,
    uniform_grid,
    validate_grid,
)
from .systems import (
    ExogenousSignal,
    OscillatorParams,
    Scenario,
    finite_diff_sensitivity,
    gen_ibr_fixture,
    gen_linear_scalar,
    gen_oscillator,
    ingest_csv,
    write_scenario,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    load_training_checkpoint,
    save_training_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AdjointGradResult",
    "ConfigError",
    "DataError",
    "DegenerateNormalizationError",
    "DimensionMismatchError",
    "DivergenceError",
    "ExogenousSignal",
    "IntegrationDivergedError",
    "LayerSpec",
    "MetricsReport",
    "ModelInput",
    "NORMALIZATION_NOTE",
    "NetSpec",
    "NeuralODERegressor",
    "NodeForwardResult",
    "OscillatorParams",
    "ParamVector",
    "ReverseAccumResult",
    "Scenario",
    "SensRhsJacobians",
    "SolverConfig",
    "StiffnessError",
    "TrainConfig",
    "TrainReport",
    "TraseNodeError",
    "adam_step",
    "aug_adjoint_rhs",
    "eval_f",
    "finite_diff_sensitivity",
    "g_eval",
    "g_state_jacobian",
    "gen_ibr_fixture",
    "gen_linear_scalar",
    "gen_oscillator",
    "ingest_csv",
    "init_params",
    "integrate",
    "integrate_reverse_with_accumulator",
    "jac_theta",
    "jac_u",
    "jac_x",
    "load_checkpoint",
    "load_training_checkpoint",
    "nmse",
    "node_adjoint_grad",
    "node_forward",
    "node_loss",
    "normalized_error",
    "pack_params",
    "param_count",
    "predict_scenario",
    "save_checkpoint",
    "save_training_checkpoint",
    "sens_rhs",
    "sens_rhs_jacobians",
    "sweep",
    "train",
    "trase_adjoint_grad",
    "trase_forward",
    "trase_loss",
    "uniform_grid",
    "unpack_params",
    "validate_grid",
    "write_scenario",
]
