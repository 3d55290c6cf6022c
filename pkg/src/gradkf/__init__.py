"""Kalman filtering with a gradient-descent diagonal covariance estimate.

The package has two filtering cores: the classic predict-correct Kalman
filter, and a variant that replaces the Riccati covariance recursion with
Nesterov-accelerated gradient descent on the log-variances (Barzilai-Borwein
step size), keeping every per-step operation free of matrix inversion. A
consensus extension runs the same core on each node of a sensor network.
"""

from .errors import ConfigurationError, NumericalError
from .model import (
    DiffusionSpec,
    LinearSystem,
    SelectorOutputMap,
    SimTrace,
    build_diffusion,
    build_tridiagonal,
    diffusion_operator,
    gaussian_bumps_initial,
    measure,
    output_matrix,
    selector_of,
    simulate,
)
from .filters import (
    ACCELERATED,
    ACCELERATED_ADAPTIVE,
    BETA_CLAMP,
    MU_MAX,
    MU_MIN,
    FilterOpts,
    GradCovState,
    KalmanState,
    PLAIN,
    bb_rate,
    covariance_estimate,
    gdkf_step,
    grad_of_objective,
    h_update,
    init_gradcov,
    init_kalman,
    kf_step,
    nesterov_alpha,
)
from .network import (
    NodeSensor,
    NodeState,
    PatchSensor,
    SensorNetwork,
    aggregate,
    dkcf_step,
    generate_geometric_graph,
    init_node_states,
    patch_sensor_cover,
    read_graph,
    simulate_network,
    write_graph,
)
from .analysis import StabilityReport, closed_loop_check, disagreement, steady_state_error
from .cli import ScenarioConfig, bench_step_cost, load_config, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "NumericalError",
    "LinearSystem", "SelectorOutputMap", "SimTrace", "DiffusionSpec",
    "simulate", "measure", "output_matrix", "selector_of",
    "build_tridiagonal", "diffusion_operator", "build_diffusion",
    "gaussian_bumps_initial",
    "FilterOpts", "PLAIN", "ACCELERATED", "ACCELERATED_ADAPTIVE",
    "BETA_CLAMP", "MU_MIN", "MU_MAX",
    "KalmanState", "GradCovState", "init_kalman", "init_gradcov",
    "kf_step", "gdkf_step", "grad_of_objective", "h_update", "bb_rate",
    "nesterov_alpha", "covariance_estimate",
    "PatchSensor", "NodeSensor", "SensorNetwork", "NodeState",
    "aggregate", "dkcf_step", "init_node_states", "simulate_network",
    "patch_sensor_cover", "generate_geometric_graph", "read_graph", "write_graph",
    "StabilityReport", "closed_loop_check", "steady_state_error", "disagreement",
    "ScenarioConfig", "load_config", "run_scenario", "bench_step_cost",
    "__version__",
]
