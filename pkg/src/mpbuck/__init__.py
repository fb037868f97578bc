"""Simulation and tuning toolkit for multiphase buck converters under large,
fast load transients."""

from .control import (
    BalancerState,
    ControllerGains,
    ControllerState,
    GAIN_VECTOR_FIELDS,
    balance_duties,
    controller_step,
    estimate_d2uc,
    gains_from_vector,
    gains_to_vector,
    update_balancer,
)
from .converter import (
    ConverterParams,
    LoadProfile,
    PlantState,
    load_resistance,
    output_voltage,
    plant_derivatives,
    switch_state,
)
from .errors import (
    ConfigError,
    EmptyTraceError,
    NonFiniteStateError,
    ParseError,
    ValidationError,
)
from .optim import (
    DIVERGENCE_PENALTY,
    PsoConfig,
    Scenario,
    SweepResult,
    Swarm,
    objective,
    pso_minimize,
    robustness_sweep,
)
from .simulation import (
    SimConfig,
    SimMetrics,
    SimTrace,
    compute_metrics,
    count_sign_alternations,
    kernel_backend,
    simulate,
    write_trace_csv,
)
from .stability import (
    ReducedModel,
    StabilityReport,
    build_reduced_model,
    routh_hurwitz,
)

__version__ = "0.1.0"
