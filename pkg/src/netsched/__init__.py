"""Remote state estimation of many linear systems over a slotted, bandwidth-limited network."""

from .bounds import (
    AssumptionError,
    GainProfile,
    SchemeChoice,
    check_assumption,
    choose_scheme,
    gain,
    gain_profile,
    periodic_bound,
    predictive_bound,
)
from .dynamics import (
    AgentState,
    NoiseModel,
    SystemModel,
    identify_lti,
    matrix_power_norm,
    sample_noise,
    spectral_norm,
    step_system,
)
from .estimation import (
    EstimatorPair,
    TriggerDecision,
    closed_form_error,
    compute_error,
    trigger_decision,
    update_estimator,
)
from .report import emit_summary_csv, emit_trace_csv
from .scenario import ScenarioError, bundled_scenario, dump_scenario, load_scenario, parse_scenario
from .scheduling import RoundGrant, SlotBudget, cycle_length, predictive_allocate, round_robin_allocate
from .simulator import (
    ASampling,
    AgentSpec,
    ScenarioConfig,
    ScenarioEvent,
    SimulationTrace,
    aggregate_replicates,
    mean_quadratic_error,
    run_replicates,
    run_simulation,
)
from .types import Policy

__version__ = "0.1.0"
