"""Disconnection-aware attack detection toolkit for interconnected LTI systems.

The package builds networks of coupled linear subsystems, attaches
distributed observer-based attack detectors (including a retrofit variant
whose stability survives arbitrary subsystem disconnections), verifies
topology resilience by exhaustive subset enumeration, and simulates timed
attack/disconnection scenarios. A radial low-voltage feeder model with
droop-controlled inverters ships as the default case study.
"""

__version__ = "0.1.0"

from .lti import (
    StateSpace,
    Spectrum,
    eigenvalues,
    is_hurwitz,
    dc_gain,
    freq_response,
    markov_parameters,
    series,
    close_output_feedback,
    design_observer_gain,
)
from .netsys import (
    Subsystem,
    Topology,
    InterconnectedNetwork,
    AttackChannel,
    close_interconnection,
    check_well_posedness,
    disconnect,
    verify_disconnection_resilience,
)
from .detector import (
    NaiveObserver,
    RetrofitDetector,
    ErrorSystem,
    build_naive_observer,
    build_retrofit_detector,
    error_dynamics,
    error_network,
    verify_retrofit_condition,
    youla_parameter,
)
from .simkit import (
    Scenario,
    TraceLog,
    StepAttack,
    simulate,
    normalize_residual,
    detect,
    run_closed_loop,
)
from .distflow import (
    FeederSpec,
    PowerFlowState,
    default_feeder,
    build_feeder,
    solve_steady_state,
    make_reference_attack,
)

__all__ = [
    "StateSpace", "Spectrum", "eigenvalues", "is_hurwitz", "dc_gain",
    "freq_response", "markov_parameters", "series", "close_output_feedback",
    "design_observer_gain",
    "Subsystem", "Topology", "InterconnectedNetwork", "AttackChannel",
    "close_interconnection", "check_well_posedness", "disconnect",
    "verify_disconnection_resilience",
    "NaiveObserver", "RetrofitDetector", "ErrorSystem",
    "build_naive_observer", "build_retrofit_detector", "error_dynamics",
    "error_network", "verify_retrofit_condition", "youla_parameter",
    "Scenario", "TraceLog", "StepAttack", "simulate", "normalize_residual",
    "detect", "run_closed_loop",
    "FeederSpec", "PowerFlowState", "default_feeder", "build_feeder",
    "solve_steady_state", "make_reference_attack",
]
