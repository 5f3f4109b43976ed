"""Radial-feeder power flow and local PV reactive-power control experiments."""

from feedersim.control import (
    ControlConfig,
    LocalMeasurement,
    apply_control,
    constr,
    control_hybrid,
    control_loss,
    control_voltage,
    feeder_alpha,
    reactive_capability,
)
from feedersim.experiment import (
    CaseStats,
    SweepPoint,
    SweepResult,
    evaluate,
    pareto_front,
    run_case,
    sweep_k,
)
from feedersim.model import (
    Feeder,
    LineSegment,
    NodeState,
    ScenarioSpec,
    ValidationError,
    build_topology,
    case_spec,
    generate,
    populate_loads_and_pv,
)
from feedersim.powerflow import (
    DivergenceError,
    FlowSolution,
    Injection,
    losses,
    max_voltage_deviation,
    solve_distflow,
    solve_lindistflow,
)

__version__ = "0.1.0"
