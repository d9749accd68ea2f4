"""EV charging simulation and event-conditioned policy optimization for a
multi-building microgrid with wind generation and hydrogen storage."""

from .scenario import (
    ConfigError,
    MicrogridConfig,
    Scenario,
    default_config,
    load_config,
    scenario_hash,
)
from .policy import PolicyTable
from .simulate import HAVE_EXTENSION, get_kernel
from .optimizer import AdjustmentInfeasible, OptimizeResult, optimize_stage
from .harness import (
    RunReport,
    compare_report,
    run_event_based,
    run_fixed_policy,
    run_ideal,
    run_rule_based,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustmentInfeasible",
    "ConfigError",
    "HAVE_EXTENSION",
    "MicrogridConfig",
    "OptimizeResult",
    "PolicyTable",
    "RunReport",
    "Scenario",
    "__version__",
    "compare_report",
    "default_config",
    "get_kernel",
    "load_config",
    "optimize_stage",
    "run_event_based",
    "run_fixed_policy",
    "run_ideal",
    "run_rule_based",
    "scenario_hash",
]
