"""Hierarchical demand-side control of district heating networks."""

from .errors import DHNError
from .harness import compare, run_nominal, run_optimized
from .network import build_graph, load_graph, save_graph
from .scenario import ScenarioConfig, generate, load_config, load_scenario, reference_scenario

__version__ = "0.1.0"

__all__ = [
    "DHNError",
    "ScenarioConfig",
    "__version__",
    "build_graph",
    "compare",
    "generate",
    "load_config",
    "load_graph",
    "load_scenario",
    "reference_scenario",
    "run_nominal",
    "run_optimized",
    "save_graph",
]
