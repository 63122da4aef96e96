"""Cross-layer network utility maximisation over SDE-driven fading channels.

Modules: ``channel_sde`` (exact path sampling), ``net_model`` (topology,
conflicts, independent sets), ``layer_subproblems`` (per-layer closed forms),
``dual_solver`` (Monte Carlo dual subgradient method) and ``experiments`` /
``cli`` (experiment harness).
"""

from .channel_sde import CoefficientFn, LtfChannelModel, StfChannelModel, TimeGrid
from .config import RunConfig, load, loads
from .dual_solver import DualProblem, ProblemSpec, solve_dual
from .net_model import Network, build_grid, enumerate_maximal_independent_sets

__version__ = "0.1.0"

__all__ = [
    "CoefficientFn", "DualProblem", "LtfChannelModel", "Network", "ProblemSpec", "RunConfig",
    "StfChannelModel", "TimeGrid", "build_grid", "enumerate_maximal_independent_sets", "load",
    "loads", "solve_dual",
]
