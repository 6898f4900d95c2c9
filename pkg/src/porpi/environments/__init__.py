"""Evaluation scenarios and the discrete verification suite."""
from .discrete import DISCRETE_SUITE, BernoulliBandit, DiscretePomdp, absorbing_toy, noisy_chain_3, tiger
from .geometry import Box, Terrain
from .loader import ScenarioLoadError, load_scenario
from .maze import MazeModel, MazeScenario
from .rescue import Ball, RescueModel, RescueScenario, nfz_reward

__all__ = [
    "DISCRETE_SUITE",
    "BernoulliBandit",
    "DiscretePomdp",
    "absorbing_toy",
    "noisy_chain_3",
    "tiger",
    "Box",
    "Terrain",
    "ScenarioLoadError",
    "load_scenario",
    "MazeModel",
    "MazeScenario",
    "RescueModel",
    "RescueScenario",
    "Ball",
    "nfz_reward",
]
