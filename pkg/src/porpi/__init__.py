"""Online POMDP planning with KL-regularised preference iteration.

Subpackages: ``core`` (generative interface, particle beliefs, macro
actions), ``planner`` (the anytime tree planner), ``exact_lab`` (tabular
schemes, oracle and bounds), ``baselines``, ``environments``, ``prm``,
``runtime`` and ``bench``.
"""
from .core import (
    BeliefParticleSet,
    MacroAction,
    MacroObservation,
    ModelContractError,
    ParticleDepletionError,
    PomdpModel,
    UnsupportedOperationError,
    belief_update,
    expected_immediate_reward,
    generative_step,
    macro_step,
    observation_likelihood,
)
from .planner import PlannerConfig, PorpiPlanner, plan_and_execute

__version__ = "0.1.0"

__all__ = [
    "BeliefParticleSet",
    "MacroAction",
    "MacroObservation",
    "ModelContractError",
    "ParticleDepletionError",
    "PomdpModel",
    "UnsupportedOperationError",
    "belief_update",
    "expected_immediate_reward",
    "generative_step",
    "macro_step",
    "observation_likelihood",
    "PlannerConfig",
    "PorpiPlanner",
    "plan_and_execute",
    "__version__",
]
