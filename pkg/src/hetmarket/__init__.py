"""Seed-deterministic artificial stock market with heterogeneous learning
agents, rule-based baselines, stylized-fact analytics, and optimal-transport
calibration of trait priors."""

from .env import SimConfig, run_episode, episode_rng, aggregate_utility
from .traits import AgentTraits, TraitPriors, sample_population, mask_traits
from .config import RunConfig

__all__ = [
    "SimConfig", "run_episode", "episode_rng", "aggregate_utility",
    "AgentTraits", "TraitPriors", "sample_population", "mask_traits",
    "RunConfig",
]

__version__ = "0.1.0"
