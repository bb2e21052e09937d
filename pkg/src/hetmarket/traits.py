"""Sampling of per-agent preference traits and endowments from priors."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GAMMA_CAP_EPS = 1e-6

# Observation slots holding trait factors (see pomdp.OBS_FIELDS).
TRAIT_SLOTS = {"sigma": 8, "alpha": 9, "gamma": 10}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AgentTraits:
    sigma: float    # uninformedness, std of fundamental-return noise (>= 0)
    alpha: float    # risk-aversion term (may be negative)
    gamma: float    # discount factor, < gamma_max
    w0: int         # initial stock units
    c0: float       # initial cash


@dataclass(frozen=True)
class TraitPriors:
    mu_sigma: float = 0.02
    lambda_sigma: float = 0.006
    mu_alpha: float = 2.0
    lambda_alpha: float = 0.8
    lambda_gamma: float = 0.9
    gamma_max: float = 0.999
    w_mean: float = 20.0
    c_mean: float = 15000.0
    alpha_dist_kind: str = "gaussian"   # gaussian | uniform | fixed

    def validate(self) -> None:
        if self.lambda_sigma < 0 or self.lambda_alpha < 0:
            raise ConfigError("trait prior stds must be nonnegative")
        if self.w_mean < 0 or self.c_mean < 0:
            raise ConfigError("endowment means must be nonnegative")
        if not 0.0 < self.gamma_max < 1.0:
            raise ConfigError("gamma_max must lie in (0, 1)")
        if self.alpha_dist_kind not in ("gaussian", "uniform", "fixed"):
            raise ConfigError(f"unknown alpha_dist_kind {self.alpha_dist_kind!r}")

    @property
    def gamma_lo(self) -> float:
        # Candidate grids may set lambda_gamma >= gamma_max; the draw then
        # degenerates to gamma_max (capped below it at sampling time).
        return min(self.lambda_gamma, self.gamma_max)

    def means(self) -> dict[str, float]:
        return {
            "sigma": self.mu_sigma,
            "alpha": self.mu_alpha,
            "gamma": (self.gamma_lo + self.gamma_max) / 2.0,
        }


def sample_trait_arrays(priors: TraitPriors, n: int, rng: np.random.Generator,
                        fixed: frozenset[str] | set[str] = frozenset()) -> dict[str, np.ndarray]:
    """Vectorized trait draws; the building block of sample_population.

    ``fixed`` pins the named trait factors to their population means
    (the homo-ablation and "fixed" population variants).
    """
    priors.validate()
    if n < 1:
        raise ConfigError("population size must be >= 1")
    means = priors.means()

    if "sigma" in fixed:
        sigma = np.full(n, means["sigma"])
    else:
        sigma = np.maximum(rng.normal(priors.mu_sigma, priors.lambda_sigma, n), 0.0)

    if "alpha" in fixed or priors.alpha_dist_kind == "fixed":
        alpha = np.full(n, means["alpha"])
    elif priors.alpha_dist_kind == "uniform":
        half = math.sqrt(3.0) * priors.lambda_alpha
        alpha = rng.uniform(priors.mu_alpha - half, priors.mu_alpha + half, n)
    else:
        alpha = rng.normal(priors.mu_alpha, priors.lambda_alpha, n)

    cap = priors.gamma_max - GAMMA_CAP_EPS
    if "gamma" in fixed:
        gamma = np.full(n, min(means["gamma"], cap))
    else:
        gamma = np.minimum(rng.uniform(priors.gamma_lo, priors.gamma_max, n), cap)

    w0 = np.ceil(rng.exponential(priors.w_mean, n)) if priors.w_mean > 0 else np.zeros(n)
    c0 = rng.exponential(priors.c_mean, n) if priors.c_mean > 0 else np.zeros(n)
    return {"sigma": sigma, "alpha": alpha, "gamma": gamma,
            "w0": w0.astype(int), "c0": c0}


def sample_population(priors: TraitPriors, n: int, rng: np.random.Generator,
                      fixed: frozenset[str] | set[str] = frozenset()) -> list[AgentTraits]:
    arrays = sample_trait_arrays(priors, n, rng, fixed)
    return [AgentTraits(float(arrays["sigma"][j]), float(arrays["alpha"][j]),
                        float(arrays["gamma"][j]), int(arrays["w0"][j]),
                        float(arrays["c0"][j]))
            for j in range(n)]


def mask_traits(obs: np.ndarray, mask: frozenset[str] | set[str]) -> np.ndarray:
    """Zero the masked trait slots of a normalized observation vector."""
    bad = set(mask) - set(TRAIT_SLOTS)
    if bad:
        raise ConfigError(f"unknown trait mask entries {sorted(bad)}")
    if not mask:
        return obs
    out = obs.copy()
    for name in mask:
        out[TRAIT_SLOTS[name]] = 0.0
    return out
