"""Run configuration: file parsing, validation, and module-config factories.

A run config is a flat YAML mapping; unknown keys are rejected and every
value is checked against the owning module's invariants before anything
executes. CLI overrides win over the file, the file over defaults.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .baselines import BaselineParams
from .env import SimConfig
from .otcalib import CalibrationGrid
from .policy import PolicyConfig
from .pomdp import ObsBounds, OBS_FIELDS, RewardWeights
from .traits import ConfigError, TraitPriors

POPULATIONS = ("ours", "ours_fixed", "ours_uniform_alpha",
               "zi", "fcn", "adfcn", "adfcn_fixed")
RL_POPULATIONS = ("ours", "ours_fixed", "ours_uniform_alpha")
ABLATION_VARIANTS = ("ours", "homo_sigma", "homo_alpha", "homo_gamma",
                     "masked_sigma", "masked_alpha", "masked_gamma")
TRAIT_NAMES = ("sigma", "alpha", "gamma")


@dataclass
class RunConfig:
    # market environment
    n_agents: int = 200
    t_sim: int = 2110
    halt_windows: list = field(default_factory=lambda: [[1, 100], [1100, 1110]])
    tif: int = 200
    tick: float = 0.01
    v_max: int = 20
    r_max: float = 0.05
    xi: float = 0.05
    omega_b: float = 100.0
    omega_s: float = 100.0
    p0_f: float = 300.0
    gbm_drift: float = 0.0
    gbm_vol_min: float = 0.0
    gbm_vol_max: float = 0.003
    beta_short: float = 0.1
    beta_cash: float = 0.1
    beta_illiquidity: float = 0.005
    beta_fundamental: float = 0.2
    omega_u: float = 6e-5
    omega_l: float = 1.0
    depth_cap: float = 1000.0
    # trait priors
    mu_sigma: float = 0.02
    lambda_sigma: float = 0.006
    mu_alpha: float = 2.0
    lambda_alpha: float = 0.8
    lambda_gamma: float = 0.9
    gamma_max: float = 0.999
    w_mean: float = 20.0
    c_mean: float = 15000.0
    # observation normalization bounds; null entries derive from the priors
    obs_bounds: dict | None = None
    # policy / PPO
    hidden_units: int = 512
    hidden_layers: int = 3
    log_std_init: float = -1.0
    learning_rate: float = 1e-4
    clip_eps: float = 0.8
    ppo_epochs: int = 5
    minibatch: int = 512
    t_rollout: int = 1024
    max_grad_norm: float = 0.5
    gae_lambda: float = 0.95
    reward_clip: float = 5.0
    trait_mask: list = field(default_factory=list)
    # rule-based baselines
    lambda_f: float = 10.0
    lambda_c: float = 1.5
    lambda_n: float = 1.0
    sigma_n: float = 1e-4
    tau_f: int = 200
    fcn_alpha: float = 0.10
    fcn_tau: float = 100.0
    tau_diff: float = 20.0
    alpha_diff: float = 1.0
    adfcn_eta: float = 0.01
    adfcn_w_max: float = 20.0
    fcn_order_price_std: float = 0.01
    baseline_w_mean: float = 20.0
    baseline_c_mean: float = 15000.0
    # stylized facts / OT
    t_len: int = 300
    hill_frac: float = 0.05
    acorr_sig_z: float = 2.0
    ot_weight_r: float = 1.0
    ot_weight_t: float = 2.0
    ot_weight_as: float = 4.0
    ot_max_points: int = 2000
    ot_seed: int = 0
    calib_lambda_sigma: list = field(
        default_factory=lambda: [0.0, 0.002, 0.004, 0.006, 0.008, 0.010])
    calib_lambda_alpha: list = field(
        default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    calib_lambda_gamma: list = field(
        default_factory=lambda: [0.75, 0.80, 0.85, 0.90, 0.95, 1.00])
    calib_runs: int = 20
    # run orchestration
    population: str = "ours"
    seed: int = 0
    episodes: int = 5
    trials: int = 5
    jobs: int = 1
    checkpoint: str | None = None
    deterministic_policy: bool = False
    max_updates: int | None = None
    reference_runs: int = 20
    reference_seed: int = 777
    bars: str | None = None
    ablation_variants: list = field(
        default_factory=lambda: list(ABLATION_VARIANTS))

    # -- construction --------------------------------------------------------

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        known = cls.field_names()
        cfg = cls()
        for key, value in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, value, getattr(cfg, key)))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path | None,
                  overrides: dict | None = None) -> "RunConfig":
        mapping: dict = {}
        if path is not None:
            text = Path(path).read_text()
            loaded = yaml.safe_load(text) if text.strip() else None
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must be a mapping")
            mapping.update(loaded)
        if overrides:
            mapping.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(mapping)

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(
            yaml.safe_dump(self.to_mapping(), sort_keys=True))

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        try:
            self.sim_config().validate()
            self.trait_priors().validate()
            self.baseline_params().validate()
            self.obs_bounds_resolved()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.population not in POPULATIONS:
            raise ConfigError(f"population must be one of {POPULATIONS}, "
                              f"got {self.population!r}")
        for name, lo in (("episodes", 1), ("trials", 1), ("jobs", 1),
                         ("t_len", 2), ("calib_runs", 1), ("reference_runs", 1),
                         ("hidden_units", 1), ("hidden_layers", 1),
                         ("ppo_epochs", 1), ("minibatch", 1), ("t_rollout", 2),
                         ("seed", 0), ("ot_seed", 0), ("reference_seed", 0)):
            if getattr(self, name) < lo:
                raise ConfigError(f"{name} must be >= {lo}")
        for name in ("learning_rate", "clip_eps", "max_grad_norm",
                     "reward_clip", "hill_frac", "acorr_sig_z", "ot_weight_r",
                     "ot_weight_t", "ot_weight_as"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        bad = set(self.trait_mask) - set(TRAIT_NAMES)
        if bad:
            raise ConfigError(f"trait_mask entries must be traits, got {bad}")
        bad = set(self.ablation_variants) - set(ABLATION_VARIANTS)
        if bad:
            raise ConfigError(f"unknown ablation variants {sorted(bad)}")
        if self.max_updates is not None and self.max_updates < 1:
            raise ConfigError("max_updates must be >= 1 when set")

    # -- module-config factories ---------------------------------------------

    def sim_config(self) -> SimConfig:
        return SimConfig(
            n=self.n_agents, t_sim=self.t_sim,
            halt_windows=tuple(tuple(w) for w in self.halt_windows),
            tif=self.tif, tick=self.tick, v_max=self.v_max,
            r_max=self.r_max, xi=self.xi,
            omega_b=self.omega_b, omega_s=self.omega_s, p0_f=self.p0_f,
            gbm_drift=self.gbm_drift, gbm_vol_min=self.gbm_vol_min,
            gbm_vol_max=self.gbm_vol_max,
            reward_weights=RewardWeights(
                short=self.beta_short, cash=self.beta_cash,
                illiquidity=self.beta_illiquidity,
                fundamental=self.beta_fundamental,
                omega_u=self.omega_u, omega_l=self.omega_l),
            depth_cap=self.depth_cap)

    def trait_priors(self, population: str | None = None) -> TraitPriors:
        population = population or self.population
        kind = "uniform" if population == "ours_uniform_alpha" else "gaussian"
        return TraitPriors(
            mu_sigma=self.mu_sigma, lambda_sigma=self.lambda_sigma,
            mu_alpha=self.mu_alpha, lambda_alpha=self.lambda_alpha,
            lambda_gamma=self.lambda_gamma, gamma_max=self.gamma_max,
            w_mean=self.w_mean, c_mean=self.c_mean, alpha_dist_kind=kind)

    def obs_bounds_resolved(self) -> ObsBounds:
        overrides = {}
        for key, pair in (self.obs_bounds or {}).items():
            if key not in OBS_FIELDS:
                raise ConfigError(f"unknown obs_bounds key {key!r}")
            lo, hi = (float(pair[0]), float(pair[1]))
            if hi < lo:
                raise ConfigError(f"obs_bounds[{key}] must be (lo, hi)")
            overrides[key] = (lo, hi)
        return ObsBounds.from_priors(self.trait_priors(), **overrides)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(
            hidden=self.hidden_units, hidden_layers=self.hidden_layers,
            log_std_init=self.log_std_init,
            learning_rate=self.learning_rate, clip_eps=self.clip_eps,
            epochs=self.ppo_epochs, minibatch=self.minibatch,
            t_rollout=self.t_rollout, max_grad_norm=self.max_grad_norm,
            gae_lambda=self.gae_lambda, reward_clip=self.reward_clip)

    def baseline_params(self) -> BaselineParams:
        return BaselineParams(
            lambda_f=self.lambda_f, lambda_c=self.lambda_c,
            lambda_n=self.lambda_n, sigma_n=self.sigma_n, tau_f=self.tau_f,
            alpha_ref=self.fcn_alpha, tau_ref=self.fcn_tau,
            tau_diff=self.tau_diff, alpha_diff=self.alpha_diff,
            eta=self.adfcn_eta, w_max=self.adfcn_w_max,
            order_price_rel_std=self.fcn_order_price_std,
            w_mean=self.baseline_w_mean, c_mean=self.baseline_c_mean)

    def calibration_grid(self) -> CalibrationGrid:
        return CalibrationGrid(tuple(self.calib_lambda_sigma),
                               tuple(self.calib_lambda_alpha),
                               tuple(self.calib_lambda_gamma))

    def ot_weights(self) -> tuple[float, float, float]:
        return (self.ot_weight_r, self.ot_weight_t, self.ot_weight_as)


# Expected types for fields whose default is None.
_OPTIONAL_FIELD_TYPES = {"checkpoint": str, "bars": str,
                         "max_updates": int, "obs_bounds": dict}


def _coerce(key: str, value, default):
    """Light type checking driven by each field's default value."""
    if value is None:
        return value
    if default is None:
        expected = _OPTIONAL_FIELD_TYPES.get(key, object)
        if expected is int and (isinstance(value, bool)
                                or not isinstance(value, int)):
            raise ConfigError(f"config key {key!r} expects an integer")
        if expected in (str, dict) and not isinstance(value, expected):
            raise ConfigError(f"config key {key!r} expects {expected.__name__}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"config key {key!r} expects a list")
        return list(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"config key {key!r} expects a mapping")
        return dict(value)
    return value
