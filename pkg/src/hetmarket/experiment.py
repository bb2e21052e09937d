"""Experiment orchestration for the CLI modes.

Builds populations from a run config, fans episodes over a worker pool,
and writes the per-mode artifacts (an echoed config always included, so a
run can be reproduced from its output directory alone).
"""
from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .baselines import FcnPopulation, ZiPopulation
from .config import RL_POPULATIONS, RunConfig
from .env import EpisodeLog, aggregate_utility, episode_rng, run_episode
from .otcalib import aggregate_score, calibrate, DegenerateCloudError
from .policy import (ActorCritic, PolicyPopulation, derive_rng,
                     load_checkpoint, save_checkpoint, train)
from .stylized import (BarSeries, bars_from_episodes, compute_metrics,
                       standardize_returns)

# Population variants of the learning framework: (alpha kind handled by the
# priors factory, traits fixed at their means, observation mask).
_RL_VARIANTS = {
    "ours": (frozenset(), frozenset()),
    "ours_uniform_alpha": (frozenset(), frozenset()),
    "ours_fixed": (frozenset({"sigma", "alpha", "gamma"}), frozenset()),
    "homo_sigma": (frozenset({"sigma"}), frozenset()),
    "homo_alpha": (frozenset({"alpha"}), frozenset()),
    "homo_gamma": (frozenset({"gamma"}), frozenset()),
    "masked_sigma": (frozenset(), frozenset({"sigma"})),
    "masked_alpha": (frozenset(), frozenset({"alpha"})),
    "masked_gamma": (frozenset(), frozenset({"gamma"})),
}


def build_net(cfg: RunConfig) -> ActorCritic:
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint, cfg.policy_config())
    return ActorCritic(cfg.policy_config(), derive_rng(cfg.seed, 0, 0))


def build_population(cfg: RunConfig, variant: str | None = None,
                     net: ActorCritic | None = None):
    """Population object for a config; ``variant`` overrides cfg.population."""
    name = variant or cfg.population
    if name in ("zi",):
        return ZiPopulation(cfg.n_agents, cfg.baseline_params())
    if name in ("fcn", "adfcn", "adfcn_fixed"):
        return FcnPopulation(cfg.n_agents, cfg.baseline_params(),
                             adaptive=name.startswith("adfcn"),
                             fixed_horizons=name == "adfcn_fixed")
    if name not in _RL_VARIANTS:
        raise ValueError(f"unknown population {name!r}")
    fixed, mask = _RL_VARIANTS[name]
    mask = mask | frozenset(cfg.trait_mask)
    priors = cfg.trait_priors(
        "ours_uniform_alpha" if name == "ours_uniform_alpha" else "ours")
    return PolicyPopulation(net if net is not None else build_net(cfg),
                            priors, cfg.n_agents,
                            bounds=cfg.obs_bounds_resolved(), mask=mask,
                            fixed_traits=fixed,
                            deterministic=cfg.deterministic_policy)


def _episode_worker(cfg_mapping: dict, episode_index: int,
                    record_transitions: bool) -> EpisodeLog:
    cfg = RunConfig.from_mapping(cfg_mapping)
    population = build_population(cfg)
    rng = episode_rng(cfg.seed, episode_index)
    return run_episode(cfg.sim_config(), population, rng, episode_index,
                       record_transitions=record_transitions)


def simulate_episodes(cfg: RunConfig, count: int,
                      record_transitions: bool = False) -> list[EpisodeLog]:
    """Run ``count`` seeded episodes, in parallel when cfg.jobs > 1."""
    if cfg.jobs > 1:
        worker = functools.partial(_episode_worker, cfg.to_mapping(),
                                   record_transitions=record_transitions)
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(worker, range(count)))
    population = build_population(cfg)
    logs = []
    for k in range(count):
        rng = episode_rng(cfg.seed, k)
        logs.append(run_episode(cfg.sim_config(), population, rng, k,
                                record_transitions=record_transitions))
    return logs


def reference_bars(cfg: RunConfig) -> BarSeries:
    """Synthetic reference market standing in for proprietary tick data.

    An FCN population with the fixed/calibrated baseline parameters,
    run ``reference_runs`` times on its own seed stream.
    """
    population = FcnPopulation(cfg.n_agents, cfg.baseline_params())
    logs = []
    for k in range(cfg.reference_runs):
        rng = episode_rng(cfg.reference_seed, k)
        logs.append(run_episode(cfg.sim_config(), population, rng, k,
                                record_transitions=False))
    return bars_from_episodes(logs, cfg.t_len)


def reference_panel(cfg: RunConfig) -> np.ndarray:
    if cfg.bars:
        return standardize_returns(io.ingest_bars(cfg.bars, cfg.t_len))
    return standardize_returns(reference_bars(cfg))


# -- modes -------------------------------------------------------------------

def mode_sim(cfg: RunConfig, out: Path) -> None:
    rl = cfg.population in RL_POPULATIONS
    logs = simulate_episodes(cfg, cfg.episodes, record_transitions=rl)
    for k, log in enumerate(logs):
        io.write_episode_csv(log, out / "episodes" / f"episode_{k:04d}.csv")
        if rl:
            io.write_rollouts_csv(log, out / "rollouts" / f"rollout_{k:04d}.csv")
    bars = bars_from_episodes(logs, cfg.t_len)
    io.write_bars_csv(bars, out / "bars.csv")


def mode_train(cfg: RunConfig, out: Path) -> None:
    if cfg.population not in RL_POPULATIONS:
        raise ValueError("train mode needs a learning population")
    fixed, mask = _RL_VARIANTS[cfg.population]
    result = train(cfg.sim_config(), cfg.trait_priors(), cfg.policy_config(),
                   episodes=cfg.episodes, seed=cfg.seed,
                   bounds=cfg.obs_bounds_resolved(),
                   mask=mask | frozenset(cfg.trait_mask), fixed_traits=fixed,
                   max_updates=cfg.max_updates)
    save_checkpoint(result.net, out / "checkpoint.npz")
    io.write_curves_csv(result.curves, out / "curves.csv")
    io.write_utilities_csv(result.episode_utilities,
                           out / "episode_utilities.csv")


def mode_analyze(cfg: RunConfig, out: Path) -> None:
    if cfg.bars:
        bars = io.ingest_bars(cfg.bars, cfg.t_len)
    else:
        bars = bars_from_episodes(simulate_episodes(cfg, cfg.episodes),
                                  cfg.t_len)
    report = compute_metrics(bars, cfg.hill_frac, sig_z=cfg.acorr_sig_z)
    flags = report.conformity()
    row = {"model": cfg.population, "kurtosis": report.kurtosis,
           "tail": report.tail, "acorr": report.acorr,
           "vv_corr": report.vv_corr}
    row.update({f"conforms_{k}": v for k, v in flags.items()})
    try:
        panel = standardize_returns(bars)
        score = aggregate_score(panel, reference_panel(cfg),
                                cfg.ot_weights(), cfg.hill_frac,
                                cfg.ot_max_points, cfg.ot_seed)
        row.update({"ot_r": score.ot_r, "ot_t": score.ot_t,
                    "ot_as": score.ot_as, "ot_total": score.total})
    except (DegenerateCloudError, ValueError):
        row.update({"ot_r": math.nan, "ot_t": math.nan, "ot_as": math.nan,
                    "ot_total": math.nan})
    io.write_metrics_csv([row], out / "metrics.csv")


def _candidate_runner(candidate, cfg_mapping: dict, runs: int) -> list[np.ndarray]:
    """Per-candidate simulation runner for calibration (picklable)."""
    ls, la, lg = candidate
    mapping = dict(cfg_mapping)
    mapping.update({"lambda_sigma": float(ls), "lambda_alpha": float(la),
                    "lambda_gamma": float(lg)})
    # Normalization bounds stay pinned at the base config's priors so the
    # observation map is identical across candidates.
    base = RunConfig.from_mapping(cfg_mapping)
    bounds = base.obs_bounds_resolved()
    cfg = RunConfig.from_mapping(mapping)
    population = build_population(cfg)
    if hasattr(population, "bounds"):
        population.bounds = bounds
    panels = []
    for k in range(runs):
        rng = episode_rng(cfg.seed, k)
        log = run_episode(cfg.sim_config(), population, rng, k,
                          record_transitions=False)
        bars = bars_from_episodes([log], cfg.t_len)
        panels.append(standardize_returns(bars))
    return panels


def mode_calibrate(cfg: RunConfig, out: Path) -> None:
    if cfg.population not in RL_POPULATIONS:
        raise ValueError("calibrate mode sweeps trait priors of a learning "
                         "population")
    reference = reference_panel(cfg)
    runner = functools.partial(_candidate_runner, cfg_mapping=cfg.to_mapping(),
                               runs=cfg.calib_runs)
    results = calibrate(cfg.calibration_grid(), runner, reference,
                        weights=cfg.ot_weights(), k_frac=cfg.hill_frac,
                        max_points=cfg.ot_max_points, seed=cfg.ot_seed,
                        jobs=cfg.jobs)
    io.write_ranking_csv(results, out / "ranking.csv")


def mode_ablate(cfg: RunConfig, out: Path) -> None:
    rows = []
    for variant in cfg.ablation_variants:
        fixed, mask = _RL_VARIANTS[variant]
        result = train(cfg.sim_config(), cfg.trait_priors(),
                       cfg.policy_config(), episodes=cfg.episodes,
                       seed=cfg.seed, bounds=cfg.obs_bounds_resolved(),
                       mask=mask, fixed_traits=fixed,
                       max_updates=cfg.max_updates)
        population = PolicyPopulation(result.net, cfg.trait_priors(),
                                      cfg.n_agents,
                                      bounds=cfg.obs_bounds_resolved(),
                                      mask=mask, fixed_traits=fixed)
        utilities = []
        for k in range(cfg.trials):
            rng = episode_rng(cfg.seed + 1, k)
            log = run_episode(cfg.sim_config(), population, rng, k,
                              record_transitions=False)
            utilities.append(aggregate_utility([log]))
        rows.append((variant, float(np.mean(utilities)),
                     float(np.std(utilities)), cfg.trials))
    io.write_ablation_csv(rows, out / "ablation.csv")


MODES = {"sim": mode_sim, "train": mode_train, "calibrate": mode_calibrate,
         "analyze": mode_analyze, "ablate": mode_ablate}


def run_experiment(cfg: RunConfig, mode: str, out: str | Path) -> Path:
    """Dispatch one mode, echoing the resolved config for provenance."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    MODES[mode](cfg, out)
    return out
