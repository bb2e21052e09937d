"""CSV artifacts: episode logs, bar panels, curves, reports.

Floats are written with repr (shortest round-trip form), so identical runs
produce byte-identical files.
"""
from __future__ import annotations

import csv
import warnings
from pathlib import Path

import numpy as np

from .env import EpisodeLog
from .stylized import BarSeries

BARS_HEADER = ["date", "minute_index", "mid_price", "volume"]


class DataError(Exception):
    """Unrecoverable problem in an input data file."""


def _fmt(value) -> str:
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    return str(value)


def _write_rows(path: str | Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_episode_csv(log: EpisodeLog, path: str | Path) -> None:
    rows = ((t, log.mids[t], log.fundamentals[t], log.exec_volume[t])
            for t in range(1, log.t_sim + 1))
    _write_rows(path, ["step", "mid_price", "fundamental", "exec_volume"], rows)


def write_rollouts_csv(log: EpisodeLog, path: str | Path) -> None:
    header = (["episode", "reward", "gamma", "log_prob"]
              + [f"obs_{k}" for k in range(11)]
              + ["action_0", "action_1"]
              + [f"next_obs_{k}" for k in range(11)])
    rows = ([rec.episode, rec.reward, rec.gamma, rec.log_prob]
            + list(rec.obs) + list(rec.action) + list(rec.next_obs)
            for rec in log.transitions)
    _write_rows(path, header, rows)


def write_bars_csv(bars: BarSeries, path: str | Path) -> None:
    rows = ((bars.dates[d], k, bars.prices[d, k], bars.volumes[d, k])
            for d in range(bars.n_days) for k in range(bars.t_len))
    _write_rows(path, BARS_HEADER, rows)


def ingest_bars(path: str | Path, t_len: int) -> BarSeries:
    """Read a bar-panel CSV, keeping only complete days.

    Rows that do not parse are hard errors (with their line number);
    rows with nonpositive prices are rejected with a warning, which makes
    their day incomplete; incomplete days are dropped with a warning.
    """
    path = Path(path)
    days: dict[str, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in header] != BARS_HEADER:
            raise DataError(f"{path}: expected header {','.join(BARS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path} line {lineno}: expected 4 columns")
            date = row[0].strip()
            try:
                minute = int(row[1])
                price = float(row[2])
                volume = float(row[3])
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: {exc}") from None
            if not 0 <= minute < t_len:
                raise DataError(f"{path} line {lineno}: minute_index {minute} "
                                f"outside [0, {t_len})")
            if price <= 0:
                warnings.warn(f"{path} line {lineno}: nonpositive price, "
                              f"row rejected")
                continue
            day = days.setdefault(date, {})
            if minute in day:
                raise DataError(f"{path} line {lineno}: duplicate minute "
                                f"{minute} for {date}")
            day[minute] = (price, volume)

    kept_dates, prices, volumes = [], [], []
    for date in sorted(days):
        day = days[date]
        if len(day) != t_len:
            warnings.warn(f"{path}: day {date} has {len(day)} of {t_len} "
                          f"minutes, dropped")
            continue
        kept_dates.append(date)
        prices.append([day[m][0] for m in range(t_len)])
        volumes.append([day[m][1] for m in range(t_len)])
    if not kept_dates:
        raise DataError(f"{path}: no complete days")
    return BarSeries(prices=np.array(prices), volumes=np.array(volumes),
                     dates=tuple(kept_dates))


def write_curves_csv(curves, path: str | Path) -> None:
    rows = ((k, c.mean_reward, c.actor_loss, c.critic_loss, c.entropy)
            for k, c in enumerate(curves))
    _write_rows(path, ["update_idx", "mean_reward", "actor_loss",
                       "critic_loss", "entropy"], rows)


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    header = ["model", "kurtosis", "tail", "acorr", "vv_corr",
              "conforms_kurtosis", "conforms_tail", "conforms_acorr",
              "conforms_vv_corr", "ot_r", "ot_t", "ot_as", "ot_total"]
    _write_rows(path, header, ([row.get(k, "") for k in header]
                               for row in rows))


def write_ranking_csv(results, path: str | Path) -> None:
    header = ["lambda_sigma", "lambda_alpha", "lambda_gamma",
              "ot_r", "ot_t", "ot_as", "score", "rank", "failed"]
    rows = ((r.lambda_sigma, r.lambda_alpha, r.lambda_gamma, r.ot_r, r.ot_t,
             r.ot_as, r.score, r.rank, r.failed) for r in results)
    _write_rows(path, header, rows)


def write_ablation_csv(rows, path: str | Path) -> None:
    _write_rows(path, ["variant", "mean_utility", "std_utility", "trials"],
                rows)


def write_utilities_csv(utilities, path: str | Path) -> None:
    _write_rows(path, ["episode", "utility"],
                ((k, u) for k, u in enumerate(utilities)))
