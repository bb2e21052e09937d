"""Point-cloud featurization, exact optimal transport, and grid calibration.

The OT distance is the squared 2-Wasserstein between uniform point clouds,
solved exactly: a quantile closed form in one dimension, the assignment
problem for equal-size clouds, and a transportation network simplex with
integer flows otherwise. Clouds above ``max_points`` are uniformly
subsampled with a fixed seed before solving.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

AS_LAGS = (0, 1, 10, 20, 30, 40, 50, 60, 70)


class DegenerateCloudError(ValueError):
    pass


class OTSolverError(RuntimeError):
    pass


def featurize(panel: np.ndarray, kind: str, k_frac: float = 0.05,
              k_top: int | None = None) -> np.ndarray:
    """Build a point cloud from a standardized return panel.

    kind "r": every return as a 1-d point. kind "t": log-ratios of the top
    order statistics of |returns| against the next one down (tail shape).
    kind "as": 9-d points (|r_t|, |r_t+1|, |r_t+10|, ..., |r_t+70|) for
    every in-day window.
    """
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2:
        raise ValueError("panel must be days x returns")
    if kind == "r":
        return panel.reshape(-1, 1)
    if kind == "t":
        r = np.sort(np.abs(panel).ravel())
        n = r.size
        k = k_top if k_top is not None else math.ceil(k_frac * n)
        if k < 1 or k >= n:
            raise DegenerateCloudError(f"tail cloud needs 1 <= K < N, got K={k}")
        threshold = r[n - k - 1]
        if threshold <= 0.0:
            raise DegenerateCloudError("tail threshold is zero")
        return np.log(r[n - k:] / threshold).reshape(-1, 1)
    if kind == "as":
        max_lag = AS_LAGS[-1]
        t_ret = panel.shape[1]
        if t_ret <= max_lag:
            raise DegenerateCloudError(
                f"need more than {max_lag} returns per day, got {t_ret}")
        count = t_ret - max_lag
        absr = np.abs(panel)
        stacked = np.stack([absr[:, lag:lag + count] for lag in AS_LAGS], axis=2)
        return stacked.reshape(-1, len(AS_LAGS))
    raise ValueError(f"unknown featurization kind {kind!r}")


# -- exact solvers ----------------------------------------------------------

def _wasserstein2_1d(x: np.ndarray, y: np.ndarray,
                     return_plan: bool = False):
    """Closed-form squared 2-Wasserstein between 1-d uniform clouds.

    The optimal coupling is the monotone rearrangement; breakpoints of the
    two quantile functions live on the common 1/(K*L) grid, so the indexing
    below is exact integer arithmetic.
    """
    xs, ys = np.sort(x), np.sort(y)
    k, l = len(xs), len(ys)
    order_x, order_y = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    grid = np.union1d(np.arange(0, k * l + 1, l), np.arange(0, k * l + 1, k))
    widths = np.diff(grid) / (k * l)
    xi = grid[:-1] // l
    yi = grid[:-1] // k
    cost = float(np.sum(widths * (xs[xi] - ys[yi]) ** 2))
    if not return_plan:
        return cost
    plan = np.zeros((k, l))
    np.add.at(plan, (order_x[xi], order_y[yi]), widths)
    return cost, plan


def _assignment(cost: np.ndarray, return_plan: bool = False):
    rows, cols = linear_sum_assignment(cost)
    value = float(cost[rows, cols].sum() / len(rows))
    if not return_plan:
        return value
    plan = np.zeros_like(cost)
    plan[rows, cols] = 1.0 / len(rows)
    return value, plan


def _northwest_corner(k: int, l: int) -> tuple[list[tuple[int, int]], dict]:
    """Initial basic feasible tree for supplies L each / demands K each."""
    basis: list[tuple[int, int]] = []
    flows: dict[tuple[int, int], int] = {}
    supply = [l] * k
    demand = [k] * l
    i = j = 0
    while i < k and j < l:
        f = min(supply[i], demand[j])
        basis.append((i, j))
        flows[(i, j)] = f
        supply[i] -= f
        demand[j] -= f
        if supply[i] == 0 and demand[j] == 0:
            if i < k - 1:
                i += 1
            else:
                j += 1
        elif supply[i] == 0:
            i += 1
        else:
            j += 1
    return basis, flows


def _transport_simplex(cost: np.ndarray, return_plan: bool = False):
    """Transportation network simplex for uniform marginals 1/K, 1/L.

    Works on the integer-scaled problem (each source ships L units, each
    sink takes K), so all basic flows stay exact integers; only potentials
    and reduced costs are floating point.
    """
    k, l = cost.shape
    basis, flows = _northwest_corner(k, l)
    n_nodes = k + l
    tol = 1e-11 * max(1.0, float(np.abs(cost).max()))
    max_iter = 200 * (k + l) + 2000

    for _ in range(max_iter):
        # Tree adjacency over nodes: rows 0..k-1, cols k..k+l-1.
        adj: list[list[tuple[int, tuple[int, int]]]] = [[] for _ in range(n_nodes)]
        for (i, j) in basis:
            adj[i].append((k + j, (i, j)))
            adj[k + j].append((i, (i, j)))

        # Potentials u, v from a tree traversal with u[0] = 0.
        potential = np.full(n_nodes, np.nan)
        parent: list[tuple[int, tuple[int, int]] | None] = [None] * n_nodes
        potential[0] = 0.0
        stack = [0]
        while stack:
            node = stack.pop()
            for nxt, arc in adj[node]:
                if np.isnan(potential[nxt]):
                    potential[nxt] = cost[arc] - potential[node]
                    parent[nxt] = (node, arc)
                    stack.append(nxt)
        if np.isnan(potential).any():
            raise OTSolverError("basis lost spanning-tree structure")

        reduced = cost - potential[:k, None] - potential[None, k:]
        entering = np.unravel_index(np.argmin(reduced), reduced.shape)
        if reduced[entering] >= -tol:
            break

        # Cycle: entering arc + the tree path between its endpoints.
        i_star, j_star = int(entering[0]), int(entering[1])
        path_i = [i_star]
        while parent[path_i[-1]] is not None:
            path_i.append(parent[path_i[-1]][0])
        index_in_i = {node: idx for idx, node in enumerate(path_i)}
        path_j = [k + j_star]
        while path_j[-1] not in index_in_i:
            path_j.append(parent[path_j[-1]][0])
        meet = path_j[-1]
        nodes = path_i[:index_in_i[meet] + 1] + list(reversed(path_j[:-1]))
        # nodes runs i* -> ... -> j*; consecutive pairs are basic arcs.
        cycle_arcs = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            arc = (a, b - k) if a < k else (b, a - k)
            cycle_arcs.append(arc)
        # Walking back from j*, arcs alternate -theta, +theta.
        backward = cycle_arcs[::-1][0::2]
        forward = cycle_arcs[::-1][1::2]
        theta, leaving = min(((flows[arc], arc) for arc in backward),
                             key=lambda item: (item[0], item[1]))
        for arc in backward:
            flows[arc] -= theta
        for arc in forward:
            flows[arc] += theta
        flows[(i_star, j_star)] = flows.get((i_star, j_star), 0) + theta
        basis.remove(leaving)
        del flows[leaving]
        basis.append((i_star, j_star))
    else:
        raise OTSolverError("transportation simplex exceeded iteration cap")

    total = sum(cost[arc] * f for arc, f in flows.items())
    value = float(total / (k * l))
    if not return_plan:
        return value
    plan = np.zeros((k, l))
    for (i, j), f in flows.items():
        plan[i, j] = f / (k * l)
    return value, plan


def subsample(points: np.ndarray, max_points: int, seed: int) -> np.ndarray:
    if len(points) <= max_points:
        return points
    rng = np.random.default_rng(np.random.SeedSequence([seed, len(points)]))
    idx = np.sort(rng.choice(len(points), size=max_points, replace=False))
    return points[idx]


def ot_distance(a: np.ndarray, b: np.ndarray, max_points: int = 2000,
                seed: int = 0, return_plan: bool = False):
    """Exact squared 2-Wasserstein distance between uniform point clouds."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 1 or len(b) < 1:
        raise ValueError("clouds must be nonempty")
    a = subsample(a, max_points, seed)
    b = subsample(b, max_points, seed + 1)
    if a.shape[1] == 1:
        return _wasserstein2_1d(a[:, 0], b[:, 0], return_plan)
    cost = cdist(a, b, "sqeuclidean")
    if len(a) == len(b):
        return _assignment(cost, return_plan)
    return _transport_simplex(cost, return_plan)


# -- aggregate score and calibration ---------------------------------------

@dataclass(frozen=True)
class OTScore:
    ot_r: float
    ot_t: float
    ot_as: float
    total: float


def aggregate_score(syn_panel: np.ndarray, ref_panel: np.ndarray,
                    weights: tuple[float, float, float] = (1.0, 2.0, 4.0),
                    k_frac: float = 0.05, max_points: int = 2000,
                    seed: int = 0) -> OTScore:
    """Weighted sum of the three featurized OT distances.

    Raises DegenerateCloudError when any featurization fails on either side.
    """
    parts = {}
    for kind in ("r", "t", "as"):
        syn = featurize(syn_panel, kind, k_frac)
        ref = featurize(ref_panel, kind, k_frac)
        parts[kind] = ot_distance(syn, ref, max_points=max_points, seed=seed)
    total = (weights[0] * parts["r"] + weights[1] * parts["t"]
             + weights[2] * parts["as"])
    return OTScore(parts["r"], parts["t"], parts["as"], total)


@dataclass(frozen=True)
class CalibrationGrid:
    lambda_sigma: tuple = (0.0, 0.002, 0.004, 0.006, 0.008, 0.010)
    lambda_alpha: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    lambda_gamma: tuple = (0.75, 0.80, 0.85, 0.90, 0.95, 1.00)

    def candidates(self) -> list[tuple[float, float, float]]:
        return list(itertools.product(self.lambda_sigma, self.lambda_alpha,
                                      self.lambda_gamma))


@dataclass(frozen=True)
class CandidateResult:
    lambda_sigma: float
    lambda_alpha: float
    lambda_gamma: float
    ot_r: float
    ot_t: float
    ot_as: float
    score: float
    failed: bool
    rank: int = 0


def _evaluate_candidate(candidate, runner, reference, weights, k_frac,
                        max_points, seed) -> CandidateResult:
    ls, la, lg = candidate
    try:
        panels = runner(candidate)
        if not panels:
            raise ValueError("runner produced no panels")
        scores = [aggregate_score(p, reference, weights, k_frac, max_points,
                                  seed) for p in panels]
    except (DegenerateCloudError, ValueError, ArithmeticError) as exc:
        return CandidateResult(ls, la, lg, math.nan, math.nan, math.nan,
                               math.inf, failed=True)
    return CandidateResult(
        ls, la, lg,
        float(np.mean([s.ot_r for s in scores])),
        float(np.mean([s.ot_t for s in scores])),
        float(np.mean([s.ot_as for s in scores])),
        float(np.mean([s.total for s in scores])),
        failed=False)


def calibrate(grid: CalibrationGrid, runner, reference: np.ndarray,
              weights: tuple[float, float, float] = (1.0, 2.0, 4.0),
              k_frac: float = 0.05, max_points: int = 2000, seed: int = 0,
              jobs: int = 1) -> list[CandidateResult]:
    """Score every grid candidate against the reference panel and rank them.

    ``runner(candidate)`` must return one standardized return panel per run;
    a failing candidate keeps its slot (ranked last) without stopping the
    sweep. Results are ordered by ascending mean weighted OT score.
    """
    candidates = grid.candidates()
    args = [(c, runner, reference, weights, k_frac, max_points, seed)
            for c in candidates]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_candidate_star, args))
    else:
        results = [_evaluate_candidate(*a) for a in args]
    order = sorted(range(len(results)),
                   key=lambda idx: (results[idx].failed, results[idx].score, idx))
    return [replace(results[idx], rank=pos + 1)
            for pos, idx in enumerate(order)]


def _evaluate_candidate_star(args):
    return _evaluate_candidate(*args)
