"""
Post-training evaluation: trajectory collection under the parameter
distribution, summary statistics, sub-range heat maps and sorted-group
average-return (ART) differences between policies trained at different k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uorrl.envs import rollout
from uorrl.errors import CapacityError, InvalidArgumentError
from uorrl.preference import PowerPreference, exact_metric

N_GROUPS = 10


def collect_returns(env, policy, dist, n: int, rng: np.random.Generator, horizon=None):
    """``n`` trajectories with iid parameters; returns (params, returns) arrays."""
    params = np.array([dist.sample(rng) for _ in range(n)])
    returns = np.array([rollout(env, policy, p, rng, horizon).discounted_return for p in params])
    return params, returns


def equal_mass_metric(returns, pref) -> float:
    returns = np.asarray(returns, dtype=float)
    n = returns.size
    return exact_metric([(r, 1.0 / n, i) for i, r in enumerate(returns)], pref)[0]


def worst_fraction_mean(returns, fraction: float = 0.1) -> float:
    """Mean of the lowest ``ceil(fraction * n)`` returns."""
    r = np.sort(np.asarray(returns, dtype=float))
    if r.size == 0:
        raise InvalidArgumentError("no returns")
    m = max(1, int(np.ceil(fraction * r.size - 1e-9)))
    return float(r[:m].mean())


def summary_statistics(returns, ks) -> dict:
    out = {f"metric_k{k:g}": equal_mass_metric(returns, PowerPreference(k)) for k in ks}
    out["average_return"] = float(np.mean(returns))
    out["worst10_average"] = worst_fraction_mean(returns, 0.1)
    return out


@dataclass
class EvalGrid:
    counts: tuple
    centers: list  # one array of cell centers per axis
    values: np.ndarray  # shape == counts
    metrics: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape != tuple(self.counts):
            raise InvalidArgumentError("grid values do not match the axis counts")


def heat_map(env, policy, space, counts, n_rollouts: int, rng, pref=None, horizon=None) -> EvalGrid:
    """Mean return at each cell center of an even grid over the space.

    With ``pref`` also computes, per cell, the metric over ``n_rollouts``
    trajectories whose parameters are uniform inside the cell.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != space.dims or any(c < 1 for c in counts):
        raise InvalidArgumentError(f"grid needs {space.dims} positive axis counts")
    edges = [np.linspace(lo, hi, c + 1) for lo, hi, c in zip(space.lower, space.upper, counts)]
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    values = np.zeros(counts)
    metrics = np.zeros(counts) if pref is not None else None
    for idx in np.ndindex(*counts):
        p = np.array([centers[a][i] for a, i in enumerate(idx)])
        rets = [rollout(env, policy, p, rng, horizon).discounted_return for _ in range(n_rollouts)]
        values[idx] = np.mean(rets)
        if pref is not None:
            lo = np.array([edges[a][i] for a, i in enumerate(idx)])
            hi = np.array([edges[a][i + 1] for a, i in enumerate(idx)])
            sub = [rollout(env, policy, rng.uniform(lo, hi), rng, horizon).discounted_return
                   for _ in range(n_rollouts)]
            metrics[idx] = equal_mass_metric(sub, pref)
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("non-finite heat-map cell")
    return EvalGrid(counts, centers, values, metrics)


def art_groups(returns, n_groups: int = N_GROUPS) -> np.ndarray:
    """Average return of each of ``n_groups`` equal groups of the sorted returns."""
    r = np.sort(np.asarray(returns, dtype=float))
    if r.size < n_groups:
        raise CapacityError(f"need at least {n_groups} trajectories, got {r.size}")
    return np.array([g.mean() for g in np.array_split(r, n_groups)])


def art_differences(returns_by_k: dict, n_groups: int = N_GROUPS) -> list:
    """Normalized ART differences for consecutive k, ``(ART(k_hi) - ART(k_lo)) / range``.

    ``range`` is the spread of all returns pooled over every policy. Returns a
    list of ``(k_lo, k_hi, art_lo, art_hi, diffs)`` tuples.
    """
    if len(returns_by_k) < 2:
        raise InvalidArgumentError("need policies for at least two distinct k")
    ks = sorted(returns_by_k)
    pooled = np.concatenate([np.asarray(returns_by_k[k], dtype=float) for k in ks])
    spread = float(pooled.max() - pooled.min())
    arts = {k: art_groups(returns_by_k[k], n_groups) for k in ks}
    out = []
    for lo, hi in zip(ks[:-1], ks[1:]):
        diff = arts[hi] - arts[lo]
        diff = diff / spread if spread > 0 else np.zeros_like(diff)
        out.append((lo, hi, arts[lo], arts[hi], diff))
    return out


def count_decreasing_groups(diffs) -> int:
    """Groups that agree with a decreasing curve.

    Group 0 counts when it is >= group 1; group g > 0 counts when it is
    <= group g-1.
    """
    d = np.asarray(diffs, dtype=float)
    if d.size < 2:
        return d.size
    count = int(d[0] >= d[1])
    count += int(np.sum(d[1:] <= d[:-1]))
    return count
