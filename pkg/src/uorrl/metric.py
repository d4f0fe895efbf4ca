"""
Discretized UOR-metric estimators.

``db_metric`` evaluates the policy at one representative parameter per block
and weighs blocks by the preference mass of their rank interval.
``df_metric`` needs no distribution: it groups consecutive trajectories into
clusters of equal implicit mass ``1 / n1``.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from uorrl.envs import estimate_return_with_trajectories, exact_chain_return, rollout
from uorrl.errors import InvalidArgumentError, NumericalFailureError
from uorrl.preference import LedgerEntry, RankedLedger, exact_metric, weight_integral

DEFAULT_ROLLOUTS_PER_BLOCK = 8


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("UORRL_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, threads=None):
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class DbMetricConfig:
    blocks: list
    n_rollouts_per_block: int = DEFAULT_ROLLOUTS_PER_BLOCK
    horizon: int | None = None

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise InvalidArgumentError("distribution-based metric needs at least one block")
        if self.n_rollouts_per_block < 1:
            raise InvalidArgumentError("n_rollouts_per_block must be >= 1")
        total = sum(b.mass for b in self.blocks)
        if abs(total - 1.0) > 1e-9:
            raise InvalidArgumentError(f"block masses sum to {total}; call compute_masses first")

    @property
    def delta(self) -> float | None:
        return getattr(self.blocks, "delta", None)


@dataclass
class Unit:
    """One block or cluster: its mean return, mass, weight and trajectories."""

    id: int
    J: float
    mass: float
    weight: float = 0.0
    trajectories: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    parameter: np.ndarray | None = None

    @property
    def mean_return(self) -> float:
        return self.J


# clusters of the distribution-free estimator are units with mass 1 / n1
Cluster = Unit


@dataclass
class MetricReport:
    value: float
    ledger: RankedLedger
    mode: str
    units: list

    def batches(self) -> list:
        """``(weight, trajectories)`` per unit, in unit-id order."""
        return [(u.weight, u.trajectories) for u in self.units]

    @property
    def unit_returns(self) -> np.ndarray:
        return np.array([u.J for u in self.units])

    @property
    def unit_weights(self) -> np.ndarray:
        return np.array([u.weight for u in self.units])

    def rows(self) -> list:
        return [
            {"rank": r, "source_id": e.source_id, "J": e.J, "mass": e.mass,
             "weight": e.weight, "cumulative_mass": e.cumulative_mass}
            for r, e in enumerate(self.ledger.entries)
        ]

    def to_csv(self, path) -> None:
        cols = ["rank", "source_id", "J", "mass", "weight", "cumulative_mass"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def exact_evaluator(env, policy):
    """Per-parameter return oracle for tabular policies on the chain."""
    return lambda p: exact_chain_return(env, policy, p)


def _attach_weights(units, ledger):
    by_id = {u.id: u for u in units}
    for e in ledger.entries:
        by_id[e.source_id].weight = e.weight


def db_metric(env, policy, cfg: DbMetricConfig, pref, rng: np.random.Generator,
              evaluator=None, threads=None) -> MetricReport:
    """Distribution-based estimate: rank block representatives, weigh by mass intervals.

    With ``evaluator`` (a callable ``p -> J``) the per-block returns are taken
    from it instead of rollouts.
    """
    blocks = list(cfg.blocks)
    if not blocks:
        raise InvalidArgumentError("no blocks")
    streams = rng.spawn(len(blocks))

    def run(j):
        b = blocks[j]
        if evaluator is not None:
            return Unit(j, float(evaluator(b.representative)), b.mass, parameter=b.representative)
        try:
            mean, _, trajs = estimate_return_with_trajectories(
                env, policy, b.representative, cfg.n_rollouts_per_block, streams[j], cfg.horizon
            )
        except NumericalFailureError as exc:
            raise NumericalFailureError(f"block {j}: {exc}", step=exc.step, block_id=j) from exc
        return Unit(j, mean, b.mass, trajectories=trajs,
                    returns=[t.discounted_return for t in trajs], parameter=b.representative)

    units = _map(run, list(range(len(blocks))), threads)
    value, ledger = exact_metric([(u.J, u.mass, u.id) for u in units], pref)
    _attach_weights(units, ledger)
    return MetricReport(value, ledger, "DB", units)


class ClusterStore:
    """Persistent clusters for the literal accumulate-across-iterations mode."""

    def __init__(self, n1: int):
        self.trajectories = [[] for _ in range(n1)]
        self.returns = [[] for _ in range(n1)]


def df_weights(pref, n1: int) -> np.ndarray:
    return np.array([weight_integral(pref, j / n1, (j + 1) / n1) for j in range(n1)])


def df_metric(env, policy, n1: int, n2: int, param_source, pref, rng: np.random.Generator,
              evaluator=None, store: ClusterStore | None = None, horizon=None,
              threads=None) -> MetricReport:
    """Distribution-free estimate from ``n1`` clusters of ``n2`` trajectories.

    Parameters come from ``param_source.draw`` in order; cluster ``j`` takes
    draws ``j*n2 .. (j+1)*n2 - 1``. The rank-``j`` cluster gets weight
    ``int_{j/n1}^{(j+1)/n1} W``. Clusters are rebuilt on every call unless a
    ``store`` is passed, in which case new trajectories are appended to it.
    ``evaluator`` replaces each trajectory return by ``evaluator(p)``.
    """
    if n1 < 1 or n2 < 1:
        raise InvalidArgumentError("n1 and n2 must be >= 1")
    if store is not None and len(store.returns) != n1:
        raise InvalidArgumentError("cluster store size does not match n1")
    params = [[param_source.draw(rng) for _ in range(n2)] for _ in range(n1)]
    streams = rng.spawn(n1)

    def run(j):
        if evaluator is not None:
            return [], [float(evaluator(p)) for p in params[j]]
        trajs = []
        for k, p in enumerate(params[j]):
            try:
                trajs.append(rollout(env, policy, p, streams[j], horizon))
            except NumericalFailureError as exc:
                raise NumericalFailureError(f"cluster {j}, trajectory {k}: {exc}",
                                            step=exc.step, batch_id=j) from exc
        return trajs, [t.discounted_return for t in trajs]

    results = _map(run, list(range(n1)), threads)
    units = []
    for j, (trajs, rets) in enumerate(results):
        if store is not None:
            store.trajectories[j].extend(trajs)
            store.returns[j].extend(rets)
            trajs, rets = store.trajectories[j], store.returns[j]
        units.append(Unit(j, float(np.mean(rets)), 1.0 / n1, trajectories=list(trajs),
                          returns=list(rets), parameter=np.asarray(params[j][0])))

    order = sorted(range(n1), key=lambda j: (units[j].J, j))
    w = df_weights(pref, n1)
    entries = []
    for r, j in enumerate(order):
        entries.append(LedgerEntry(units[j].J, 1.0 / n1, float(w[r]), j, r / n1))
        units[j].weight = float(w[r])
    ledger = RankedLedger(tuple(entries))
    return MetricReport(ledger.value(), ledger, "DF", units)


def suggest_delta(epsilon: float, scale: float = 1.0) -> float:
    """Block diameter for accuracy ``epsilon``; ``scale`` stands in for the unknown constant."""
    if not epsilon > 0 or not scale > 0:
        raise InvalidArgumentError("epsilon and scale must be positive")
    return scale * epsilon


def _ceil(x: float) -> int:
    return math.ceil(x - 1e-9 * max(1.0, abs(x)))


def suggest_cluster_sizes(epsilon: float, rho: float, d: int,
                          c1: float = 1.0, c2: float = 1.0) -> tuple[int, int]:
    """Cluster count ``n1 ~ -ln(rho)/eps^2`` and size ``n2 ~ -ln(rho)/eps^(2d+2)``."""
    if not 0 < rho < 1:
        raise InvalidArgumentError(f"rho must lie in (0, 1), got {rho}")
    if not epsilon > 0 or d < 1 or not c1 > 0 or not c2 > 0:
        raise InvalidArgumentError("epsilon, c1, c2 must be positive and d >= 1")
    log_term = -math.log(rho)
    n1 = max(1, _ceil(c1 * log_term / epsilon**2))
    n2 = max(1, _ceil(c2 * log_term / epsilon ** (2 * d + 2)))
    return n1, n2
