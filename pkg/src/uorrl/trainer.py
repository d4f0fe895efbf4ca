"""
Policy training against the UOR metric.

Each iteration ranks blocks (or clusters) by their estimated return, turns
the ranks into preference weights, and takes one score-function gradient
step on the weighted sum of per-unit returns. The weights are held fixed
within the iteration.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from uorrl.envs import ParamChainEnv, ParamMassEnv, exact_chain_return
from uorrl.errors import CapacityError, InvalidArgumentError, NumericalFailureError
from uorrl.metric import (
    DEFAULT_ROLLOUTS_PER_BLOCK,
    ClusterStore,
    DbMetricConfig,
    MetricReport,
    db_metric,
    df_metric,
)
from uorrl.param_space import make_source
from uorrl.policy import LinearGaussian, TabularSoftmax
from uorrl.preference import PowerPreference, exact_metric

log = logging.getLogger(__name__)

MAX_ENUMERATION = 10**6


def _batch_arrays(trajectories, baseline: str):
    """Concatenated states, actions and advantage coefficients for one batch."""
    states, actions, coefs = [], [], []
    rtg = [t.rewards_to_go() for t in trajectories]
    if baseline == "mean" and rtg:
        horizon = max(len(g) for g in rtg)
        total = np.zeros(horizon)
        count = np.zeros(horizon)
        for g in rtg:
            total[: len(g)] += g
            count[: len(g)] += 1
        b = total / np.maximum(count, 1)
    elif baseline in ("none", None):
        b = None
    else:
        raise InvalidArgumentError(f"unknown baseline {baseline!r}")
    for t, g in zip(trajectories, rtg):
        states.extend(t.states)
        actions.extend(t.actions)
        coefs.append(g if b is None else g - b[: len(g)])
    coefs = np.concatenate(coefs) if coefs else np.zeros(0)
    return states, actions, coefs


def surrogate_gradient(policy, weighted_batches, baseline: str = "none",
                       entropy_bonus: float = 0.0) -> np.ndarray:
    """Score-function gradient of ``sum_j w_j * mean return of batch j``.

    Uses rewards-to-go ``G_u = sum_{t>=u} gamma^t r_t`` and, with
    ``baseline="mean"``, subtracts the per-timestep batch mean of ``G_u``.
    The entropy bonus adds ``entropy_bonus * sum_j w_j * mean_t H(pi(.|s_t))``.
    """
    weights = np.array([w for w, _ in weighted_batches], dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"batch weights must be nonnegative and sum to 1, got {weights.sum()}")
    grad = np.zeros(policy.params.size)
    for j, (w, trajs) in enumerate(weighted_batches):
        if w == 0 or not trajs:
            continue
        states, actions, coefs = _batch_arrays(trajs, baseline)
        g = policy.weighted_score(states, actions, coefs) / len(trajs)
        if entropy_bonus:
            n_steps = len(states)
            g = g + entropy_bonus * policy.entropy_grad(states, np.full(n_steps, 1.0 / n_steps))
        if not np.all(np.isfinite(g)):
            raise NumericalFailureError(f"non-finite gradient in batch {j}", batch_id=j)
        grad += w * g
    return grad


def policy_update(policy, weighted_batches, learning_rate: float, baseline: str = "none",
                  entropy_bonus: float = 0.0):
    """One gradient-ascent step; returns a new policy and leaves the input alone."""
    if learning_rate < 0:
        raise InvalidArgumentError("learning_rate must be nonnegative")
    grad = surrogate_gradient(policy, weighted_batches, baseline, entropy_bonus)
    if learning_rate == 0:
        return policy.with_params(policy.params)
    return policy.with_params(policy.params + learning_rate * grad)


def initial_policy(env):
    if isinstance(env, ParamChainEnv):
        return TabularSoftmax.uniform(env.n_states, env.n_actions, env_name=env.name)
    if isinstance(env, ParamMassEnv):
        return LinearGaussian.initial(env.state_dim, env.action_dim, env_name=env.name)
    raise InvalidArgumentError(f"no default policy for environment {env!r}")


def default_learning_rate(policy) -> float:
    return 0.05 if isinstance(policy, TabularSoftmax) else 0.005


@dataclass
class TrainConfig:
    """Settings for one training run.

    ``mode="db"`` needs ``blocks`` (a division with masses filled);
    ``mode="df"`` needs ``n1``, ``n2`` and ``distribution`` (sampled through
    an iid or drifting source depending on ``step_bound``, or with one draw
    held for a whole cluster when ``hold_per_cluster`` is set).
    """

    mode: str
    preference: object = field(default_factory=lambda: PowerPreference(0.0))
    max_iterations: int = 100
    learning_rate: float | None = None
    seed: int = 0
    baseline: str = "mean"
    entropy_bonus: float = 0.0
    blocks: list | None = None
    n_rollouts_per_block: int = DEFAULT_ROLLOUTS_PER_BLOCK
    n1: int | None = None
    n2: int | None = None
    distribution: object = None
    step_bound: float = math.inf
    literal_accumulation: bool = False
    hold_per_cluster: bool = False
    horizon: int | None = None

    def __post_init__(self):
        if self.mode not in ("db", "df"):
            raise InvalidArgumentError(f"mode must be 'db' or 'df', got {self.mode!r}")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if self.learning_rate is not None and not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be nonnegative")
        if self.mode == "db" and self.blocks is None:
            raise InvalidArgumentError("db mode needs blocks")
        if self.mode == "df" and (self.n1 is None or self.n2 is None or self.distribution is None):
            raise InvalidArgumentError("df mode needs n1, n2 and a parameter distribution")


def _strip(report: MetricReport) -> MetricReport:
    for u in report.units:
        u.trajectories = []
    return report


class TrainingHalted(NumericalFailureError):
    """Numerical failure mid-training; carries the partial history."""

    def __init__(self, message, history, policy):
        super().__init__(message)
        self.history = history
        self.policy = policy


def train(env, cfg: TrainConfig, policy=None, keep_trajectories: bool = False,
          callback=None):
    """Run the training loop; returns ``(policy, history)``.

    ``history`` holds one :class:`MetricReport` per iteration, measured
    before that iteration's update. Runs are deterministic given ``cfg.seed``.
    """
    policy = initial_policy(env) if policy is None else policy
    lr = default_learning_rate(policy) if cfg.learning_rate is None else cfg.learning_rate
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    history = []
    if cfg.mode == "db":
        db_cfg = DbMetricConfig(cfg.blocks, cfg.n_rollouts_per_block, cfg.horizon)
    else:
        source = make_source(cfg.distribution, cfg.step_bound, cfg.n2 if cfg.hold_per_cluster else None)
        store = ClusterStore(cfg.n1) if cfg.literal_accumulation else None
    for it in range(cfg.max_iterations):
        try:
            if cfg.mode == "db":
                report = db_metric(env, policy, db_cfg, cfg.preference, rng)
            else:
                report = df_metric(env, policy, cfg.n1, cfg.n2, source, cfg.preference, rng,
                                   store=store, horizon=cfg.horizon)
            policy = policy_update(policy, report.batches(), lr, cfg.baseline, cfg.entropy_bonus)
        except NumericalFailureError as exc:
            raise TrainingHalted(f"iteration {it}: {exc}", history, policy) from exc
        history.append(report if keep_trajectories else _strip(report))
        if callback is not None:
            callback(it, report, policy)
        log.debug("iteration %d metric %.6f", it, report.value)
    return policy, history


# ---------------------------------------------------------------------------
# Exact oracles for the tabular chain


def exact_policy_metric(env: ParamChainEnv, policy, param_grid, masses, pref) -> float:
    returns = [(exact_chain_return(env, policy, p), m, i)
               for i, (p, m) in enumerate(zip(param_grid, masses))]
    return exact_metric(returns, pref)[0]


def enumerate_optimal_tabular(env: ParamChainEnv, param_grid, masses, pref):
    """Best deterministic tabular policy by exhaustive search.

    Only interior states carry a decision; terminal rows pick Left. Ties keep
    the first maximizer in lexicographic action order.
    """
    interior = env.n_states - 2
    if env.n_actions ** interior > MAX_ENUMERATION:
        raise CapacityError(
            f"{env.n_actions}^{interior} deterministic policies exceed the limit {MAX_ENUMERATION}"
        )
    grid = [np.atleast_1d(np.asarray(p, dtype=float)) for p in param_grid]
    masses = np.asarray(masses, dtype=float)
    best, best_value = None, -math.inf
    for choice in itertools.product(range(env.n_actions), repeat=interior):
        actions = (0,) + choice + (0,)
        probs = np.zeros((env.n_states, env.n_actions))
        probs[np.arange(env.n_states), actions] = 1.0
        value = exact_policy_metric(env, probs, grid, masses, pref)
        if value > best_value + 1e-15:
            best, best_value = actions, value
    policy = TabularSoftmax.deterministic(best, env.n_actions, env_name=env.name)
    return policy, best_value
