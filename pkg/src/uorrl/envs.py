"""
Parameterized MDPs, trajectory rollout and return estimation.

Two environments are provided. ``ParamChainEnv`` is a small tabular chain
whose expected return can be solved exactly; ``ParamMassEnv`` is a
continuous 1-D point mass for exercising linear-Gaussian policies. The
environment parameter is fixed for the whole trajectory and is never shown
to the policy.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from uorrl.errors import InvalidArgumentError, NumericalFailureError

DEFAULT_TAIL_TOL = 1e-6
RESIDUAL_TOL = 1e-10

LEFT, RIGHT = 0, 1


class PmdpEnv(ABC):
    """Minimal interface of a parameterized MDP.

    Subclasses define ``gamma``, ``r_max``, ``param_dim`` and the transition
    via :meth:`step`, which returns ``(next_state, reward, done)``.
    """

    name: str
    gamma: float
    r_max: float
    param_dim: int
    tail_tol: float = DEFAULT_TAIL_TOL

    @abstractmethod
    def initial_state(self, rng: np.random.Generator):
        ...

    @abstractmethod
    def step(self, state, action, p, rng: np.random.Generator):
        ...

    @abstractmethod
    def to_dict(self) -> dict:
        ...

    def default_horizon(self) -> int:
        """Smallest T with ``gamma^T r_max / (1 - gamma) <= tail_tol``."""
        if not 0 < self.gamma < 1:
            raise InvalidArgumentError("tail-based horizon needs 0 < gamma < 1")
        if self.r_max == 0:
            return 1
        bound = self.tail_tol * (1 - self.gamma) / self.r_max
        return max(1, math.ceil(math.log(bound) / math.log(self.gamma)))


@dataclass(frozen=True)
class ParamChainEnv(PmdpEnv):
    """Chain of ``n_states`` cells with absorbing ends.

    Actions are Left/Right. In slippery cells (index >= ``slip_from``) the
    chosen action is inverted with probability ``p[0]``. Entering the right
    end pays ``goal_reward``, entering the left end pays ``left_reward`` and
    every other move pays ``step_reward``. Episodes start in ``start``
    (center by default).
    """

    n_states: int = 5
    gamma: float = 0.95
    goal_reward: float = 1.0
    left_reward: float = 0.0
    step_reward: float = 0.0
    slip_from: int = 1
    start: int | None = None
    tail_tol: float = DEFAULT_TAIL_TOL
    name = "param_chain"
    param_dim = 1
    n_actions = 2

    def __post_init__(self):
        if self.n_states < 3:
            raise InvalidArgumentError("chain needs at least 3 states")
        if not 0 < self.gamma < 1:
            raise InvalidArgumentError("gamma must lie in (0, 1)")
        start = self.n_states // 2 if self.start is None else int(self.start)
        if not 0 < start < self.n_states - 1:
            raise InvalidArgumentError("start must be an interior state")
        object.__setattr__(self, "start", start)

    @property
    def r_max(self) -> float:
        return max(abs(self.goal_reward), abs(self.left_reward), abs(self.step_reward))

    def is_terminal(self, state) -> bool:
        return state == 0 or state == self.n_states - 1

    def initial_state(self, rng=None) -> int:
        return self.start

    def slip_prob(self, state, p) -> float:
        if state < self.slip_from:
            return 0.0
        return min(max(float(p[0]), 0.0), 1.0)

    def reward_of(self, next_state) -> float:
        if next_state == self.n_states - 1:
            return self.goal_reward
        if next_state == 0:
            return self.left_reward
        return self.step_reward

    def step(self, state, action, p, rng):
        slip = self.slip_prob(state, p)
        if slip > 0 and rng.random() < slip:
            action = 1 - action
        nxt = state + 1 if action == RIGHT else state - 1
        return nxt, self.reward_of(nxt), self.is_terminal(nxt)

    def transition_matrices(self, probs: np.ndarray, p):
        """Induced Markov chain ``(P_pi, r_pi)`` under action probabilities ``probs``."""
        n = self.n_states
        P = np.zeros((n, n))
        r = np.zeros(n)
        for s in range(1, n - 1):
            slip = self.slip_prob(s, p)
            p_right = probs[s, RIGHT] * (1 - slip) + probs[s, LEFT] * slip
            for nxt, q in ((s + 1, p_right), (s - 1, 1.0 - p_right)):
                P[s, nxt] += q
                r[s] += q * self.reward_of(nxt)
        return P, r

    def to_dict(self) -> dict:
        return {
            "env": self.name,
            "n_states": self.n_states,
            "gamma": self.gamma,
            "goal_reward": self.goal_reward,
            "left_reward": self.left_reward,
            "step_reward": self.step_reward,
            "slip_from": self.slip_from,
            "start": self.start,
        }


@dataclass(frozen=True)
class ParamMassEnv(PmdpEnv):
    """1-D point mass ``x' = a x + b u + sigma * noise`` with p = (a, sigma).

    Reward is ``-x^2 - c u^2`` on the current state and the clipped action;
    states are clipped to ``[-x_max, x_max]`` and episodes last ``horizon``
    steps. ``x0`` fixes the initial state; otherwise it is uniform on
    ``[-x0_range, x0_range]``.
    """

    b: float = 1.0
    c: float = 0.1
    x_max: float = 5.0
    u_max: float = 2.0
    horizon: int = 30
    gamma: float = 0.95
    x0: float | None = None
    x0_range: float = 1.0
    tail_tol: float = DEFAULT_TAIL_TOL
    name = "param_mass"
    param_dim = 2
    state_dim = 1
    action_dim = 1

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidArgumentError("gamma must lie in (0, 1]")
        if self.horizon < 1:
            raise InvalidArgumentError("horizon must be >= 1")
        if self.x_max <= 0 or self.u_max <= 0 or self.c < 0:
            raise InvalidArgumentError("x_max, u_max must be positive and c nonnegative")

    @property
    def r_max(self) -> float:
        return self.x_max**2 + self.c * self.u_max**2

    def default_horizon(self) -> int:
        return self.horizon

    def initial_state(self, rng) -> np.ndarray:
        if self.x0 is not None:
            return np.array([float(self.x0)])
        return np.array([rng.uniform(-self.x0_range, self.x0_range)])

    def step(self, state, action, p, rng):
        a, sigma = float(p[0]), float(p[1])
        x = float(state[0])
        u = min(max(float(np.ravel(action)[0]), -self.u_max), self.u_max)
        reward = -x * x - self.c * u * u
        noise = sigma * rng.standard_normal() if sigma > 0 else 0.0
        nxt = min(max(a * x + self.b * u + noise, -self.x_max), self.x_max)
        return np.array([nxt]), reward, False

    def to_dict(self) -> dict:
        return {
            "env": self.name,
            "b": self.b,
            "c": self.c,
            "x_max": self.x_max,
            "u_max": self.u_max,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "x0": self.x0,
            "x0_range": self.x0_range,
        }


ENVIRONMENTS = {"param_chain": ParamChainEnv, "param_mass": ParamMassEnv}


def env_from_dict(spec: dict) -> PmdpEnv:
    spec = dict(spec)
    name = spec.pop("env", None)
    if name not in ENVIRONMENTS:
        raise InvalidArgumentError(f"unknown environment {name!r}")
    cls = ENVIRONMENTS[name]
    allowed = set(cls.__dataclass_fields__)
    extra = set(spec) - allowed
    if extra:
        raise InvalidArgumentError(f"unknown keys for {name}: {sorted(extra)}")
    return cls(**spec)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: list
    actions: list
    rewards: list
    next_states: list
    discounted_return: float
    parameter: np.ndarray
    gamma: float

    @property
    def steps(self) -> list:
        return list(zip(self.states, self.actions, self.rewards, self.next_states))

    def __len__(self):
        return len(self.rewards)

    def recompute_return(self) -> float:
        g = np.power(self.gamma, np.arange(len(self.rewards)))
        return float(np.dot(g, self.rewards))

    def rewards_to_go(self) -> np.ndarray:
        """``G_u = sum_{t >= u} gamma^t r_t`` (discounting from time zero)."""
        disc = np.power(self.gamma, np.arange(len(self.rewards))) * np.asarray(self.rewards)
        return np.cumsum(disc[::-1])[::-1]


def rollout(env: PmdpEnv, policy, p, rng: np.random.Generator, horizon: int | None = None) -> Trajectory:
    """Run one episode with the parameter held at ``p``.

    Stops at a terminal state or after ``horizon`` steps (default: the
    environment's tail-tolerance horizon).
    """
    if horizon is None:
        horizon = env.default_horizon()
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    p = np.asarray(p, dtype=float)
    state = env.initial_state(rng)
    states, actions, rewards, nexts = [], [], [], []
    ret = 0.0
    disc = 1.0
    gamma = env.gamma
    for t in range(horizon):
        action = policy.sample_action(state, rng)
        if isinstance(action, np.ndarray) and not np.all(np.isfinite(action)):
            raise NumericalFailureError(f"non-finite action at step {t}", step=t)
        nxt, reward, done = env.step(state, action, p, rng)
        if not math.isfinite(reward):
            raise NumericalFailureError(f"non-finite reward at step {t}", step=t)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        nexts.append(nxt)
        ret += disc * reward
        disc *= gamma
        if done:
            break
        state = nxt
    return Trajectory(states, actions, rewards, nexts, ret, p, gamma)


def estimate_return(env, policy, p, n_rollouts: int, rng, horizon=None) -> tuple[float, float]:
    """Monte-Carlo mean discounted return and its standard error."""
    mean, se, _ = estimate_return_with_trajectories(env, policy, p, n_rollouts, rng, horizon)
    return mean, se


def estimate_return_with_trajectories(env, policy, p, n_rollouts, rng, horizon=None):
    if n_rollouts < 1:
        raise InvalidArgumentError("n_rollouts must be >= 1")
    trajs = [rollout(env, policy, p, rng, horizon) for _ in range(n_rollouts)]
    returns = np.array([t.discounted_return for t in trajs])
    mean = float(returns.mean())
    # identical returns give exactly zero, not a rounding residue of the mean
    spread = n_rollouts > 1 and returns.max() > returns.min()
    se = float(returns.std(ddof=1) / math.sqrt(n_rollouts)) if spread else 0.0
    return mean, se, trajs


def exact_chain_return(env: ParamChainEnv, policy, p) -> float:
    """Expected discounted return from the start state, by a linear solve.

    ``policy`` is a tabular policy (anything with ``action_probs()``) or a
    ``(n_states, 2)`` array of action probabilities.
    """
    probs = policy.action_probs() if hasattr(policy, "action_probs") else np.asarray(policy, dtype=float)
    if probs.shape != (env.n_states, env.n_actions):
        raise InvalidArgumentError(
            f"tabular policy must have shape {(env.n_states, env.n_actions)}, got {probs.shape}"
        )
    P, r = env.transition_matrices(probs, np.atleast_1d(np.asarray(p, dtype=float)))
    A = np.eye(env.n_states) - env.gamma * P
    v = np.linalg.solve(A, r)
    resid = np.max(np.abs(A @ v - r))
    if resid > RESIDUAL_TOL:
        raise NumericalFailureError(f"linear solve residual {resid:.3g} exceeds {RESIDUAL_TOL}")
    return float(v[env.start])
