"""
Stochastic policies: tabular softmax over discrete states and linear-Gaussian
over vector states, with batched score functions and a versioned JSON file
format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from uorrl.errors import InvalidArgumentError

FORMAT_VERSION = 1


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TabularSoftmax:
    logits: np.ndarray
    env_name: str = ""
    metadata: dict = field(default_factory=dict)
    kind = "tabular_softmax"

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.ndim != 2 or logits.shape[1] < 1:
            raise InvalidArgumentError("logits must be a (states, actions) matrix")
        if np.any(np.isnan(logits)):
            raise InvalidArgumentError("NaN logits")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, **kw) -> TabularSoftmax:
        return cls(np.zeros((n_states, n_actions)), **kw)

    @classmethod
    def deterministic(cls, actions, n_actions: int, **kw) -> TabularSoftmax:
        """Policy that always picks ``actions[s]`` (logits of -inf elsewhere)."""
        actions = np.asarray(actions, dtype=int)
        logits = np.full((actions.size, n_actions), -np.inf)
        logits[np.arange(actions.size), actions] = 0.0
        return cls(logits, **kw)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @cached_property
    def probs(self) -> np.ndarray:
        return _softmax(self.logits)

    @cached_property
    def _cum(self) -> list:
        return np.cumsum(self.probs, axis=1).tolist()

    def action_probs(self) -> np.ndarray:
        return self.probs

    def sample_action(self, state, rng: np.random.Generator) -> int:
        u = rng.random()
        row = self._cum[state]
        for a, c in enumerate(row):
            if u < c:
                return a
        return len(row) - 1

    @property
    def params(self) -> np.ndarray:
        return self.logits.ravel().copy()

    def with_params(self, flat) -> TabularSoftmax:
        return TabularSoftmax(np.asarray(flat, dtype=float).reshape(self.logits.shape),
                              self.env_name, dict(self.metadata))

    def score(self, states, actions) -> np.ndarray:
        """Rows of d log pi(a|s) / d logits, flattened, one per (s, a)."""
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        out = np.zeros((states.size,) + self.logits.shape)
        idx = np.arange(states.size)
        out[idx, states, :] = -self.probs[states]
        out[idx, states, actions] += 1.0
        return out.reshape(states.size, -1)

    def weighted_score(self, states, actions, coefs) -> np.ndarray:
        """``sum_i coefs[i] * score(states[i], actions[i])`` without the dense matrix."""
        states = np.asarray(states, dtype=int)
        actions = np.asarray(actions, dtype=int)
        coefs = np.asarray(coefs, dtype=float)
        g = np.zeros(self.logits.shape)
        np.add.at(g, states, -coefs[:, None] * self.probs[states])
        np.add.at(g, (states, actions), coefs)
        return g.ravel()

    def log_prob(self, states, actions) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs[np.asarray(states, int), np.asarray(actions, int)])

    def entropy(self, states) -> np.ndarray:
        p = self.probs[np.asarray(states, dtype=int)]
        with np.errstate(divide="ignore", invalid="ignore"):
            return -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=1)

    def entropy_grad(self, states, coefs) -> np.ndarray:
        """Gradient of ``sum_i coefs[i] * H(pi(.|s_i))`` w.r.t. the logits."""
        states = np.asarray(states, dtype=int)
        p = self.probs[states]
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = np.where(p > 0, np.log(p), 0.0)
        H = -np.sum(p * logp, axis=1, keepdims=True)
        rows = -p * (logp + H) * np.asarray(coefs, dtype=float)[:, None]
        g = np.zeros(self.logits.shape)
        np.add.at(g, states, rows)
        return g.ravel()

    def parameter_arrays(self) -> dict:
        return {"logits": self.logits}


@dataclass(frozen=True, eq=False)
class LinearGaussian:
    """``a ~ N(K s + bias, diag(exp(log_std))^2)``."""

    K: np.ndarray
    bias: np.ndarray
    log_std: np.ndarray
    env_name: str = ""
    metadata: dict = field(default_factory=dict)
    kind = "linear_gaussian"

    def __post_init__(self):
        K = np.atleast_2d(np.array(self.K, dtype=float))
        bias = np.atleast_1d(np.array(self.bias, dtype=float))
        log_std = np.atleast_1d(np.array(self.log_std, dtype=float))
        if bias.shape != (K.shape[0],) or log_std.shape != (K.shape[0],):
            raise InvalidArgumentError("bias and log_std must match the action dimension of K")
        if not np.all(np.isfinite(log_std)):
            raise InvalidArgumentError("log_std must be finite")
        for a in (K, bias, log_std):
            a.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "log_std", log_std)

    @classmethod
    def initial(cls, state_dim: int, action_dim: int, **kw) -> LinearGaussian:
        return cls(np.zeros((action_dim, state_dim)), np.zeros(action_dim),
                   np.full(action_dim, math.log(0.5)), **kw)

    @property
    def state_dim(self) -> int:
        return self.K.shape[1]

    @property
    def action_dim(self) -> int:
        return self.K.shape[0]

    @cached_property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean_action(self, state) -> np.ndarray:
        return self.K @ np.atleast_1d(state) + self.bias

    def sample_action(self, state, rng: np.random.Generator) -> np.ndarray:
        return self.mean_action(state) + self.std * rng.standard_normal(self.action_dim)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.K.ravel(), self.bias, self.log_std])

    def with_params(self, flat) -> LinearGaussian:
        flat = np.asarray(flat, dtype=float)
        nk = self.K.size
        na = self.action_dim
        return LinearGaussian(flat[:nk].reshape(self.K.shape), flat[nk:nk + na],
                              flat[nk + na:], self.env_name, dict(self.metadata))

    def score(self, states, actions) -> np.ndarray:
        S = np.asarray(states, dtype=float).reshape(-1, self.state_dim)
        A = np.asarray(actions, dtype=float).reshape(-1, self.action_dim)
        mu = S @ self.K.T + self.bias
        var = self.std**2
        z = (A - mu) / var
        dK = z[:, :, None] * S[:, None, :]
        dlog = (A - mu) ** 2 / var - 1.0
        return np.concatenate([dK.reshape(len(S), -1), z, dlog], axis=1)

    def weighted_score(self, states, actions, coefs) -> np.ndarray:
        return np.asarray(coefs, dtype=float) @ self.score(states, actions)

    def log_prob(self, states, actions) -> np.ndarray:
        S = np.asarray(states, dtype=float).reshape(-1, self.state_dim)
        A = np.asarray(actions, dtype=float).reshape(-1, self.action_dim)
        mu = S @ self.K.T + self.bias
        return np.sum(-0.5 * ((A - mu) / self.std) ** 2 - self.log_std
                      - 0.5 * math.log(2 * math.pi), axis=1)

    def entropy(self, states) -> np.ndarray:
        h = float(np.sum(self.log_std) + 0.5 * self.action_dim * (1 + math.log(2 * math.pi)))
        return np.full(len(np.atleast_1d(states)), h)

    def entropy_grad(self, states, coefs) -> np.ndarray:
        g = np.zeros(self.params.size)
        g[-self.action_dim:] = float(np.sum(coefs))
        return g

    def parameter_arrays(self) -> dict:
        return {"K": self.K, "bias": self.bias, "log_std": self.log_std}


Policy = TabularSoftmax | LinearGaussian


def _encode(arr: np.ndarray):
    # JSON has no infinities; keep them as strings so round trips are exact
    return [
        _encode(x) if isinstance(x, list) else (x if math.isfinite(x) else repr(x))
        for x in arr
    ] if isinstance(arr, list) else arr


def _decode(obj):
    if isinstance(obj, list):
        return [_decode(x) for x in obj]
    if isinstance(obj, str):
        return float(obj)
    return obj


def policy_to_dict(policy, seed=None) -> dict:
    arrays = {k: _encode(v.tolist()) for k, v in policy.parameter_arrays().items()}
    if isinstance(policy, TabularSoftmax):
        dims = {"states": policy.n_states, "actions": policy.n_actions}
    else:
        dims = {"state_dim": policy.state_dim, "action_dim": policy.action_dim}
    return {
        "format_version": FORMAT_VERSION,
        "kind": policy.kind,
        "dims": dims,
        "parameters": arrays,
        "env": policy.env_name,
        "seed": seed,
        "metadata": policy.metadata,
    }


def policy_from_dict(d: dict):
    if d.get("format_version") != FORMAT_VERSION:
        raise InvalidArgumentError(f"unsupported policy format version {d.get('format_version')!r}")
    params = {k: np.array(_decode(v), dtype=float) for k, v in d["parameters"].items()}
    meta = dict(d.get("metadata") or {})
    if d["kind"] == TabularSoftmax.kind:
        p = TabularSoftmax(params["logits"].reshape(d["dims"]["states"], d["dims"]["actions"]),
                           d.get("env", ""), meta)
    elif d["kind"] == LinearGaussian.kind:
        dims = d["dims"]
        p = LinearGaussian(params["K"].reshape(dims["action_dim"], dims["state_dim"]),
                           params["bias"], params["log_std"], d.get("env", ""), meta)
    else:
        raise InvalidArgumentError(f"unknown policy kind {d['kind']!r}")
    return p


def save_policy(policy, path, seed=None) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy, seed), indent=1))


def load_policy(path):
    return policy_from_dict(json.loads(Path(path).read_text()))
