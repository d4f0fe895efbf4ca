"""
Experiment configuration: a single JSON document with a schema version.
Unknown keys anywhere are rejected.

Example::

    {
      "schema_version": 1,
      "env": {"env": "param_chain", "n_states": 7, "gamma": 0.8},
      "distribution": {"kind": "uniform", "bounds": [[0.0, 0.5]]},
      "preference": {"kind": "power", "k": 1},
      "mode": "db",
      "metric": {"delta": 0.1, "n_rollouts": 16},
      "trainer": {"max_iterations": 200, "learning_rate": 1.0},
      "seeds": [0, 1, 2],
      "output_dir": "runs/chain"
    }
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from uorrl.envs import ParamChainEnv, env_from_dict
from uorrl.errors import InvalidArgumentError
from uorrl.metric import (
    DEFAULT_ROLLOUTS_PER_BLOCK,
    suggest_cluster_sizes,
    suggest_delta,
)
from uorrl.param_space import compute_masses, distribution_from_dict, set_division
from uorrl.preference import preference_from_dict
from uorrl.trainer import TrainConfig

SCHEMA_VERSION = 1

TOP_KEYS = {"schema_version", "env", "distribution", "preference", "mode", "metric",
            "trainer", "seeds", "output_dir", "eval"}
METRIC_KEYS = {"delta", "delta_scale", "epsilon", "rho", "c1", "c2", "n1", "n2",
               "n_rollouts", "step_bound", "hold_per_cluster", "literal_accumulation", "horizon"}
TRAINER_KEYS = {"max_iterations", "learning_rate", "baseline", "entropy_bonus"}
EVAL_KEYS = {"n_trajectories", "cell_rollouts", "grid", "k"}


def _check_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise InvalidArgumentError(f"{where} must be an object")
    extra = set(block) - allowed
    if extra:
        raise InvalidArgumentError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass
class ExperimentConfig:
    env: dict
    distribution: dict
    preference: dict
    mode: str = "db"
    metric: dict = field(default_factory=dict)
    trainer: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    eval: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidArgumentError(f"unsupported schema_version {self.schema_version!r}")
        if self.mode not in ("db", "df"):
            raise InvalidArgumentError(f"mode must be 'db' or 'df', got {self.mode!r}")
        _check_keys(self.metric, METRIC_KEYS, "metric")
        _check_keys(self.trainer, TRAINER_KEYS, "trainer")
        _check_keys(self.eval, EVAL_KEYS, "eval")
        if not self.seeds or not all(isinstance(s, int) and s >= 0 for s in self.seeds):
            raise InvalidArgumentError("seeds must be a non-empty list of nonnegative integers")
        # build everything once so inconsistencies surface before any rollout
        env = self.build_env()
        dist = self.build_distribution()
        self.build_preference()
        if env.param_dim != dist.space.dims:
            raise InvalidArgumentError(
                f"environment takes {env.param_dim} parameters, distribution has {dist.space.dims}"
            )
        if isinstance(env, ParamChainEnv) and (dist.space.lower[0] < 0 or dist.space.upper[0] > 1):
            raise InvalidArgumentError("chain slip bounds must lie within [0, 1]")
        self.metric_sizes()

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        _check_keys(d, TOP_KEYS, "config")
        for key in ("env", "distribution", "preference"):
            if key not in d:
                raise InvalidArgumentError(f"config is missing the {key!r} block")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidArgumentError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return copy.deepcopy({
            "schema_version": self.schema_version,
            "env": self.env,
            "distribution": self.distribution,
            "preference": self.preference,
            "mode": self.mode,
            "metric": self.metric,
            "trainer": self.trainer,
            "seeds": self.seeds,
            "output_dir": self.output_dir,
            "eval": self.eval,
        })

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # -- builders ---------------------------------------------------------

    def build_env(self):
        return env_from_dict(self.env)

    def build_distribution(self):
        return distribution_from_dict(self.distribution)

    def build_preference(self):
        return preference_from_dict(self.preference)

    def metric_sizes(self) -> dict:
        """Resolve the metric sizing into concrete ``delta`` or ``(n1, n2)``."""
        m = self.metric
        space = self.build_distribution().space
        if self.mode == "db":
            if "delta" in m:
                delta = float(m["delta"])
            elif "epsilon" in m:
                delta = suggest_delta(float(m["epsilon"]), float(m.get("delta_scale", 1.0)))
            else:
                raise InvalidArgumentError("db mode needs metric.delta or metric.epsilon")
            if not (math.isfinite(delta) and delta > 0):
                raise InvalidArgumentError(f"delta must be positive, got {delta}")
            return {"delta": delta,
                    "n_rollouts": int(m.get("n_rollouts", DEFAULT_ROLLOUTS_PER_BLOCK))}
        if "n1" in m and "n2" in m:
            n1, n2 = int(m["n1"]), int(m["n2"])
        elif "epsilon" in m and "rho" in m:
            n1, n2 = suggest_cluster_sizes(float(m["epsilon"]), float(m["rho"]), space.dims,
                                           float(m.get("c1", 1.0)), float(m.get("c2", 1.0)))
        else:
            raise InvalidArgumentError("df mode needs metric.n1 and metric.n2, or metric.epsilon and metric.rho")
        if n1 < 1 or n2 < 1:
            raise InvalidArgumentError("n1 and n2 must be >= 1")
        return {"n1": n1, "n2": n2}

    def step_bound(self) -> float:
        sb = self.metric.get("step_bound")
        if sb is None or sb in ("inf", "Infinity"):
            return math.inf
        return float(sb)

    def train_config(self, seed: int) -> TrainConfig:
        sizes = self.metric_sizes()
        dist = self.build_distribution()
        t = self.trainer
        kw = dict(
            mode=self.mode,
            preference=self.build_preference(),
            max_iterations=int(t.get("max_iterations", 100)),
            learning_rate=t.get("learning_rate"),
            seed=seed,
            baseline=t.get("baseline", "mean"),
            entropy_bonus=float(t.get("entropy_bonus", 0.0)),
            horizon=self.metric.get("horizon"),
        )
        if self.mode == "db":
            blocks = compute_masses(set_division(dist.space, sizes["delta"]), dist)
            kw.update(blocks=blocks, n_rollouts_per_block=sizes["n_rollouts"])
        else:
            kw.update(n1=sizes["n1"], n2=sizes["n2"], distribution=dist,
                      step_bound=self.step_bound(),
                      hold_per_cluster=bool(self.metric.get("hold_per_cluster", False)),
                      literal_accumulation=bool(self.metric.get("literal_accumulation", False)))
        return TrainConfig(**kw)
