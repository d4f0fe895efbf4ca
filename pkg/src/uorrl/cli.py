"""Command-line entry point: ``uorrl {divide,train,eval,art-diff,suggest-sizes}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 capacity error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from uorrl.config import ExperimentConfig
from uorrl.errors import CapacityError, InvalidArgumentError, UorError
from uorrl.evaluation import (
    art_differences,
    collect_returns,
    heat_map,
    summary_statistics,
)
from uorrl.metric import suggest_cluster_sizes, suggest_delta
from uorrl.param_space import ParameterSpace, set_division
from uorrl.policy import load_policy, save_policy
from uorrl.trainer import train

log = logging.getLogger("uorrl")


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _parse_bounds(text: str) -> ParameterSpace:
    """``"0,1;0,2"`` -> box [0,1] x [0,2]."""
    try:
        pairs = [tuple(float(v) for v in axis.split(",")) for axis in text.split(";") if axis.strip()]
    except ValueError:
        raise InvalidArgumentError(f"cannot parse bounds {text!r}") from None
    return ParameterSpace.from_bounds(pairs)


def _parse_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_grid(text: str, dims: int) -> tuple:
    try:
        counts = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise InvalidArgumentError(f"cannot parse grid {text!r}") from None
    if len(counts) != dims:
        raise InvalidArgumentError(f"grid {text!r} has {len(counts)} axes, parameter space has {dims}")
    return counts


def _seed_rng(seed: int, *counters) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(counters)))


# -- subcommands -------------------------------------------------------------


def cmd_divide(args) -> int:
    if args.bounds is not None:
        space = _parse_bounds(args.bounds)
    elif args.config is not None:
        space = ExperimentConfig.load(args.config).build_distribution().space
    else:
        raise InvalidArgumentError("divide needs --bounds or --config")
    if args.delta is None:
        raise InvalidArgumentError("divide needs --delta")
    blocks = set_division(space, args.delta)
    d = space.dims
    header = (["id"] + [f"lower_{i}" for i in range(d)] + [f"upper_{i}" for i in range(d)]
              + [f"rep_{i}" for i in range(d)] + ["diameter"])
    rows = []
    for b in blocks:
        rows.append([b.id] + [_fmt(v) for v in b.lower] + [_fmt(v) for v in b.upper]
                    + [_fmt(v) for v in b.representative] + [_fmt(b.diameter())])
    out = csv.writer(sys.stdout)
    out.writerow(header)
    out.writerows(rows)
    if args.out:
        _write_csv(Path(args.out) / "blocks.csv", header, rows)
    return 0


def _run_seed(cfg: ExperimentConfig, seed: int, out: Path) -> None:
    env = cfg.build_env()
    tcfg = cfg.train_config(seed)
    stamps = []
    start = time.perf_counter()

    def tick(it, report, policy):
        stamps.append(time.perf_counter() - start)

    policy, history = train(env, tcfg, callback=tick)
    policy.metadata.update({"mode": cfg.mode, "preference": cfg.preference})
    save_policy(policy, out / f"policy_seed{seed}.json", seed=seed)
    _write_csv(out / f"history_seed{seed}.csv", ["iteration", "metric_value"],
               [[i, _fmt(r.value)] for i, r in enumerate(history)])
    _write_csv(out / f"timing_seed{seed}.csv", ["iteration", "wall_time"],
               [[i, f"{t:.6f}"] for i, t in enumerate(stamps)])


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = cfg.metric_sizes()
    log.info("mode=%s sizes=%s seeds=%s", cfg.mode, sizes, seeds)
    print(f"mode={cfg.mode} " + " ".join(f"{k}={v}" for k, v in sizes.items()))
    (out / "run_info.json").write_text(json.dumps(
        {"config": cfg.to_dict(), "sizes": sizes, "seeds": seeds}, indent=2, sort_keys=True))
    for seed in seeds:
        _run_seed(cfg, seed, out)
    return 0


def _check_policy(policy, env):
    if policy.env_name and policy.env_name != env.name:
        raise InvalidArgumentError(f"policy trained on {policy.env_name!r}, config uses {env.name!r}")
    if hasattr(policy, "n_states") and policy.n_states != getattr(env, "n_states", None):
        raise InvalidArgumentError("policy state count does not match the environment")
    if hasattr(policy, "state_dim") and policy.state_dim != getattr(env, "state_dim", None):
        raise InvalidArgumentError("policy state dimension does not match the environment")


def cmd_eval(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    env = cfg.build_env()
    dist = cfg.build_distribution()
    ev = cfg.eval
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    ks = _parse_list(args.k) if args.k else list(ev.get("k", [0, 1, 21]))
    n_traj = int(args.n_trajectories or ev.get("n_trajectories", 1000))
    cell_rollouts = int(ev.get("cell_rollouts", 20))
    grid_text = args.grid or ev.get("grid") or "x".join(["10"] * dist.space.dims)
    counts = _parse_grid(grid_text, dist.space.dims)
    out = Path(args.out or cfg.output_dir)
    policies = [load_policy(p) for p in args.policy]
    for p in policies:
        _check_policy(p, env)
    pref = cfg.build_preference()

    traj_rows, stats = [], []
    for i, policy in enumerate(policies):
        params, returns = collect_returns(env, policy, dist, n_traj, _seed_rng(seed, 0))
        for j, (p, r) in enumerate(zip(params, returns)):
            traj_rows.append([i, j] + [_fmt(v) for v in p] + [_fmt(r)])
        stats.append(summary_statistics(returns, ks))
        grid = heat_map(env, policy, dist.space, counts, cell_rollouts, _seed_rng(seed, 1), pref)
        _write_heat_map(out / f"heatmap_p{i}.csv", grid)
    d = dist.space.dims
    _write_csv(out / "trajectories.csv",
               ["policy", "index"] + [f"param_{a}" for a in range(d)] + ["return"], traj_rows)
    names = list(stats[0])
    rows = []
    for name in names:
        vals = np.array([s[name] for s in stats])
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append([name, _fmt(vals.mean()), _fmt(std), len(vals)] + [_fmt(v) for v in vals])
    _write_csv(out / "summary.csv",
               ["statistic", "mean", "std", "n_policies"] + [f"policy_{i}" for i in range(len(policies))],
               rows)
    return 0


def _write_heat_map(path: Path, grid) -> None:
    axes = "xyzw"
    d = len(grid.counts)
    header = ([f"{axes[a]}_index" for a in range(d)] + [f"{axes[a]}_center" for a in range(d)]
              + ["value"] + (["metric"] if grid.metrics is not None else []))
    rows = []
    for idx in np.ndindex(*grid.counts):
        row = list(idx) + [_fmt(grid.centers[a][i]) for a, i in enumerate(idx)] + [_fmt(grid.values[idx])]
        if grid.metrics is not None:
            row.append(_fmt(grid.metrics[idx]))
        rows.append(row)
    _write_csv(path, header, rows)


def cmd_art_diff(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    env = cfg.build_env()
    dist = cfg.build_distribution()
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    if not args.k:
        raise InvalidArgumentError("art-diff needs --k with one value per policy")
    ks = _parse_list(args.k)
    if len(ks) != len(args.policy):
        raise InvalidArgumentError("--k must list one robustness degree per --policy")
    if len(set(ks)) < 2:
        raise InvalidArgumentError("art-diff needs policies trained at two or more distinct k")
    n_traj = int(args.n_trajectories or cfg.eval.get("n_trajectories", 1000))
    if n_traj < 10:
        raise CapacityError(f"need at least 10 trajectories, got {n_traj}")
    returns_by_k = {}
    for k, path in zip(ks, args.policy):
        policy = load_policy(path)
        _check_policy(policy, env)
        _, returns = collect_returns(env, policy, dist, n_traj, _seed_rng(seed, 0))
        returns_by_k[k] = returns
    rows = []
    for lo, hi, art_lo, art_hi, diff in art_differences(returns_by_k):
        for g in range(len(diff)):
            rows.append([_fmt(lo), _fmt(hi), g, _fmt(art_lo[g]), _fmt(art_hi[g]), _fmt(diff[g])])
    out = Path(args.out or cfg.output_dir)
    _write_csv(out / "art_diff.csv",
               ["k_low", "k_high", "group", "art_low", "art_high", "normalized_diff"], rows)
    return 0


def cmd_suggest_sizes(args) -> int:
    n1, n2 = suggest_cluster_sizes(args.epsilon, args.rho, args.d, args.c1, args.c2)
    delta = suggest_delta(args.epsilon, args.scale)
    print(f"n1={n1} n2={n2} delta={delta!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uorrl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("divide", help="list the blocks of a grid division")
    p.add_argument("--config")
    p.add_argument("--bounds", help='per-axis bounds, e.g. "0,1;0,2"')
    p.add_argument("--delta", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_divide)

    p = sub.add_parser("train", help="train one policy per seed")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="heat maps and summary statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", action="append", required=True)
    p.add_argument("--grid")
    p.add_argument("--k")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-trajectories", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("art-diff", help="sorted-group ART differences across k")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", action="append", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-trajectories", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_art_diff)

    p = sub.add_parser("suggest-sizes", help="cluster sizes and block diameter for a target accuracy")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=1.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_suggest_sizes)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
