"""
Environment-parameter geometry.

Holds the hyperrectangle of admissible parameters, the distributions placed
on it, the grid division into small-diameter blocks, block masses, and the
random processes used to feed parameters to the distribution-free estimator.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from uorrl.errors import (
    DegenerateTruncationError,
    InconsistentDivisionError,
    InvalidArgumentError,
)

MAX_REJECTION_ATTEMPTS = 10_000
DEFAULT_N_MC = 100_000


def _vec(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box ``[lower, upper]`` in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _vec(self.lower, "lower")
        upper = _vec(self.upper, "upper")
        if lower.shape != upper.shape:
            raise InvalidArgumentError("lower and upper must have the same length")
        if lower.size == 0:
            raise InvalidArgumentError("parameter space needs at least one axis")
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise InvalidArgumentError(f"axis {i}: bounds must be finite")
            if not lo < hi:
                raise InvalidArgumentError(
                    f"axis {i}: lower bound {lo} must be < upper bound {hi}"
                )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> ParameterSpace:
        bounds = [tuple(b) for b in bounds]
        if any(len(b) != 2 for b in bounds):
            raise InvalidArgumentError("bounds must be a list of [lower, upper] pairs")
        return cls([b[0] for b in bounds], [b[1] for b in bounds])

    @property
    def dims(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def diameter(self) -> float:
        return float(np.sqrt(np.sum(self.widths**2)))

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def __eq__(self, other):
        if not isinstance(other, ParameterSpace):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(
            self.upper, other.upper
        )

    def __hash__(self):
        return hash((tuple(self.lower), tuple(self.upper)))


# ---------------------------------------------------------------------------
# Distributions


@dataclass(frozen=True, eq=False)
class Uniform:
    space: ParameterSpace
    kind = "uniform"

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.space.lower, self.space.upper)

    def box_mass(self, lower, upper) -> float:
        w = np.clip(np.minimum(upper, self.space.upper) - np.maximum(lower, self.space.lower), 0, None)
        return float(np.prod(w / self.space.widths))

    def mean(self) -> np.ndarray:
        return self.space.center()


@dataclass(frozen=True, eq=False)
class TruncatedGaussian:
    """Independent per-axis Gaussians truncated to the space."""

    space: ParameterSpace
    mean: np.ndarray
    std: np.ndarray
    kind = "truncated_gaussian"

    def __post_init__(self):
        mean = _vec(self.mean, "mean")
        std = _vec(self.std, "std")
        d = self.space.dims
        if mean.size != d or std.size != d:
            raise InvalidArgumentError(f"mean and std must have length {d}")
        if np.any(~np.isfinite(mean)) or np.any(~(std > 0)) or np.any(~np.isfinite(std)):
            raise InvalidArgumentError("truncated Gaussian needs finite mean and positive std")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def _cdf(self, x) -> np.ndarray:
        return ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        # rejection against the untruncated Gaussian, capped
        for _ in range(MAX_REJECTION_ATTEMPTS):
            x = rng.normal(self.mean, self.std)
            if self.space.contains(x):
                return x
        raise DegenerateTruncationError(
            f"rejection sampling exceeded {MAX_REJECTION_ATTEMPTS} attempts; "
            f"mean {self.mean.tolist()} / std {self.std.tolist()} leave almost no "
            f"mass inside {self.space.lower.tolist()}..{self.space.upper.tolist()}"
        )

    def box_mass(self, lower, upper) -> float:
        lo = np.maximum(lower, self.space.lower)
        hi = np.minimum(upper, self.space.upper)
        if np.any(hi <= lo):
            return 0.0
        z = self._cdf(self.space.upper) - self._cdf(self.space.lower)
        if np.any(z <= 0):
            raise DegenerateTruncationError("truncation interval carries zero Gaussian mass")
        return float(np.prod((self._cdf(hi) - self._cdf(lo)) / z))


@dataclass(frozen=True, eq=False)
class Empirical:
    space: ParameterSpace
    points: np.ndarray
    weights: np.ndarray
    kind = "empirical"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if self.space.dims == 1 else pts.reshape(1, -1)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[1] != self.space.dims:
            raise InvalidArgumentError(f"points must have {self.space.dims} coordinates")
        if pts.shape[0] != w.size or w.size == 0:
            raise InvalidArgumentError("need one weight per point and at least one point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("empirical weights must be nonnegative and sum to 1")
        for pt in pts:
            if not self.space.contains(pt):
                raise InvalidArgumentError(f"point {pt.tolist()} lies outside the space")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        i = rng.choice(self.weights.size, p=self.weights)
        return self.points[i].copy()


@dataclass(frozen=True, eq=False)
class Mixture:
    space: ParameterSpace
    components: tuple
    weights: np.ndarray
    kind = "mixture"

    def __post_init__(self):
        comps = tuple(self.components)
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(comps) == 0 or len(comps) != w.size:
            raise InvalidArgumentError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("mixture weights must be nonnegative and sum to 1")
        for c in comps:
            if c.space != self.space:
                raise InvalidArgumentError("mixture components must share the mixture's space")
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        i = rng.choice(self.weights.size, p=self.weights)
        return self.components[i].sample(rng)


ParamDistribution = Uniform | TruncatedGaussian | Empirical | Mixture


def sample(dist: ParamDistribution, rng: np.random.Generator) -> np.ndarray:
    """Draw one parameter vector from ``dist``; always inside ``dist.space``."""
    return dist.sample(rng)


def distribution_from_dict(spec: dict, space: ParameterSpace | None = None) -> ParamDistribution:
    """Build a distribution from its config block.

    Keys: ``kind`` plus ``bounds`` (unless ``space`` is given), ``mean``/``std``
    for truncated Gaussians, ``points``/``weights`` for empirical ones and
    ``components``/``weights`` for mixtures.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    bounds = spec.pop("bounds", None)
    if bounds is not None:
        space = ParameterSpace.from_bounds(bounds)
    if space is None:
        raise InvalidArgumentError("distribution block needs 'bounds'")
    allowed = {
        "uniform": set(),
        "truncated_gaussian": {"mean", "std"},
        "empirical": {"points", "weights"},
        "mixture": {"components", "weights"},
    }
    if kind not in allowed:
        raise InvalidArgumentError(f"unknown distribution kind {kind!r}")
    extra = set(spec) - allowed[kind]
    missing = allowed[kind] - set(spec)
    if extra:
        raise InvalidArgumentError(f"unknown keys for {kind} distribution: {sorted(extra)}")
    if missing:
        raise InvalidArgumentError(f"missing keys for {kind} distribution: {sorted(missing)}")
    if kind == "uniform":
        return Uniform(space)
    if kind == "truncated_gaussian":
        return TruncatedGaussian(space, spec["mean"], spec["std"])
    if kind == "empirical":
        return Empirical(space, spec["points"], spec["weights"])
    comps = tuple(distribution_from_dict(c, space) for c in spec["components"])
    return Mixture(space, comps, spec["weights"])


def distribution_to_dict(dist: ParamDistribution, with_bounds: bool = True) -> dict:
    out: dict = {"kind": dist.kind}
    if with_bounds:
        out["bounds"] = [[float(a), float(b)] for a, b in zip(dist.space.lower, dist.space.upper)]
    if isinstance(dist, TruncatedGaussian):
        out["mean"] = dist.mean.tolist()
        out["std"] = dist.std.tolist()
    elif isinstance(dist, Empirical):
        out["points"] = dist.points.tolist()
        out["weights"] = dist.weights.tolist()
    elif isinstance(dist, Mixture):
        out["components"] = [distribution_to_dict(c, with_bounds=False) for c in dist.components]
        out["weights"] = dist.weights.tolist()
    return out


# ---------------------------------------------------------------------------
# Division into blocks


@dataclass(frozen=True, eq=False)
class Block:
    id: int
    lower: np.ndarray
    upper: np.ndarray
    representative: np.ndarray
    mass: float = 0.0
    index: tuple = ()

    def diameter(self) -> float:
        return float(np.sqrt(np.sum((self.upper - self.lower) ** 2)))

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def with_mass(self, mass: float) -> Block:
        return replace(self, mass=float(mass))


@dataclass(frozen=True, eq=False)
class Division:
    """A grid division of a space; behaves like a list of blocks."""

    space: ParameterSpace
    delta: float
    edges: tuple  # per-axis arrays of cell boundaries, length n_i + 1
    blocks: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @property
    def shape(self) -> tuple:
        return tuple(len(e) - 1 for e in self.edges)

    def locate(self, points) -> np.ndarray:
        """Block ids for an (n, d) array of points; shared faces go to the lower cell."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = []
        for axis, e in enumerate(self.edges):
            i = np.searchsorted(e[1:], pts[:, axis], side="left")
            idx.append(np.clip(i, 0, len(e) - 2))
        return np.ravel_multi_index(tuple(idx), self.shape)

    def with_masses(self, masses) -> Division:
        blocks = [b.with_mass(m) for b, m in zip(self.blocks, masses)]
        return replace(self, blocks=blocks)

    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.blocks])


def set_division(space: ParameterSpace, delta: float) -> Division:
    """Grid the space into cells of edge ``delta / sqrt(d)``.

    Cell ``t`` on axis ``i`` spans ``[L_i + e*t, L_i + e*(t+1)]`` clipped to the
    space, with ``ceil((R_i - L_i) / e)`` cells per axis, so every block's
    diameter is at most ``delta``. Blocks are returned in C order of their
    grid index; representatives are the block centers and masses start at 0.
    """
    try:
        delta = float(delta)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"delta must be a real number, got {delta!r}") from None
    if not math.isfinite(delta) or delta <= 0:
        raise InvalidArgumentError(f"delta must be finite and positive, got {delta}")
    d = space.dims
    edge = delta / math.sqrt(d)
    edges = []
    for lo, hi in zip(space.lower, space.upper):
        ratio = (hi - lo) / edge
        # guard against 4.0000000000000001-style round-up producing a sliver cell
        n = max(1, math.ceil(ratio - 1e-9 * max(1.0, ratio)))
        e = lo + edge * np.arange(n + 1)
        e[-1] = hi
        e = np.minimum(e, hi)
        e.setflags(write=False)
        edges.append(e)
    shape = tuple(len(e) - 1 for e in edges)
    blocks = []
    for flat, index in enumerate(np.ndindex(*shape)):
        lower = np.array([edges[a][t] for a, t in enumerate(index)])
        upper = np.array([edges[a][t + 1] for a, t in enumerate(index)])
        rep = 0.5 * (lower + upper)
        for arr in (lower, upper, rep):
            arr.setflags(write=False)
        blocks.append(Block(flat, lower, upper, rep, 0.0, index))
    return Division(space, delta, tuple(edges), blocks)


def _check_covers(blocks, space: ParameterSpace):
    if len(blocks) == 0:
        raise InconsistentDivisionError("empty block list")
    vol = sum(b.volume() for b in blocks)
    if not math.isclose(vol, space.volume(), rel_tol=1e-9):
        raise InconsistentDivisionError(
            f"blocks cover volume {vol}, space has volume {space.volume()}"
        )
    for b in blocks:
        if np.any(b.lower < space.lower - 1e-12) or np.any(b.upper > space.upper + 1e-12):
            raise InconsistentDivisionError(f"block {b.id} extends outside the space")


def _block_ids(blocks, points) -> np.ndarray:
    if isinstance(blocks, Division):
        return blocks.locate(points)
    pts = np.atleast_2d(points)
    ids = np.full(len(pts), -1)
    for j, b in enumerate(blocks):
        inside = np.all((pts >= b.lower) & (pts <= b.upper), axis=1) & (ids < 0)
        ids[inside] = j
    return ids


def _exact_masses(blocks, dist) -> np.ndarray | None:
    if isinstance(dist, (Uniform, TruncatedGaussian)):
        return np.array([dist.box_mass(b.lower, b.upper) for b in blocks])
    if isinstance(dist, Empirical):
        ids = _block_ids(blocks, dist.points)
        if np.any(ids < 0):
            raise InconsistentDivisionError("an empirical point falls outside every block")
        return np.bincount(ids, weights=dist.weights, minlength=len(blocks)).astype(float)
    if isinstance(dist, Mixture):
        parts = [_exact_masses(blocks, c) for c in dist.components]
        if any(p is None for p in parts):
            return None
        return np.sum([w * p for w, p in zip(dist.weights, parts)], axis=0)
    return None


def monte_carlo_masses(blocks, dist, n_mc: int, rng: np.random.Generator) -> np.ndarray:
    """Block frequencies of ``n_mc`` draws.

    Each entry is a binomial proportion with variance ``m (1 - m) / n_mc``.
    """
    if n_mc < 1:
        raise InvalidArgumentError("n_mc must be a positive integer")
    pts = np.array([dist.sample(rng) for _ in range(n_mc)])
    ids = _block_ids(blocks, pts)
    return np.bincount(ids[ids >= 0], minlength=len(blocks)) / n_mc


def compute_masses(blocks, dist, n_mc: int = DEFAULT_N_MC, rng=None, method: str = "auto"):
    """Fill in the probability mass of every block under ``dist``.

    ``method="auto"`` integrates analytically: volume ratios for uniform,
    products of 1-D interval probabilities for truncated Gaussians, weight sums
    for empirical points and component-weighted sums for mixtures.
    ``method="mc"`` forces the Monte-Carlo estimator (``n_mc`` draws from
    ``rng``). Masses are renormalized to sum to one.
    """
    _check_covers(blocks, dist.space)
    if method == "auto":
        masses = _exact_masses(blocks, dist)
    elif method == "mc":
        masses = None
    else:
        raise InvalidArgumentError(f"unknown mass method {method!r}")
    if masses is None:
        rng = np.random.default_rng(rng)
        masses = monte_carlo_masses(blocks, dist, n_mc, rng)
    total = masses.sum()
    if not total > 0:
        raise InconsistentDivisionError("blocks carry no probability mass")
    masses = masses / total
    if isinstance(blocks, Division):
        return blocks.with_masses(masses)
    return [b.with_mass(m) for b, m in zip(blocks, masses)]


def total_variation(a, b, blocks) -> float:
    """Block-level total variation ``0.5 * sum |m_a - m_b|``.

    This is the distance between the two distributions pushed onto the
    blocks, hence never larger than the continuous total variation.
    """
    if a.space != b.space:
        raise InvalidArgumentError("distributions live on different parameter spaces")
    ma = compute_masses(blocks, a)
    mb = compute_masses(blocks, b)
    tv = 0.5 * sum(abs(x.mass - y.mass) for x, y in zip(ma, mb))
    return float(min(1.0, max(0.0, tv)))


# ---------------------------------------------------------------------------
# Parameter processes


def reflect_into(x, lower, upper) -> np.ndarray:
    """Fold ``x`` back into ``[lower, upper]`` by mirror reflection at the faces."""
    x = np.asarray(x, dtype=float)
    width = upper - lower
    t = np.mod(x - lower, 2 * width)
    t = np.where(t > width, 2 * width - t, t)
    return lower + t


def parameter_process_next(current, step_bound: float, space: ParameterSpace,
                           rng: np.random.Generator, dist=None) -> np.ndarray:
    """One step of the slowly drifting parameter process.

    Adds a uniform perturbation in ``[-step_bound, step_bound]^d`` and reflects
    at the faces of the space. ``step_bound = inf`` redraws from ``dist``.
    """
    if math.isinf(step_bound):
        if dist is None:
            raise InvalidArgumentError("iid redraw (step_bound=inf) needs a distribution")
        return dist.sample(rng)
    if step_bound < 0:
        raise InvalidArgumentError("step_bound must be nonnegative")
    current = np.asarray(current, dtype=float)
    if step_bound == 0:
        return current.copy()
    # also steps a stack of walkers, shape (..., d), in one call
    step = rng.uniform(-step_bound, step_bound, size=current.shape)
    return reflect_into(current + step, space.lower, space.upper)


class IidSource:
    """Independent draws from a distribution."""

    def __init__(self, dist):
        self.dist = dist
        self.space = dist.space

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.dist.sample(rng)


class DriftingSource:
    """Reflected uniform random walk started from a draw of ``dist``.

    The state persists across calls, so consecutive trajectories see nearby
    parameters.
    """

    def __init__(self, dist, step_bound: float, start=None):
        self.dist = dist
        self.space = dist.space
        self.step_bound = float(step_bound)
        self.current = None if start is None else np.asarray(start, dtype=float)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self.current is None:
            self.current = self.dist.sample(rng)
        else:
            self.current = parameter_process_next(
                self.current, self.step_bound, self.space, rng, self.dist
            )
        return self.current.copy()


class HeldSource:
    """Iid draws, each repeated ``hold`` times before the next redraw.

    With ``hold = n2`` every distribution-free cluster sees one parameter,
    the zero-drift limit of :class:`DriftingSource` within a cluster.
    """

    def __init__(self, dist, hold: int):
        if hold < 1:
            raise InvalidArgumentError("hold must be >= 1")
        self.dist = dist
        self.space = dist.space
        self.hold = int(hold)
        self._left = 0
        self.current = None

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        if self._left == 0:
            self.current = self.dist.sample(rng)
            self._left = self.hold
        self._left -= 1
        return self.current.copy()


def make_source(dist, step_bound: float = math.inf, hold: int | None = None):
    """Held draws when ``hold`` is given, else iid (infinite step) or drifting."""
    if hold is not None:
        return HeldSource(dist, hold)
    if math.isinf(step_bound):
        return IidSource(dist)
    return DriftingSource(dist, step_bound)
