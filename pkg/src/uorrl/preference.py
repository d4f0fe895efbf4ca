"""
Preference functions over performance ranks and the exact UOR metric for
finitely supported parameter distributions.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from uorrl.errors import InvalidArgumentError

MASS_TOL = 1e-9


@dataclass(frozen=True)
class PowerPreference:
    """``W(x) = (k + 1) (1 - x)^k``; ``k = inf`` is the worst-case limit."""

    k: float

    def __post_init__(self):
        k = float(self.k)
        if math.isnan(k) or k < 0:
            raise InvalidArgumentError(f"robustness degree k must be >= 0, got {self.k}")
        object.__setattr__(self, "k", k)

    @property
    def is_dirac(self) -> bool:
        return math.isinf(self.k)

    def value(self, x: float) -> float:
        if self.is_dirac:
            return math.inf if x == 0 else 0.0
        if self.k == 0:
            return 1.0
        return (self.k + 1.0) * (1.0 - x) ** self.k

    def integral(self, a: float, b: float) -> float:
        if self.is_dirac:
            return 1.0 if a == 0 and b > 0 else 0.0
        k1 = self.k + 1.0
        return (1.0 - a) ** k1 - (1.0 - b) ** k1

    def sup(self) -> float:
        return self.value(0.0)

    def to_dict(self) -> dict:
        return {"kind": "power", "k": "inf" if self.is_dirac else self.k}


@dataclass(frozen=True)
class TabulatedPreference:
    """Piecewise-linear W through ``knots``, rescaled to integrate to one."""

    knots: tuple

    def __post_init__(self):
        pts = np.asarray(self.knots, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise InvalidArgumentError("knots must be at least two (x, w) pairs")
        x, w = pts[:, 0], pts[:, 1]
        if x[0] != 0.0 or x[-1] != 1.0:
            raise InvalidArgumentError("knots must start at x=0 and end at x=1")
        if np.any(np.diff(x) <= 0):
            raise InvalidArgumentError("knot x values must be strictly ascending")
        if np.any(w < 0) or np.any(np.diff(w) > 0):
            raise InvalidArgumentError("preference must be nonnegative and non-increasing")
        area = float(np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(x)))
        if not area > 0:
            raise InvalidArgumentError("preference integrates to zero")
        xs = x.copy()
        ws = w / area
        xs.setflags(write=False)
        ws.setflags(write=False)
        object.__setattr__(self, "knots", tuple(map(tuple, pts.tolist())))
        object.__setattr__(self, "_x", xs)
        object.__setattr__(self, "_w", ws)
        # cumulative integral at each knot
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (ws[1:] + ws[:-1]) * np.diff(xs))])
        object.__setattr__(self, "_cum", cum)

    is_dirac = False

    def value(self, x: float) -> float:
        return float(np.interp(x, self._x, self._w))

    def _antiderivative(self, t: float) -> float:
        i = int(np.clip(np.searchsorted(self._x, t, side="right") - 1, 0, len(self._x) - 2))
        x0, w0 = self._x[i], self._w[i]
        slope = (self._w[i + 1] - w0) / (self._x[i + 1] - x0)
        dt = t - x0
        return float(self._cum[i] + w0 * dt + 0.5 * slope * dt * dt)

    def integral(self, a: float, b: float) -> float:
        return self._antiderivative(b) - self._antiderivative(a)

    def sup(self) -> float:
        return float(self._w[0])

    def to_dict(self) -> dict:
        return {"kind": "table", "knots": [list(k) for k in self.knots]}


PreferenceSpec = PowerPreference | TabulatedPreference


def preference_from_dict(spec: dict) -> PreferenceSpec:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "power":
        if set(spec) != {"k"}:
            raise InvalidArgumentError("power preference takes exactly the key 'k'")
        k = spec["k"]
        return PowerPreference(math.inf if k in ("inf", "Infinity") else float(k))
    if kind == "table":
        if set(spec) != {"knots"}:
            raise InvalidArgumentError("table preference takes exactly the key 'knots'")
        return TabulatedPreference(tuple(map(tuple, spec["knots"])))
    raise InvalidArgumentError(f"unknown preference kind {kind!r}")


def weight_value(pref: PreferenceSpec, x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise InvalidArgumentError(f"rank {x} outside [0, 1]")
    return pref.value(x)


def weight_integral(pref: PreferenceSpec, a: float, b: float) -> float:
    """Integral of W over ``[a, b]``, closed form for every supported family."""
    if a > b:
        raise InvalidArgumentError(f"integration bounds reversed: {a} > {b}")
    if a < -1e-12 or b > 1 + 1e-12:
        raise InvalidArgumentError(f"integration bounds [{a}, {b}] outside [0, 1]")
    a = min(max(a, 0.0), 1.0)
    b = min(max(b, 0.0), 1.0)
    return pref.integral(a, b)


@dataclass(frozen=True)
class LedgerEntry:
    J: float
    mass: float
    weight: float
    source_id: int
    cumulative_mass: float  # mass ranked strictly before this entry


@dataclass(frozen=True)
class RankedLedger:
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def returns(self) -> np.ndarray:
        return np.array([e.J for e in self.entries])

    @property
    def masses(self) -> np.ndarray:
        return np.array([e.mass for e in self.entries])

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    @property
    def source_ids(self) -> list:
        return [e.source_id for e in self.entries]

    def prefixes(self) -> np.ndarray:
        return np.array([e.cumulative_mass for e in self.entries])

    def ranking_values(self) -> np.ndarray:
        """Discrete ranking h at each entry: mass of entries with J' <= J."""
        J = self.returns
        m = self.masses
        return np.array([m[J <= j].sum() for j in J])

    def value(self) -> float:
        return float(np.dot(self.weights, self.returns))


def _as_pairs(returns) -> tuple[np.ndarray, np.ndarray, list]:
    items = list(returns)
    if not items:
        raise InvalidArgumentError("need at least one (return, mass) pair")
    ids = []
    J = np.empty(len(items))
    m = np.empty(len(items))
    for i, item in enumerate(items):
        if len(item) == 3:
            J[i], m[i], sid = item
            ids.append(int(sid))
        else:
            J[i], m[i] = item
            ids.append(i)
    if np.any(np.isnan(J)):
        raise InvalidArgumentError("NaN return value")
    if np.any(~np.isfinite(J)):
        raise InvalidArgumentError("non-finite return value")
    if np.any(m < 0) or np.any(np.isnan(m)):
        raise InvalidArgumentError("masses must be nonnegative")
    if abs(m.sum() - 1.0) > MASS_TOL:
        raise InvalidArgumentError(f"masses sum to {m.sum()}, expected 1")
    return J, m, ids


def rank(returns: Iterable[Sequence[float]]) -> RankedLedger:
    """Stable ascending sort of ``(J, mass[, source_id])`` items.

    Ties are ordered by source id. Weights are left at zero.
    """
    J, m, ids = _as_pairs(returns)
    order = sorted(range(len(J)), key=lambda i: (J[i], ids[i]))
    entries = []
    M = 0.0
    for i in order:
        entries.append(LedgerEntry(float(J[i]), float(m[i]), 0.0, ids[i], M))
        M += m[i]
    return RankedLedger(tuple(entries))


def weigh(ledger: RankedLedger, pref: PreferenceSpec) -> RankedLedger:
    """Attach mass-interval weights ``int_M^{M+m} W`` to a ranked ledger."""
    entries = []
    if getattr(pref, "is_dirac", False):
        # all weight on the lowest return carrying positive mass
        first = next(i for i, e in enumerate(ledger.entries) if e.mass > 0)
        for i, e in enumerate(ledger.entries):
            entries.append(LedgerEntry(e.J, e.mass, 1.0 if i == first else 0.0,
                                       e.source_id, e.cumulative_mass))
        return RankedLedger(tuple(entries))
    positive = [i for i, e in enumerate(ledger.entries) if e.mass > 0]
    last = positive[-1] if positive else -1
    M = 0.0
    for i, e in enumerate(ledger.entries):
        # the last interval is closed at exactly 1 so weights sum to the full integral
        hi = 1.0 if i == last else min(M + e.mass, 1.0)
        w = weight_integral(pref, M, hi) if e.mass > 0 else 0.0
        entries.append(LedgerEntry(e.J, e.mass, w, e.source_id, M))
        M = hi
    return RankedLedger(tuple(entries))


def exact_metric(returns, pref: PreferenceSpec) -> tuple[float, RankedLedger]:
    """UOR metric of a finitely supported return distribution.

    Returns the value and the weighted ledger it was computed from.
    """
    ledger = weigh(rank(returns), pref)
    return ledger.value(), ledger
