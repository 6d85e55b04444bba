"""Point-process primitives: seeded streams, Poisson counts, Palm rooting,
metric thinning and a Monte Carlo Mecke-equation oracle.

Every sampler in the package draws from an :class:`RngStream`.  A stream is
identified by ``(seed, path)``; splitting appends an index to the path, so
replicas run on independent substreams and can be merged in any order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Generic, Protocol, Sequence, TypeVar

import numpy as np

from .errors import InvalidArgument

Loc = TypeVar("Loc")

_U64 = (1 << 64) - 1


class RngStream:
    """Deterministic random stream addressed by a seed and a split path."""

    def __init__(self, seed: int, path: Sequence[int] = ()):
        if int(seed) < 0 or int(seed) > _U64:
            raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gen: np.random.Generator | None = None

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def split(self, index: int) -> "RngStream":
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.path = self.path + (int(index),)
        child._gen = None
        return child

    def labels(self, size: int) -> np.ndarray:
        """IID uniform labels in [0, 1) with 53-bit mantissas."""
        return self.gen.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))


@dataclass
class LabeledConfiguration(Generic[Loc]):
    """A finite multiset of located points, each carrying a uniform label.

    ``root`` is the index of the Palm root when the configuration was
    produced by :func:`palm_root`, otherwise ``None``.
    """

    points: list
    labels: np.ndarray
    window: dict = field(default_factory=dict)
    root: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if len(self.points) != self.labels.shape[0]:
            raise InvalidArgument("points and labels must have equal length")

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(zip(self.points, self.labels))

    def add(self, loc: Loc, label: float) -> "LabeledConfiguration[Loc]":
        return replace(self, points=list(self.points) + [loc],
                       labels=np.append(self.labels, label))

    def subset(self, keep) -> "LabeledConfiguration[Loc]":
        """Configuration restricted to the indices (or boolean mask) ``keep``."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        root = None
        if self.root is not None and self.root in set(keep.tolist()):
            root = int(np.flatnonzero(keep == self.root)[0])
        return replace(self, points=[self.points[i] for i in keep],
                       labels=self.labels[keep], root=root)


def poisson_count(mass: float, rng: RngStream) -> int:
    """Draw ``k`` with probability ``exp(-mass) mass**k / k!``."""
    mass = float(mass)
    if not math.isfinite(mass) or mass < 0:
        raise InvalidArgument(f"Poisson mass must be finite and nonnegative, got {mass}")
    if mass == 0.0:
        return 0
    return int(as_stream(rng).gen.poisson(mass))


def palm_root(config: LabeledConfiguration, origin, rng: RngStream) -> LabeledConfiguration:
    """Palm version of a Poisson configuration: add ``origin`` with a fresh label."""
    label = float(as_stream(rng).labels(1)[0])
    rooted = config.add(origin, label)
    rooted.root = len(rooted) - 1
    return rooted


def metric_thin(config: LabeledConfiguration, dist: Callable[[Any, Any], float],
                delta: float) -> LabeledConfiguration:
    """Delete every point that has another point within distance ``delta``.

    Both members of a close pair are removed.
    """
    n = len(config)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if dist(config.points[i], config.points[j]) <= delta:
                keep[i] = keep[j] = False
    return config.subset(keep)


class PoissonWindow(Protocol):
    """A finite-mass window carrying a Poisson sampler.

    ``mass`` is the total mean measure of the window; ``sample_location``
    draws one location from the window measure normalized to a probability.
    """

    mass: float

    def sample(self, rng: RngStream) -> LabeledConfiguration: ...

    def sample_location(self, rng: RngStream): ...


@dataclass
class MeckeResult:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float

    @property
    def z(self) -> float:
        se = math.hypot(self.lhs_se, self.rhs_se)
        if se == 0.0:
            return 0.0 if self.lhs == self.rhs else math.copysign(math.inf, self.lhs - self.rhs)
        return (self.lhs - self.rhs) / se

    @property
    def passed(self) -> bool:
        return abs(self.z) <= 3.0


def mecke_check(window: PoissonWindow, f: Callable[[LabeledConfiguration, int], float],
                reps: int, rng: RngStream) -> MeckeResult:
    """Monte Carlo estimates of both sides of the Mecke equation.

    ``f(config, i)`` is evaluated at the ``i``-th point of ``config``.  The
    left side averages ``sum_i f(P, i)`` over samples ``P``; the right side
    averages ``mass * f(P + y, y)`` with ``y`` drawn from the normalized
    window measure and given a fresh label.
    """
    if reps < 2:
        raise InvalidArgument("mecke_check needs at least 2 replicas")
    rng = as_stream(rng)
    left = np.empty(reps)
    right = np.empty(reps)
    for i in range(reps):
        sub = rng.split(0).split(i)
        config = window.sample(sub)
        left[i] = sum(f(config, j) for j in range(len(config)))
    for i in range(reps):
        sub = rng.split(1).split(i)
        config = window.sample(sub.split(0))
        loc = window.sample_location(sub.split(1))
        rooted = palm_root(config, loc, sub.split(2))
        right[i] = window.mass * f(rooted, rooted.root)
    return MeckeResult(
        lhs=float(left.mean()), rhs=float(right.mean()),
        lhs_se=float(left.std(ddof=1) / math.sqrt(reps)),
        rhs_se=float(right.std(ddof=1) / math.sqrt(reps)),
    )


def f_one(config: LabeledConfiguration, i: int) -> float:
    return 1.0


def f_at_least_two(config: LabeledConfiguration, i: int) -> float:
    return 1.0 if len(config) >= 2 else 0.0


def f_label(config: LabeledConfiguration, i: int) -> float:
    return float(config.labels[i])


MECKE_TEST_FUNCTIONS = {
    "one": f_one,
    "at_least_two": f_at_least_two,
    "label": f_label,
}
