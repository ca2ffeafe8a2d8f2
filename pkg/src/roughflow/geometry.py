"""Bounded domains, enclosing balls, measurable sets and Monte Carlo measures.

Sampling is counter-based: the index range ``[0, n)`` is cut into fixed
chunks and chunk ``k`` draws from ``Philox(key=(seed, k))``.  A chunk's
points therefore never depend on how many other chunks were drawn, which
keeps serial and chunk-parallel runs bitwise identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

CHUNK = 1 << 16

__all__ = [
    "Domain",
    "Enclosure",
    "MeasurableSet",
    "MeasureEstimate",
    "unit_ball",
    "ball",
    "box",
    "contains",
    "sample_uniform",
    "estimate_measure",
    "ball_set",
    "box_set",
    "empty_set",
    "full_set",
]


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Domain:
    """An open ball or an open axis-aligned box in R^3.

    ``size`` is the radius for a ball and the three half-widths for a box.
    """

    kind: str
    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        size = np.asarray(self.size, dtype=float)
        if self.kind == "ball":
            size = size.reshape(())
        else:
            size = np.broadcast_to(size, (3,)).copy()
        if np.any(size <= 0):
            raise ValueError("domain size must be positive")
        object.__setattr__(self, "size", size)

    @property
    def exact_volume(self) -> float:
        if self.kind == "ball":
            return 4.0 / 3.0 * np.pi * float(self.size) ** 3
        return float(np.prod(2.0 * self.size))

    @property
    def circumradius(self) -> float:
        """Radius of the smallest ball about ``center`` containing the closure."""
        if self.kind == "ball":
            return float(self.size)
        return float(np.linalg.norm(self.size))

    def contains(self, x) -> np.ndarray:
        x = _as_points(x) - self.center
        if self.kind == "ball":
            return np.einsum("ij,ij->i", x, x) < float(self.size) ** 2
        return np.all(np.abs(x) < self.size, axis=1)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance to the closed domain (zero inside)."""
        x = _as_points(x) - self.center
        if self.kind == "ball":
            return np.maximum(np.linalg.norm(x, axis=1) - float(self.size), 0.0)
        excess = np.maximum(np.abs(x) - self.size, 0.0)
        return np.linalg.norm(excess, axis=1)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        half = np.full(3, float(self.size)) if self.kind == "ball" else self.size
        return self.center - half, self.center + half

    def _draw(self, gen: np.random.Generator, m: int) -> np.ndarray:
        if self.kind == "ball":
            d = gen.standard_normal((m, 3))
            d /= np.linalg.norm(d, axis=1)[:, None]
            r = float(self.size) * gen.random(m) ** (1.0 / 3.0)
            return self.center + d * r[:, None]
        u = gen.random((m, 3))
        return self.center + (2.0 * u - 1.0) * self.size


def unit_ball() -> Domain:
    return Domain("ball", np.zeros(3), 1.0)


def ball(center, radius: float) -> Domain:
    return Domain("ball", center, radius)


def box(lo, hi) -> Domain:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return Domain("box", (lo + hi) / 2.0, (hi - lo) / 2.0)


@dataclass(frozen=True)
class Enclosure:
    """The open ball K strictly containing the closed domain.

    The radius is the domain circumradius plus ``2 * eps_max`` so every
    mollification radius up to ``margin`` keeps supports inside K.
    """

    domain: Domain
    eps_max: float = 0.1

    @property
    def ball_center(self) -> np.ndarray:
        return self.domain.center

    @property
    def ball_radius(self) -> float:
        return self.domain.circumradius + 2.0 * self.eps_max

    @property
    def margin(self) -> float:
        return self.ball_radius - self.domain.circumradius

    @property
    def exact_volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.ball_radius**3

    def as_domain(self) -> Domain:
        return Domain("ball", self.ball_center, self.ball_radius)

    def contains(self, x) -> np.ndarray:
        return self.as_domain().contains(x)


Region = Union[Domain, Enclosure]


def _region_domain(region: Region) -> Domain:
    return region.as_domain() if isinstance(region, Enclosure) else region


@dataclass(frozen=True)
class MeasurableSet:
    """Indicator-defined subset of the domain.

    ``distance`` (optional) returns the distance to the set and is used to
    build dilations; ``exact_volume`` is the analytic volume when known.
    """

    indicator: Callable[[np.ndarray], np.ndarray]
    exact_volume: Optional[float] = None
    label: str = ""
    distance: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    bounding_region: Optional[Domain] = field(default=None, compare=False)

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.indicator(_as_points(x)), dtype=bool)

    def dilated(self, delta: float) -> "MeasurableSet":
        """The open delta-neighbourhood of the set."""
        if self.distance is None:
            raise ValueError(f"set {self.label!r} has no distance function")
        dist = self.distance
        return MeasurableSet(
            lambda x: dist(x) < delta if delta > 0 else self.indicator(x),
            None,
            f"{self.label}+{delta:g}",
            distance=lambda x: np.maximum(dist(x) - delta, 0.0),
        )


def ball_set(center, radius: float, label: str = "") -> MeasurableSet:
    dom = ball(center, radius)
    return MeasurableSet(
        dom.contains, dom.exact_volume, label or f"ball{radius:g}", dom.distance, dom
    )


def box_set(lo, hi, label: str = "") -> MeasurableSet:
    dom = box(lo, hi)
    return MeasurableSet(dom.contains, dom.exact_volume, label or "box", dom.distance, dom)


def empty_set(label: str = "empty") -> MeasurableSet:
    return MeasurableSet(
        lambda x: np.zeros(len(x), dtype=bool),
        0.0,
        label,
        lambda x: np.full(len(x), np.inf),
    )


def full_set(domain: Domain, label: str = "full") -> MeasurableSet:
    return MeasurableSet(domain.contains, domain.exact_volume, label, domain.distance, domain)


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    std_error: float
    samples: int
    seed: int

    def within(self, exact: float, k: float = 3.0) -> bool:
        return abs(self.value - exact) <= k * self.std_error


def contains(domain: Domain, x) -> bool:
    """True iff ``x`` lies strictly inside ``domain``."""
    return bool(domain.contains(x)[0])


def sample_uniform(region: Region, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. uniform points on ``region`` as an ``(n, 3)`` array."""
    if n < 1:
        raise ValueError("n must be at least 1")
    dom = _region_domain(region)
    out = np.empty((n, 3))
    for k, start in enumerate(range(0, n, CHUNK)):
        stop = min(start + CHUNK, n)
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, k], dtype=np.uint64)))
        out[start:stop] = dom._draw(gen, CHUNK)[: stop - start]
    return out


def hit_estimate(hits: np.ndarray, volume: float, seed: int) -> MeasureEstimate:
    n = len(hits)
    p = float(np.count_nonzero(hits)) / n
    return MeasureEstimate(p * volume, np.sqrt(p * (1.0 - p) / n) * volume, n, seed)


def weighted_estimate(terms: np.ndarray, volume: float, seed: int) -> MeasureEstimate:
    """Mean-value estimate ``volume * mean(terms)`` with its standard error."""
    n = len(terms)
    mean = float(np.mean(terms))
    std = float(np.std(terms)) if n > 1 else 0.0
    return MeasureEstimate(mean * volume, std / np.sqrt(n) * volume, n, seed)


def estimate_measure(
    set: MeasurableSet, region: Region, n: int, seed: int
) -> MeasureEstimate:
    """Hit-or-miss Monte Carlo volume of ``set`` using uniform samples on ``region``."""
    if n < 100:
        raise ValueError("estimate_measure needs n >= 100")
    dom = _region_domain(region)
    x = sample_uniform(dom, n, seed)
    return hit_estimate(set(x), dom.exact_volume, seed)
