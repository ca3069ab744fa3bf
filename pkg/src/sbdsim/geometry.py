"""Window geometry, point configurations, and multiset operations.

Points live in a bounded rectangular window, either with periodic boundary
(torus metric) or free boundary (Euclidean metric). Configurations are finite
counting measures: multisets of points carrying opaque ids so that births and
deaths can be tracked without imposing an order.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class SimulationConfigError(ValueError):
    """Raised when a window, model, or run configuration is invalid."""


# ---------------------------------------------------------------------------
# window
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceSpec:
    """Bounded rectangular window with a diffuse reference intensity.

    Attributes:
        dimension: spatial dimension d >= 1.
        lengths: side lengths of the window, one per axis.
        boundary: "periodic" (torus metric) or "free" (Euclidean metric).
        intensity: constant density of the reference birth measure with
            respect to Lebesgue measure on the window.
        quadrature_resolution: grid points per axis for numeric integrals.
    """

    dimension: int
    lengths: tuple[float, ...]
    boundary: str = "periodic"
    intensity: float = 1.0
    quadrature_resolution: int = 256

    def __post_init__(self):
        if self.dimension < 1:
            raise SimulationConfigError(f"dimension must be >= 1, got {self.dimension}")
        if len(self.lengths) != self.dimension:
            raise SimulationConfigError(
                f"lengths {self.lengths} do not match dimension {self.dimension}")
        if any(not (L > 0) for L in self.lengths):
            raise SimulationConfigError(f"window lengths must be positive, got {self.lengths}")
        if self.boundary not in ("periodic", "free"):
            raise SimulationConfigError(f"boundary must be 'periodic' or 'free', got {self.boundary!r}")
        if not (self.intensity >= 0) or not math.isfinite(self.intensity):
            raise SimulationConfigError(f"intensity must be finite and >= 0, got {self.intensity}")
        if self.quadrature_resolution < 2:
            raise SimulationConfigError("quadrature_resolution must be >= 2")

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def beta_total(self) -> float:
        """Total mass of the reference measure over the window."""
        return self.intensity * self.volume

    def lengths_array(self) -> NDArray[np.float64]:
        return np.asarray(self.lengths, dtype=float)

    def contains(self, x: NDArray[np.float64]) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            return False
        L = self.lengths_array()
        if self.periodic:
            return bool(np.all(x >= 0.0) and np.all(x < L))
        return bool(np.all(x >= 0.0) and np.all(x <= L))

    def require_point(self, x) -> NDArray[np.float64]:
        """Validate and return a point of this window as a float vector."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise SimulationConfigError(
                f"point of shape {x.shape} does not match dimension {self.dimension}")
        if not self.contains(x):
            raise SimulationConfigError(f"point {x} lies outside the window")
        return x

    def grid(self, resolution: int | None = None) -> NDArray[np.float64]:
        """Midpoint quadrature grid, shape (resolution**d, d)."""
        n = int(resolution or self.quadrature_resolution)
        axes = [(np.arange(n) + 0.5) * (L / n) for L in self.lengths]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_volume(self, resolution: int | None = None) -> float:
        n = int(resolution or self.quadrature_resolution)
        return self.volume / n**self.dimension


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def displacement(space: SpaceSpec, x: NDArray, y: NDArray) -> NDArray[np.float64]:
    """Coordinatewise absolute displacement, wrapped on a periodic window."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    if space.periodic:
        d = np.minimum(d, space.lengths_array() - d)
    return d


def torus_distance(space: SpaceSpec, x, y) -> float:
    """Metric of the window: torus distance if periodic, Euclidean otherwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (space.dimension,) or y.shape != (space.dimension,):
        raise SimulationConfigError("torus_distance: point dimension mismatch")
    return float(np.sqrt(np.sum(displacement(space, x, y) ** 2)))


def distances_to(space: SpaceSpec, x: NDArray, pts: NDArray) -> NDArray[np.float64]:
    """Distances from x to each row of pts, shape (len(pts),)."""
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        return np.zeros(0)
    d = np.abs(pts - np.asarray(x, dtype=float))
    if space.periodic:
        d = np.minimum(d, space.lengths_array() - d)
    return np.sqrt(np.sum(d * d, axis=1))


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

class Configuration:
    """Finite multiset of points with opaque ids.

    Two configurations are equal when they carry the same multiset of
    coordinates; ids never enter comparisons.
    """

    __slots__ = ("_pts",)

    def __init__(self, points: dict[str, NDArray[np.float64]] | None = None):
        self._pts: dict[str, NDArray[np.float64]] = {}
        if points:
            for pid, x in points.items():
                self.add(pid, x)

    @classmethod
    def from_points(cls, pts, prefix: str = "p") -> "Configuration":
        cfg = cls()
        pts = np.asarray(pts, dtype=float)
        if pts.size == 0:
            return cfg
        for i, x in enumerate(np.atleast_2d(pts)):
            cfg.add(f"{prefix}{i}", x)
        return cfg

    def add(self, pid: str, x) -> None:
        if pid in self._pts:
            raise SimulationConfigError(f"duplicate point id {pid!r}")
        self._pts[pid] = np.array(x, dtype=float, copy=True)

    def remove(self, pid: str) -> NDArray[np.float64]:
        try:
            return self._pts.pop(pid)
        except KeyError:
            raise SimulationConfigError(f"unknown point id {pid!r}") from None

    def coords(self, pid: str) -> NDArray[np.float64]:
        return self._pts[pid]

    def ids(self):
        return self._pts.keys()

    def items(self):
        return self._pts.items()

    def __len__(self) -> int:
        return len(self._pts)

    def __contains__(self, pid: str) -> bool:
        return pid in self._pts

    def points_array(self) -> NDArray[np.float64]:
        """All coordinates stacked, shape (n, d); shape (0, 0) when empty."""
        if not self._pts:
            return np.zeros((0, 0))
        return np.stack(list(self._pts.values()))

    def copy(self) -> "Configuration":
        out = Configuration()
        out._pts = {pid: x.copy() for pid, x in self._pts.items()}
        return out

    def multiset(self) -> Counter:
        return Counter(x.tobytes() for x in self._pts.values())

    def multiset_key(self):
        """Canonical hashable value: sorted tuple of coordinate tuples."""
        return tuple(sorted(tuple(x) for x in self._pts.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.multiset() == other.multiset()

    def __repr__(self) -> str:
        return f"Configuration(n={len(self)})"


def configuration_contains(big: Configuration, small: Configuration) -> bool:
    """Multiset containment: every point of small occurs in big at least as often."""
    cb, cs = big.multiset(), small.multiset()
    return all(cb.get(k, 0) >= v for k, v in cs.items())


def symmetric_difference(eta1: Configuration, eta2: Configuration, dimension: int | None = None):
    """Multiset symmetric difference as a coordinate array, shape (m, d)."""
    c1, c2 = eta1.multiset(), eta2.multiset()
    out = []
    for key in set(c1) | set(c2):
        for _ in range(abs(c1.get(key, 0) - c2.get(key, 0))):
            out.append(np.frombuffer(key, dtype=float))
    if not out:
        d = dimension if dimension is not None else 0
        return np.zeros((0, d))
    return np.stack(out)


def kernel_mass(kernel, x, pts) -> float:
    """Sum of kernel(x, y) over the rows y of pts.

    kernel is vectorized: kernel(x, pts) returns one value per row. Used for
    Lipschitz bounds on rate perturbations and for coupling metrics.
    """
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        return 0.0
    return float(np.sum(kernel(x, pts)))


def nearest_distance(space: SpaceSpec, x, eta: Configuration) -> float:
    """Distance from x to the nearest point of eta; +inf for an empty eta."""
    if len(eta) == 0:
        return math.inf
    return float(np.min(distances_to(space, np.asarray(x, dtype=float), eta.points_array())))


# ---------------------------------------------------------------------------
# timed configurations
# ---------------------------------------------------------------------------

@dataclass
class TimedPoint:
    """A live point with its residual death clock.

    clock is the remaining exponential mark: the point dies when the
    accumulated death hazard after birth_time reaches it. Under a constant
    death rate delta0 the death time is birth_time + clock / delta0.
    """

    coords: NDArray[np.float64]
    clock: float
    birth_time: float = 0.0


class TimedConfiguration:
    """Configuration whose points carry residual clocks and birth times."""

    __slots__ = ("_pts",)

    def __init__(self, points: dict[str, TimedPoint] | None = None):
        self._pts: dict[str, TimedPoint] = dict(points) if points else {}

    def add(self, pid: str, entry: TimedPoint) -> None:
        if pid in self._pts:
            raise SimulationConfigError(f"duplicate point id {pid!r}")
        if not (entry.clock > 0):
            raise SimulationConfigError(f"residual clock must be > 0, got {entry.clock}")
        self._pts[pid] = entry

    def remove(self, pid: str) -> TimedPoint:
        try:
            return self._pts.pop(pid)
        except KeyError:
            raise SimulationConfigError(f"unknown point id {pid!r}") from None

    def entry(self, pid: str) -> TimedPoint:
        return self._pts[pid]

    def items(self):
        return self._pts.items()

    def ids(self):
        return self._pts.keys()

    def __len__(self) -> int:
        return len(self._pts)

    def __contains__(self, pid: str) -> bool:
        return pid in self._pts

    def copy(self) -> "TimedConfiguration":
        out = TimedConfiguration()
        out._pts = {pid: TimedPoint(e.coords.copy(), e.clock, e.birth_time)
                    for pid, e in self._pts.items()}
        return out

    def projection(self) -> Configuration:
        """Forget clocks and birth times."""
        cfg = Configuration()
        for pid, e in self._pts.items():
            cfg.add(pid, e.coords)
        return cfg

    def restrict(self, ids) -> "TimedConfiguration":
        """Sub-configuration on a subset of ids, sharing clock values."""
        out = TimedConfiguration()
        for pid in ids:
            e = self._pts[pid]
            out.add(pid, TimedPoint(e.coords.copy(), e.clock, e.birth_time))
        return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def snapshot_to_json(time: float, eta: Configuration) -> str:
    """Serialize a configuration snapshot: {"time": t, "points": [[...], ...]}."""
    pts = sorted(tuple(x) for _, x in eta.items())
    return json.dumps({"time": time, "points": [list(p) for p in pts]})


def snapshot_from_json(text: str) -> tuple[float, Configuration]:
    obj = json.loads(text)
    cfg = Configuration()
    for i, p in enumerate(obj["points"]):
        cfg.add(f"p{i}", np.asarray(p, dtype=float))
    return float(obj["time"]), cfg
