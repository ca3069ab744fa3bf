"""Birth-rate models, death rates, and the interaction machinery around them.

A model bundles a birth-rate function lambda(x, eta) with a death-rate spec
and exposes the quantities the solver and the coupling layer need:

* envelope: a bound Lambda(x) >= lambda(x, eta) uniform over configurations,
  used to drive the thinning construction;
* increment kernel a(x, y): a bound on how much adding a single point y can
  move the birth rate at x, used for Lipschitz brackets and the contraction
  constant;
* monotonicity flag: whether lambda is nondecreasing or nonincreasing under
  adding points, used to pick exact sandwich rates;
* energy: for Gibbs models, the potential whose Boltzmann weight the process
  leaves invariant (checked through the detailed-balance residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.stats import qmc

from .geometry import (
    Configuration,
    SimulationConfigError,
    SpaceSpec,
    configuration_contains,
    distances_to,
    nearest_distance,
    symmetric_difference,
)


class UnsupportedModelError(TypeError):
    """Raised when an operation is asked of a model that cannot support it."""


# ---------------------------------------------------------------------------
# death rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitDeath:
    """Every point dies at rate 1, so clocks are lifetimes directly."""

    @property
    def rate(self) -> float:
        return 1.0


@dataclass(frozen=True)
class ConstantDeath:
    """Every point dies at a fixed positive rate."""

    rate: float = 1.0

    def __post_init__(self):
        if not (self.rate > 0) or not math.isfinite(self.rate):
            raise SimulationConfigError(f"death rate must be finite and > 0, got {self.rate}")


def death_rate(model, space: SpaceSpec, x, eta: Configuration) -> float:
    """Death rate of the point x inside eta. x must be a point of eta."""
    key = np.asarray(x, dtype=float).tobytes()
    if eta.multiset().get(key, 0) == 0:
        raise SimulationConfigError("death_rate: x is not a point of the configuration")
    return model.death.rate


# ---------------------------------------------------------------------------
# grain overlap volumes (area-interaction support)
# ---------------------------------------------------------------------------

def unit_ball_volume(dimension: int) -> float:
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1)


def _merge_length(intervals: list[tuple[float, float]]) -> float:
    if not intervals:
        return 0.0
    intervals.sort()
    total = 0.0
    cur_a, cur_b = intervals[0]
    for a, b in intervals[1:]:
        if a > cur_b:
            total += cur_b - cur_a
            cur_a, cur_b = a, b
        elif b > cur_b:
            cur_b = b
    return total + (cur_b - cur_a)


class GrainOverlap:
    """Exposed and overlap volumes for a ball-shaped grain of fixed radius.

    Two interchangeable integrators:
      * "exact": interval-union arithmetic, available in dimension 1, error 0;
      * "qmc": a fixed Halton low-discrepancy node set over the grain ball,
        deterministic given the resolution, any dimension.
    "auto" picks exact for d = 1 and qmc otherwise. All volume queries for one
    model go through the same node set, which keeps monotonicity exact: a
    configuration that covers more of the grain never reports more exposed
    volume.
    """

    def __init__(self, dimension: int, radius: float, method: str = "auto",
                 resolution: int = 4096):
        if not (radius > 0) or not math.isfinite(radius):
            raise SimulationConfigError(f"grain radius must be finite and > 0, got {radius}")
        if method == "auto":
            method = "exact" if dimension == 1 else "qmc"
        if method == "exact" and dimension != 1:
            raise SimulationConfigError("exact overlap integration is only available in dimension 1")
        if method not in ("exact", "qmc"):
            raise SimulationConfigError(f"unknown overlap method {method!r}")
        self.dimension = dimension
        self.radius = float(radius)
        self.method = method
        self.resolution = int(resolution)
        self.ball_volume = unit_ball_volume(dimension) * self.radius ** dimension
        self._nodes: NDArray[np.float64] | None = None
        if method == "qmc":
            self._nodes = self._build_nodes(self.resolution)

    def _build_nodes(self, n_raw: int) -> NDArray[np.float64]:
        # Halton points in the bounding cube, kept if inside the ball. The
        # sequence is unscrambled, so the node set is a pure function of
        # (dimension, radius, resolution).
        sampler = qmc.Halton(d=self.dimension, scramble=False)
        cube = sampler.random(n=n_raw)
        offsets = (2.0 * cube - 1.0) * self.radius
        inside = np.sum(offsets ** 2, axis=1) <= self.radius ** 2
        nodes = offsets[inside]
        if len(nodes) < 8:
            raise SimulationConfigError("overlap resolution too low for this dimension")
        return nodes

    def error_bound(self) -> float:
        """Additive error estimate for one exposed-volume query."""
        if self.method == "exact":
            return 0.0
        n = len(self._nodes)
        return self.ball_volume * (max(1.0, math.log2(n)) ** self.dimension) / n

    def _check_space(self, space: SpaceSpec) -> None:
        if space.dimension != self.dimension:
            raise SimulationConfigError("overlap integrator dimension mismatch")
        if space.periodic and not (2 * self.radius < min(space.lengths)):
            raise SimulationConfigError(
                "grain diameter must be smaller than every period of the window")

    def _signed_deltas(self, space: SpaceSpec, x, pts: NDArray) -> NDArray[np.float64]:
        d = np.atleast_2d(np.asarray(pts, dtype=float)) - np.asarray(x, dtype=float)
        if space.periodic:
            L = space.lengths_array()
            d = (d + L / 2.0) % L - L / 2.0
        return d

    def exposed_volume(self, space: SpaceSpec, x, pts) -> float:
        """Volume of ball(x, r) not covered by the union of ball(p, r), p in pts."""
        self._check_space(space)
        pts = np.asarray(pts, dtype=float)
        if pts.size == 0:
            return self.ball_volume
        deltas = self._signed_deltas(space, x, pts)
        r = self.radius
        if self.method == "exact":
            L = space.lengths[0]
            shifts = (0.0, -L, L) if space.periodic else (0.0,)
            intervals = []
            for dl in deltas[:, 0]:
                for sh in shifts:
                    a = max(dl + sh - r, -r)
                    b = min(dl + sh + r, r)
                    if b > a:
                        intervals.append((a, b))
            return 2.0 * r - _merge_length(intervals)
        nodes = self._nodes
        diff = np.abs(nodes[:, None, :] - deltas[None, :, :])
        if space.periodic:
            L = space.lengths_array()
            diff = np.minimum(diff, L - diff)
        covered = np.any(np.sum(diff ** 2, axis=2) <= r * r, axis=1)
        return self.ball_volume * float(np.count_nonzero(~covered)) / len(nodes)

    def overlap_volumes(self, space: SpaceSpec, x, pts) -> NDArray[np.float64]:
        """Volume of ball(x, r) & ball(p, r) for each p, computed consistently
        with exposed_volume so that increments are dominated node by node."""
        self._check_space(space)
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.size == 0:
            return np.zeros(0)
        if self.method == "exact":
            dists = distances_to(space, np.asarray(x, dtype=float), pts)
            return np.maximum(0.0, 2.0 * self.radius - dists)
        deltas = self._signed_deltas(space, x, pts)
        r = self.radius
        diff = np.abs(self._nodes[:, None, :] - deltas[None, :, :])
        if space.periodic:
            L = space.lengths_array()
            diff = np.minimum(diff, L - diff)
        covered = np.sum(diff ** 2, axis=2) <= r * r
        return self.ball_volume * np.count_nonzero(covered, axis=0) / len(self._nodes)

    def union_volume(self, space: SpaceSpec, pts) -> float:
        """Volume of the union of grain balls, by sequential exposed volumes
        in canonical (lexicographic) point order."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.size == 0:
            return 0.0
        order = sorted(range(len(pts)), key=lambda i: tuple(pts[i]))
        total = 0.0
        for rank, i in enumerate(order):
            prev = pts[[order[j] for j in range(rank)], :] if rank else np.zeros((0, pts.shape[1]))
            total += self.exposed_volume(space, pts[i], prev)
        return total


# ---------------------------------------------------------------------------
# rate models
# ---------------------------------------------------------------------------

class RateModel:
    """Shared defaults for birth-rate models. Subclasses fill in the rates."""

    monotone: str = "none"  # nondecreasing | nonincreasing | constant | none
    translation_invariant: bool = False
    envelope_is_constant: bool = True

    def birth_rate(self, space: SpaceSpec, x, eta: Configuration) -> float:
        raise NotImplementedError

    def birth_rates(self, space: SpaceSpec, X, eta: Configuration) -> NDArray[np.float64]:
        """Birth rate at each row of X against a fixed configuration."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.birth_rate(space, x, eta) for x in X])

    def envelope(self, space: SpaceSpec, x) -> float:
        return self.envelope_sup(space)

    def envelope_sup(self, space: SpaceSpec) -> float:
        raise NotImplementedError

    def increment_kernel(self, space: SpaceSpec, x, Y) -> NDArray[np.float64]:
        """Bound on |lambda(x, eta + y) - lambda(x, eta)|, one value per row of Y."""
        raise NotImplementedError

    def energy(self, space: SpaceSpec, eta: Configuration) -> float:
        raise UnsupportedModelError(f"{type(self).__name__} has no energy functional")

    @property
    def has_energy(self) -> bool:
        return False


@dataclass
class ConstantRate(RateModel):
    """Configuration-independent birth rate; stationary law is Poisson."""

    rate: float = 1.0
    death: UnitDeath | ConstantDeath = field(default_factory=UnitDeath)
    weight_c = None
    monotone = "constant"
    translation_invariant = True

    def __post_init__(self):
        if not (self.rate >= 0) or not math.isfinite(self.rate):
            raise SimulationConfigError(f"constant rate must be finite and >= 0, got {self.rate}")

    def birth_rate(self, space, x, eta) -> float:
        return self.rate

    def birth_rates(self, space, X, eta):
        return np.full(len(np.atleast_2d(X)), self.rate)

    def envelope_sup(self, space) -> float:
        return self.rate

    def increment_kernel(self, space, x, Y):
        return np.zeros(len(np.atleast_2d(Y)))


@dataclass
class PairwiseRate(RateModel):
    """Repulsive pair potential: a flat penalty theta per neighbor within range.

    lambda(x, eta) = exp(-theta * #{y in eta : d(x, y) <= interaction_range}).
    """

    theta: float
    interaction_range: float
    death: UnitDeath | ConstantDeath = field(default_factory=UnitDeath)
    weight_c = None
    monotone = "nonincreasing"
    translation_invariant = True

    def __post_init__(self):
        if self.theta < 0 or not math.isfinite(self.theta):
            raise SimulationConfigError(f"pairwise theta must be >= 0, got {self.theta}")
        if not (self.interaction_range > 0):
            raise SimulationConfigError("interaction range must be > 0")

    def _n_close(self, space, x, eta: Configuration) -> int:
        pts = eta.points_array()
        if pts.size == 0:
            return 0
        return int(np.count_nonzero(
            distances_to(space, np.asarray(x, dtype=float), pts) <= self.interaction_range))

    def birth_rate(self, space, x, eta) -> float:
        return math.exp(-self.theta * self._n_close(space, x, eta))

    def birth_rates(self, space, X, eta):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        pts = eta.points_array()
        if pts.size == 0:
            return np.ones(len(X))
        d = np.abs(X[:, None, :] - pts[None, :, :])
        if space.periodic:
            L = space.lengths_array()
            d = np.minimum(d, L - d)
        close = np.sum(np.sqrt(np.sum(d * d, axis=2)) <= self.interaction_range, axis=1)
        return np.exp(-self.theta * close)

    def envelope_sup(self, space) -> float:
        return 1.0

    def increment_kernel(self, space, x, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.size == 0:
            return np.zeros(0)
        close = distances_to(space, np.asarray(x, dtype=float), Y) <= self.interaction_range
        return -np.expm1(-self.theta) * close.astype(float)

    def energy(self, space, eta) -> float:
        """theta times the number of unordered neighbor pairs."""
        pts = eta.points_array()
        n = len(pts)
        if n < 2:
            return 0.0
        pairs = 0
        for i in range(1, n):
            pairs += int(np.count_nonzero(
                distances_to(space, pts[i], pts[:i]) <= self.interaction_range))
        return self.theta * pairs

    @property
    def has_energy(self) -> bool:
        return True


@dataclass
class AreaInteractionRate(RateModel):
    """Area-interaction rate: each birth is weighted by the grain volume it
    would newly cover.

    lambda(x, eta) = rho * gamma ** (-E(x, eta)) where E is the volume of
    ball(x, r) left exposed by the grains of eta. gamma > 1 is attractive
    (rates rise as more of the grain is already covered), gamma < 1 repulsive.
    """

    rho: float
    gamma: float
    grain_radius: float
    death: UnitDeath | ConstantDeath = field(default_factory=UnitDeath)
    overlap_method: str = "auto"
    overlap_resolution: int = 4096
    weight_c = None
    translation_invariant = True

    def __post_init__(self):
        if not (self.rho > 0) or not math.isfinite(self.rho):
            raise SimulationConfigError(f"rho must be finite and > 0, got {self.rho}")
        if not (self.gamma > 0) or not math.isfinite(self.gamma):
            raise SimulationConfigError(f"gamma must be finite and > 0, got {self.gamma}")
        if not (self.grain_radius > 0) or not math.isfinite(self.grain_radius):
            raise SimulationConfigError(
                f"grain radius must be finite and > 0, got {self.grain_radius}")
        self._overlap: GrainOverlap | None = None

    @property
    def monotone(self) -> str:  # type: ignore[override]
        if self.gamma > 1:
            return "nondecreasing"
        if self.gamma < 1:
            return "nonincreasing"
        return "constant"

    def overlap(self, space: SpaceSpec) -> GrainOverlap:
        if self._overlap is None or self._overlap.dimension != space.dimension:
            self._overlap = GrainOverlap(space.dimension, self.grain_radius,
                                         self.overlap_method, self.overlap_resolution)
        self._overlap._check_space(space)
        return self._overlap

    def _near(self, space, x, eta: Configuration) -> NDArray[np.float64]:
        pts = eta.points_array()
        if pts.size == 0:
            return np.zeros((0, space.dimension))
        keep = distances_to(space, np.asarray(x, dtype=float), pts) < 2.0 * self.grain_radius
        return pts[keep]

    def birth_rate(self, space, x, eta) -> float:
        ov = self.overlap(space)
        exposed = ov.exposed_volume(space, x, self._near(space, x, eta))
        return self.rho * math.exp(-exposed * math.log(self.gamma))

    def envelope_sup(self, space) -> float:
        ov = self.overlap(space)
        return self.rho * max(1.0, self.gamma ** (-ov.ball_volume))

    def increment_kernel(self, space, x, Y):
        """Exact supremum of the one-point birth-rate increment.

        For gamma > 1 the worst case is a grain exposed exactly on the overlap
        with y; for gamma < 1 it is a fully exposed grain.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.size == 0:
            return np.zeros(0)
        ov = self.overlap(space)
        V = ov.overlap_volumes(space, np.asarray(x, dtype=float), Y)
        lg = math.log(self.gamma)
        if self.gamma > 1:
            return self.rho * (-np.expm1(-V * lg))
        if self.gamma < 1:
            return self.rho * self.gamma ** (-ov.ball_volume) * (-np.expm1(V * lg))
        return np.zeros(len(Y))

    def energy(self, space, eta) -> float:
        """-n log(rho) + log(gamma) * volume of the union of grains."""
        ov = self.overlap(space)
        union = ov.union_volume(space, eta.points_array())
        return -len(eta) * math.log(self.rho) + math.log(self.gamma) * union

    @property
    def has_energy(self) -> bool:
        return True


@dataclass
class NearestNeighborRate(RateModel):
    """Birth rate depending only on the distance to the nearest point.

    The profile h is a nondecreasing or nonincreasing step function given by
    strictly increasing breakpoints, the value on each piece, and the value at
    infinity (used for the empty configuration).
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    value_at_infinity: float
    death: UnitDeath | ConstantDeath = field(default_factory=UnitDeath)
    weight_c = None
    translation_invariant = True

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if len(b) != len(v) or len(b) == 0:
            raise SimulationConfigError("need one value per breakpoint")
        if np.any(b <= 0) or np.any(np.diff(b) <= 0):
            raise SimulationConfigError("breakpoints must be positive and strictly increasing")
        if np.any(v < 0) or self.value_at_infinity < 0:
            raise SimulationConfigError("profile values must be >= 0")
        full = np.append(v, self.value_at_infinity)
        if np.all(np.diff(full) >= 0):
            self._direction = "increasing"
        elif np.all(np.diff(full) <= 0):
            self._direction = "decreasing"
        else:
            raise SimulationConfigError("nearest-neighbor profile must be monotone")

    @property
    def monotone(self) -> str:  # type: ignore[override]
        # h increasing means more points can only lower the rate.
        return "nonincreasing" if self._direction == "increasing" else "nondecreasing"

    def profile(self, t) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float)
        table = np.append(np.asarray(self.values, dtype=float), self.value_at_infinity)
        idx = np.searchsorted(np.asarray(self.breakpoints, dtype=float), t, side="right")
        return table[idx]

    def birth_rate(self, space, x, eta) -> float:
        return float(self.profile(nearest_distance(space, x, eta)))

    def envelope_sup(self, space) -> float:
        return float(max(max(self.values), self.value_at_infinity))

    def increment_kernel(self, space, x, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.size == 0:
            return np.zeros(0)
        h = self.profile(distances_to(space, np.asarray(x, dtype=float), Y))
        return np.abs(self.value_at_infinity - h)


@dataclass
class CellOccupancyRate(RateModel):
    """Birth rate that is piecewise constant over a grid of cells and depends
    on the configuration only through per-cell occupancy counts.

    lambda(x, eta) = base_rate * exp(-sum_j theta[cell(x), j] * k_j(eta)). This
    is the discretized counterpart of the pairwise model and the bridge to the
    finite-state oracle: run under a death rate delta0 with base_rate = delta0,
    its occupancy chain is reversible for the discrete Gibbs weights.
    """

    cell_counts: tuple[int, ...]
    theta: NDArray[np.float64]
    base_rate: float = 1.0
    death: UnitDeath | ConstantDeath = field(default_factory=UnitDeath)
    weight_c = None
    monotone = "nonincreasing"
    translation_invariant = False

    def __post_init__(self):
        if any(c < 1 for c in self.cell_counts):
            raise SimulationConfigError("cell counts must be >= 1 per axis")
        th = np.asarray(self.theta, dtype=float)
        n = self.n_cells
        if th.shape != (n, n):
            raise SimulationConfigError(f"theta must be {n}x{n} for {n} cells")
        if not np.allclose(th, th.T):
            raise SimulationConfigError("theta must be symmetric")
        if np.any(th < 0):
            raise SimulationConfigError("theta entries must be >= 0")
        if not (self.base_rate > 0):
            raise SimulationConfigError("base_rate must be > 0")
        object.__setattr__(self, "theta", th)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_counts))

    def cell_index(self, space: SpaceSpec, x) -> int:
        x = np.asarray(x, dtype=float)
        counts = np.asarray(self.cell_counts)
        idx = np.floor(x / space.lengths_array() * counts).astype(int)
        idx = np.minimum(idx, counts - 1)  # boundary points fall in the last cell
        return int(np.ravel_multi_index(idx, counts))

    def cell_indices(self, space: SpaceSpec, X) -> NDArray[np.int_]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        counts = np.asarray(self.cell_counts)
        idx = np.floor(X / space.lengths_array() * counts).astype(int)
        idx = np.minimum(idx, counts - 1)
        return np.ravel_multi_index(idx.T, counts)

    def occupancy(self, space: SpaceSpec, eta: Configuration) -> NDArray[np.int_]:
        k = np.zeros(self.n_cells, dtype=int)
        pts = eta.points_array()
        if pts.size:
            np.add.at(k, self.cell_indices(space, pts), 1)
        return k

    def rate_for_occupancy(self, cell: int, k: NDArray) -> float:
        return self.base_rate * math.exp(-float(self.theta[cell] @ np.asarray(k, dtype=float)))

    def cell_masses(self, space: SpaceSpec) -> NDArray[np.float64]:
        """Reference-measure mass of each cell."""
        return np.full(self.n_cells, space.beta_total / self.n_cells)

    def birth_rate(self, space, x, eta) -> float:
        return self.rate_for_occupancy(self.cell_index(space, x), self.occupancy(space, eta))

    def birth_rates(self, space, X, eta):
        k = self.occupancy(space, eta).astype(float)
        cells = self.cell_indices(space, X)
        return self.base_rate * np.exp(-(self.theta @ k))[cells]

    def envelope_sup(self, space) -> float:
        return self.base_rate

    def increment_kernel(self, space, x, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.size == 0:
            return np.zeros(0)
        ci = self.cell_index(space, np.asarray(x, dtype=float))
        cj = self.cell_indices(space, Y)
        return self.base_rate * (-np.expm1(-self.theta[ci, cj]))

    def energy(self, space, eta) -> float:
        k = self.occupancy(space, eta).astype(float)
        same = float(np.sum(np.diag(self.theta) * k * (k - 1) / 2.0))
        cross = 0.5 * float(k @ self.theta @ k - np.sum(np.diag(self.theta) * k * k))
        return same + cross

    @property
    def has_energy(self) -> bool:
        return True


# ---------------------------------------------------------------------------
# cross-cutting operations
# ---------------------------------------------------------------------------

def envelope_total(model: RateModel, space: SpaceSpec) -> float:
    """Total envelope mass over the window: integral of Lambda d(beta)."""
    if model.envelope_is_constant:
        return model.envelope_sup(space) * space.beta_total
    grid = space.grid()
    vals = np.array([model.envelope(space, x) for x in grid])
    return float(np.mean(vals)) * space.beta_total


def sandwich_rates(model: RateModel, space: SpaceSpec, x,
                   eta_low: Configuration, eta_up: Configuration) -> tuple[float, float]:
    """Infimum and supremum of the birth rate at x over all configurations
    sandwiched between eta_low and eta_up.

    Exact endpoint evaluation for monotone models; otherwise a conservative
    Lipschitz bracket built from the increment kernel, clipped to the
    envelope.
    """
    if not configuration_contains(eta_up, eta_low):
        raise SimulationConfigError("sandwich_rates: eta_low is not contained in eta_up")
    mono = model.monotone
    if mono == "constant":
        lam = model.birth_rate(space, x, eta_low)
        return lam, lam
    if mono == "nondecreasing":
        return (model.birth_rate(space, x, eta_low), model.birth_rate(space, x, eta_up))
    if mono == "nonincreasing":
        return (model.birth_rate(space, x, eta_up), model.birth_rate(space, x, eta_low))
    lam0 = model.birth_rate(space, x, eta_low)
    gap = symmetric_difference(eta_up, eta_low, space.dimension)
    mass = float(np.sum(model.increment_kernel(space, x, gap))) if len(gap) else 0.0
    env = model.envelope(space, x)
    return (max(0.0, lam0 - mass), min(env, lam0 + mass))


@dataclass(frozen=True)
class BalanceCheck:
    """Detailed-balance residual together with an integrator error budget."""

    residual: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.residual) <= self.tolerance


def detailed_balance_residual(model: RateModel, space: SpaceSpec, x,
                              eta: Configuration, energy_fn=None) -> BalanceCheck:
    """Residual of lambda(x, eta) e^{-H(eta)} = delta e^{-H(eta + x)}.

    Zero (to rounding) exactly when the model's stationary law is the Gibbs
    measure for H. energy_fn overrides the model energy, e.g. to probe a
    deliberately mismatched potential.
    """
    x = np.asarray(x, dtype=float)
    using_model_energy = energy_fn is None
    if energy_fn is None:
        if not model.has_energy:
            raise UnsupportedModelError(f"{type(model).__name__} has no energy functional")
        energy_fn = lambda cfg: model.energy(space, cfg)
    eta_plus = eta.copy()
    pid = "balance-probe"
    while pid in eta_plus:
        pid += "'"
    eta_plus.add(pid, x)
    lam = model.birth_rate(space, x, eta)
    h0 = energy_fn(eta)
    h1 = energy_fn(eta_plus)
    delta = model.death.rate
    residual = lam * math.exp(-h0) - delta * math.exp(-h1)
    scale = max(lam * math.exp(-h0), delta * math.exp(-h1), 1e-300)
    tol = 64.0 * np.finfo(float).eps * scale * max(1.0, abs(h0), abs(h1))
    if isinstance(model, AreaInteractionRate) and using_model_energy:
        ov = model.overlap(space)
        if ov.method == "qmc":
            # Two union-volume evaluations plus the rate's exposed volume,
            # each good to the integrator's error bound.
            calls = 2 * (len(eta) + 1) + 1
            tol += scale * abs(math.log(model.gamma)) * calls * ov.error_bound()
    return BalanceCheck(residual=residual, tolerance=tol)


@dataclass(frozen=True)
class ContractionEstimate:
    """Numeric contraction constant with a quadrature error estimate."""

    value: float
    error: float
    resolution: int

    @property
    def certifies_uniqueness(self) -> bool:
        return self.value + self.error < 1.0


def contraction_constant(model: RateModel, space: SpaceSpec,
                         resolution: int | None = None) -> ContractionEstimate:
    """sup_x integral of c(x) a(x, y) / c(y) against the reference measure.

    Below 1 this certifies a unique stationary law and exponential decay of
    the coupling distance at rate at least (1 - value). Quadrature is a
    midpoint grid, refined once to attach an error estimate; cell-occupancy
    models are summed exactly.
    """
    if isinstance(model, CellOccupancyRate):
        masses = model.cell_masses(space)
        rows = model.base_rate * (-np.expm1(-model.theta))
        value = float(np.max(rows @ masses))
        return ContractionEstimate(value=value, error=0.0, resolution=model.n_cells)

    n = int(resolution or space.quadrature_resolution)
    weight = getattr(model, "weight_c", None)

    def integral_at(x0, res: int) -> float:
        grid = space.grid(res)
        a = np.asarray(model.increment_kernel(space, x0, grid), dtype=float)
        if weight is not None:
            a = a * (weight(x0) / np.array([weight(y) for y in grid]))
        return float(np.sum(a)) * space.intensity * space.cell_volume(res)

    if weight is None and model.translation_invariant:
        x0 = space.lengths_array() / 2.0
        coarse = integral_at(x0, n)
        fine = integral_at(x0, 2 * n)
        return ContractionEstimate(value=fine, error=abs(fine - coarse), resolution=2 * n)

    # General path: sup over grid anchor points. Kept at modest resolution,
    # the cost is quadratic in the grid size.
    anchor_res = min(n, 64)
    anchors = space.grid(anchor_res)
    coarse = max(integral_at(x0, n) for x0 in anchors)
    fine = max(integral_at(x0, 2 * n) for x0 in anchors)
    return ContractionEstimate(value=fine, error=abs(fine - coarse), resolution=2 * n)


# ---------------------------------------------------------------------------
# config-block parsing
# ---------------------------------------------------------------------------

def death_from_config(block: dict | None):
    block = block or {"type": "unit"}
    kind = block.get("type")
    if kind == "unit":
        return UnitDeath()
    if kind == "constant":
        return ConstantDeath(rate=float(block["rate"]))
    raise SimulationConfigError(f"unknown death type {kind!r}")


def model_from_config(config: dict) -> RateModel:
    """Build a rate model from the {"model": ..., "death": ...} config block."""
    try:
        block = config["model"]
        kind = block["type"]
    except KeyError as exc:
        raise SimulationConfigError(f"model config block missing key: {exc}") from None
    death = death_from_config(config.get("death"))
    try:
        if kind == "constant":
            return ConstantRate(rate=float(block["rate"]), death=death)
        if kind == "pairwise":
            return PairwiseRate(theta=float(block["theta"]),
                                interaction_range=float(block["range"]), death=death)
        if kind == "area_interaction":
            return AreaInteractionRate(
                rho=float(block["rho"]), gamma=float(block["gamma"]),
                grain_radius=float(block["grain_radius"]), death=death,
                overlap_method=block.get("overlap_method", "auto"),
                overlap_resolution=int(block.get("overlap_resolution", 4096)))
        if kind == "nearest_neighbor":
            return NearestNeighborRate(
                breakpoints=tuple(float(b) for b in block["breakpoints"]),
                values=tuple(float(v) for v in block["values"]),
                value_at_infinity=float(block["value_at_infinity"]), death=death)
        if kind == "cell_occupancy":
            return CellOccupancyRate(
                cell_counts=tuple(int(c) for c in block["cell_counts"]),
                theta=np.asarray(block["theta"], dtype=float),
                base_rate=float(block.get("base_rate", 1.0)), death=death)
    except KeyError as exc:
        raise SimulationConfigError(f"model config block missing key: {exc}") from None
    raise SimulationConfigError(f"unknown model type {kind!r}")
