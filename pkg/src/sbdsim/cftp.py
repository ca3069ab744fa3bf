"""Perfect sampling by coupling from the past with a dominating process.

The stationary dynamics are bracketed on a lookback window [-T, 0] between a
lower process started empty and an upper process started from the stationary
law of the envelope-driven (dominating) process. Both are built from the same
noise by iterating a pair of coupled thinnings: at each proposal the lower
process accepts below the infimum of the rate over all configurations between
the current pair, the upper below the supremum. The iteration is monotone
(lower grows, upper shrinks) and reaches a fixed point after finitely many
sweeps; if the fixed-point pair agrees at time 0 the common value is an exact
draw from the stationary law, because every stationary path driven by the same
noise is trapped between the pair.

The dominating process must be one consistent trajectory across lookbacks,
not redrawn per restart: its state at -T is realized as the survivors of the
noise's own slabs older than -T (their count is Poisson with the envelope's
stationary mean, their residual clocks exponential). Extending the lookback
then only prepends noise, which is what makes the doubling schedule exact.
The survivor scan is truncated once the expected mass of older survivors
drops below 1e-16, far under double-precision decision granularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Configuration,
    SimulationConfigError,
    SpaceSpec,
    TimedConfiguration,
    TimedPoint,
    configuration_contains,
    symmetric_difference,
)
from .models import RateModel, UnsupportedModelError, envelope_total, sandwich_rates
from .noise import NoisePoint, NoiseStream, initial_clocks, poisson_configuration, replicate_seed
from . import engine

ANCIENT_TAIL_MASS = 1e-16


class SandwichConvergenceError(RuntimeError):
    """Sweep iteration failed to reach its fixed point within the budget."""

    def __init__(self, trace):
        super().__init__(f"sandwich iteration did not stabilize; sweep trace {trace}")
        self.trace = trace


# ---------------------------------------------------------------------------
# dominating-process state at the lookback boundary
# ---------------------------------------------------------------------------

def ancient_survivors(stream: NoiseStream, boundary_time: float,
                      death_rate: float = 1.0) -> TimedConfiguration:
    """State of the envelope-driven process at boundary_time contributed by
    proposals older than the boundary, with residual clocks.

    Scans older slabs until the expected mass of yet older survivors falls
    below ANCIENT_TAIL_MASS. The same noise always yields the same survivors,
    so lookback extensions see one consistent dominating trajectory.
    """
    out = TimedConfiguration()
    rate = stream.envelope_total
    if rate <= 0:
        return out
    L = stream.slab_length
    k = math.ceil(boundary_time / L) - 1
    guard = 0
    while (rate / death_rate) * math.exp(-death_rate * (boundary_time - k * L)) > ANCIENT_TAIL_MASS:
        for atom in stream.slab_points(k):
            if atom.s >= boundary_time:
                continue
            residual = atom.r - death_rate * (boundary_time - atom.s)
            if residual > 0:
                out.add(atom.atom_id, TimedPoint(coords=np.array(atom.x, dtype=float),
                                                 clock=residual, birth_time=boundary_time))
        k -= 1
        guard += 1
        if guard > 10_000_000:
            raise RuntimeError("ancient survivor scan did not terminate")
    return out


# ---------------------------------------------------------------------------
# sandwich iteration on a fixed lookback
# ---------------------------------------------------------------------------

@dataclass
class SandwichDetail:
    """Internals of a sandwich run, for audits and funnel checks."""

    atoms: list[NoisePoint]
    ancient: TimedConfiguration
    accept_lower: frozenset
    accept_upper: frozenset
    sweep_trace: list[tuple[int, int]]
    start_time: float


@dataclass
class SandwichState:
    """Bracketing pair at time 0 after the sweep iteration stabilized."""

    lower: Configuration
    upper: Configuration
    lookback: float
    coalesced: bool
    sweeps: int
    detail: SandwichDetail | None = None


class _Walker:
    """Replays a fixed event timeline, exposing the state at left limits."""

    def __init__(self, initial: list[tuple[str, np.ndarray]],
                 events: list[tuple[float, int, str, np.ndarray]]):
        self.state = Configuration()
        for pid, x in initial:
            self.state.add(pid, x)
        self.events = events  # (time, +1 birth / -1 death, pid, coords)
        self.pos = 0

    def advance_before(self, t: float) -> Configuration:
        while self.pos < len(self.events) and self.events[self.pos][0] < t:
            _, kind, pid, x = self.events[self.pos]
            if kind > 0:
                self.state.add(pid, x)
            else:
                self.state.remove(pid)
            self.pos += 1
        return self.state


def _timeline(atoms, accept, delta0):
    """Birth/death event list for the process accepting the given atom ids."""
    ev = []
    for a in atoms:
        if a.atom_id in accept:
            ev.append((a.s, 1, a.atom_id, a.x))
            ev.append((a.s + a.r / delta0, -1, a.atom_id, a.x))
    ev.sort(key=lambda e: (e[0], -e[1]))
    return ev


def _ancient_initial(ancient: TimedConfiguration, delta0, start):
    initial = [(pid, e.coords) for pid, e in sorted(ancient.items())]
    deaths = [(start + e.clock / delta0, -1, pid, e.coords)
              for pid, e in sorted(ancient.items())]
    return initial, deaths


def _state_at_zero(atoms, accept, ancient, delta0, start) -> Configuration:
    cfg = Configuration()
    if ancient is not None:
        for pid, e in ancient.items():
            if start + e.clock / delta0 > 0.0:
                cfg.add(pid, e.coords)
    for a in atoms:
        if a.atom_id in accept and a.s + a.r / delta0 > 0.0:
            cfg.add(a.atom_id, a.x)
    return cfg


def sandwich_run(model: RateModel, space: SpaceSpec, lookback: float,
                 stream: NoiseStream, max_sweeps: int = 256,
                 keep_detail: bool = False) -> SandwichState:
    """Iterate the coupled bracketing pair on [-T, 0] to its fixed point.

    T is the requested lookback rounded up to whole slabs. The iteration is
    monotone (the lower accept set only grows, the upper only shrinks), so it
    always stabilizes after finitely many sweeps; SandwichConvergenceError
    with the sweep trace means the budget was genuinely too small for this
    window, or the rate model violated its declared monotonicity.
    """
    if not (lookback > 0):
        raise SimulationConfigError(f"lookback must be > 0, got {lookback}")
    if not math.isfinite(model.envelope_sup(space)):
        raise SimulationConfigError("model envelope must be finite for sandwich runs")
    n_slabs = max(1, math.ceil(lookback / stream.slab_length - 1e-12))
    start = -n_slabs * stream.slab_length
    delta0 = model.death.rate

    atoms = list(stream.atoms_between(start, 0.0))
    ancient = ancient_survivors(stream, start, delta0)
    anc_initial, anc_deaths = _ancient_initial(ancient, delta0, start)

    accept_low: frozenset = frozenset()
    accept_up: frozenset = frozenset(a.atom_id for a in atoms)
    trace: list[tuple[int, int]] = []

    for sweep in range(1, max_sweeps + 1):
        low_walker = _Walker([], _timeline(atoms, accept_low, delta0))
        up_events = sorted(_timeline(atoms, accept_up, delta0) + anc_deaths,
                           key=lambda e: (e[0], -e[1]))
        up_walker = _Walker(anc_initial, up_events)
        new_low, new_up = set(), set()
        for a in atoms:
            low_state = low_walker.advance_before(a.s)
            up_state = up_walker.advance_before(a.s)
            lam_low, lam_up = sandwich_rates(model, space, a.x, low_state, up_state)
            if a.u <= lam_low:
                new_low.add(a.atom_id)
            if a.u <= lam_up:
                new_up.add(a.atom_id)
        new_low, new_up = frozenset(new_low), frozenset(new_up)
        trace.append((len(new_low), len(new_up)))
        if not (accept_low <= new_low and new_up <= accept_up and new_low <= new_up):
            raise RuntimeError("sandwich sweeps lost monotonicity (internal bug)")
        if new_low == accept_low and new_up == accept_up:
            lower0 = _state_at_zero(atoms, accept_low, None, delta0, start)
            upper0 = _state_at_zero(atoms, accept_up, ancient, delta0, start)
            detail = None
            if keep_detail:
                detail = SandwichDetail(atoms=atoms, ancient=ancient,
                                        accept_lower=accept_low, accept_upper=accept_up,
                                        sweep_trace=trace, start_time=start)
            return SandwichState(lower=lower0, upper=upper0, lookback=-start,
                                 coalesced=(lower0 == upper0), sweeps=sweep, detail=detail)
        accept_low, accept_up = new_low, new_up
    raise SandwichConvergenceError(trace)


def funnel_violations(model: RateModel, space: SpaceSpec, state: SandwichState,
                      stream: NoiseStream, n_intermediate: int = 5, seed: int = 0) -> int:
    """Run forward paths from random initial states between empty and the
    dominating state at -T on the same noise; count containment violations
    against the fixed-point bracket at every proposal time and at 0."""
    if state.detail is None:
        raise SimulationConfigError("funnel check needs a sandwich run with keep_detail=True")
    det = state.detail
    delta0 = model.death.rate
    rng = np.random.default_rng(seed)
    violations = 0
    check_times = [a.s for a in det.atoms] + [0.0]
    for _ in range(n_intermediate):
        chosen = [pid for pid in sorted(det.ancient.ids()) if rng.random() < 0.5]
        initial = det.ancient.restrict(chosen)
        traj = engine.simulate(model, space, initial, -det.start_time, stream,
                               start_time=det.start_time)
        mid_events = [(ev.time, 1 if ev.kind == "birth" else -1, ev.point_id, ev.x)
                      for ev in traj.events]
        mid = _Walker([(pid, initial.entry(pid).coords) for pid in sorted(initial.ids())],
                      mid_events)
        low = _Walker([], _timeline(det.atoms, det.accept_lower, delta0))
        anc_initial, anc_deaths = _ancient_initial(det.ancient, delta0, det.start_time)
        up = _Walker(anc_initial, sorted(_timeline(det.atoms, det.accept_upper, delta0)
                                         + anc_deaths, key=lambda e: (e[0], -e[1])))
        for t in check_times:
            t_probe = math.nextafter(t, math.inf)
            low_s = low.advance_before(t_probe)
            mid_s = mid.advance_before(t_probe)
            up_s = up.advance_before(t_probe)
            if not (configuration_contains(mid_s, low_s)
                    and configuration_contains(up_s, mid_s)):
                violations += 1
    return violations


# ---------------------------------------------------------------------------
# doubling sampler
# ---------------------------------------------------------------------------

@dataclass
class PerfectSample:
    """Result of a coupling-from-the-past draw."""

    configuration: Configuration | None
    lookback_used: float
    status: str  # "Coalesced" | "NotCoalesced"
    lookbacks_tried: int
    sweeps_total: int

    @property
    def count(self) -> int | None:
        return None if self.configuration is None else len(self.configuration)


def perfect_sample(model: RateModel, space: SpaceSpec, master_seed: int,
                   initial_lookback: float = 1.0, max_lookback: float = 1024.0,
                   slab_length: float = 1.0, max_sweeps: int = 256) -> PerfectSample:
    """Draw one exact stationary sample by doubling the lookback on fixed noise.

    The slabs in [-T, 0) are identical across doublings, only older noise is
    added, so the first coalesced bracket reads off the stationary state at 0.
    Returns status NotCoalesced (with configuration None) once the lookback
    would exceed max_lookback.
    """
    stream = NoiseStream.for_model(model, space, master_seed, slab_length)
    lookback = max(initial_lookback, slab_length)
    tried = 0
    sweeps = 0
    while lookback <= max_lookback * (1 + 1e-12):
        state = sandwich_run(model, space, lookback, stream, max_sweeps=max_sweeps)
        tried += 1
        sweeps += state.sweeps
        if state.coalesced:
            return PerfectSample(configuration=state.lower, lookback_used=state.lookback,
                                 status="Coalesced", lookbacks_tried=tried,
                                 sweeps_total=sweeps)
        lookback = state.lookback * 2
    return PerfectSample(configuration=None, lookback_used=lookback / 2 if tried else 0.0,
                         status="NotCoalesced", lookbacks_tried=tried, sweeps_total=sweeps)


# ---------------------------------------------------------------------------
# extremal stationary approximations (attractive models)
# ---------------------------------------------------------------------------

def _require_attractive(model: RateModel, what: str) -> None:
    if model.monotone not in ("nondecreasing", "constant"):
        raise UnsupportedModelError(
            f"{what} needs an attractive (nondecreasing) rate model; "
            f"this model is {model.monotone}")


def minimal_stationary_sample(model: RateModel, space: SpaceSpec, seed: int,
                              horizon: float, slab_length: float = 1.0) -> Configuration:
    """Forward run from the empty state; approaches the least stationary law
    from below for attractive models."""
    _require_attractive(model, "minimal_stationary_sample")
    stream = NoiseStream.for_model(model, space, seed, slab_length)
    traj = engine.simulate(model, space, TimedConfiguration(), horizon, stream)
    return traj.final.projection()


def maximal_stationary_sample(model: RateModel, space: SpaceSpec, seed: int,
                              horizon: float, slab_length: float = 1.0) -> Configuration:
    """Forward run from the stationary dominating state; approaches the
    greatest stationary law from above for attractive models."""
    _require_attractive(model, "maximal_stationary_sample")
    stream = NoiseStream.for_model(model, space, seed, slab_length)
    delta0 = model.death.rate
    density = envelope_total(model, space) / space.volume / delta0
    eta0 = poisson_configuration(space, density, seed)
    initial = initial_clocks(eta0, seed)
    traj = engine.simulate(model, space, initial, horizon, stream)
    return traj.final.projection()


def extremal_lookback_counts(model: RateModel, space: SpaceSpec, horizons,
                             replicates: int, master_seed: int,
                             slab_length: float = 1.0):
    """Counts at time 0 of runs started at -h empty (minimal) and from the
    dominating state at -h (maximal), using common noise across horizons.

    Within one replicate the minimal counts are pathwise nondecreasing in h
    and the maximal counts pathwise nonincreasing, because extending the
    lookback of an attractive model on fixed noise only adds (respectively
    removes) points. Returns (horizons_used, min_counts, max_counts) with
    count arrays of shape (replicates, len(horizons)).
    """
    _require_attractive(model, "extremal_lookback_counts")
    hs = [max(1, math.ceil(h / slab_length - 1e-12)) * slab_length for h in horizons]
    delta0 = model.death.rate
    min_counts = np.zeros((replicates, len(hs)), dtype=int)
    max_counts = np.zeros((replicates, len(hs)), dtype=int)
    for rep in range(replicates):
        stream = NoiseStream.for_model(model, space, replicate_seed(master_seed, rep),
                                       slab_length)
        for j, h in enumerate(hs):
            tmin = engine.simulate(model, space, TimedConfiguration(), h, stream,
                                   start_time=-h)
            min_counts[rep, j] = len(tmin.final)
            anc = ancient_survivors(stream, -h, delta0)
            tmax = engine.simulate(model, space, anc, h, stream, start_time=-h)
            max_counts[rep, j] = len(tmax.final)
    return np.asarray(hs), min_counts, max_counts


# ---------------------------------------------------------------------------
# coupling decay
# ---------------------------------------------------------------------------

@dataclass
class CouplingDecay:
    """Mean coupling distance over time and its fitted exponential rate."""

    times: np.ndarray
    mean_mass: np.ndarray
    fitted_rate: float
    kernel_weighted: bool
    replicates: int


def coupling_decay_curve(model: RateModel, space: SpaceSpec,
                         eta0_low: Configuration, eta0_up: Configuration,
                         horizon: float, replicates: int, master_seed: int,
                         times=None, slab_length: float = 1.0) -> CouplingDecay:
    """Decay of the distance between coupled runs started from nested states.

    The distance at time t is sup_x c(x) sum over the symmetric difference of
    a(x, y) / c(y), estimated on an anchor grid; for models whose increment
    kernel vanishes identically the raw symmetric-difference count is used.
    The fitted rate is a least-squares slope of log mean distance, weighted
    toward the better-resolved early part of the curve.
    """
    if not configuration_contains(eta0_up, eta0_low):
        raise SimulationConfigError("coupling_decay_curve: initial states must be nested")
    if times is None:
        times = np.linspace(0.0, horizon, 11)
    times = np.asarray(times, dtype=float)

    anchor_per_axis = max(4, int(round(128 ** (1.0 / space.dimension))))
    anchors = space.grid(anchor_per_axis)
    probe = model.increment_kernel(space, anchors[len(anchors) // 2], anchors)
    kernel_weighted = bool(np.max(probe) > 0)
    weight = getattr(model, "weight_c", None)
    c_anchor = np.array([weight(x) for x in anchors]) if weight else None

    acc = np.zeros((len(times), len(anchors))) if kernel_weighted else np.zeros(len(times))
    for rep in range(replicates):
        seed = replicate_seed(master_seed, rep)
        up_timed = initial_clocks(eta0_up, seed)
        lone = _match_subset_ids(eta0_low, up_timed)
        low_timed = up_timed.restrict(lone)
        stream = NoiseStream.for_model(model, space, seed, slab_length)
        t_low, t_up = engine.coupled_simulate(model, space, low_timed, up_timed,
                                              horizon, stream)
        for i, t in enumerate(times):
            c1 = engine.snapshot(t_low, t)
            c2 = engine.snapshot(t_up, t)
            delta = symmetric_difference(c1, c2, space.dimension)
            if kernel_weighted:
                if len(delta):
                    vals = np.stack([model.increment_kernel(space, x, delta)
                                     for x in anchors]).sum(axis=1)
                    if weight:
                        cy = np.array([weight(y) for y in delta])
                        vals = c_anchor * np.stack(
                            [model.increment_kernel(space, x, delta) / cy
                             for x in anchors]).sum(axis=1)
                    acc[i] += vals
            else:
                acc[i] += len(delta)

    if kernel_weighted:
        mean_mass = np.max(acc / replicates, axis=1)
    else:
        mean_mass = acc / replicates
    keep = mean_mass > 0
    if np.count_nonzero(keep) >= 2:
        w = np.sqrt(np.maximum(mean_mass[keep], 1e-12) * replicates)
        slope, _ = np.polyfit(times[keep], np.log(mean_mass[keep]), 1, w=w)
        rate = float(slope)
    else:
        rate = float("nan")
    return CouplingDecay(times=times, mean_mass=mean_mass, fitted_rate=rate,
                         kernel_weighted=kernel_weighted, replicates=replicates)


def _match_subset_ids(eta_low: Configuration, timed_up: TimedConfiguration) -> list:
    """Ids in timed_up realizing the multiset eta_low (coordinates must match)."""
    remaining = {pid: timed_up.entry(pid).coords.tobytes() for pid in timed_up.ids()}
    chosen = []
    for _, x in sorted(eta_low.items()):
        key = x.tobytes()
        hit = next((pid for pid, k in sorted(remaining.items()) if k == key), None)
        if hit is None:
            raise SimulationConfigError("lower initial state is not a sub-multiset of the upper")
        chosen.append(hit)
        del remaining[hit]
    return chosen
