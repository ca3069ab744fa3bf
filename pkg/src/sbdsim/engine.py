"""Event-driven exact simulation of spatial birth-and-death dynamics.

Birth proposals come from the slab noise; a proposal (x, s, r, u) becomes a
birth exactly when u lies below the birth rate evaluated on the configuration
just before s (all earlier births applied, all deaths strictly before s
applied). An accepted point carries its death mark r and dies when the
accumulated death hazard reaches it; with a constant death rate delta0 that is
at time s + r / delta0. The construction is exact: no time discretization
enters anywhere.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import Configuration, SimulationConfigError, SpaceSpec, TimedConfiguration, TimedPoint
from .models import RateModel
from .noise import NoiseStream


@dataclass(frozen=True, eq=False)
class Event:
    """One birth or death, in wall-clock simulation time."""

    time: float
    kind: str  # "birth" | "death"
    point_id: str
    x: NDArray[np.float64]
    mark: float | None = None  # residual death mark at birth, births only


@dataclass
class Trajectory:
    """A realized path: initial state, ordered events, final state."""

    initial: TimedConfiguration
    events: list[Event]
    start_time: float
    horizon: float
    final: TimedConfiguration
    death_rate: float

    @property
    def end_time(self) -> float:
        return self.start_time + self.horizon

    def event_count(self) -> int:
        return len(self.events)

    def to_csv(self, path) -> None:
        """Event log: time, kind, point_id, coordinates."""
        dim = 0
        for ev in self.events:
            dim = len(ev.x)
            break
        cols = ",".join(f"x{i+1}" for i in range(dim))
        with open(path, "w") as fh:
            fh.write(f"time,kind,point_id,{cols}\n" if cols else "time,kind,point_id\n")
            for ev in self.events:
                xs = ",".join(repr(float(v)) for v in ev.x)
                fh.write(f"{ev.time!r},{ev.kind},{ev.point_id},{xs}\n")

    def canonical_json(self) -> str:
        """Deterministic full-precision serialization, for replay comparisons."""
        return json.dumps({
            "start": self.start_time,
            "horizon": self.horizon,
            "initial": sorted((pid, list(e.coords), e.clock) for pid, e in self.initial.items()),
            "events": [(ev.time, ev.kind, ev.point_id, list(map(float, ev.x)), ev.mark)
                       for ev in self.events],
        })


def snapshot(trajectory: Trajectory, t: float) -> Configuration:
    """State at time t, reconstructed by replaying the event log."""
    if not (trajectory.start_time <= t <= trajectory.end_time):
        raise SimulationConfigError(
            f"snapshot time {t} outside [{trajectory.start_time}, {trajectory.end_time}]")
    cfg = trajectory.initial.projection()
    for ev in trajectory.events:
        if ev.time > t:
            break
        if ev.kind == "birth":
            cfg.add(ev.point_id, ev.x)
        else:
            cfg.remove(ev.point_id)
    return cfg


def timed_snapshot(trajectory: Trajectory, t: float) -> TimedConfiguration:
    """State at time t with residual clocks advanced by the elapsed hazard."""
    if not (trajectory.start_time <= t <= trajectory.end_time):
        raise SimulationConfigError("snapshot time outside the trajectory range")
    delta0 = trajectory.death_rate
    timed = TimedConfiguration()
    for pid, e in trajectory.initial.items():
        timed.add(pid, TimedPoint(e.coords.copy(), e.clock, trajectory.start_time))
    for ev in trajectory.events:
        if ev.time > t:
            break
        if ev.kind == "birth":
            timed.add(ev.point_id, TimedPoint(np.array(ev.x, dtype=float), ev.mark, ev.time))
        else:
            timed.remove(ev.point_id)
    out = TimedConfiguration()
    for pid, e in timed.items():
        residual = e.clock - delta0 * (t - e.birth_time)
        if residual <= 0:
            raise RuntimeError("replay produced a nonpositive residual clock")
        out.add(pid, TimedPoint(e.coords.copy(), residual, e.birth_time))
    return out


@dataclass
class CandidateRecord:
    """Audit record of one thinning decision."""

    atom_id: str
    s: float
    rate: float
    accepted: bool


def _death_time(birth_time: float, mark: float, delta0: float) -> float:
    return birth_time + mark / delta0


def simulate(model: RateModel, space: SpaceSpec, initial: TimedConfiguration,
             horizon: float, stream: NoiseStream, start_time: float = 0.0,
             collect_audit: bool = False) -> Trajectory:
    """Run the thinning dynamics on [start_time, start_time + horizon].

    The rate for a proposal at time s is evaluated on the configuration with
    every event strictly before s applied. Deaths occurring at exactly the end
    of the horizon are recorded as events and excluded from the final state.
    """
    if horizon < 0:
        raise SimulationConfigError(f"horizon must be >= 0, got {horizon}")
    delta0 = model.death.rate
    t_end = start_time + horizon

    live = Configuration()
    marks: dict[str, tuple[float, float]] = {}  # pid -> (mark, birth_time)
    deaths: list[tuple[float, int, str]] = []
    seq = 0
    for pid in sorted(initial.ids()):
        e = initial.entry(pid)
        live.add(pid, e.coords)
        marks[pid] = (e.clock, start_time)
        heapq.heappush(deaths, (_death_time(start_time, e.clock, delta0), seq, pid))
        seq += 1

    events: list[Event] = []
    audit: list[CandidateRecord] = []

    def flush_deaths(up_to: float, inclusive: bool) -> None:
        nonlocal seq
        while deaths:
            dt, _, pid = deaths[0]
            if pid not in live:
                heapq.heappop(deaths)
                continue
            if dt < up_to or (inclusive and dt == up_to):
                heapq.heappop(deaths)
                x = live.remove(pid)
                events.append(Event(time=dt, kind="death", point_id=pid, x=x))
            else:
                break

    for atom in stream.atoms_between(start_time, t_end):
        flush_deaths(atom.s, inclusive=False)
        rate = model.birth_rate(space, atom.x, live)
        accepted = atom.u <= rate
        if collect_audit:
            audit.append(CandidateRecord(atom.atom_id, atom.s, rate, accepted))
        if accepted:
            pid = atom.atom_id
            live.add(pid, atom.x)
            marks[pid] = (atom.r, atom.s)
            heapq.heappush(deaths, (_death_time(atom.s, atom.r, delta0), seq, pid))
            seq += 1
            events.append(Event(time=atom.s, kind="birth", point_id=pid,
                                x=np.array(atom.x, dtype=float), mark=atom.r))
    flush_deaths(t_end, inclusive=True)

    final = TimedConfiguration()
    for pid in live.ids():
        mark, born = marks[pid]
        residual = mark - delta0 * (t_end - born)
        final.add(pid, TimedPoint(live.coords(pid).copy(), residual, born))

    traj = Trajectory(initial=initial.copy(), events=events, start_time=start_time,
                      horizon=horizon, final=final, death_rate=delta0)
    if collect_audit:
        traj.audit = audit  # type: ignore[attr-defined]
    return traj


def coupled_simulate(model: RateModel, space: SpaceSpec,
                     initial_low: TimedConfiguration, initial_up: TimedConfiguration,
                     horizon: float, stream: NoiseStream, start_time: float = 0.0,
                     check_containment: bool | None = None) -> tuple[Trajectory, Trajectory]:
    """Run two coupled copies on identical noise.

    The initial states must be nested as timed configurations: every id of
    initial_low appears in initial_up with the same coordinates and clock.
    For models flagged attractive (nondecreasing rates) the lower path stays
    inside the upper path for all time; that containment is asserted at every
    decision when check_containment is enabled (the default for such models),
    and a violation is reported as a bug, not a statistics failure.
    """
    for pid in initial_low.ids():
        if pid not in initial_up:
            raise SimulationConfigError("coupled_simulate: initial states are not nested")
        a, b = initial_low.entry(pid), initial_up.entry(pid)
        if not np.array_equal(a.coords, b.coords) or a.clock != b.clock:
            raise SimulationConfigError("coupled_simulate: shared initial points must share clocks")
    if check_containment is None:
        check_containment = model.monotone in ("nondecreasing", "constant")
    delta0 = model.death.rate
    t_end = start_time + horizon

    sides = []
    for initial in (initial_low, initial_up):
        live = Configuration()
        marks = {}
        deaths: list[tuple[float, int, str]] = []
        seq = 0
        for pid in sorted(initial.ids()):
            e = initial.entry(pid)
            live.add(pid, e.coords)
            marks[pid] = (e.clock, start_time)
            heapq.heappush(deaths, (_death_time(start_time, e.clock, delta0), seq, pid))
            seq += 1
        sides.append({"live": live, "marks": marks, "deaths": deaths,
                      "seq": seq, "events": []})

    def flush(side, up_to: float, inclusive: bool) -> None:
        deaths, live, events = side["deaths"], side["live"], side["events"]
        while deaths:
            dt, _, pid = deaths[0]
            if pid not in live:
                heapq.heappop(deaths)
                continue
            if dt < up_to or (inclusive and dt == up_to):
                heapq.heappop(deaths)
                x = live.remove(pid)
                events.append(Event(time=dt, kind="death", point_id=pid, x=x))
            else:
                break

    for atom in stream.atoms_between(start_time, t_end):
        accepted_flags = []
        for side in sides:
            flush(side, atom.s, inclusive=False)
        for side in sides:
            rate = model.birth_rate(space, atom.x, side["live"])
            accepted = atom.u <= rate
            accepted_flags.append(accepted)
            if accepted:
                side["live"].add(atom.atom_id, atom.x)
                side["marks"][atom.atom_id] = (atom.r, atom.s)
                heapq.heappush(side["deaths"],
                               (_death_time(atom.s, atom.r, delta0), side["seq"], atom.atom_id))
                side["seq"] += 1
                side["events"].append(Event(time=atom.s, kind="birth", point_id=atom.atom_id,
                                            x=np.array(atom.x, dtype=float), mark=atom.r))
        if check_containment and accepted_flags[0] and not accepted_flags[1]:
            raise RuntimeError(
                "containment violated in a coupled run of a monotone model (internal bug)")
    for side in sides:
        flush(side, t_end, inclusive=True)

    out = []
    for initial, side in zip((initial_low, initial_up), sides):
        final = TimedConfiguration()
        for pid in side["live"].ids():
            mark, born = side["marks"][pid]
            final.add(pid, TimedPoint(side["live"].coords(pid).copy(),
                                      mark - delta0 * (t_end - born), born))
        out.append(Trajectory(initial=initial.copy(), events=side["events"],
                              start_time=start_time, horizon=horizon, final=final,
                              death_rate=delta0))
    return out[0], out[1]
