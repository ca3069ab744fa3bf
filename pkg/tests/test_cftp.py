import math

import numpy as np
import pytest
from scipy import stats

from sbdsim.analysis import chi_square_gof
from sbdsim.cftp import (
    SandwichConvergenceError,
    ancient_survivors,
    coupling_decay_curve,
    extremal_lookback_counts,
    funnel_violations,
    maximal_stationary_sample,
    minimal_stationary_sample,
    perfect_sample,
    sandwich_run,
)
from sbdsim.engine import simulate
from sbdsim.geometry import Configuration, SimulationConfigError, SpaceSpec, TimedConfiguration
from sbdsim.models import (
    AreaInteractionRate,
    ConstantRate,
    PairwiseRate,
    UnsupportedModelError,
)
from sbdsim.noise import NoiseStream, replicate_seed

SPACE = SpaceSpec(dimension=1, lengths=(1.0,), intensity=1.0)
SEED = 31415926


# ---------------------------------------------------------------------------
# dominating state at the window boundary
# ---------------------------------------------------------------------------

def test_ancient_survivors_deterministic_and_positive():
    stream = NoiseStream(SEED, SPACE, envelope_total=5.0)
    a = ancient_survivors(stream, -3.0)
    b = ancient_survivors(stream, -3.0)
    assert sorted(a.ids()) == sorted(b.ids())
    for pid, e in a.items():
        assert e.clock > 0
        assert e.birth_time == -3.0
        assert e.clock == b.entry(pid).clock


def test_ancient_survivor_count_matches_stationary_mean():
    counts = [len(ancient_survivors(
        NoiseStream(replicate_seed(SEED, i), SPACE, envelope_total=5.0), -2.0))
        for i in range(400)]
    se = math.sqrt(5.0 / len(counts))
    assert abs(np.mean(counts) - 5.0) < 4 * se


def test_ancient_survivors_consistent_across_boundaries():
    # the survivors at -T must be exactly the survivors at -2T carried
    # forward, plus every atom born in [-2T, -T) that outlives -T: the
    # dominating process is one fixed realization, not resampled per window
    T = 3.0
    delta0 = 1.5
    stream = NoiseStream(SEED + 7, SPACE, envelope_total=6.0)
    deep = ancient_survivors(stream, -2 * T, death_rate=delta0)
    shallow = ancient_survivors(stream, -T, death_rate=delta0)
    expect = {}
    for pid, e in deep.items():
        residual = e.clock - delta0 * T
        if residual > 0:
            expect[pid] = residual
    for atom in stream.atoms_between(-2 * T, -T):
        residual = atom.r - delta0 * (-T - atom.s)
        if residual > 0:
            expect[atom.atom_id] = residual
    assert sorted(expect) == sorted(shallow.ids())
    for pid, e in shallow.items():
        assert e.clock == pytest.approx(expect[pid], abs=1e-9)


# ---------------------------------------------------------------------------
# sandwich iteration
# ---------------------------------------------------------------------------

def test_sandwich_trace_is_monotone_and_bracket_nested():
    model = PairwiseRate(theta=0.7, interaction_range=0.2)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=5.0)
    stream = NoiseStream.for_model(model, space, SEED)
    state = sandwich_run(model, space, 6.0, stream, keep_detail=True)
    lows = [n for n, _ in state.detail.sweep_trace]
    ups = [n for _, n in state.detail.sweep_trace]
    assert lows == sorted(lows)
    assert ups == sorted(ups, reverse=True)
    assert all(a <= b for a, b in state.detail.sweep_trace)
    assert not (state.lower.multiset() - state.upper.multiset())
    if state.coalesced:
        assert state.lower == state.upper


def test_sandwich_rounds_lookback_to_whole_slabs():
    model = ConstantRate(rate=2.0)
    stream = NoiseStream.for_model(model, SPACE, SEED, slab_length=1.0)
    state = sandwich_run(model, SPACE, 2.3, stream)
    assert state.lookback == 3.0
    with pytest.raises(SimulationConfigError):
        sandwich_run(model, SPACE, 0.0, stream)


def test_sandwich_sweep_budget_error_carries_trace():
    model = PairwiseRate(theta=0.8, interaction_range=0.2)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=6.0)
    stream = NoiseStream.for_model(model, space, SEED + 3)
    with pytest.raises(SandwichConvergenceError) as err:
        sandwich_run(model, space, 6.0, stream, max_sweeps=1)
    assert len(err.value.trace) == 1


@pytest.mark.parametrize("model", [
    ConstantRate(rate=4.0),
    PairwiseRate(theta=0.7, interaction_range=0.2),
    AreaInteractionRate(rho=3.0, gamma=1.5, grain_radius=0.08, overlap_method="exact"),
], ids=lambda m: type(m).__name__)
def test_funnel_every_intermediate_path_stays_bracketed(model):
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=2.0)
    stream = NoiseStream.for_model(model, space, SEED + 11)
    state = sandwich_run(model, space, 5.0, stream, keep_detail=True)
    assert funnel_violations(model, space, state, stream, n_intermediate=6) == 0


def test_funnel_requires_detail():
    model = ConstantRate(rate=2.0)
    stream = NoiseStream.for_model(model, SPACE, SEED)
    state = sandwich_run(model, SPACE, 2.0, stream)
    with pytest.raises(SimulationConfigError):
        funnel_violations(model, SPACE, state, stream)


# ---------------------------------------------------------------------------
# perfect sampler
# ---------------------------------------------------------------------------

def test_perfect_sample_reports_coalescence():
    model = PairwiseRate(theta=0.5, interaction_range=0.2)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=3.0)
    res = perfect_sample(model, space, SEED)
    assert res.status == "Coalesced"
    assert res.lookbacks_tried >= 1
    assert res.count == len(res.configuration)
    redo = perfect_sample(model, space, SEED)
    assert redo.configuration == res.configuration


def test_perfect_sample_gives_up_at_max_lookback():
    model = ConstantRate(rate=80.0)
    res = perfect_sample(model, SPACE, SEED, max_lookback=2.0)
    assert res.status == "NotCoalesced"
    assert res.configuration is None and res.count is None
    assert res.lookbacks_tried == 2


def test_perfect_sample_exactly_invariant_to_initial_lookback():
    # with the dominating state realized from the same fixed noise, starting
    # the doubling at a deeper window changes nothing at all: the draw is a
    # function of the seed alone
    model = PairwiseRate(theta=0.6, interaction_range=0.2)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=3.0)
    for i in range(40):
        seed = replicate_seed(SEED, i)
        a = perfect_sample(model, space, seed, initial_lookback=1.0)
        b = perfect_sample(model, space, seed, initial_lookback=4.0)
        assert a.configuration == b.configuration


def test_perfect_sample_constant_model_draws_poisson():
    model = ConstantRate(rate=5.0)
    counts = [perfect_sample(model, SPACE, replicate_seed(SEED, i)).count
              for i in range(600)]
    probs = {k: float(stats.poisson.pmf(k, 5.0)) for k in range(30)}
    res = chi_square_gof(counts, probs)
    assert res.pvalue > 0.01


def test_noise_is_shared_across_doublings():
    # atoms of the shorter window reappear verbatim inside the longer one
    model = PairwiseRate(theta=0.5, interaction_range=0.2)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=4.0)
    stream = NoiseStream.for_model(model, space, SEED)
    short = sandwich_run(model, space, 2.0, stream, keep_detail=True)
    long = sandwich_run(model, space, 4.0, stream, keep_detail=True)
    short_ids = [a.atom_id for a in short.detail.atoms]
    long_tail = [a.atom_id for a in long.detail.atoms if a.s >= -2.0]
    assert short_ids == long_tail
    assert stream.slab_hash(-1) == NoiseStream.for_model(model, space, SEED).slab_hash(-1)


# ---------------------------------------------------------------------------
# extremal approximations (attractive only)
# ---------------------------------------------------------------------------

def test_extremal_samplers_reject_repulsive_models():
    model = PairwiseRate(theta=0.5, interaction_range=0.2)
    with pytest.raises(UnsupportedModelError):
        minimal_stationary_sample(model, SPACE, SEED, 5.0)
    with pytest.raises(UnsupportedModelError):
        maximal_stationary_sample(model, SPACE, SEED, 5.0)
    with pytest.raises(UnsupportedModelError):
        extremal_lookback_counts(model, SPACE, [1.0], 2, SEED)


def test_extremal_counts_squeeze_monotonically():
    model = AreaInteractionRate(rho=2.0, gamma=1.6, grain_radius=0.06,
                                overlap_method="exact")
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=2.0)
    hs, mins, maxs = extremal_lookback_counts(model, space, [1.0, 2.0, 4.0, 8.0],
                                              replicates=25, master_seed=SEED)
    assert list(hs) == [1.0, 2.0, 4.0, 8.0]
    # pathwise: on fixed noise a deeper start only adds points to the minimal
    # run and only removes points from the maximal one
    assert np.all(np.diff(mins, axis=1) >= 0)
    assert np.all(np.diff(maxs, axis=1) <= 0)
    assert np.all(mins <= maxs)
    gap = maxs[:, -1] - mins[:, -1]
    assert gap.mean() < 1.0  # nearly squeezed at depth 8


def test_minimal_below_maximal_in_mean():
    model = AreaInteractionRate(rho=2.0, gamma=1.6, grain_radius=0.06,
                                overlap_method="exact")
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=2.0)
    lows = [len(minimal_stationary_sample(model, space, replicate_seed(SEED, i), 6.0))
            for i in range(60)]
    highs = [len(maximal_stationary_sample(model, space, replicate_seed(SEED, i), 6.0))
             for i in range(60)]
    assert np.mean(lows) <= np.mean(highs) + 1e-9


# ---------------------------------------------------------------------------
# coupling decay
# ---------------------------------------------------------------------------

def test_coupling_decay_constant_model_rate_is_death_rate():
    model = ConstantRate(rate=4.0)
    extra = Configuration.from_points(np.linspace(0.05, 0.95, 10)[:, None])
    decay = coupling_decay_curve(model, SPACE, Configuration(), extra,
                                 horizon=5.0, replicates=200, master_seed=SEED)
    assert not decay.kernel_weighted  # constant rates have a zero kernel
    assert decay.mean_mass[0] == pytest.approx(10.0)
    assert abs(decay.fitted_rate + 1.0) < 0.15


def test_coupling_decay_kernel_weighted_for_interacting_models():
    model = PairwiseRate(theta=0.5, interaction_range=0.2)
    extra = Configuration.from_points(np.linspace(0.1, 0.9, 5)[:, None])
    decay = coupling_decay_curve(model, SPACE, Configuration(), extra,
                                 horizon=3.0, replicates=50, master_seed=SEED)
    assert decay.kernel_weighted
    assert decay.mean_mass[0] > 0
    assert decay.fitted_rate < 0


def test_coupling_decay_rejects_non_nested_initials():
    model = ConstantRate(rate=1.0)
    low = Configuration.from_points(np.array([[0.5]]))
    up = Configuration.from_points(np.array([[0.25]]))
    with pytest.raises(SimulationConfigError):
        coupling_decay_curve(model, SPACE, low, up, 1.0, 2, SEED)


# ---------------------------------------------------------------------------
# bracket validity against brute force
# ---------------------------------------------------------------------------

def test_coalesced_state_equals_forward_run_from_deep_past():
    # once coalesced at lookback T, the state at 0 equals a plain forward run
    # on the same noise started from the dominating state at -T
    model = PairwiseRate(theta=0.6, interaction_range=0.15)
    space = SpaceSpec(dimension=1, lengths=(1.0,), intensity=3.0)
    for i in range(25):
        seed = replicate_seed(SEED + 1, i)
        res = perfect_sample(model, space, seed)
        assert res.status == "Coalesced"
        stream = NoiseStream.for_model(model, space, seed)
        T = res.lookback_used
        anc = ancient_survivors(stream, -T)
        traj = simulate(model, space, anc, T, stream, start_time=-T)
        assert traj.final.projection() == res.configuration
        empty = simulate(model, space, TimedConfiguration(), T, stream, start_time=-T)
        assert empty.final.projection() == res.configuration


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
