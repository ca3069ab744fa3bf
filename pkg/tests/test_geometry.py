import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbdsim.geometry import (
    Configuration,
    SimulationConfigError,
    SpaceSpec,
    TimedConfiguration,
    TimedPoint,
    configuration_contains,
    displacement,
    distances_to,
    kernel_mass,
    nearest_distance,
    snapshot_from_json,
    snapshot_to_json,
    symmetric_difference,
    torus_distance,
)

TORUS_1D = SpaceSpec(dimension=1, lengths=(1.0,), intensity=1.0)
TORUS_2D = SpaceSpec(dimension=2, lengths=(1.0, 2.0))
FREE_1D = SpaceSpec(dimension=1, lengths=(1.0,), boundary="free")


# ---------------------------------------------------------------------------
# space
# ---------------------------------------------------------------------------

def test_space_validation():
    with pytest.raises(SimulationConfigError):
        SpaceSpec(dimension=0, lengths=())
    with pytest.raises(SimulationConfigError):
        SpaceSpec(dimension=1, lengths=(-1.0,))
    with pytest.raises(SimulationConfigError):
        SpaceSpec(dimension=2, lengths=(1.0,))
    with pytest.raises(SimulationConfigError):
        SpaceSpec(dimension=1, lengths=(1.0,), boundary="reflecting")
    with pytest.raises(SimulationConfigError):
        SpaceSpec(dimension=1, lengths=(1.0,), intensity=-2.0)


def test_volume_and_beta_total():
    assert TORUS_2D.volume == 2.0
    s = SpaceSpec(dimension=1, lengths=(3.0,), intensity=5.0)
    assert s.beta_total == 15.0


def test_grid_midpoints_cover_volume():
    g = TORUS_2D.grid(4)
    assert g.shape == (16, 2)
    assert np.all(g >= 0) and np.all(g < TORUS_2D.lengths_array())
    assert TORUS_2D.cell_volume(4) * len(g) == pytest.approx(TORUS_2D.volume)


def test_contains_and_require():
    assert TORUS_1D.contains(np.array([0.0]))
    assert not TORUS_1D.contains(np.array([1.0]))  # half-open window
    with pytest.raises(SimulationConfigError):
        TORUS_1D.require_point(np.array([1.5]))


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def test_torus_wraparound():
    d = torus_distance(TORUS_1D, np.array([0.05]), np.array([0.95]))
    assert d == pytest.approx(0.1)
    # free boundary does not wrap
    assert torus_distance(FREE_1D, np.array([0.05]), np.array([0.95])) == pytest.approx(0.9)


def test_torus_distance_anisotropic_box():
    d = torus_distance(TORUS_2D, np.array([0.05, 0.1]), np.array([0.95, 1.9]))
    assert d == pytest.approx(np.hypot(0.1, 0.2))


def test_displacement_antisymmetric_mod_wrap():
    x, y = np.array([0.1, 0.3]), np.array([0.8, 1.7])
    dxy = displacement(TORUS_2D, x, y)
    dyx = displacement(TORUS_2D, y, x)
    assert np.linalg.norm(dxy) == pytest.approx(np.linalg.norm(dyx))


def test_dimension_mismatch_rejected():
    with pytest.raises(SimulationConfigError):
        torus_distance(TORUS_2D, np.array([0.1]), np.array([0.2]))


coords = st.floats(min_value=0.0, max_value=0.999, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(a=coords, b=coords, c=coords)
def test_torus_metric_triangle_inequality(a, b, c):
    xa, xb, xc = (np.array([v]) for v in (a, b, c))
    dab = torus_distance(TORUS_1D, xa, xb)
    dbc = torus_distance(TORUS_1D, xb, xc)
    dac = torus_distance(TORUS_1D, xa, xc)
    assert dac <= dab + dbc + 1e-12
    assert dab == pytest.approx(torus_distance(TORUS_1D, xb, xa))
    assert dab <= 0.5 + 1e-12  # half the period is the diameter


def test_distances_to_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, [1.0, 2.0], size=(20, 2))
    x = np.array([0.4, 1.1])
    vec = distances_to(TORUS_2D, x, pts)
    scal = [torus_distance(TORUS_2D, x, p) for p in pts]
    assert np.allclose(vec, scal)


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

def test_configuration_add_remove():
    cfg = Configuration()
    cfg.add("a", np.array([0.5]))
    assert "a" in cfg and len(cfg) == 1
    with pytest.raises(SimulationConfigError):
        cfg.add("a", np.array([0.6]))
    x = cfg.remove("a")
    assert x[0] == 0.5 and len(cfg) == 0
    with pytest.raises(SimulationConfigError):
        cfg.remove("a")


def test_configuration_is_a_multiset_not_a_labeling():
    c1 = Configuration()
    c1.add("p1", np.array([0.2]))
    c1.add("p2", np.array([0.7]))
    c2 = Configuration()
    c2.add("other", np.array([0.7]))
    c2.add("names", np.array([0.2]))
    assert c1 == c2
    c2.add("third", np.array([0.2]))  # duplicated location counts twice
    assert c1 != c2


def test_points_array_empty_shape():
    assert Configuration().points_array().shape == (0, 0)
    cfg = Configuration.from_points(np.array([[0.1], [0.2]]))
    assert cfg.points_array().shape == (2, 1)
    assert len(Configuration.from_points(np.empty((0, 1)))) == 0


def test_containment_and_symmetric_difference():
    big = Configuration.from_points(np.array([[0.1], [0.5], [0.9]]))
    small = Configuration.from_points(np.array([[0.5], [0.1]]))
    assert configuration_contains(big, small)
    assert not configuration_contains(small, big)
    delta = symmetric_difference(big, small, dimension=1)
    assert delta.shape == (1, 1)
    assert delta[0, 0] == 0.9


def test_symmetric_difference_counts_multiplicity():
    a = Configuration.from_points(np.array([[0.3], [0.3]]))
    b = Configuration.from_points(np.array([[0.3]]))
    assert symmetric_difference(a, b, dimension=1).shape == (1, 1)


def test_kernel_mass_sums_kernel_over_points():
    cfg = Configuration.from_points(np.array([[0.1], [0.2], [0.8]]))

    def kern(x, pts):
        return np.ones(len(pts)) * 0.5

    assert kernel_mass(kern, np.array([0.0]), cfg.points_array()) == pytest.approx(1.5)
    assert kernel_mass(kern, np.array([0.0]), np.empty((0, 1))) == 0.0


def test_nearest_distance():
    cfg = Configuration.from_points(np.array([[0.1], [0.9]]))
    assert nearest_distance(TORUS_1D, np.array([0.02]), cfg) == pytest.approx(0.08)
    assert nearest_distance(TORUS_1D, np.array([0.5]), Configuration()) == np.inf


# ---------------------------------------------------------------------------
# timed configurations
# ---------------------------------------------------------------------------

def test_timed_configuration_clock_positive():
    tc = TimedConfiguration()
    tc.add("a", TimedPoint(np.array([0.3]), clock=0.5, birth_time=-1.0))
    with pytest.raises(SimulationConfigError):
        tc.add("b", TimedPoint(np.array([0.3]), clock=0.0))


def test_timed_projection_and_restrict():
    tc = TimedConfiguration()
    tc.add("a", TimedPoint(np.array([0.3]), clock=1.0))
    tc.add("b", TimedPoint(np.array([0.6]), clock=2.0))
    proj = tc.projection()
    assert len(proj) == 2 and proj.coords("a")[0] == 0.3
    sub = tc.restrict(["b"])
    assert list(sub.ids()) == ["b"]
    assert sub.entry("b").clock == 2.0


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def test_snapshot_json_round_trip():
    cfg = Configuration.from_points(np.array([[0.9, 0.2], [0.1, 0.5]]))
    text = snapshot_to_json(3.5, cfg)
    obj = json.loads(text)
    assert obj["time"] == 3.5
    assert obj["points"] == sorted(obj["points"])  # canonical ordering
    t, back = snapshot_from_json(text)
    assert t == 3.5
    assert back == cfg


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(coords, coords), max_size=8))
def test_snapshot_round_trip_property(pts):
    cfg = Configuration.from_points(np.array([list(p) for p in pts])
                                    if pts else np.empty((0, 2)))
    t, back = snapshot_from_json(snapshot_to_json(0.0, cfg))
    assert back == cfg
