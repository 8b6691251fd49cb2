import math

import numpy as np
import pytest

from tdsparam.charfun import CharFun
from tdsparam.errors import PreconditionError, TDSError, ZeroOnContourError
from tdsparam.polecount import count_unstable
from tdsparam.region import (
    Ball,
    HolderPair,
    grow_region,
    qnorm,
    region_bound,
    region_bound_general,
    region_bound_retarded,
    sphere_directions,
)
from tdsparam.sweep import min_modulus

START = (0.1, 0.5)


@pytest.fixture(scope="module")
def ex7_region(ex7):
    return grow_region(ex7, START)


# Hölder pairs and balls ------------------------------------------------------

@pytest.mark.parametrize("p,q", [(1, math.inf), (2, 2), (math.inf, 1), (3, 1.5), (1.25, 5)])
def test_holder_conjugates(p, q):
    hp = HolderPair.from_p(p)
    assert hp.q == pytest.approx(q)
    assert HolderPair.from_q(q).p == pytest.approx(p)


def test_holder_rejects_non_conjugates():
    with pytest.raises(TDSError):
        HolderPair(2, 3)
    with pytest.raises(TDSError):
        HolderPair(0.5, -1)


@pytest.mark.parametrize("q", [1.0, 2.0, math.inf])
def test_ball_membership_matches_norm(q, rng):
    ball = Ball((1.0, 2.0), 0.5, q)
    pts = rng.uniform(0.0, 3.0, size=(2000, 2))
    d = pts - np.array([1.0, 2.0])
    if q == 1.0:
        want = np.abs(d).sum(axis=1) <= 0.5
    elif q == 2.0:
        want = np.hypot(d[:, 0], d[:, 1]) <= 0.5
    else:
        want = np.abs(d).max(axis=1) <= 0.5
    np.testing.assert_array_equal(ball.contains(pts), want)


@pytest.mark.parametrize("q", [1.0, 2.0, math.inf])
def test_ball_boundary_lies_on_sphere(q):
    b = Ball((0.3, 0.4, 0.5), 0.2, q)
    pts = b.boundary(64)
    np.testing.assert_allclose(qnorm(pts - np.array(b.center), q), 0.2, rtol=1e-12)


def test_ball_radius_positive():
    with pytest.raises(TDSError):
        Ball((0.0, 0.0), 0.0, 2.0)


def test_sphere_directions_unit():
    for n in (1, 2, 3):
        u = sphere_directions(n, 40)
        np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0)
    with pytest.raises(TDSError):
        sphere_directions(4, 10)


# Bounds ----------------------------------------------------------------------

def test_retarded_bound_example7(ex7):
    rb = region_bound_retarded(ex7.to_retarded(), (0.0, 0.0), HolderPair(2, 2))
    assert rb.eps == pytest.approx(0.5, abs=1e-4)
    # dense-grid oracle for the infimum of (1 + w^2) / sqrt(4 w^4 + w^2)
    w = np.geomspace(1e-3, 1e6, 200_001)
    assert np.min((1 + w**2) / np.sqrt(4 * w**4 + w**2)) >= rb.eps - 1e-6


def test_retarded_bound_box_gradient_norm(ex7):
    rb = region_bound_retarded(ex7.to_retarded(), (0.0, 0.0), HolderPair(math.inf, 1))
    w = np.geomspace(1e-4, 1e5, 400_001)
    oracle = np.min((1 + w**2) / np.maximum(2 * w**2, w))
    assert rb.eps > 0
    assert rb.eps == pytest.approx(oracle, rel=1e-5)


def test_general_bound_example7(ex7):
    rb = region_bound_general(ex7, (0.0, 0.0), HolderPair(2, 2))
    assert rb.eps == pytest.approx(0.5, rel=2e-3)


def test_general_bound_example12(ex12):
    rb = region_bound(ex12, (5.0, 5.0))
    assert rb.method == "general"
    assert rb.eps > 0


def test_bound_at_crossing_raises():
    cf = CharFun.from_text("s + exp(-s*t)", ["t"])
    with pytest.raises(PreconditionError):
        region_bound_retarded(cf.to_retarded(), (math.pi / 2,))


def test_bound_balls_preserve_count(ex7, rng):
    hp = HolderPair(2, 2)
    for _ in range(5):
        tau0 = rng.uniform(0.0, 0.6, size=2)
        try:
            nu0 = count_unstable(ex7, tau0).nu
            eps = region_bound(ex7, tau0, hp).eps
        except (PreconditionError, ZeroOnContourError):
            continue
        for _ in range(8):
            v = rng.normal(size=2)
            x = np.maximum(tau0 + eps * rng.uniform() * v / np.linalg.norm(v), 0.0)
            assert count_unstable(ex7, x).nu == nu0


# Growth ----------------------------------------------------------------------

def test_growth_sound(ex7, ex7_region, rng):
    st = ex7_region
    assert st.nu == 0 and st.balls
    assert st.stop_reason == "converged"
    for i in rng.choice(len(st.balls), size=40):
        b = st.balls[i]
        v = rng.normal(size=2)
        x = np.array(b.center) + b.radius * rng.uniform() ** 0.5 * v / np.linalg.norm(v)
        x = np.maximum(x, 0.0)
        assert count_unstable(ex7, x).nu == 0


def test_growth_history_monotone(ex7_region):
    h = ex7_region.history
    assert all(b >= a for a, b in zip(h, h[1:]))


def test_growth_occupancy_nested(ex7):
    sets = [grow_region(ex7, START, max_generations=k).occupancy for k in (1, 2, 3)]
    assert sets[0] <= sets[1] <= sets[2]


def test_frontier_close_to_crossing(ex7, ex7_region):
    start = min_modulus(ex7, START).value
    eps0 = region_bound(ex7, START).eps
    slope = start / eps0
    for f in ex7_region.frontier:
        if f.eps is None:
            continue
        mf = min_modulus(ex7, f.point).value
        assert mf < start
        # crossing is near: |f| tracks the shrinking radius
        assert mf <= 10 * slope * f.eps


def test_polygon_contains_start(ex7_region):
    from shapely.geometry import Point, Polygon

    poly = Polygon(ex7_region.polygon)
    assert poly.is_valid and poly.area > 0
    assert poly.buffer(1e-9).contains(Point(START))


def test_small_eta_single_ball(ex7):
    st = grow_region(ex7, START, eta=0.01, max_generations=0)
    assert len(st.balls) == 1
    assert st.stop_reason == "generation cap"
    assert st.balls[0].center == START


def test_example12_reaches_north_east_caps(ex12):
    st = grow_region(ex12, (5.0, 5.0), extent=([4.0, 4.0], [7.0, 7.0]), h=1.0)
    assert {"+tau", "+k"} <= st.capped_faces
    assert st.nu == 0


def test_growth_rejects_high_dimension():
    cf = CharFun.from_text("s + 0.1*exp(-s*a) + 0.1*exp(-s*b) + 0.1*exp(-s*c) + 0.1*exp(-s*d)",
                           ["a", "b", "c", "d"])
    with pytest.raises(TDSError):
        grow_region(cf, (0.1, 0.1, 0.1, 0.1))


def test_growth_validates_extent(ex7):
    with pytest.raises(TDSError):
        grow_region(ex7, START, extent=([1.0, 1.0], [2.0, 2.0]))
    with pytest.raises(TDSError):
        grow_region(ex7, START, eta=1.5)


def test_state_serialisation(ex7_region):
    d = ex7_region.to_dict()
    assert d["nu"] == 0 and d["generations"] == ex7_region.generations
    assert len(d["balls"]) == len(ex7_region.balls)
    assert {"center", "radius", "q"} <= set(d["balls"][0])
    assert d["polygon"]
    assert len(ex7_region.csv_rows()) == len(ex7_region.balls)
