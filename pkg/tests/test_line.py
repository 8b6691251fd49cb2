import math

import numpy as np
import pytest

from conftest import random_retarded
from tdsparam.charfun import CharFun
from tdsparam.errors import PreconditionError, TDSError, ZeroOnContourError
from tdsparam.line import (
    Curve,
    RayTask,
    circular_bisection,
    domain_exit,
    fan_directions,
    run_fan,
    run_ray,
    step_bound_general,
    step_bound_retarded,
)
from tdsparam.polecount import count_unstable

EX7_T1_CROSSING = (math.pi / 2) / (1 + math.sqrt(2))


# Step bounds -----------------------------------------------------------------

def test_retarded_step_along_t1(ex7):
    sb = step_bound_retarded(ex7.to_retarded((0, 0), (1, 0)))
    assert sb.delta == pytest.approx(0.5, abs=1e-6)


def test_retarded_step_along_t2(ex7):
    sb = step_bound_retarded(ex7.to_retarded((0, 0), (0, 1)))
    assert sb.delta == pytest.approx(2.0, abs=1e-6)
    assert sb.omega == pytest.approx(1.0, abs=1e-3)


def test_retarded_step_without_sensitivity_is_unbounded(ex7):
    rf = ex7.to_retarded((0, 0), (1, 0))
    rf = rf.along(np.zeros(2), np.zeros(2))
    assert step_bound_retarded(rf).delta == math.inf


def test_general_step_not_below_retarded(ex7):
    sb = step_bound_general(ex7, (0, 0), (1, 0))
    assert sb.delta >= 0.5 * (1 - 2e-3)
    assert sb.method == "general"


def test_general_step_without_delay_sensitivity():
    cf = CharFun.from_text("s^2 + s*exp(-s*t1) + 1", ["t1", "u"])
    sb = step_bound_general(cf, (0.3, 1.0), (0, 1))
    assert sb.delta == math.inf
    assert sb.rounds == 1


def test_general_step_ex5_start_is_positive(ex5):
    sb = step_bound_general(ex5, (0.25, 8.0, 0.003), (1, 0, 0))
    assert 0 < sb.delta < math.inf


def test_general_and_retarded_agree_in_order(rng):
    for _ in range(10):
        cf = random_retarded(rng)
        tau = rng.uniform(0.1, 2.0, size=cf.n)
        d = rng.normal(size=cf.n)
        d /= np.linalg.norm(d)
        try:
            r = step_bound_retarded(cf.to_retarded(tau, d)).delta
        except PreconditionError:
            continue
        g = step_bound_general(cf, tau, d)
        if g.domain_limited:
            assert g.delta <= r * (1 + 1e-9)
        else:
            assert g.delta >= r * (1 - 1e-3)


def test_step_on_crossing_is_rejected():
    cf = CharFun.from_text("s + exp(-s*t)", ["t"])
    with pytest.raises(PreconditionError):
        step_bound_retarded(cf.to_retarded((math.pi / 2,), (1.0,)))


def test_circular_bisection_fixed_point():
    x, _, limited = circular_bisection(lambda c: (1.0 / (1.0 + c), None))
    golden = (math.sqrt(5) - 1) / 2
    assert x <= 1.0 / (1.0 + x)
    assert x >= golden * (1 - 2e-3)
    assert not limited


def test_circular_bisection_respects_limit():
    x, _, limited = circular_bisection(lambda c: (5.0, None), limit=1.0)
    assert x == 1.0 and limited


def test_domain_exit(ex7):
    assert domain_exit(ex7, (0.2, 0.4), (-1, 0)) == pytest.approx(0.2)
    assert domain_exit(ex7, (0.2, 0.4), (1, 1)) == math.inf


# Ray iteration ---------------------------------------------------------------

def test_ray_example7_t1(ex7):
    tr = run_ray(RayTask(ex7, (0, 0), (1, 0), eta=0.5, delta=1e-4, theta_max=50))
    assert tr.verdict == "CONVERGED"
    assert abs(tr.theta_lim - EX7_T1_CROSSING) < 5e-3
    assert tr.omega_crossing == pytest.approx(1 + math.sqrt(2), rel=1e-2)
    thetas = [s.theta for s in tr.steps]
    assert all(b > a for a, b in zip(thetas, thetas[1:]))
    assert tr.method == "retarded"


def test_ray_iterates_preserve_count(ex7):
    tr = run_ray(RayTask(ex7, (0.1, 0.1), (0.6, 0.8)))
    assert tr.verdict == "CONVERGED"
    nu0 = count_unstable(ex7, (0.1, 0.1)).nu
    u = np.array([0.6, 0.8])
    for s in tr.steps[:: max(1, len(tr.steps) // 10)]:
        end = s.theta + s.delta_bar * (1 - 1e-6)
        assert count_unstable(ex7, np.array([0.1, 0.1]) + end * u).nu == nu0
    # just beyond the estimate the count has changed
    past = np.array([0.1, 0.1]) + (tr.theta_lim + 0.02) * u
    assert count_unstable(ex7, past).nu != nu0


def test_general_path_ray_agrees(ex7):
    fast = run_ray(RayTask(ex7, (0, 0), (1, 0)))
    slow = run_ray(RayTask(ex7, (0, 0), (1, 0), retarded=False))
    assert slow.method == "general"
    assert slow.verdict == "CONVERGED"
    assert abs(slow.theta_lim - fast.theta_lim) < 5e-3


def test_ray_from_crossing_fails():
    cf = CharFun.from_text("s + exp(-s*t)", ["t"])
    tr = run_ray(RayTask(cf, (math.pi / 2,), (1.0,)))
    assert tr.verdict == "FAILED"
    assert "vanish" in tr.reason


def test_ray_hits_domain_edge(ex7):
    tr = run_ray(RayTask(ex7, (0.2, 0.3), (-1, 0)))
    assert tr.verdict == "DOMAIN_EDGE"
    assert tr.theta_lim == pytest.approx(0.2)


def test_ray_diverges_for_delay_free_direction():
    cf = CharFun.from_text("s^2 + 2*s + 1 + 0.5*exp(-s*t)", ["t"])
    tr = run_ray(RayTask(cf, (0.0,), (1.0,), theta_max=20))
    assert tr.verdict == "DIVERGED"


def test_ray_task_validation(ex7):
    with pytest.raises(TDSError):
        RayTask(ex7, (0, 0), (0, 0))
    with pytest.raises(TDSError):
        RayTask(ex7, (0, 0), (1, 0), eta=1.0)
    with pytest.raises(TDSError):
        RayTask(ex7, (0, 0), (1, 0, 0))


def test_ray_along_curve(ex7):
    # parabola t2 = t1^2 from the origin
    curve = Curve(lambda th: np.array([th, th * th]), lambda th: np.array([1.0, 2 * th]))
    tr = run_ray(RayTask(ex7, (0, 0), curve=curve))
    assert tr.method == "general"
    assert tr.verdict == "CONVERGED"
    nu0 = count_unstable(ex7, (0, 0)).nu
    assert count_unstable(ex7, curve.point(tr.theta_lim * (1 - 1e-3))).nu == nu0

    def same(theta):
        try:
            return count_unstable(ex7, curve.point(theta)).nu == nu0
        except ZeroOnContourError:
            return False

    # oracle: bisection on the zero count along the curve
    lo, hi = 0.0, tr.theta_lim + 0.05
    assert not same(hi)
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if same(mid):
            lo = mid
        else:
            hi = mid
    assert abs(tr.theta_lim - lo) < 5e-3


def test_fan_preserves_order(ex7):
    dirs = fan_directions(4)
    traces = run_fan(ex7, (0.1, 0.1), dirs, theta_max=20)
    assert len(traces) == 4
    solo = run_ray(RayTask(ex7, (0.1, 0.1), dirs[1], theta_max=20))
    assert traces[1].theta_lim == solo.theta_lim


def test_fan_requires_directions(ex7):
    with pytest.raises(TDSError):
        run_fan(ex7, (0, 0), [])
    with pytest.raises(TDSError):
        fan_directions(0)


def test_trace_serialisation(ex7):
    tr = run_ray(RayTask(ex7, (0, 0), (1, 0)))
    d = tr.to_dict()
    assert d["verdict"] == "CONVERGED" and d["steps"] == len(tr.steps)
    assert len(tr.csv_rows()[0]) == len(tr.CSV_HEADER)
