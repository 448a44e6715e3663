import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from lowthrust import crtbp
from lowthrust.numerics import (
    ContinuationSchedule,
    ContinuationStall,
    Hyperplane,
    NonConvergenceError,
    arclength_run,
    continuation_run,
    fd_jacobian,
    flow,
    newton_solve,
    propagate,
    propagate_to_event,
)
from lowthrust.numerics.propagate import NoEventError

L1_LYAP = np.array([0.82, 0.0, 0.0, 0.13])


def test_matches_scipy_dop853(params):
    fld = crtbp.natural_field(params)
    ours = flow(fld, L1_LYAP, 0.0, 3.0)
    ref = solve_ivp(lambda t, y: crtbp.natural_rhs(t, y, np.array([params.mu])), (0.0, 3.0), L1_LYAP,
                    method="DOP853", rtol=1e-13, atol=1e-13).y[:, -1]
    assert np.max(np.abs(ours - ref)) < 1e-9


def test_tolerance_refinement_converges(params):
    fld = crtbp.natural_field(params)
    a = flow(fld, L1_LYAP, 0.0, 5.0, tol=(1e-12, 1e-12))
    b = flow(fld, L1_LYAP, 0.0, 5.0, tol=(1e-13, 1e-13))
    assert np.max(np.abs(a - b)) <= 1e-8


def test_dense_output_agrees_with_endpoint(params):
    fld = crtbp.natural_field(params)
    traj = propagate(fld, L1_LYAP, (0.0, 2.0))
    for t in (0.3, 1.1, 1.77):
        assert np.max(np.abs(traj(t) - flow(fld, L1_LYAP, 0.0, t))) < 1e-10


def test_backward_flow_inverts_forward(params):
    fld = crtbp.natural_field(params)
    y1 = flow(fld, L1_LYAP, 0.0, 1.0)   # stays near L1; longer arcs pass close to Earth
    assert np.max(np.abs(flow(fld, y1, 1.0, 0.0) - L1_LYAP)) < 1e-11


def test_event_state_lies_on_plane(params):
    fld = crtbp.natural_field(params)
    plane = Hyperplane(1, 0.05)
    y, t, traj = propagate_to_event(fld, L1_LYAP, plane, direction=0, t_max=5.0, t0=0.0)
    assert abs(plane(y)) <= 1e-12
    assert t > 0 and traj.t1 == pytest.approx(t)


def test_start_on_section_counts_as_crossing(params):
    # y = 0 with ydot > 0: the upward crossing is the initial point itself
    y, t, _ = propagate_to_event(crtbp.natural_field(params), L1_LYAP, Hyperplane(1, 0.0), direction=1, t_max=5.0)
    assert abs(t) < 1e-2
    assert abs(y[1]) <= 1e-12


def test_event_on_python_callable_field():
    # generic path: scipy-backed field with a callable event
    y, t, _ = propagate_to_event(lambda t, y: np.array([y[1], -y[0]]), np.array([1.0, 0.0]),
                                 lambda y: y[0], direction=-1, t_max=4.0)
    assert abs(y[0]) <= 1e-12
    assert t == pytest.approx(np.pi / 2, abs=1e-9)


def test_missing_event_raises(params):
    with pytest.raises(NoEventError):
        propagate_to_event(crtbp.natural_field(params), L1_LYAP, Hyperplane(0, 5.0), t_max=0.5)


def test_fd_jacobian_exact_on_quadratic():
    f = lambda x: np.array([x[0] ** 2 + x[1], 3 * x[0] * x[1]])
    J = fd_jacobian(f, np.array([1.5, -2.0]))
    assert np.allclose(J, [[3.0, 1.0], [-6.0, 4.5]], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.integers(0, 2**31 - 1))
def test_newton_residual_decreases(b, seed):
    rng = np.random.default_rng(seed)
    A = np.eye(3) * 3 + rng.normal(scale=0.3, size=(3, 3))
    f = lambda x: A @ x + 0.2 * np.sin(x) - np.array(b)
    res = newton_solve(f, np.zeros(3), tol=1e-12)
    assert np.max(np.abs(f(res.x))) <= 1e-12
    hist = res.history
    assert all(b_ < a_ for a_, b_ in zip(hist, hist[1:]))


def test_newton_reports_failure():
    with pytest.raises(NonConvergenceError):
        newton_solve(lambda x: np.array([x[0] ** 2 + 1.0]), np.array([0.5]), max_iter=20)


def _cubic_family(lam):
    return lambda x: np.array([x[0] ** 3 + x[0] - (1 + 9 * lam)])


def test_continuation_predictors_agree():
    a = continuation_run(_cubic_family, ContinuationSchedule.uniform(10, predictor="constant"), np.array([0.6823278]))
    b = continuation_run(_cubic_family, ContinuationSchedule.uniform(10, predictor="linear"), np.array([0.6823278]))
    assert abs(a.solution[0] - b.solution[0]) <= 1e-10
    assert a.solution[0] ** 3 + a.solution[0] == pytest.approx(10.0, abs=1e-10)


def test_continuation_halves_failed_steps():
    # the residual is undefined more than 0.3 away from the solution, so half-unit steps must be refined
    def family(lam):
        def r(x):
            if abs(x[0] - lam) > 0.3:
                raise ValueError("outside the domain")
            return np.array([x[0] - lam])
        return r

    out = continuation_run(family, ContinuationSchedule.uniform(2, predictor="constant"), np.array([0.0]))
    assert out.solution[0] == pytest.approx(1.0)
    assert out.refinements >= 1
    assert all(b > a for a, b in zip(out.lambdas, out.lambdas[1:]))


def test_continuation_stall_reports_last_point():
    def family(lam):
        def r(x):
            if lam > 0.3:
                raise ValueError("wall")
            return np.array([x[0] - lam])
        return r

    with pytest.raises(ContinuationStall) as err:
        continuation_run(family, ContinuationSchedule.uniform(10, max_refinements=4), np.array([0.0]))
    assert err.value.last_lambda <= 0.3


@pytest.mark.parametrize("grid", [[0.0, 0.5, 0.5, 1.0], [0.1, 1.0], [0.0, 0.7, 0.6, 1.0]])
def test_schedule_rejects_bad_grids(grid):
    with pytest.raises(ValueError):
        ContinuationSchedule(np.array(grid))


def test_arclength_passes_folds():
    # x^3 - 3x = c(lam) has folds at x = -1 and x = 1; natural continuation from x = -2 stalls at the first
    c = lambda lam: -2.0 + 4.5 * lam
    res = lambda x, lam: np.array([x[0] ** 3 - 3 * x[0] - c(lam)])
    jac = lambda x, lam: (np.array([[3 * x[0] ** 2 - 3]]), np.array([-4.5]))
    with pytest.raises(ContinuationStall):
        continuation_run(lambda lam: (lambda x: res(x, lam)), ContinuationSchedule.uniform(20), np.array([-2.0]))
    out = arclength_run(res, jac, np.array([-2.0]))
    assert abs(res(out.solution, 1.0)[0]) <= 1e-10
    assert out.solution[0] > 1.0
    assert out.turning_points >= 2
