import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lowthrust import crtbp
from lowthrust.crtbp import SystemParams
from lowthrust.numerics import flow, propagate


def test_default_mass_ratio(params):
    assert params.mu == pytest.approx(0.0121562, abs=5e-8)


def test_unit_consistency(params):
    # tabulated v* agrees with 2 pi l*/t* to the printed precision
    assert params.velocity_unit == pytest.approx(params.v_star, rel=2e-3)
    assert params.time_unit == pytest.approx(params.t_star / (2 * math.pi))


def test_mass_flow_normalization(params):
    # dm/dt (kg per normalized time) = -beta (t*/2pi) Tmax |u|
    assert params.beta_star * params.eps == pytest.approx(params.beta * params.time_unit * params.tmax, rel=1e-14)
    assert params.eps_for(params.tmax_for(0.123)) == pytest.approx(0.123)


@pytest.mark.parametrize("bad", [dict(mu=0.0), dict(mu=1.2), dict(isp=-1.0), dict(l_star=0.0)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        SystemParams(**bad)


@pytest.mark.parametrize("spatial", [False, True])
def test_lagrange_points_are_equilibria(params, spatial):
    pts = crtbp.lagrange_points(params.mu, spatial)
    assert len(pts) == 5
    for p in pts:
        assert np.max(np.abs(crtbp.vector_field(params, p))) <= 1e-12
    x1, x2, x3 = (p[0] for p in pts[:3])
    assert -params.mu < x1 < 1 - params.mu < x2 and x3 < -params.mu


def test_singularity_guard(params):
    with pytest.raises(crtbp.SingularityError):
        crtbp.vector_field(params, [1 - params.mu, 0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        crtbp.energy(params, np.zeros(5))


def _random_states(params, rng, n, spatial=False):
    e_l2 = crtbp.energy(params, crtbp.lagrange_point(params.mu, 2))
    out = []
    while len(out) < n:
        d = 3 if spatial else 2
        pos = np.zeros(d)
        pos[:2] = rng.uniform([0.75, -0.15], [1.15, 0.15])
        if d == 3:
            pos[2] = rng.uniform(-0.05, 0.05)
        r1 = np.linalg.norm(pos - np.r_[-params.mu, np.zeros(d - 1)])
        r2 = np.linalg.norm(pos - np.r_[1 - params.mu, np.zeros(d - 1)])
        if min(r1, r2) < 0.03:
            continue
        target = e_l2 + rng.uniform(0.0, 0.05)
        ke = target - crtbp.potential(params.mu, pos)
        if ke <= 0:
            continue
        v = rng.normal(size=d)
        out.append(np.concatenate([pos, math.sqrt(2 * ke) * v / np.linalg.norm(v)]))
    return out


def _min_distance(params, ys):
    d = np.array([min(np.linalg.norm(y[:2] - c) for c in ((-params.mu, 0.0), (1 - params.mu, 0.0))) for y in ys])
    return float(d.min())


def test_energy_conserved_over_ten_time_units(params, rng):
    # near-collisions (closer than 1e-4 to a primary) need regularization and are redrawn
    fld = crtbp.natural_field(params)
    worst, done, redrawn = 0.0, 0, 0
    while done < 100:
        s = _random_states(params, rng, 1)[0]
        traj = propagate(fld, s, (0.0, 10.0), dense=False)
        if _min_distance(params, traj.ys) < 1e-4:
            redrawn += 1
            continue
        e = np.array([crtbp.energy(params, y) for y in traj.ys])
        worst = max(worst, float(np.max(np.abs(e - e[0]))))
        done += 1
    assert redrawn < 20
    assert worst <= 1e-10


def test_energy_conserved_spatial(params, rng):
    fld = crtbp.natural_field(params)
    for s in _random_states(params, rng, 10, spatial=True):
        y = flow(fld, s, 0.0, 3.0)
        assert abs(crtbp.energy(params, y) - crtbp.energy(params, s)) <= 1e-10


def test_time_reversal_symmetry(params):
    s = np.array([0.84, 0.0, 0.0, 0.11])
    fld = crtbp.natural_field(params)
    for t in (0.4, 1.3, 2.2):
        fwd = flow(fld, s, 0.0, t)
        bwd = flow(fld, s, 0.0, -t)
        assert np.max(np.abs(bwd - fwd * np.array([1, -1, -1, 1]))) < 1e-11


@settings(max_examples=30, deadline=None)
@given(st.floats(0.7, 1.2), st.floats(-0.3, 0.3), st.floats(-0.1, 0.1),
       st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_jacobian_and_energy_gradient_match_differences(x, y, z, vx, vy, vz):
    params = crtbp.EARTH_MOON
    s = np.array([x, y, z, vx, vy, vz])
    if min(crtbp.distances(params.mu, s)) < 0.05:
        return
    J = crtbp.jacobian(params, s)
    g = crtbp.energy_gradient(params.mu, s)
    h = 1e-6
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        col = (crtbp.vector_field(params, s + e) - crtbp.vector_field(params, s - e)) / (2 * h)
        assert np.allclose(J[:, i], col, atol=1e-6)
        assert g[i] == pytest.approx((crtbp.energy(params, s + e) - crtbp.energy(params, s - e)) / (2 * h),
                                     abs=1e-6)


def test_stm_matches_finite_differences(params):
    s = np.array([0.84, 0.01, 0.0, 0.11])
    _, phi = crtbp.flow_stm(params, s, 1.5)
    h = 1e-7
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        col = (crtbp.flow_state(params, s + e, 1.5) - crtbp.flow_state(params, s - e, 1.5)) / (2 * h)
        assert np.allclose(phi[:, i], col, atol=1e-5)


def test_physical_round_trip(params):
    s = np.array([0.8, 0.1, 0.02, -0.1, 0.2, 0.01])
    phys, t = crtbp.to_physical(params, s, 1.0)
    back, tb = crtbp.from_physical(params, phys, t)
    assert np.allclose(back, s, rtol=1e-15) and tb == pytest.approx(1.0)
    assert crtbp.to_days(params, 2 * math.pi) == pytest.approx(params.t_star / 86400)
