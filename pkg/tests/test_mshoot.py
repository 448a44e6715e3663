import json

import numpy as np
import pytest

from lowthrust import crtbp
from lowthrust.mshoot import (
    MissionStructure,
    MultiShootVector,
    _Shooter,
    assemble_initial_Z,
    evaluate_costs,
    jacobian_condition,
    multishoot_residual,
    optimize_terminal_points,
    solve_mission,
    thrust_continuation,
    transversality_residual,
    turnpike_check,
)
from lowthrust.numerics import ContinuationSchedule

M0 = 1500.0


def _structure(dim, legs):
    return MissionStructure(dim, np.zeros(2 * dim), M0, np.zeros(2 * dim), (1.0,) * legs, (True,) * legs)


@pytest.mark.parametrize("dim,legs,size", [(2, 3, 25), (3, 5, 63)])
def test_layout_sizes(dim, legs, size):
    st = _structure(dim, legs)
    assert st.nodes == legs - 1 and st.size == size
    nodes = [np.concatenate([np.zeros(2 * dim), [M0], np.zeros(2 * dim + 1)]) for _ in range(st.nodes)]
    z = assemble_initial_Z(st, np.arange(2 * dim + 1.0), nodes)
    v = MultiShootVector(st, z)
    assert np.array_equal(v.P0, np.arange(2 * dim + 1.0))
    assert np.all(v.masses() == M0)
    with pytest.raises(IndexError):
        v.X(0)
    with pytest.raises(ValueError):
        assemble_initial_Z(st, np.zeros(2 * dim + 1), nodes[:-1])
    nodes[0][2 * dim] = 0.0
    with pytest.raises(ValueError):
        assemble_initial_Z(st, np.zeros(2 * dim + 1), nodes)


def test_structure_validation():
    with pytest.raises(ValueError):
        MissionStructure(2, np.zeros(4), M0, np.zeros(4), (1.0, -1.0), (True, True))
    with pytest.raises(ValueError):
        MissionStructure(2, np.zeros(4), M0, np.zeros(6), (1.0,), (True,))


def _natural_mission(params, orbit, shift=0.0, legs=3, dt=1.0):
    start = orbit.state_at(0.0)
    target = orbit.state_at(legs * dt + shift)
    st = MissionStructure(2, start, M0, target, (dt,) * legs, (True,) * legs, orbit, orbit, 0.0, legs * dt + shift)
    nodes = [np.concatenate([crtbp.flow_state(params, start, k * dt), [M0], np.zeros(5)]) for k in range(1, legs)]
    return st, assemble_initial_Z(st, np.zeros(5), nodes)


def test_natural_path_has_zero_residual(params, lyap_pair):
    st, z = _natural_mission(params, lyap_pair[0])
    assert np.max(np.abs(multishoot_residual(params, z, st, params.eps))) <= 1e-11


def test_block_jacobian_matches_differences(params, lyap_pair, rng):
    st, z = _natural_mission(params, lyap_pair[0], shift=0.01)
    shooter = _Shooter(params, st, params.eps)
    costate = np.ones(z.size, dtype=bool)
    costate[5:15] = [False] * 5 + [True] * 5
    costate[15:25] = [False] * 5 + [True] * 5
    z = z + np.where(costate, rng.normal(scale=0.05, size=z.size), 0.0)
    J = shooter.jacobian(z)
    F = shooter.fd_jacobian(z, rel_step=1e-7)
    assert np.max(np.abs(J - F)) <= 1e-5 * max(1.0, np.max(np.abs(F)))


@pytest.fixture(scope="module")
def small_mission(params, lyap_pair):
    st, z = _natural_mission(params, lyap_pair[0], shift=0.01)
    return solve_mission(params, z, st, params.eps_for(60.0))


def test_small_mission_solution(small_mission):
    sol = small_mission
    assert sol.residual_norm <= 1e-9
    res = multishoot_residual(sol.params, sol.z, sol.structure, sol.eps)
    assert np.max(np.abs(res[:-5])) <= 1e-9          # interior continuity rows
    assert abs(sol.final_state()[9] / sol.kappa) <= 1e-10
    costs = evaluate_costs(sol)
    assert costs["cost1"] > 0 and costs["cost2"] > 0 and costs["cost3_si"] > 0
    assert costs["fuel_kg"] >= 0
    assert np.isfinite(jacobian_condition(sol))
    for arc in sol.arcs():
        traj = arc.trajectory()
        H = [arc.system.hamiltonian(y) for y in traj.ys]
        assert np.ptp(H) <= 1e-8
        assert np.all(np.diff(traj.ys[:, 4]) <= 0)


def test_thrust_continuation_keeps_solution(small_mission):
    low = thrust_continuation(small_mission, 0.3, ContinuationSchedule.uniform(5))
    assert low.residual_norm <= 1e-9
    assert low.tmax == pytest.approx(0.3)
    # the controlled acceleration, not the thrust, is what the target fixes
    c_hi, c_lo = evaluate_costs(small_mission), evaluate_costs(low)
    assert c_lo["cost3_si"] == pytest.approx(c_hi["cost3_si"], rel=1e-2)


def test_terminal_optimization_lowers_cost(small_mission):
    before = evaluate_costs(small_mission)["cost1"]
    opt = optimize_terminal_points(small_mission)
    after = evaluate_costs(opt)["cost1"]
    assert after <= before
    assert max(abs(r) for r in transversality_residual(opt)) <= 1e-8
    assert opt.residual_norm <= 1e-9


def test_serialization(small_mission, tmp_path):
    small_mission.write_json(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["format_version"] == "1"
    small_mission.write_csv(tmp_path / "m.csv", n_per_leg=10)
    assert len((tmp_path / "m.csv").read_text().splitlines()) > 10
    ok, ratio = turnpike_check(small_mission)
    assert isinstance(ok, bool) and ratio >= 0
