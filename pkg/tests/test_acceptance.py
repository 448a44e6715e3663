"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary).

Reference values are published numbers for the Earth-Moon system. Every
check runs at its stated tolerance; a failing sub-check fails the criterion.
"""

import time

import numpy as np
import pytest

from conftest import E_MISSION1, record
from lowthrust import crtbp, missions
from lowthrust.connections import find_heteroclinic
from lowthrust.extremals import control_law, extremal_field, hamiltonian
from lowthrust.manifolds import monodromy
from lowthrust.mshoot import evaluate_costs, transversality_residual, turnpike_check
from lowthrust.numerics import propagate
from lowthrust.orbits import sweep_family
from test_crtbp import _min_distance, _random_states
from test_extremals import _H_derivatives, _random_extremal

pytestmark = pytest.mark.slow

T_HET_1 = 8.9613933501964
T_HET_2 = 11.699681461946
T_TOT_1 = 10.96139
HALO_GAP = 0.098644604436
HALO_T_TOT = 9.5436454462828
HALO_FUEL = 7.41587259099992
HALO_COST3 = 0.00461912647735513


class Checks:
    """Named sub-checks folded into one verdict."""

    def __init__(self):
        self.items: list[tuple[str, bool]] = []

    def add(self, text: str, ok) -> None:
        self.items.append((text, bool(ok)))

    @property
    def ok(self) -> bool:
        return all(ok for _, ok in self.items)

    def detail(self) -> str:
        return "; ".join(f"{text} [{'ok' if ok else 'FAIL'}]" for text, ok in self.items)

    def finish(self, criterion: str) -> None:
        record(criterion, self.ok, self.detail())
        assert self.ok, self.detail()


def _heteroclinic(params, cfg):
    t = time.perf_counter()
    o1, o2 = missions.lyapunov_orbits(params, cfg)
    het = find_heteroclinic(params, o1, o2, cfg.alpha, cfg.n_grid, crossings=cfg.crossings, branches=cfg.branches,
                            horizon=cfg.horizon, tol=cfg.heteroclinic_tol)
    return het, time.perf_counter() - t


def test_criterion_1_heteroclinic_mission1(params):
    het, runtime = _heteroclinic(params, missions.LyapunovMission())
    c = Checks()
    c.add(f"total time {het.total_time:.10f} vs {T_HET_1} (|diff| {abs(het.total_time - T_HET_1):.3e} <= 0.05)",
          abs(het.total_time - T_HET_1) <= 0.05)
    c.add(f"runtime {runtime:.1f} s <= 30 s", runtime <= 30.0)
    c.finish("1 heteroclinic, mission 1")


def test_criterion_2_heteroclinic_mission2(params):
    cfg = missions.LyapunovMission(crossings=(2, 2), extra_nodes=5, energy=-1.5890)
    het, _ = _heteroclinic(params, cfg)
    c = Checks()
    c.add(f"total time {het.total_time:.10f} vs {T_HET_2} (|diff| {abs(het.total_time - T_HET_2):.3e} <= 0.05)",
          abs(het.total_time - T_HET_2) <= 0.05)
    c.add(f"windings about the Moon {het.windings():.3f} -> {het.revolutions()} == 2", het.revolutions() == 2)
    c.finish("2 heteroclinic, mission 2")


def test_criterion_3_local_transfers(mission1):
    c = Checks()
    legs = mission1.stitched.transfers
    tol = missions.LyapunovMission().transfer_tol
    c.add(f"{len(legs)} local legs at {mission1.fixed.tmax:.1f} N", len(legs) == 2 and
          abs(mission1.fixed.tmax - 60.0) < 1e-9)
    for k, lt in enumerate(legs, 1):
        c.add(f"leg {k} residual {lt.residual:.2e} <= {tol:.0e}", lt.residual <= tol)
        c.add(f"leg {k} cost {lt.cost:.6e} in (0, 1e-8]", 0.0 < lt.cost <= 1e-8)
    runtime = mission1.timings["transfer"]
    c.add(f"runtime {runtime:.1f} s <= 60 s", runtime <= 60.0)
    c.finish("3 local transfers")


def test_criterion_4_mission1(mission1):
    cfg = missions.LyapunovMission()
    fixed, cont, opt = mission1.fixed, mission1.continued, mission1.optimized
    c = Checks()
    c.add(f"60 N solve residual {fixed.residual_norm:.2e} <= {cfg.mission_tol:.0e}",
          fixed.residual_norm <= cfg.mission_tol and abs(fixed.tmax - 60.0) < 1e-9)
    c.add(f"continued to {cont.tmax:.3g} N, residual {cont.residual_norm:.2e}",
          abs(cont.tmax - 0.3) < 1e-12 and cont.residual_norm <= cfg.mission_tol)
    r0, rf = transversality_residual(opt)
    c.add(f"transversality ({r0:.2e}, {rf:.2e}) within 1e-7", max(abs(r0), abs(rf)) <= 1e-7)
    before, after = evaluate_costs(cont)["cost1"], evaluate_costs(opt)["cost1"]
    c.add(f"cost1 {before:.6e} -> {after:.6e} ({before / after:.1f}x >= 10x)", before >= 10.0 * after)
    fuel = evaluate_costs(opt)["fuel_kg"]
    c.add(f"fuel {fuel:.6e} kg <= 0.01 kg", fuel <= 0.01)
    t_tot = opt.structure.total_time
    c.add(f"total time {t_tot:.8f} vs {T_TOT_1}", abs(t_tot - T_TOT_1) <= 5e-6)
    runtime = sum(mission1.timings.values())
    c.add(f"runtime {runtime:.0f} s <= 600 s", runtime <= 600.0)
    c.finish("4 mission 1 end to end")


def test_criterion_5_mission2(mission2):
    cfg = missions.LyapunovMission(crossings=(2, 2), extra_nodes=5, energy=-1.5890)
    cont, opt = mission2.continued, mission2.optimized
    c = Checks()
    c.add(f"{len(opt.structure.durations)} legs, residual {opt.residual_norm:.2e} <= {cfg.mission_tol:.0e}",
          opt.residual_norm <= cfg.mission_tol and abs(opt.tmax - 0.3) < 1e-12)
    fuel = evaluate_costs(opt)["fuel_kg"]
    c.add(f"fuel {fuel:.6e} kg <= 0.01 kg", fuel <= 0.01)
    before, after = evaluate_costs(cont)["cost1"], evaluate_costs(opt)["cost1"]
    c.add(f"cost1 {before:.6e} -> {after:.6e} decreases", after < before)
    c.finish("5 mission 2")


def test_criterion_6_halo(halo_mission):
    opt = halo_mission.optimized
    costs = evaluate_costs(opt)
    c = Checks()
    gap = halo_mission.bridge.gap
    c.add(f"bridge gap {gap:.9f} vs {HALO_GAP} (|diff| {abs(gap - HALO_GAP):.2e} <= 1e-3)",
          abs(gap - HALO_GAP) <= 1e-3)
    t_tot = opt.structure.total_time
    c.add(f"total time {t_tot:.10f} vs {HALO_T_TOT}", abs(t_tot - HALO_T_TOT) <= 1e-9)
    fuel_rel = abs(costs["fuel_kg"] - HALO_FUEL) / HALO_FUEL
    c.add(f"fuel {costs['fuel_kg']:.5f} kg vs {HALO_FUEL:.5f} kg ({100 * fuel_rel:.1f}% <= 25%)", fuel_rel <= 0.25)
    cost3_rel = abs(costs["cost3_si"] - HALO_COST3) / HALO_COST3
    c.add(f"cost3 {costs['cost3_si']:.6e} s vs {HALO_COST3:.6e} s ({100 * cost3_rel:.1f}% <= 25%)",
          cost3_rel <= 0.25)
    runtime = sum(halo_mission.timings.values())
    c.add(f"runtime {runtime:.0f} s <= 900 s", runtime <= 900.0)
    c.finish("6 halo mission")


def _hamiltonian_drift(sol) -> float:
    """Worst change of the Hamiltonian (true costate units) along any leg."""
    sys_ = sol.system
    worst = 0.0
    for arc in sol.arcs():
        H = np.array([sys_.hamiltonian(y) for y in arc.trajectory().ys])
        worst = max(worst, float(np.max(np.abs(H - H[0]))))
    return worst


def test_criterion_7_properties(params, rng, lyap_pair, halo_pair, mission1, mission2, halo_mission):
    c = Checks()

    fld = crtbp.natural_field(params)
    drift, done = 0.0, 0
    while done < 100:
        s = _random_states(params, rng, 1)[0]
        traj = propagate(fld, s, (0.0, 10.0), dense=False)
        if _min_distance(params, traj.ys) < 1e-4:
            continue
        e = np.array([crtbp.energy(params, y) for y in traj.ys])
        drift = max(drift, float(np.max(np.abs(e - e[0]))))
        done += 1
    c.add(f"energy drift {drift:.1e} <= 1e-10", drift <= 1e-10)

    det_err = recip_err = 0.0
    for orbit in (*lyap_pair, *halo_pair):
        M = monodromy(params, orbit)
        vals = M.eigenvalues
        real = vals[np.abs(vals.imag) < 1e-9].real
        det_err = max(det_err, abs(M.determinant - 1.0))
        recip_err = max(recip_err, abs(real.max() * real[np.argmin(np.abs(real))] - 1.0))
    c.add(f"monodromy |det - 1| {det_err:.1e}, |l1 l2 - 1| {recip_err:.1e} <= 1e-6",
          det_err <= 1e-6 and recip_err <= 1e-6)

    closure = 0.0
    for orbit in lyap_pair:
        for m in sweep_family(params, orbit, [E_MISSION1 + 0.001, -1.5890, -1.5875]):
            closure = max(closure, m.closure_error())
    for orbit in halo_pair:
        z = orbit.initial_state[2]
        for m in sweep_family(params, orbit, [0.9 * z, 1.1 * z], by="z0"):
            closure = max(closure, m.closure_error())
    c.add(f"family closure {closure:.1e} <= 1e-9", closure <= 1e-9)

    solved = [s for run in (mission1, mission2, halo_mission) for s in (run.fixed, run.continued, run.optimized)]
    h_drift = max(_hamiltonian_drift(s) for s in solved)
    c.add(f"Hamiltonian drift {h_drift:.1e} <= 1e-8 on {len(solved)} mission solutions", h_drift <= 1e-8)

    eps = params.eps
    fd_err, checked = 0.0, 0
    while checked < 100:
        e = _random_extremal(rng, params, spatial=bool(checked % 2))
        psi = (eps / e.m * np.linalg.norm(e.p[e.dim:]) - params.beta_star * eps * e.p_m) / 2
        if abs(psi - 1.0) < 1e-4 or abs(psi) < 1e-4:
            continue
        f = extremal_field(params, e, eps)
        dx, dp, dm, dpm = _H_derivatives(params, e, eps)
        for got, want in ((f.x, dp), (-f.p, dx), (f.m, dpm), (-f.p_m, dm)):
            err = float(np.max(np.abs(np.asarray(got) - want)))
            fd_err = max(fd_err, err / max(1.0, float(np.max(np.abs(want)))))
        checked += 1
    c.add(f"costate field vs FD of H {fd_err:.1e} <= 1e-6 at 100 points", fd_err <= 1e-6)

    worst_gain = -np.inf
    for _ in range(100):
        e = _random_extremal(rng, params, spatial=bool(rng.integers(2)))
        u_star, _ = control_law(e, eps, params.beta_star)
        h_star = hamiltonian(params, e, eps, u_star)
        d = e.dim
        dirs = rng.normal(size=(200, d))
        radii = rng.uniform(0, 1, size=200) ** (1 / d)
        for u in dirs / np.linalg.norm(dirs, axis=1)[:, None] * radii[:, None]:
            worst_gain = max(worst_gain, hamiltonian(params, e, eps, u) - h_star)
    c.add(f"maximization: best random control gains {worst_gain:.1e} <= 1e-12", worst_gain <= 1e-12)

    pm = [abs(lt.arc.final()[-1] / lt.arc.system.kappa)
          for run in (mission1, mission2, halo_mission) for lt in run.stitched.transfers]
    pm += [abs(s.final_state()[-1] / s.kappa) for s in solved]
    c.add(f"|p_m(tf)| {max(pm):.1e} <= 1e-10 on {len(pm)} solved transfers", max(pm) <= 1e-10)

    for name, run in (("mission 1", mission1), ("mission 2", mission2)):
        ok, ratio = turnpike_check(run.optimized)
        c.add(f"turnpike {name} mid/peak {ratio:.2e}", ok)
    c.finish("7 property suite")
