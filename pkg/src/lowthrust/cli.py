"""Scenario-driven command line front end.

Every command reads a scenario (a path, or the name of a bundled one), runs
its stage, and writes artifacts to the output directory: CSV samples, a
JSON summary whose numbers carry unit suffixes (``_nd`` for normalized
quantities, SI or day/km suffixes otherwise, ``_count`` for counts), and a
``<stage>.meta.json`` record with tolerances, schedules, iteration counts and
wall time. Summaries hold no timings, so identical inputs give identical
bytes.

Exit status: 0 on success, 1 when a solver fails (its report is printed and
saved as ``failure.json``), 2 for configuration errors and missing
prerequisite artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, crtbp
from .connections import BridgePair, HeteroclinicOrbit, NoCandidatesError, NoConnectionError, find_heteroclinic
from .connections import bridge_manifolds
from .crtbp import SystemParams
from .extremals import write_rows_csv
from .manifolds import NotHyperbolicError, globalize, section_cut, write_fibers_csv
from .missions import (
    STAGES,
    HaloMission,
    MissionRun,
    halo_orbit,
    halo_pieces,
    lyapunov_orbits,
    lyapunov_pieces,
    run_halo_mission,
    run_lyapunov_mission,
    stitch,
)
from .mshoot import FORMAT_VERSION, PhaseSearchError, evaluate_costs, transversality_residual, turnpike_check
from .numerics import ContinuationSchedule, ContinuationStall, NoEventError, NonConvergenceError, PropagationError
from .orbits import CorrectionError, PeriodicOrbit, richardson_guess, correct_orbit, sweep_family
from .scenario import OUTPUT_ENV, Scenario, ScenarioError, bundled, bundled_names, load

log = logging.getLogger("lowthrust")

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2
SOLVER_ERRORS = (NonConvergenceError, ContinuationStall, CorrectionError, PropagationError, NoEventError,
                 NoConnectionError, NoCandidatesError, NotHyperbolicError, PhaseSearchError,
                 crtbp.SingularityError)


class MissingArtifact(RuntimeError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"{path} not found; run the '{stage}' command first with the same scenario and --out")


# ---------------------------------------------------------------- output helpers

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


class Stage:
    """Output directory, scenario and bookkeeping for one command."""

    def __init__(self, scenario: Scenario, name: str, quiet: bool):
        self.scenario = scenario
        self.name = name
        self.quiet = quiet
        self.out = scenario.output_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.perf_counter()
        self.meta: dict = {"iterations_count": {}, "schedules": {}, "wall_time_s": {}}

    @property
    def digest(self) -> str:
        text = json.dumps(_clean(self.scenario.values), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def path(self, name: str) -> Path:
        return self.out / name

    def write(self, name: str, data: dict) -> None:
        dump_json(self.path(name), {"scenario_digest": self.digest, "kind": self.scenario.kind, **data})
        self.echo(f"wrote {self.path(name)}")

    def echo(self, text: str) -> None:
        if not self.quiet:
            print(text)

    def require(self, name: str, stage: str) -> dict:
        path = self.path(name)
        if not path.exists():
            raise MissingArtifact(path, stage)
        data = json.loads(path.read_text())
        if data.get("scenario_digest") != self.digest:
            raise ScenarioError(f"{path} was produced from a different scenario; rerun the '{stage}' command")
        return data

    def finish(self) -> None:
        cfg = self.scenario.mission
        tolerances = {k: getattr(cfg, k) for k in ("heteroclinic_tol", "transfer_tol", "mission_tol",
                                                     "transversality_tol") if hasattr(cfg, k)}
        self.meta["wall_time_s"]["total"] = time.perf_counter() - self.started
        dump_json(self.path(f"{self.name}.meta.json"), {
            "stage": self.name, "version": __version__, "scenario": self.scenario.source,
            "scenario_digest": self.digest, "scenario_values": self.scenario.tagged_values(),
            "tolerances_nd": tolerances, **self.meta})


# ---------------------------------------------------------------- summaries

def orbit_summary(params: SystemParams, o: PeriodicOrbit) -> dict:
    return {
        "center": f"L{o.center}",
        "family": "halo" if o.spatial else "lyapunov",
        "initial_state_nd": o.initial_state,
        "period_nd": o.period,
        "period_days": crtbp.to_days(params, o.period),
        "energy_nd": o.energy,
        "closure_error_nd": o.closure_error(),
        "z_excursion_km": o.z_excursion() * params.l_star / 1e3,
        "orbit": o.to_dict(),
    }


def heteroclinic_summary(params: SystemParams, h: HeteroclinicOrbit) -> dict:
    return {
        "total_time_nd": h.total_time,
        "total_time_days": crtbp.to_days(params, h.total_time),
        "t_unstable_nd": h.t_unstable,
        "t_stable_nd": h.t_stable,
        "junction_mismatch_nd": h.junction_mismatch,
        "windings_turns": h.windings(),
        "revolutions_count": h.revolutions(),
        "phase1_nd": h.phase1,
        "phase2_nd": h.phase2,
        "alpha_nd": h.alpha,
        "heteroclinic": h.to_dict(),
    }


def bridge_summary(pair: BridgePair, seed1, seed2) -> dict:
    return {
        "gap_nd": pair.gap,
        "time_1_nd": pair.time_1,
        "time_2_nd": pair.time_2,
        "manifold_time_sum_nd": pair.time_1 - pair.time_2,
        "point_1_nd": pair.point_1,
        "point_2_nd": pair.point_2,
        "index_1_count": pair.index_1,
        "index_2_count": pair.index_2,
        "seed_1_nd": np.asarray(seed1),
        "seed_2_nd": np.asarray(seed2),
    }


def solution_summary(sol) -> dict:
    costs = evaluate_costs(sol)
    out = {
        "tmax_N": sol.tmax,
        "total_time_nd": sol.structure.total_time,
        "total_time_days": crtbp.to_days(sol.params, sol.structure.total_time),
        "legs_count": len(sol.structure.durations),
        "residual_norm_nd": sol.residual_norm,
        "cost1_nd": costs["cost1"],
        "cost2_nd": costs["cost2"],
        "cost3_s": costs["cost3_si"],
        "fuel_kg": costs["fuel_kg"],
        "final_mass_kg": costs["final_mass_kg"],
        "final_mass_costate_nd": sol.final_state()[-1] / sol.kappa,
    }
    st = sol.structure
    if st.orbit1 is not None and st.phase0 is not None:
        r0, rf = transversality_residual(sol)
        ok, ratio = turnpike_check(sol)
        out.update({"transversality_r0_nd": r0, "transversality_rf_nd": rf,
                    "phase0_nd": st.phase0, "phase_f_nd": st.phase_f,
                    "turnpike_ratio_nd": ratio, "turnpike_ok": ok})
    return out


# ---------------------------------------------------------------- shared stage bodies

def _orbits(stage: Stage) -> tuple[PeriodicOrbit, PeriodicOrbit]:
    sc = stage.scenario
    if sc.is_halo:
        cfg = sc.mission
        return (halo_orbit(sc.system, 1, cfg.z0_km_1, cfg.energy_1),
                halo_orbit(sc.system, 2, cfg.z0_km_2, cfg.energy_2))
    return lyapunov_orbits(sc.system, sc.mission)


def _write_orbits(stage: Stage, o1: PeriodicOrbit, o2: PeriodicOrbit) -> None:
    p = stage.scenario.system
    for k, o in ((1, o1), (2, o2)):
        o.write_csv(stage.path(f"orbit_{k}.csv"))
    stage.write("orbits.json", {"orbit_1": orbit_summary(p, o1), "orbit_2": orbit_summary(p, o2)})


def _load_orbits(stage: Stage) -> tuple[PeriodicOrbit, PeriodicOrbit]:
    data = stage.require("orbits.json", "orbit")
    return (PeriodicOrbit.from_dict(data["orbit_1"]["orbit"]), PeriodicOrbit.from_dict(data["orbit_2"]["orbit"]))


def _write_connection(stage: Stage, run: MissionRun) -> None:
    if run.heteroclinic is not None:
        run.heteroclinic.write_csv(stage.path("heteroclinic.csv"))
        stage.write("heteroclinic.json", heteroclinic_summary(stage.scenario.system, run.heteroclinic))
    else:
        f1, f2 = run.fibers
        for name, f in (("bridge_unstable.csv", f1), ("bridge_stable.csv", f2)):
            write_fibers_csv(stage.path(name), [f], samples=2000)
        stage.write("bridge.json", bridge_summary(run.bridge, f1.seed, f2.seed))


def _write_transfers(stage: Stage, run: MissionRun) -> None:
    legs = []
    for k, lt in enumerate(run.stitched.transfers):
        write_rows_csv(stage.path(f"transfer_{k + 1}.csv"), lt.arc.rows(400))
        yf = lt.arc.final()
        legs.append({"cost_nd": lt.cost, "duration_nd": lt.anchors.duration, "iterations_count": lt.iterations,
                     "steps_count": lt.steps, "final_mass_kg": lt.final_mass, "residual_nd": lt.residual,
                     "final_mass_costate_nd": yf[-1] / lt.arc.system.kappa})
        stage.meta["wall_time_s"][f"transfer_{k + 1}"] = lt.runtime
        stage.meta["iterations_count"][f"transfer_{k + 1}"] = lt.iterations
    st = run.stitched.structure
    stage.meta["schedules"]["local"] = f"uniform({stage.scenario.mission.local_steps})"
    stage.write("transfers.json", {"legs": legs, "tmax_N": stage.scenario.mission.tmax_start,
                                   "total_time_nd": st.total_time, "legs_count": len(st.durations),
                                   "initial_guess_nd": run.stitched.z0})


def _write_solution(stage: Stage, name: str, sol) -> None:
    sol.write_csv(stage.path(f"mission_{name}.csv"))
    stage.meta["iterations_count"][f"mission_{name}"] = sol.iterations
    stage.write(f"mission_{name}.json", {**solution_summary(sol), "solution": {
        "format_version": FORMAT_VERSION, "Z_scaled_nd": sol.z, "durations_nd": list(sol.structure.durations),
        "controlled": list(sol.structure.controlled), "costate_scale_nd": sol.kappa}})


# ---------------------------------------------------------------- commands

def cmd_lagrange(stage: Stage, args) -> None:
    p = stage.scenario.system
    points = []
    for i, pt in enumerate(crtbp.lagrange_points(p.mu, spatial=True), 1):
        points.append({"name": f"L{i}", "position_nd": pt[:3], "energy_nd": crtbp.energy(p, pt),
                       "field_residual_nd": float(np.linalg.norm(crtbp.vector_field(p, pt)))})
    stage.write("lagrange.json", {"mu_nd": p.mu, "points": points})
    for q in points:
        stage.echo(f"{q['name']}: x={q['position_nd'][0]:+.12f} y={q['position_nd'][1]:+.12f} "
                   f"residual={q['field_residual_nd']:.2e}")


def cmd_orbit(stage: Stage, args) -> None:
    o1, o2 = _orbits(stage)
    _write_orbits(stage, o1, o2)
    for k, o in ((1, o1), (2, o2)):
        stage.echo(f"orbit {k}: L{o.center} period={o.period:.10f} energy={o.energy:.10f}")


def cmd_family(stage: Stage, args) -> None:
    sc = stage.scenario
    p = sc.system
    o1, o2 = _orbits(stage)
    members = {}
    for k, target in ((1, o1), (2, o2)):
        if target.spatial:
            z_end = target.initial_state[2]
            seed_az = math.copysign(min(abs(z_end), 2000e3 / p.l_star), z_end)
            guess, period = richardson_guess(p, target.center, seed_az, spatial=True)
            seed = correct_orbit(p, guess, period, target.center, fixed="z0")
            values = np.linspace(seed.initial_state[2], z_end, args.members)
            fam = sweep_family(p, seed, values, by="z0")
        else:
            guess, period = richardson_guess(p, target.center, 0.005)
            seed = correct_orbit(p, guess, period, target.center, fixed="x0")
            values = np.linspace(seed.energy, target.energy, args.members)
            fam = sweep_family(p, seed, values, by="energy")
        members[f"family_{k}"] = [{"initial_state_nd": o.initial_state, "period_nd": o.period,
                                   "energy_nd": o.energy, "closure_error_nd": o.closure_error()} for o in fam]
        with open(stage.path(f"family_{k}.csv"), "w") as fh:
            labels = ["x", "y", "z", "vx", "vy", "vz"] if target.spatial else ["x", "y", "vx", "vy"]
            fh.write(",".join(["member", "period", "energy", *labels]) + "\n")
            for i, o in enumerate(fam):
                fh.write(",".join([str(i), repr(o.period), repr(o.energy), *map(repr, o.initial_state.tolist())])
                         + "\n")
        stage.echo(f"family {k}: {len(fam)} members, energy {fam[0].energy:.8f} .. {fam[-1].energy:.8f}")
    stage.write("family.json", members)


def cmd_manifold(stage: Stage, args) -> None:
    sc = stage.scenario
    cfg = sc.mission
    o1, o2 = _load_orbits(stage)
    n = cfg.n_points if sc.is_halo else cfg.n_grid
    out = {}
    for name, orbit, stab, branch, k in (("unstable", o1, "unstable", cfg.branches[0], cfg.crossings[0]),
                                         ("stable", o2, "stable", cfg.branches[1], cfg.crossings[1])):
        fibers = globalize(sc.system, orbit, n, stab, branch, cfg.alpha, cfg.horizon, "U2", k, dense=True)
        write_fibers_csv(stage.path(f"manifold_{name}.csv"), fibers, samples=args.samples)
        cut = section_cut(fibers, "U2", mu=sc.system.mu)
        out[name] = {"fibers_count": len(fibers), "failed_count": sum(not f.ok for f in fibers),
                     "section_crossings_count": len(cut),
                     "section_states_nd": [s for _, s in cut]}
        stage.echo(f"{name} manifold: {len(fibers)} fibers, {len(cut)} reach the section")
    stage.write("manifold.json", out)


def cmd_heteroclinic(stage: Stage, args) -> None:
    sc = stage.scenario
    cfg = sc.mission
    o1, o2 = _load_orbits(stage)
    run = MissionRun("halo" if sc.is_halo else "lyapunov", o1, o2)
    t = time.perf_counter()
    if sc.is_halo:
        run.bridge, f1, f2 = bridge_manifolds(sc.system, o1, o2, cfg.alpha, cfg.n_points, crossings=cfg.crossings,
                                              branches=cfg.branches, horizon=cfg.horizon)
        run.fibers = (f1, f2)
        stage.echo(f"bridge gap={run.bridge.gap:.6e} times {run.bridge.time_1:.6f} / {run.bridge.time_2:.6f}")
    else:
        run.heteroclinic = find_heteroclinic(sc.system, o1, o2, cfg.alpha, cfg.n_grid, crossings=cfg.crossings,
                                             branches=cfg.branches, horizon=cfg.horizon, tol=cfg.heteroclinic_tol)
        h = run.heteroclinic
        stage.meta["iterations_count"]["phase_newton"] = h.iterations
        stage.echo(f"heteroclinic total_time={h.total_time:.10f} mismatch={h.junction_mismatch:.2e} "
                   f"windings={h.windings():.2f}")
    stage.meta["wall_time_s"]["heteroclinic"] = time.perf_counter() - t
    _write_connection(stage, run)


def cmd_transfer(stage: Stage, args) -> None:
    sc = stage.scenario
    cfg, p = sc.mission, sc.system
    o1, o2 = _load_orbits(stage)
    run = MissionRun("halo" if sc.is_halo else "lyapunov", o1, o2)
    if sc.is_halo:
        data = stage.require("bridge.json", "heteroclinic")
        pair = BridgePair(np.array(data["point_1_nd"]), np.array(data["point_2_nd"]), data["gap_nd"],
                          data["index_1_count"], data["index_2_count"], data["time_1_nd"], data["time_2_nd"])
        pieces = halo_pieces(p, cfg, o1, o2, pair, np.array(data["seed_1_nd"]), np.array(data["seed_2_nd"]))
    else:
        data = stage.require("heteroclinic.json", "heteroclinic")
        het = HeteroclinicOrbit.from_dict(p, data["heteroclinic"])
        pieces = lyapunov_pieces(p, cfg, o1, o2, het)
    run.stitched = stitch(p, pieces, cfg.m0, p.eps_for(cfg.tmax_start), o1, o2,
                          ContinuationSchedule.uniform(cfg.local_steps), cfg.free_costate, tol=cfg.transfer_tol)
    _write_transfers(stage, run)
    for k, lt in enumerate(run.stitched.transfers, 1):
        stage.echo(f"leg {k}: cost={lt.cost:.6e} iterations={lt.iterations} final_mass={lt.final_mass:.6f} kg")


def cmd_mission(stage: Stage, args) -> None:
    sc = stage.scenario
    runner = run_halo_mission if sc.is_halo else run_lyapunov_mission

    def on_stage(name: str, run: MissionRun) -> None:
        stage.meta["wall_time_s"][name] = run.timings[name]
        if name == "orbits":
            _write_orbits(stage, run.orbit1, run.orbit2)
        elif name == "heteroclinic":
            _write_connection(stage, run)
        elif name == "transfer":
            _write_transfers(stage, run)
        elif name == "solve":
            _write_solution(stage, "fixed", run.fixed)
        elif name == "continuation":
            _write_solution(stage, "continued", run.continued)
        elif name == "optimize":
            _write_solution(stage, "optimized", run.optimized)

    cfg = sc.mission
    stage.meta["schedules"].update({"thrust": f"uniform({cfg.thrust_steps}) {cfg.tmax_start} N -> {cfg.tmax_target} N",
                                    "local": f"uniform({cfg.local_steps})"})
    run = runner(sc.system, cfg, stop_after=args.stage, on_stage=on_stage)
    summary = {"stages_completed": [s for s in STAGES if s in run.timings]}
    if run.heteroclinic is not None:
        summary["heteroclinic_total_time_nd"] = run.heteroclinic.total_time
    if run.bridge is not None:
        summary["bridge_gap_nd"] = run.bridge.gap
    for name in ("fixed", "continued", "optimized"):
        sol = getattr(run, name)
        if sol is not None:
            summary[name] = solution_summary(sol)
    stage.write("summary.json", summary)
    final = run.optimized or run.continued or run.fixed
    if final is not None:
        s = summary["optimized" if run.optimized else "continued" if run.continued else "fixed"]
        stage.echo(f"t_tot={s['total_time_nd']:.10f} fuel={s['fuel_kg']:.6e} kg cost1={s['cost1_nd']:.6e} "
                   f"cost3={s['cost3_s']:.6e} s")


COMMANDS = {
    "lagrange": (cmd_lagrange, "the five Lagrange points and their field residuals"),
    "orbit": (cmd_orbit, "the departure and arrival periodic orbits"),
    "family": (cmd_family, "family members from a small seed orbit to each mission orbit"),
    "manifold": (cmd_manifold, "globalized unstable/stable manifolds (needs 'orbit')"),
    "heteroclinic": (cmd_heteroclinic, "natural connection or Halo bridge (needs 'orbit')"),
    "transfer": (cmd_transfer, "local controlled legs and the stitched guess (needs 'heteroclinic')"),
    "mission": (cmd_mission, "the whole pipeline; --stage stops after a stage"),
}


def _parse_overrides(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ScenarioError(f"--tol-override expects NAME=VALUE, got {item!r}")
        name, value = item.split("=", 1)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ScenarioError(f"--tol-override {name}: {value!r} is not a number") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowthrust", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help=f"scenario file, or a bundled name ({', '.join(bundled_names())})")
    common.add_argument("--out", help=f"output directory (default: scenario output.dir, ${OUTPUT_ENV}, ./out)")
    common.add_argument("--tol-override", action="append", metavar="NAME=VALUE",
                        help="override a solver tolerance (transfer_tol, mission_tol, transversality_tol, "
                             "heteroclinic_tol); repeatable")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "mission":
            p.add_argument("--stage", choices=STAGES, help="stop after this stage")
        if name == "family":
            p.add_argument("--members", type=int, default=10, help="members per family (default 10)")
        if name == "manifold":
            p.add_argument("--samples", type=int, default=200, help="CSV samples per fiber (default 200)")
    sub.add_parser("scenarios", help="list the bundled scenarios")
    return parser


def _resolve_scenario(ref: str, out: str | None) -> Scenario:
    path = Path(ref)
    if not path.exists() and ref in bundled_names():
        path = bundled(ref)
    return load(path, out)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "scenarios":
        for name in bundled_names():
            print(f"{name}\t{bundled(name)}")
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)
    if args.quiet:
        warnings.simplefilter("ignore")
    stage = None
    try:
        scenario = _resolve_scenario(args.scenario, args.out).with_tolerances(_parse_overrides(args.tol_override))
        if args.command == "family" and args.members < 2:
            raise ScenarioError("--members must be at least 2")
        stage = Stage(scenario, args.command, args.quiet)
        COMMANDS[args.command][0](stage, args)
        stage.finish()
        return EXIT_OK
    except (ScenarioError, MissingArtifact) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        report = {"stage": args.command, "error": type(exc).__name__, "message": str(exc)}
        for attr, tag in (("residual_norm", "_nd"), ("iterations", "_count"), ("last_lambda", "_nd")):
            if hasattr(exc, attr):
                report[attr + tag] = getattr(exc, attr)
        print(f"solver failure in '{args.command}': {type(exc).__name__}: {exc}", file=sys.stderr)
        if stage is not None:
            dump_json(stage.path("failure.json"), report)
            stage.finish()
        return EXIT_SOLVER
    except ValueError as exc:
        # invalid inputs discovered while running (e.g. legs longer than the connection)
        print(f"configuration error in '{args.command}': {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
