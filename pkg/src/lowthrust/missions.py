"""End-to-end mission pipelines: orbits, natural connection, local transfers, stitching and refinement."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import crtbp
from .connections import BridgePair, HeteroclinicOrbit, bridge_manifolds, find_heteroclinic
from .crtbp import SystemParams
from .extremals import Anchors, ExtremalSystem, LocalTransfer, build_anchor_points, free_anchor_points, solve_local_transfer
from .manifolds import DEFAULT_ALPHA, ManifoldFiber
from .mshoot import (
    MissionSolution,
    MissionStructure,
    MISSION_TOL,
    TRANSVERSALITY_TOL,
    assemble_initial_Z,
    optimize_terminal_points,
    solve_mission,
    thrust_continuation,
)
from .numerics import ContinuationSchedule
from .orbits import PeriodicOrbit, halo_at_excursion, orbit_at_energy

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- stitching

@dataclass
class Piece:
    """One stretch of the initial trajectory.

    A controlled piece carries the anchors of a local transfer; a free piece
    starts at ``start`` and may be split by ``inserted`` equally spaced nodes
    whose states come from ``path`` (time since the piece start).
    """

    duration: float
    anchors: Anchors | None = None
    start: np.ndarray | None = None
    path: Callable[[float], np.ndarray] | None = None
    inserted: int = 0

    @property
    def controlled(self) -> bool:
        return self.anchors is not None


@dataclass
class Stitched:
    structure: MissionStructure
    z0: np.ndarray
    transfers: list[LocalTransfer]


def stitch(params: SystemParams, pieces: list[Piece], m0: float, eps: float,
           orbit1: PeriodicOrbit | None = None, orbit2: PeriodicOrbit | None = None,
           schedule: ContinuationSchedule | None = None, free_costate: str = "zero",
           tol: float = 1e-10) -> Stitched:
    """Solve the local transfers in order (carrying mass) and assemble the shooting vector.

    Free-piece nodes start either from zero (``zero``, the natural flow) or
    from the costate reached at the end of the preceding leg (``carry``).
    Carried costates grow along the unstable directions of a long free arc,
    so the stitched guess is usually far worse, hence the default.
    """
    if free_costate not in ("carry", "zero"):
        raise ValueError("free_costate must be 'carry' or 'zero'")
    if not pieces or not pieces[0].controlled or not pieces[-1].controlled:
        raise ValueError("a mission must start and end with a controlled piece")
    dim = pieces[0].anchors.start.size // 2
    n = 2 * dim
    system = ExtremalSystem.for_engine(params, eps, m0, dim)
    mass = m0
    durations, controlled, nodes, transfers = [], [], [], []
    p0 = None
    carried = np.zeros(n + 1)
    for k, piece in enumerate(pieces):
        if piece.controlled:
            lt = solve_local_transfer(params, piece.anchors, mass, eps, schedule, tol=tol)
            transfers.append(lt)
            p, pm = lt.costate
            block = np.append(system.kappa * p, system.kappa * pm)
            if k == 0:
                p0 = block
            else:
                nodes.append(np.concatenate([piece.anchors.start, [mass], block]))
            durations.append(piece.anchors.duration)
            controlled.append(True)
            yf = lt.arc.final()
            mass = lt.final_mass
            carried = yf[n + 1:] / lt.arc.system.kappa * system.kappa
            continue
        costate = carried if free_costate == "carry" else np.zeros(n + 1)
        y = np.concatenate([piece.start, [mass], costate])
        nodes.append(y)
        dt = piece.duration / (piece.inserted + 1)
        path = piece.path or (lambda t, s=piece.start: crtbp.flow_state(params, s, t))
        for j in range(1, piece.inserted + 1):
            if free_costate == "carry":
                costate = system.flow(np.concatenate([path((j - 1) * dt), [mass], costate]), dt)[n + 1:]
            nodes.append(np.concatenate([path(j * dt), [mass], costate]))
        durations.extend([dt] * (piece.inserted + 1))
        controlled.extend([False] * (piece.inserted + 1))
    first, last = pieces[0].anchors, pieces[-1].anchors
    st = MissionStructure(dim, first.start.copy(), m0, last.end.copy(), tuple(durations), tuple(controlled),
                          orbit1, orbit2, first.start_phase, last.end_phase)
    return Stitched(st, assemble_initial_Z(st, p0, nodes), transfers)


# ---------------------------------------------------------------- results

@dataclass
class MissionRun:
    kind: str
    orbit1: PeriodicOrbit | None = None
    orbit2: PeriodicOrbit | None = None
    heteroclinic: HeteroclinicOrbit | None = None
    bridge: BridgePair | None = None
    fibers: tuple[ManifoldFiber, ManifoldFiber] | None = None
    stitched: Stitched | None = None
    fixed: MissionSolution | None = None          # at the starting thrust
    continued: MissionSolution | None = None      # at the target thrust, fixed endpoints
    optimized: MissionSolution | None = None
    timings: dict = field(default_factory=dict)


STAGES = ("orbits", "heteroclinic", "transfer", "solve", "continuation", "optimize")

StageHook = Callable[[str, "MissionRun"], None]


def _done(run: MissionRun, stage: str, started: float, on_stage: StageHook | None, stop_after: str | None) -> bool:
    """Record the stage time, notify, and report whether the pipeline should stop here."""
    run.timings[stage] = time.perf_counter() - started
    if on_stage is not None:
        on_stage(stage, run)
    return stop_after == stage


def _refine(run: MissionRun, params: SystemParams, cfg, optimize: bool, on_stage: StageHook | None,
            stop_after: str | None) -> MissionRun:
    st = run.stitched
    eps = params.eps_for(cfg.tmax_start)
    t = time.perf_counter()
    run.fixed = solve_mission(params, st.z0, st.structure, eps, tol=cfg.mission_tol)
    if _done(run, "solve", t, on_stage, stop_after):
        return run
    t = time.perf_counter()
    run.continued = thrust_continuation(run.fixed, cfg.tmax_target, ContinuationSchedule.uniform(cfg.thrust_steps),
                                        tol=cfg.mission_tol)
    if _done(run, "continuation", t, on_stage, stop_after) or not optimize:
        return run
    t = time.perf_counter()
    run.optimized = optimize_terminal_points(run.continued, tol=cfg.transversality_tol, mission_tol=cfg.mission_tol)
    _done(run, "optimize", t, on_stage, stop_after)
    return run


def _check_stage(stop_after: str | None) -> None:
    if stop_after is not None and stop_after not in STAGES:
        raise ValueError(f"unknown stage {stop_after!r}; expected one of {STAGES}")


# ---------------------------------------------------------------- Lyapunov to Lyapunov

@dataclass
class LyapunovMission:
    energy: float = -1.592081
    alpha: float = DEFAULT_ALPHA
    crossings: tuple[int, int] = (2, 2)
    branches: tuple[int, int] = (1, -1)
    n_grid: int = 100
    horizon: float = 20.0
    t_orbit: float = 1.0        # time along each orbit inside the local legs
    t_free: float = 2.0         # time along the connection inside the local legs
    extra_nodes: int = 0
    free_costate: str = "zero"       # carried costates grow along the unstable free arc
    m0: float = 1500.0
    tmax_start: float = 60.0
    tmax_target: float = 0.3
    thrust_steps: int = 20
    local_steps: int = 20
    heteroclinic_tol: float = 1e-10
    transfer_tol: float = 1e-10
    mission_tol: float = MISSION_TOL
    transversality_tol: float = TRANSVERSALITY_TOL


def lyapunov_orbits(params: SystemParams, cfg: LyapunovMission) -> tuple[PeriodicOrbit, PeriodicOrbit]:
    return orbit_at_energy(params, 1, cfg.energy), orbit_at_energy(params, 2, cfg.energy)


def lyapunov_pieces(params: SystemParams, cfg: LyapunovMission, o1: PeriodicOrbit, o2: PeriodicOrbit,
                    het: HeteroclinicOrbit) -> list[Piece]:
    a1 = build_anchor_points(params, o1, het.seed1, cfg.t_orbit, cfg.t_free, departure=True)
    a2 = build_anchor_points(params, o2, het.seed2, cfg.t_orbit, cfg.t_free, departure=False)
    free = het.total_time - 2 * cfg.t_free
    if free <= 0:
        raise ValueError("connection is shorter than the two local legs")
    return [Piece(a1.duration, anchors=a1),
            Piece(free, start=a1.end, path=lambda t: het.state_at(cfg.t_free + t), inserted=cfg.extra_nodes),
            Piece(a2.duration, anchors=a2)]


def run_lyapunov_mission(params: SystemParams, cfg: LyapunovMission, optimize: bool = True,
                         stop_after: str | None = None, on_stage: StageHook | None = None) -> MissionRun:
    """Full pipeline; ``stop_after`` names a stage of ``STAGES`` after which it ends.

    ``on_stage(name, run)`` is called as each stage completes.
    """
    _check_stage(stop_after)
    run = MissionRun("lyapunov")
    t = time.perf_counter()
    run.orbit1, run.orbit2 = lyapunov_orbits(params, cfg)
    if _done(run, "orbits", t, on_stage, stop_after):
        return run
    t = time.perf_counter()
    run.heteroclinic = find_heteroclinic(params, run.orbit1, run.orbit2, cfg.alpha, cfg.n_grid,
                                         crossings=cfg.crossings, branches=cfg.branches, horizon=cfg.horizon,
                                         tol=cfg.heteroclinic_tol)
    if _done(run, "heteroclinic", t, on_stage, stop_after):
        return run
    t = time.perf_counter()
    pieces = lyapunov_pieces(params, cfg, run.orbit1, run.orbit2, run.heteroclinic)
    run.stitched = stitch(params, pieces, cfg.m0, params.eps_for(cfg.tmax_start), run.orbit1, run.orbit2,
                          ContinuationSchedule.uniform(cfg.local_steps), cfg.free_costate,
                          tol=cfg.transfer_tol)
    if _done(run, "transfer", t, on_stage, stop_after):
        return run
    return _refine(run, params, cfg, optimize, on_stage, stop_after)


# ---------------------------------------------------------------- Halo to Halo

@dataclass
class HaloMission:
    z0_km_1: float = 16000.0      # signed initial z of each Halo (sign selects the class)
    z0_km_2: float = 16000.0
    energy_1: float | None = None  # if set, overrides the excursion
    energy_2: float | None = None
    alpha: float = DEFAULT_ALPHA
    n_points: int = 1000
    crossings: tuple[int, int] = (1, 1)
    branches: tuple[int, int] = (1, -1)
    horizon: float = 12.0
    t_orbit: float = 1.0
    t_free: float = 1.0
    t_bridge: float = 0.5          # each side of the section inside the bridging leg
    extra_nodes: tuple[int, int] = (2, 3)   # inserted nodes on the two free legs
    free_costate: str = "zero"
    m0: float = 1500.0
    tmax_start: float = 180.0
    tmax_target: float = 0.3
    thrust_steps: int = 20
    local_steps: int = 20
    transfer_tol: float = 1e-10
    mission_tol: float = MISSION_TOL
    transversality_tol: float = TRANSVERSALITY_TOL


def halo_orbit(params: SystemParams, center: int, z0_km: float, energy: float | None) -> PeriodicOrbit:
    if energy is not None:
        return orbit_at_energy(params, center, energy, spatial=True,
                               seed_amplitude=np.copysign(16000e3, z0_km) / params.l_star)
    return halo_at_excursion(params, center, z0_km * 1e3 / params.l_star)


def halo_pieces(params: SystemParams, cfg: HaloMission, h1: PeriodicOrbit, h2: PeriodicOrbit,
                pair: BridgePair, seed1: np.ndarray, seed2: np.ndarray) -> list[Piece]:
    t_m1, t_m2 = pair.time_1, -pair.time_2
    a0 = build_anchor_points(params, h1, seed1, cfg.t_orbit, cfg.t_free, departure=True)
    a2 = free_anchor_points(params, pair.point_1, pair.point_2, cfg.t_bridge, cfg.t_bridge)
    a4 = build_anchor_points(params, h2, seed2, cfg.t_orbit, cfg.t_free, departure=False)
    free1 = t_m1 - cfg.t_free - cfg.t_bridge
    free2 = t_m2 - cfg.t_free - cfg.t_bridge
    if free1 <= 0 or free2 <= 0:
        raise ValueError("manifold legs are shorter than the local legs")
    return [Piece(a0.duration, anchors=a0),
            Piece(free1, start=a0.end, inserted=cfg.extra_nodes[0]),
            Piece(a2.duration, anchors=a2),
            Piece(free2, start=a2.end, inserted=cfg.extra_nodes[1]),
            Piece(a4.duration, anchors=a4)]


def run_halo_mission(params: SystemParams, cfg: HaloMission, optimize: bool = True,
                     stop_after: str | None = None, on_stage: StageHook | None = None) -> MissionRun:
    """Halo pipeline; the heteroclinic stage is the closest-pair bridge. See :func:`run_lyapunov_mission`."""
    _check_stage(stop_after)
    run = MissionRun("halo")
    t = time.perf_counter()
    run.orbit1 = halo_orbit(params, 1, cfg.z0_km_1, cfg.energy_1)
    run.orbit2 = halo_orbit(params, 2, cfg.z0_km_2, cfg.energy_2)
    if _done(run, "orbits", t, on_stage, stop_after):
        return run
    t = time.perf_counter()
    run.bridge, f1, f2 = bridge_manifolds(params, run.orbit1, run.orbit2, cfg.alpha, cfg.n_points,
                                          crossings=cfg.crossings, branches=cfg.branches, horizon=cfg.horizon)
    run.fibers = (f1, f2)
    if _done(run, "heteroclinic", t, on_stage, stop_after):
        return run
    t = time.perf_counter()
    pieces = halo_pieces(params, cfg, run.orbit1, run.orbit2, run.bridge, f1.seed, f2.seed)
    run.stitched = stitch(params, pieces, cfg.m0, params.eps_for(cfg.tmax_start), run.orbit1, run.orbit2,
                          ContinuationSchedule.uniform(cfg.local_steps), cfg.free_costate,
                          tol=cfg.transfer_tol)
    if _done(run, "transfer", t, on_stage, stop_after):
        return run
    return _refine(run, params, cfg, optimize, on_stage, stop_after)


__all__ = ["STAGES", "HaloMission", "LyapunovMission", "MissionRun", "Piece", "Stitched", "halo_orbit",
           "lyapunov_orbits", "run_halo_mission", "run_lyapunov_mission", "stitch"]
