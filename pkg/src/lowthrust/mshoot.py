"""Multiple shooting over a stitched mission, thrust continuation and terminal-phase optimization.

The unknown vector is ``Z = [P0, X1, P1, ..., Xk, Pk]`` where ``X`` blocks are
state plus mass and ``P`` blocks are scaled costate plus mass costate. Every
leg, controlled or not, follows the extremal flow; free legs simply start
from a zero costate.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import crtbp
from .crtbp import SystemParams
from .extremals import CSV_COLUMNS, ExtremalArc, ExtremalSystem
from .numerics import (
    ContinuationSchedule,
    ContinuationStall,
    NonConvergenceError,
    PropagationError,
    arclength_run,
    continuation_run,
    newton_solve,
)
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

MISSION_TOL = 1e-9
TRANSVERSALITY_TOL = 1e-8
FORMAT_VERSION = "1"
_INFEASIBLE = 1e3
# relative cost change treated as solver noise when accepting a phase move
COST_NOISE = 1e-10


class PhaseSearchError(RuntimeError):
    """No sign change of a transversality residual within one period."""


SOLVER_FAILURES = (NonConvergenceError, ContinuationStall, PropagationError)


# ---------------------------------------------------------------- layout

@dataclass(frozen=True)
class MissionStructure:
    """Everything fixed during a mission solve except the thrust level."""

    dim: int
    start: np.ndarray
    start_mass: float
    target: np.ndarray
    durations: tuple[float, ...]
    controlled: tuple[bool, ...]
    orbit1: PeriodicOrbit | None = None
    orbit2: PeriodicOrbit | None = None
    phase0: float | None = None
    phase_f: float | None = None

    def __post_init__(self):
        if len(self.durations) != len(self.controlled):
            raise ValueError("one controlled flag per leg")
        if any(d <= 0 for d in self.durations):
            raise ValueError("leg durations must be positive")
        if self.start.size != 2 * self.dim or self.target.size != 2 * self.dim:
            raise ValueError("endpoint dimension does not match the structure")

    @property
    def nodes(self) -> int:
        return len(self.durations) - 1

    @property
    def total_time(self) -> float:
        return float(sum(self.durations))

    @property
    def block(self) -> int:
        return 2 * self.dim + 1

    @property
    def size(self) -> int:
        return self.block + self.nodes * 2 * self.block

    def leg_starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def with_phases(self, phase0: float | None = None, phase_f: float | None = None) -> "MissionStructure":
        """Structure with endpoints moved along their orbits."""
        s = self
        if phase0 is not None:
            if self.orbit1 is None:
                raise ValueError("no departure orbit attached")
            s = replace(s, start=self.orbit1.state_at(phase0 % self.orbit1.period), phase0=phase0)
        if phase_f is not None:
            if self.orbit2 is None:
                raise ValueError("no arrival orbit attached")
            s = replace(s, target=self.orbit2.state_at(phase_f % self.orbit2.period), phase_f=phase_f)
        return s


class MultiShootVector:
    """Typed view over ``Z``."""

    def __init__(self, structure: MissionStructure, z):
        z = np.asarray(z, dtype=float)
        if z.size != structure.size:
            raise ValueError(f"Z has {z.size} entries, structure needs {structure.size}")
        self.structure = structure
        self.z = z

    @property
    def P0(self) -> np.ndarray:
        return self.z[: self.structure.block]

    def _offset(self, k: int) -> int:
        if not 1 <= k <= self.structure.nodes:
            raise IndexError(f"node {k} outside 1..{self.structure.nodes}")
        return self.structure.block * (2 * k - 1)

    def X(self, k: int) -> np.ndarray:
        o = self._offset(k)
        return self.z[o: o + self.structure.block]

    def P(self, k: int) -> np.ndarray:
        o = self._offset(k) + self.structure.block
        return self.z[o: o + self.structure.block]

    def leg_start(self, i: int) -> np.ndarray:
        """Packed extremal state at the start of leg ``i``."""
        s = self.structure
        if i == 0:
            return np.concatenate([s.start, [s.start_mass], self.P0])
        return np.concatenate([self.X(i), self.P(i)])

    def masses(self) -> np.ndarray:
        return np.array([self.X(k)[-1] for k in range(1, self.structure.nodes + 1)])


def assemble_initial_Z(structure: MissionStructure, p0, nodes: list[np.ndarray]) -> np.ndarray:
    """Stack the first costate and per-node packed extremal states into ``Z``.

    ``p0`` and the costate parts of ``nodes`` are already scaled.
    """
    if len(nodes) != structure.nodes:
        raise ValueError(f"expected {structure.nodes} node states, got {len(nodes)}")
    parts = [np.asarray(p0, dtype=float)]
    for y in nodes:
        y = np.asarray(y, dtype=float)
        if y.size != 2 * structure.block:
            raise ValueError("node state has the wrong dimension")
        if y[structure.block - 1] <= 0:
            raise ValueError("node masses must be positive")
        parts.append(y)
    return np.concatenate(parts)


# ---------------------------------------------------------------- residual

class _Shooter:
    def __init__(self, params: SystemParams, structure: MissionStructure, eps: float):
        self.params = params
        self.st = structure
        self.system = ExtremalSystem.for_engine(params, eps, structure.start_mass, structure.dim)
        n = 2 * structure.dim
        # mass rows are compared relative to the initial mass
        self.scale = np.ones(2 * structure.block)
        self.scale[n] = 1.0 / structure.start_mass

    def leg_output(self, i: int, y0: np.ndarray) -> np.ndarray:
        st = self.st
        n = 2 * st.dim
        try:
            yf = self.system.flow(y0, st.durations[i])
        except PropagationError as exc:
            log.debug("leg %d failed: %s", i, exc)
            size = 2 * st.block if i < st.nodes else n + 1
            return np.full(size, _INFEASIBLE)
        if i < st.nodes:
            return yf * self.scale
        return np.append(yf[:n], yf[2 * n + 1] / self.system.kappa)

    def leg_target(self, i: int, v: MultiShootVector) -> np.ndarray:
        if i < self.st.nodes:
            return v.leg_start(i + 1) * self.scale
        return np.append(self.st.target, 0.0)

    def residual(self, z: np.ndarray) -> np.ndarray:
        v = MultiShootVector(self.st, z)
        return np.concatenate([self.leg_output(i, v.leg_start(i)) - self.leg_target(i, v)
                               for i in range(self.st.nodes + 1)])

    def leg_rows(self, i: int) -> slice:
        b2 = 2 * self.st.block
        return slice(i * b2, i * b2 + (b2 if i < self.st.nodes else 2 * self.st.dim + 1))

    def leg_inputs(self, i: int) -> np.ndarray:
        b = self.st.block
        if i == 0:
            return np.arange(b)
        o = b * (2 * i - 1)
        return np.arange(o, o + 2 * b)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """Block Jacobian from per-leg state-transition matrices of the extremal flow."""
        st = self.st
        n = 2 * st.dim
        J = np.zeros((z.size, z.size))
        v = MultiShootVector(st, z)
        for i in range(st.nodes + 1):
            rows = self.leg_rows(i)
            cols = self.leg_inputs(i)
            y0 = v.leg_start(i)
            _, phi = self.system.flow_stm(y0, st.durations[i])
            phi = phi[:, y0.size - cols.size:]  # leg 0 only sees its costate block
            if i < st.nodes:
                J[rows, cols] = self.scale[:, None] * phi
                J[rows, self.leg_inputs(i + 1)] -= np.diag(self.scale)
            else:
                J[rows, cols] = np.vstack([phi[:n], phi[2 * n + 1] / self.system.kappa])
        return J

    def fd_jacobian(self, z: np.ndarray, rel_step: float = 1e-8) -> np.ndarray:
        """Central-difference counterpart of :meth:`jacobian`, for checks."""
        from .numerics import fd_jacobian
        return fd_jacobian(self.residual, z, rel_step)


def multishoot_residual(params: SystemParams, z, structure: MissionStructure, eps: float) -> np.ndarray:
    return _Shooter(params, structure, eps).residual(np.asarray(z, dtype=float))


# ---------------------------------------------------------------- solutions

@dataclass
class MissionSolution:
    params: SystemParams
    structure: MissionStructure
    z: np.ndarray
    eps: float
    residual_norm: float
    iterations: int
    runtimes: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def kappa(self) -> float:
        return (self.eps / self.structure.start_mass) ** 2

    @property
    def tmax(self) -> float:
        return self.params.tmax_for(self.eps)

    @property
    def system(self) -> ExtremalSystem:
        return ExtremalSystem.for_engine(self.params, self.eps, self.structure.start_mass, self.structure.dim)

    @property
    def vector(self) -> MultiShootVector:
        return MultiShootVector(self.structure, self.z)

    def arcs(self) -> list[ExtremalArc]:
        v = self.vector
        starts = self.structure.leg_starts()
        return [ExtremalArc(self.system, v.leg_start(i), d, float(starts[i]))
                for i, d in enumerate(self.structure.durations)]

    def final_state(self) -> np.ndarray:
        return self.arcs()[-1].final()

    def control_profile(self, n_per_leg: int = 400) -> tuple[np.ndarray, np.ndarray]:
        ts, norms = [], []
        sys_ = self.system
        for arc in self.arcs():
            traj = arc.trajectory()
            for t in np.linspace(0.0, arc.duration, n_per_leg):
                ts.append(arc.t_start + t)
                norms.append(np.linalg.norm(sys_.control(traj(t))))
        return np.array(ts), np.array(norms)

    def rows(self, n_per_leg: int = 400) -> list[list]:
        out = []
        for arc in self.arcs():
            out.extend(arc.rows(n_per_leg))
        return out

    def write_csv(self, path, n_per_leg: int = 400) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# format_version={FORMAT_VERSION}"])
            w.writerow(CSV_COLUMNS)
            for r in self.rows(n_per_leg):
                w.writerow(["" if v == "" else repr(float(v)) for v in r])

    def to_dict(self) -> dict:
        costs = evaluate_costs(self)
        st = self.structure
        out = {
            "format_version": FORMAT_VERSION,
            "Z_scaled_nd": self.z.tolist(),
            "costate_scale_nd": self.kappa,
            "durations_nd": list(st.durations),
            "controlled": list(st.controlled),
            "total_time_nd": st.total_time,
            "phase0_nd": st.phase0,
            "phase_f_nd": st.phase_f,
            "eps_nd": self.eps,
            "tmax_N": self.tmax,
            "residual_norm_nd": self.residual_norm,
            "iterations_count": self.iterations,
            "runtimes_s": self.runtimes,
            "cost1_nd": costs["cost1"],
            "cost2_nd": costs["cost2"],
            "cost3_s": costs["cost3_si"],
            "fuel_kg": costs["fuel_kg"],
            "final_mass_kg": costs["final_mass_kg"],
        }
        if st.orbit1 is not None and st.orbit2 is not None:
            r0, rf = transversality_residual(self)
            out["transversality"] = {"r0_nd": r0, "rf_nd": rf}
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def solve_mission(params: SystemParams, z0, structure: MissionStructure, eps: float,
                  tol: float = MISSION_TOL, max_iter: int = 30, homotopy: bool = True) -> MissionSolution:
    """Newton on the multiple-shooting residual.

    If plain Newton fails from ``z0``, the residual is deformed as
    ``R(Z) - (1 - lam) R(z0)`` (solved by ``z0`` at ``lam = 0``) and the zero
    curve is followed by pseudo-arclength continuation to ``lam = 1``. The
    curve may fold back in ``lam``, which is why a plain parameter sweep is
    not enough. ``homotopy=False`` disables the fallback.
    """
    t = time.perf_counter()
    shooter = _Shooter(params, structure, eps)
    z0 = np.asarray(z0, dtype=float)
    method = "newton"
    try:
        res = newton_solve(shooter.residual, z0, tol=tol, max_iter=max_iter, jacobian=shooter.jacobian)
        x, iters = res.x, res.iterations
    except NonConvergenceError as exc:
        if not homotopy:
            _report_failure(shooter, exc.best)
            raise
        log.info("plain Newton failed (%s); following the residual homotopy by arclength", exc)
        method = "arclength-homotopy"
        r0 = shooter.residual(z0)
        try:
            out = arclength_run(lambda z, lam: shooter.residual(z) - (1.0 - lam) * r0,
                                lambda z, lam: (shooter.jacobian(z), r0), z0, ds=0.02, ds_max=0.2,
                                tol=tol, max_steps=1000, scale=np.maximum(1.0, np.abs(z0)))
        except (ContinuationStall, NonConvergenceError) as stall:
            last = getattr(stall, "last_solution", None)
            last = getattr(stall, "best", None) if last is None else last
            _report_failure(shooter, last)
            raise NonConvergenceError(f"mission homotopy failed: {stall}", last,
                                      float(np.max(np.abs(shooter.residual(last)))), 0) from stall
        x, iters = out.solution, out.newton_iterations
    r = shooter.residual(x)
    sol = MissionSolution(params, structure, x, eps, float(np.max(np.abs(r))), iters,
                          {"solve": time.perf_counter() - t}, [{"stage": "solve", "method": method}])
    masses = sol.vector.masses()
    if np.any(masses <= 0):
        raise NonConvergenceError("mission solution has a non-positive mass", x, sol.residual_norm, iters)
    return sol


def _report_failure(shooter: _Shooter, z: np.ndarray) -> None:
    r = shooter.residual(z)
    if np.all(np.isfinite(r)):
        worst = np.argsort(-np.abs(r))[:5]
        log.error("mission solve failed; worst rows %s = %s", worst.tolist(), r[worst].tolist())


def thrust_continuation(sol: MissionSolution, tmax_to: float, schedule: ContinuationSchedule | None = None,
                        tol: float = MISSION_TOL, on_step: Callable | None = None) -> MissionSolution:
    """Follow the mission from its current engine to ``tmax_to`` newtons, eps linear in lambda.

    Scaled costates move little while the control stays unsaturated, which
    is why the unknowns are not rescaled between steps.
    """
    params, st = sol.params, sol.structure
    eps0, eps1 = sol.eps, params.eps_for(tmax_to)
    if math.isclose(eps0, eps1, rel_tol=1e-14):
        return sol
    t = time.perf_counter()
    schedule = schedule or ContinuationSchedule.uniform(20)
    shooters: dict[float, _Shooter] = {}

    def shooter(lam):
        if lam not in shooters:
            shooters[lam] = _Shooter(params, st, (1 - lam) * eps0 + lam * eps1)
        return shooters[lam]

    out = continuation_run(lambda lam: shooter(lam).residual, schedule, sol.z, tol=tol,
                           jacobian_family=lambda lam: shooter(lam).jacobian, on_step=on_step)
    final = _Shooter(params, st, eps1)
    res = final.residual(out.solution)
    return MissionSolution(params, st, out.solution, eps1, float(np.max(np.abs(res))), out.newton_iterations,
                           {**sol.runtimes, "thrust_continuation": time.perf_counter() - t},
                           sol.history + [{"stage": "thrust", "steps": out.steps,
                                           "refinements": out.refinements}])


# ---------------------------------------------------------------- costs and checks

def transversality_residual(sol: MissionSolution) -> tuple[float, float]:
    """Inner products of the terminal costates with the natural field at the endpoints."""
    st = sol.structure
    n = 2 * st.dim
    kappa = sol.kappa
    p0 = sol.z[:n] / kappa
    yf = sol.final_state()
    pf = yf[n + 1: 2 * n + 1] / kappa
    f0 = crtbp.vector_field(sol.params, st.start)
    ff = crtbp.vector_field(sol.params, yf[:n])
    return float(p0 @ f0), float(pf @ ff)


def evaluate_costs(sol: MissionSolution) -> dict:
    """L2 costs in three scalings, fuel, and the final mass.

    ``cost3`` integrates (Tmax/m)^2 |u|^2 over SI seconds.
    """
    q1 = q2 = 0.0
    yf = None
    for arc in sol.arcs():
        yf, a, b = arc.quadratures()
        q1 += a
        q2 += b
    m_final = float(yf[2 * sol.structure.dim])
    return {
        "cost1": q1,
        "cost2": sol.eps ** 2 * q2,
        "cost3_si": sol.tmax ** 2 * q2 * sol.params.time_unit,
        "fuel_kg": sol.structure.start_mass - m_final,
        "final_mass_kg": m_final,
    }


def turnpike_check(sol: MissionSolution, fraction: float = 0.6, ratio: float = 0.01) -> tuple[bool, float]:
    """Largest |u| over the middle ``fraction`` of the horizon relative to the global maximum."""
    ts, norms = sol.control_profile()
    T = sol.structure.total_time
    lo, hi = 0.5 * (1 - fraction) * T, 0.5 * (1 + fraction) * T
    peak = float(np.max(norms))
    if peak == 0.0:
        return True, 0.0
    mid = float(np.max(norms[(ts >= lo) & (ts <= hi)]))
    return mid / peak <= ratio, mid / peak


def jacobian_condition(sol: MissionSolution) -> float:
    J = _Shooter(sol.params, sol.structure, sol.eps).jacobian(sol.z)
    return float(np.linalg.cond(J))


# ---------------------------------------------------------------- terminal optimization

def _resolve(sol: MissionSolution, structure: MissionStructure, z0, tol: float,
             homotopy: bool = True) -> MissionSolution:
    new = solve_mission(sol.params, z0, structure, sol.eps, tol=tol, homotopy=homotopy)
    new.runtimes = dict(sol.runtimes)
    new.history = list(sol.history)
    return new


def _sweep(sol: MissionSolution, end: str, tol: float, phase_tol: float, step_fraction: float) -> MissionSolution:
    st = sol.structure
    orbit = st.orbit2 if end == "final" else st.orbit1
    phase = st.phase_f if end == "final" else st.phase0
    idx = 1 if end == "final" else 0
    cache: dict[float, MissionSolution] = {}
    last = [sol]

    def at(theta: float) -> MissionSolution:
        if theta not in cache:
            s2 = st.with_phases(phase_f=theta) if end == "final" else st.with_phases(phase0=theta)
            cache[theta] = _resolve(sol, s2, last[0].z, tol)
            last[0] = cache[theta]
        return cache[theta]

    def g(theta: float) -> float:
        return transversality_residual(at(theta))[idx]

    r = transversality_residual(sol)[idx]
    cache[phase] = sol
    if abs(r) <= TRANSVERSALITY_TOL * 1e-2:
        return sol
    # dJ/dphase = r_f at the arrival end and -r_0 at the departure end
    slope = r if end == "final" else -r
    direction = -math.copysign(1.0, slope)
    h = orbit.period * step_fraction
    cost = evaluate_costs(sol)["cost1"]
    a, ga = phase, r
    for k in range(1, int(round(1.0 / step_fraction)) + 1):
        b = phase + direction * k * h
        gb = g(b)
        if ga * gb <= 0:
            root = brentq(g, min(a, b), max(a, b), xtol=phase_tol, rtol=4 * np.finfo(float).eps)
            best = at(root)
            new_cost = evaluate_costs(best)["cost1"]
            if new_cost > cost * (1 + COST_NOISE):
                log.warning("%s phase root raised cost1 (%.6e -> %.6e); move rejected", end, cost, new_cost)
                return sol
            log.info("%s phase moved %.12f -> %.12f, cost1 %.6e -> %.6e", end, phase, root, cost, new_cost)
            return best
        probe_cost = evaluate_costs(cache[b])["cost1"]
        if probe_cost > cost * (1 + COST_NOISE):
            log.warning("%s phase probe raised cost1 without a sign change; stopping", end)
            return sol
        a, ga = b, gb
    raise PhaseSearchError(f"no sign change of the {end} transversality residual within one period "
                           f"(local minimum; last residual {ga:.3e})")


def _joint(sol: MissionSolution, tol: float, mission_tol: float, max_iter: int = 40,
           radius: float = 5.0, max_radius: float = 80.0, fd_step: float = 0.01,
           halvings: int = 8) -> MissionSolution:
    """Minimize cost1 over both phases with a saddle-free Newton method.

    Unknowns are phase offsets in thousandths of each period. The gradient is
    (-r0, rf) scaled to those units; the Hessian comes from forward
    differences of it. Steps use the absolute eigenvalues of the Hessian so
    they always point downhill, even where the cost surface is a saddle. The
    trust radius grows after full steps and shrinks on rejection; a step is
    accepted only if cost1 decreases.
    """
    st = sol.structure
    p0, pf = st.phase0, st.phase_f
    h = np.array([st.orbit1.period, st.orbit2.period]) * 1e-3

    def at(x, warm: MissionSolution) -> MissionSolution:
        s2 = st.with_phases(phase0=p0 + h[0] * x[0], phase_f=pf + h[1] * x[1])
        return _resolve(sol, s2, warm.z, mission_tol, homotopy=False)

    def grad(s: MissionSolution) -> tuple[np.ndarray, np.ndarray]:
        r0, rf = transversality_residual(s)
        return np.array([r0, rf]), np.array([-r0, rf]) * h

    x = np.zeros(2)
    cur = sol
    r, g = grad(cur)
    cost = evaluate_costs(cur)["cost1"]
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            break
        H = np.empty((2, 2))
        try:
            for j in range(2):
                e = np.zeros(2)
                e[j] = fd_step
                H[:, j] = (grad(at(x + e, cur))[1] - g) / fd_step
        except SOLVER_FAILURES as exc:
            log.warning("joint phase Hessian unavailable (%s)", exc)
            break
        lam, vec = np.linalg.eigh(0.5 * (H + H.T))
        floor = 1e-8 * max(float(np.max(np.abs(lam))), 1e-300)
        dx = -vec @ ((vec.T @ g) / np.maximum(np.abs(lam), floor))
        step = float(np.linalg.norm(dx))
        if step > radius:
            dx *= radius / step
        halved = False
        for _ in range(halvings + 1):
            try:
                trial = at(x + dx, cur)
            except SOLVER_FAILURES:
                dx *= 0.5
                halved = True
                continue
            c_t = evaluate_costs(trial)["cost1"]
            if c_t <= cost * (1 + COST_NOISE):
                break
            dx *= 0.5
            halved = True
        else:
            log.warning("joint phase step rejected after %d halvings", halvings)
            break
        radius = max(0.5 * radius, 1e-3) if halved else min(2.0 * radius, max_radius)
        x, cur = x + dx, trial
        r, g = grad(cur)
        log.info("joint step %d: phases (%.12f, %.12f) r=(%.3e, %.3e) cost1 %.9e -> %.9e", it + 1,
                 cur.structure.phase0, cur.structure.phase_f, r[0], r[1], cost, c_t)
        cost = c_t
    return cur


def optimize_terminal_points(sol: MissionSolution, tol: float = TRANSVERSALITY_TOL, max_rounds: int = 8,
                             mission_tol: float = MISSION_TOL, phase_tol: float = 1e-10,
                             step_fraction: float = 1.0 / 200.0, stall_ratio: float = 0.5) -> MissionSolution:
    """Drive both transversality residuals below ``tol``.

    Rounds alternate one-dimensional sweeps over the final and initial phase.
    When a round fails to shrink the largest residual by ``stall_ratio`` the
    cost valley is curved against the coordinate axes, and the remaining
    rounds move both phases at once.
    """
    st = sol.structure
    if st.orbit1 is None or st.orbit2 is None or st.phase0 is None or st.phase_f is None:
        raise ValueError("terminal optimization needs both orbits and phases on the structure")
    t = time.perf_counter()
    rounds = 0
    joint = False
    previous = np.inf
    for rounds in range(1, max_rounds + 1):
        r0, rf = transversality_residual(sol)
        worst = max(abs(r0), abs(rf))
        log.info("round %d: r0=%.3e rf=%.3e", rounds, r0, rf)
        if worst <= tol:
            rounds -= 1
            break
        joint = joint or worst > stall_ratio * previous
        previous = worst
        if joint:
            new = _joint(sol, tol, mission_tol)
            if new is sol:
                break
            sol = new
            continue
        sol = _sweep(sol, "final", mission_tol, phase_tol, step_fraction)
        sol = _sweep(sol, "initial", mission_tol, phase_tol, step_fraction)
    sol.runtimes = {**sol.runtimes, "terminal_optimization": time.perf_counter() - t}
    sol.history = sol.history + [{"stage": "terminal", "rounds": rounds,
                                  "transversality": list(transversality_residual(sol))}]
    return sol


__all__ = [
    "MISSION_TOL", "MissionSolution", "MissionStructure", "MultiShootVector", "PhaseSearchError",
    "assemble_initial_Z", "evaluate_costs", "jacobian_condition", "multishoot_residual",
    "optimize_terminal_points", "solve_mission", "thrust_continuation", "transversality_residual",
    "turnpike_check",
]
