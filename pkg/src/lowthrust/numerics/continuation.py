"""Predictor-corrector continuation over a parameter in [0, 1]."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .newton import NewtonResult, NonConvergenceError, Residual, newton_solve

log = logging.getLogger(__name__)


class ContinuationStall(RuntimeError):
    """Step refinement exhausted; ``last_lambda`` was the last solved value."""

    def __init__(self, last_lambda: float, last_solution: np.ndarray, reason: str = ""):
        super().__init__(f"continuation stalled after lambda={last_lambda:.6g} {reason}".rstrip())
        self.last_lambda = last_lambda
        self.last_solution = last_solution


@dataclass
class ContinuationSchedule:
    grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1.0, 51))
    max_refinements: int = 12
    predictor: Literal["constant", "linear"] = "linear"
    min_step: float = 1e-4

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid[0] != 0.0 or self.grid[-1] != 1.0:
            raise ValueError("grid must start at 0 and end at 1")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    @classmethod
    def uniform(cls, steps: int = 50, **kw) -> "ContinuationSchedule":
        return cls(np.linspace(0.0, 1.0, steps + 1), **kw)


@dataclass
class ContinuationResult:
    solution: np.ndarray
    lambdas: list[float]
    solutions: list[np.ndarray]
    newton_iterations: int
    refinements: int

    @property
    def steps(self) -> int:
        """Number of solved continuation steps after the starting point."""
        return len(self.lambdas) - 1


def continuation_run(family: Callable[[float], Residual], schedule: ContinuationSchedule,
                     x_at_0, tol: float = 1e-10, max_iter: int = 30,
                     jacobian_family: Callable[[float], Callable] | None = None,
                     on_step: Callable[[float, NewtonResult], None] | None = None) -> ContinuationResult:
    """Follow the zero of ``family(lam)`` from ``lam = 0`` to ``lam = 1``.

    Failed steps are halved (at most ``max_refinements`` times in a row and
    never below ``min_step``); after a success the walk resumes toward the
    next grid point.
    """
    x = np.array(x_at_0, dtype=float)
    lambdas = [0.0]
    solutions = [x.copy()]
    total_iters = 0
    refinements = 0
    lam = 0.0
    grid = schedule.grid
    gi = 1
    h = grid[1] - grid[0]
    consecutive = 0
    while lam < 1.0:
        while gi < len(grid) and grid[gi] <= lam + 1e-14:
            gi += 1
        target = min(lam + h, grid[gi]) if gi < len(grid) else 1.0
        if 1.0 - target < 1e-12:
            target = 1.0
        step = target - lam
        if schedule.predictor == "linear" and len(lambdas) >= 2:
            dl = lambdas[-1] - lambdas[-2]
            guess = x + (x - solutions[-2]) * (step / dl)
        else:
            guess = x
        jac = jacobian_family(target) if jacobian_family is not None else None
        try:
            res = newton_solve(family(target), guess, tol=tol, max_iter=max_iter, jacobian=jac)
        except NonConvergenceError as exc:
            consecutive += 1
            refinements += 1
            h = step / 2.0
            log.debug("continuation step to %.6g failed (%s); halving", target, exc)
            if consecutive > schedule.max_refinements or h < schedule.min_step:
                raise ContinuationStall(lam, x, f"({exc})") from exc
            continue
        consecutive = 0
        total_iters += res.iterations
        lam = target
        x = res.x
        lambdas.append(lam)
        solutions.append(x.copy())
        if on_step is not None:
            on_step(lam, res)
        # widen back toward the schedule spacing after a refined step
        if gi < len(grid):
            h = max(h * 2.0, 0.0) if step < grid[gi] - grid[gi - 1] - 1e-14 else grid[gi] - grid[gi - 1]
        log.debug("continuation lambda=%.6g solved in %d iterations", lam, res.iterations)
    return ContinuationResult(x, lambdas, solutions, total_iters, refinements)


@dataclass
class ArclengthResult:
    solution: np.ndarray
    path: list[tuple[float, np.ndarray]]
    steps: int
    newton_iterations: int
    turning_points: int


def arclength_run(residual: Callable[[np.ndarray, float], np.ndarray],
                  jacobian: Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]],
                  x_at_0, ds: float = 0.05, ds_min: float = 1e-6, ds_max: float = 0.5,
                  tol: float = 1e-10, max_steps: int = 500, max_iter: int = 8,
                  scale: np.ndarray | None = None) -> ArclengthResult:
    """Pseudo-arclength continuation of ``residual(x, lam) = 0`` from ``(x_at_0, 0)`` to ``lam = 1``.

    ``jacobian(x, lam)`` returns ``(dR/dx, dR/dlam)``. Unlike :func:`continuation_run`
    the path may fold back in ``lam``; the walk ends when it crosses ``lam = 1``,
    where a plain Newton solve at fixed ``lam = 1`` polishes the point.
    ``scale`` divides the unknowns when measuring arclength.
    """
    x = np.array(x_at_0, dtype=float)
    n = x.size
    w = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    lam = 0.0
    path = [(lam, x.copy())]
    prev_t = None
    total_iters = 0
    turns = 0

    def tangent(x, lam):
        Jx, Jl = jacobian(x, lam)
        A = np.hstack([Jx * w[None, :], Jl[:, None]])   # in scaled unknowns
        # null vector of the n x (n+1) matrix
        _, _, vt = np.linalg.svd(A)
        t = vt[-1]
        return t / np.linalg.norm(t)

    for step in range(max_steps):
        t = tangent(x, lam)
        if prev_t is None:
            if t[-1] < 0:
                t = -t
        elif t @ prev_t < 0:
            t = -t
        if prev_t is not None and np.sign(t[-1]) != np.sign(prev_t[-1]):
            turns += 1
            log.info("arclength: turning point near lambda=%.6g", lam)
        while True:
            u_pred = np.append(x / w, lam) + ds * t
            u = u_pred.copy()
            ok = False
            for it in range(max_iter):
                xs, ls = u[:n] * w, u[-1]
                try:
                    r = np.asarray(residual(xs, ls), dtype=float)
                except Exception as exc:  # propagation failures shrink the step
                    log.debug("arclength corrector failed: %s", exc)
                    break
                g = t @ (u - u_pred)
                if not np.all(np.isfinite(r)):
                    break
                total_iters += 1
                if np.max(np.abs(r)) <= tol and abs(g) <= 1e-12:
                    ok = True
                    break
                Jx, Jl = jacobian(xs, ls)
                A = np.vstack([np.hstack([Jx * w[None, :], Jl[:, None]]), t[None, :]])
                du = np.linalg.solve(A, -np.append(r, g))
                u = u + du
                if np.linalg.norm(du) > 2 * ds + 1e-3:
                    break
            if ok:
                break
            ds *= 0.5
            if ds < ds_min:
                raise ContinuationStall(lam, x, f"(arclength step below {ds_min:g})")
        x_new, lam_new = u[:n] * w, u[-1]
        if lam_new >= 1.0:
            # interpolate to lam = 1 and polish at fixed lam
            f = (1.0 - lam) / (lam_new - lam)
            guess = x + f * (x_new - x)
            res = newton_solve(lambda z: residual(z, 1.0), guess, tol=tol, max_iter=30,
                               jacobian=lambda z: jacobian(z, 1.0)[0])
            path.append((1.0, res.x.copy()))
            return ArclengthResult(res.x, path, step + 1, total_iters + res.iterations, turns)
        x, lam = x_new, lam_new
        path.append((lam, x.copy()))
        prev_t = t
        log.debug("arclength step %d: lambda=%.6g ds=%.3g iters=%d", step, lam, ds, it + 1)
        if it <= 2:
            ds = min(ds * 1.5, ds_max)
        elif it >= 5:
            ds *= 0.7
    raise ContinuationStall(lam, x, f"(arclength step limit {max_steps} reached)")
