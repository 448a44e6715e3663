"""Damped Newton iteration with finite-difference Jacobians."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .propagate import NoEventError, PropagationError

log = logging.getLogger(__name__)

Residual = Callable[[np.ndarray], np.ndarray]


class NonConvergenceError(RuntimeError):
    """Newton failed; ``best`` holds the iterate with the smallest residual."""

    def __init__(self, message: str, best: np.ndarray, residual_norm: float, iterations: int):
        super().__init__(f"{message} (best residual {residual_norm:.3e} after {iterations} iterations)")
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass
class NewtonResult:
    x: np.ndarray
    residual: np.ndarray
    iterations: int
    history: list[float] = field(default_factory=list)

    @property
    def residual_norm(self) -> float:
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0


def fd_jacobian(fun: Residual, x: np.ndarray, rel_step: float = 1e-8) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h))
    return np.column_stack(cols)


def _safe_eval(fun: Residual, x: np.ndarray) -> np.ndarray | None:
    try:
        r = np.asarray(fun(x), dtype=float)
    except (PropagationError, NoEventError, FloatingPointError, ValueError):
        return None
    return r if np.all(np.isfinite(r)) else None


def newton_solve(residual: Residual, x0, tol: float = 1e-10, max_iter: int = 50,
                 jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
                 max_halvings: int = 30, rel_step: float = 1e-8) -> NewtonResult:
    """Solve ``residual(x) = 0`` to ``max|residual| <= tol``.

    Each step is halved until the 2-norm of the residual strictly decreases.
    """
    x = np.array(x0, dtype=float)
    r = _safe_eval(residual, x)
    if r is None:
        raise NonConvergenceError("residual not finite at the initial guess", x, np.inf, 0)
    history = [float(np.max(np.abs(r)))]
    for it in range(max_iter + 1):
        if np.max(np.abs(r)) <= tol:
            return NewtonResult(x, r, it, history)
        if it == max_iter:
            break
        J = jacobian(x) if jacobian is not None else fd_jacobian(residual, x, rel_step)
        try:
            if J.shape[0] == J.shape[1]:
                dx = np.linalg.solve(J, -r)
            else:
                dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            raise NonConvergenceError("singular Jacobian", x, history[-1], it) from None
        if not np.all(np.isfinite(dx)):
            raise NonConvergenceError("singular Jacobian", x, history[-1], it)
        norm0 = np.linalg.norm(r)
        step = 1.0
        for _ in range(max_halvings + 1):
            trial = x + step * dx
            r_trial = _safe_eval(residual, trial)
            if r_trial is not None and np.linalg.norm(r_trial) < norm0:
                break
            step *= 0.5
        else:
            raise NonConvergenceError("step rejected after full damping ladder", x, history[-1], it)
        x, r = trial, r_trial
        history.append(float(np.max(np.abs(r))))
        log.debug("newton it=%d step=%.3g |r|=%.3e", it + 1, step, history[-1])
    raise NonConvergenceError("iteration limit reached", x, history[-1], max_iter)
