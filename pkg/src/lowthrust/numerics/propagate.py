"""Adaptive propagation with dense output and event location."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import _dop853 as core
from .kernels import specialized

DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-12
MAX_STEPS = 2_000_000


class PropagationError(RuntimeError):
    """Integration could not reach the requested time (step-size underflow)."""

    def __init__(self, message: str, last_time: float, last_state: np.ndarray | None = None):
        super().__init__(f"{message} (last good time {last_time:.15g})")
        self.last_time = last_time
        self.last_state = last_state


class NoEventError(RuntimeError):
    """The armed event was not crossed before the time limit."""


class VectorField(NamedTuple):
    """A numba-compiled right-hand side ``rhs(t, y, params)`` and its parameters."""

    rhs: Callable
    params: np.ndarray
    # "package.module:function" naming rhs; enables disk-cached specialized kernels
    target: str | None = None

    def _kernels(self):
        return specialized(self.target) if self.target else None

    def integrate(self, *args):
        k = self._kernels()
        return k[0](*args) if k else core.integrate(self.rhs, *args)

    def endpoint(self, *args):
        k = self._kernels()
        return k[1](*args) if k else core.endpoint(self.rhs, *args)


Field = Union[VectorField, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class Hyperplane:
    """Event ``y[index] == value``; optionally only where ``side_sign * y[side_index] > 0``."""

    index: int
    value: float
    side_index: int = -1
    side_sign: float = 0.0

    def __call__(self, y: np.ndarray) -> float:
        return float(y[self.index] - self.value)

    def accepts(self, y: np.ndarray) -> bool:
        return self.side_index < 0 or self.side_sign * y[self.side_index] > 0


@dataclass
class Trajectory:
    """Accepted integrator steps plus per-step interpolants.

    ``ts`` is monotone in the integration direction; ``direction`` is +1 for
    forward and -1 for backward propagation.
    """

    ts: np.ndarray
    ys: np.ndarray
    coeffs: np.ndarray | None
    direction: float
    steps: np.ndarray | None = None
    interpolation_order: int = 7

    @property
    def t0(self) -> float:
        return float(self.ts[0])

    @property
    def t1(self) -> float:
        return float(self.ts[-1])

    @property
    def y0(self) -> np.ndarray:
        return self.ys[0]

    @property
    def y1(self) -> np.ndarray:
        return self.ys[-1]

    @property
    def duration(self) -> float:
        return abs(self.t1 - self.t0)

    def _step_index(self, t: float) -> int:
        if self.direction > 0:
            k = int(np.searchsorted(self.ts, t, side="right")) - 1
        else:
            k = int(np.searchsorted(-self.ts, -t, side="right")) - 1
        return min(max(k, 0), len(self.ts) - 2)

    def __call__(self, t: float | np.ndarray) -> np.ndarray:
        if np.ndim(t) > 0:
            return np.array([self(float(ti)) for ti in np.asarray(t)])
        t = float(t)
        lo, hi = sorted((self.t0, self.t1))
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise ValueError(f"time {t} outside trajectory span [{lo}, {hi}]")
        if len(self.ts) == 1:
            return self.ys[0].copy()
        if self.coeffs is None or len(self.coeffs) == 0:
            raise ValueError("trajectory was propagated without dense output")
        k = self._step_index(t)
        h = self.steps[k] if self.steps is not None else self.ts[k + 1] - self.ts[k]
        x = (t - self.ts[k]) / h
        return core.dense_eval(self.ys[k], self.coeffs[k], x)

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate at ``n`` equally spaced times across the span."""
        times = np.linspace(self.t0, self.t1, n)
        return times, self(times)


def _check_status(status: int, ts: np.ndarray, ys: np.ndarray) -> None:
    if status == core.UNDERFLOW:
        raise PropagationError("step size underflow", float(ts[-1]), ys[-1])
    if status == core.MAX_STEPS:
        raise PropagationError("step budget exhausted", float(ts[-1]), ys[-1])


def _scipy_trajectory(fun, x0, t_span, rtol, atol, events=None) -> tuple[Trajectory, object]:
    sol = solve_ivp(fun, t_span, x0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=True, events=events)
    if sol.status < 0:
        raise PropagationError(sol.message, float(sol.t[-1]), sol.y[:, -1])
    ts = sol.t
    coeffs = np.array([interp.F for interp in sol.sol.interpolants])
    direction = 1.0 if t_span[1] >= t_span[0] else -1.0
    return Trajectory(ts, sol.y.T.copy(), coeffs, direction, np.diff(ts)), sol


def propagate(field: Field, x0, t_span: tuple[float, float],
              tol: tuple[float, float] = (DEFAULT_RTOL, DEFAULT_ATOL),
              dense: bool = True) -> Trajectory:
    """Integrate ``field`` from ``x0`` over ``t_span`` (either order)."""
    x0 = np.asarray(x0, dtype=float)
    t0, t1 = float(t_span[0]), float(t_span[1])
    rtol, atol = tol
    if not isinstance(field, VectorField):
        traj, _ = _scipy_trajectory(field, x0, (t0, t1), rtol, atol)
        return traj
    status, ts, ys, Fs, hs, _, _ = field.integrate(
        t0, x0, t1, field.params, rtol, atol, dense,
        -1, 0.0, 0, -1, 0.0, 1, MAX_STEPS)
    _check_status(status, ts, ys)
    return Trajectory(ts, ys, Fs if dense else None, 1.0 if t1 >= t0 else -1.0, hs)


def flow(field: VectorField, x0, t0: float, t1: float,
         tol: tuple[float, float] = (DEFAULT_RTOL, DEFAULT_ATOL)) -> np.ndarray:
    """Endpoint of the flow without storing history."""
    status, y, t = field.endpoint(float(t0), np.asarray(x0, dtype=float), float(t1),
                                 field.params, tol[0], tol[1], MAX_STEPS)
    if status != core.DONE:
        raise PropagationError("propagation failed", float(t), y)
    return y


def propagate_to_event(field: Field, x0, event: Hyperplane | Callable[[np.ndarray], float],
                       direction: int = 0, t_max: float = 12.0, t0: float = 0.0,
                       count: int = 1,
                       tol: tuple[float, float] = (DEFAULT_RTOL, DEFAULT_ATOL),
                       dense: bool = False) -> tuple[np.ndarray, float, Trajectory]:
    """Propagate until the ``count``-th qualifying zero of ``event``.

    ``t_max`` is signed: negative values propagate backward. ``direction``
    constrains the sign of d(event)/dt at the crossing. Returns the crossing
    state, its time, and the trajectory up to it.
    """
    x0 = np.asarray(x0, dtype=float)
    rtol, atol = tol
    t_end = t0 + t_max
    if isinstance(field, VectorField) and isinstance(event, Hyperplane):
        status, ts, ys, Fs, hs, _, _ = field.integrate(
            t0, x0, t_end, field.params, rtol, atol, dense,
            event.index, event.value, int(np.sign(direction)),
            event.side_index, float(event.side_sign), count, MAX_STEPS)
        _check_status(status, ts, ys)
        traj = Trajectory(ts, ys, Fs if dense else None, 1.0 if t_end >= t0 else -1.0, hs)
        if status != core.EVENT:
            raise NoEventError(f"no qualifying crossing within {t_max} time units")
        return ys[-1].copy(), float(ts[-1]), traj

    # generic path: full dense trajectory, sign-change scan, root polish
    traj = propagate(field, x0, (t0, t_end), tol, dense=True)
    accepts = event.accepts if isinstance(event, Hyperplane) else (lambda y: True)
    g = np.array([event(y) for y in traj.ys])
    seen = 0
    for k in range(len(g) - 1):
        ga, gb = g[k], g[k + 1]
        first = k == 0 and ga == 0.0 and gb != 0.0
        if not (ga * gb < 0.0 or (gb == 0.0 and ga != 0.0) or first):
            continue
        slope = (gb - ga) * traj.direction
        if direction > 0 and slope <= 0 or direction < 0 and slope >= 0:
            continue
        if ga == 0.0:
            t_ev = float(traj.ts[k])
        elif gb == 0.0:
            t_ev = float(traj.ts[k + 1])
        else:
            t_ev = brentq(lambda t: event(traj(t)), traj.ts[k], traj.ts[k + 1],
                          xtol=1e-15, rtol=4 * np.finfo(float).eps)
        y_ev = traj(t_ev)
        if not accepts(y_ev):
            continue
        seen += 1
        if seen == count:
            cut = k + 1
            head = Trajectory(np.append(traj.ts[:cut], t_ev), np.vstack([traj.ys[:cut], y_ev]),
                              traj.coeffs[:cut] if traj.coeffs is not None else None,
                              traj.direction, traj.steps[:cut])
            return y_ev, t_ev, head
    raise NoEventError(f"no qualifying crossing within {t_max} time units")
