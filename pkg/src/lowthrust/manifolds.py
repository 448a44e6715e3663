"""Monodromy, hyperbolic directions and globalized manifold fibers of periodic orbits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import crtbp
from .crtbp import SystemParams
from .numerics import Hyperplane, NoEventError, PropagationError, Trajectory, propagate, propagate_to_event
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1.0 / 384402.0
DEFAULT_HORIZON = 12.0

Stability = Literal["stable", "unstable"]


class NotHyperbolicError(ValueError):
    """The monodromy matrix has no real eigenvalue above one."""


@dataclass
class MonodromyMatrix:
    matrix: np.ndarray
    base_point: np.ndarray
    period: float

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix))

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def monodromy(params: SystemParams, orbit: PeriodicOrbit, base_point=None) -> MonodromyMatrix:
    """State-transition matrix over one period starting at ``base_point`` (default: the stored state)."""
    base = orbit.initial_state if base_point is None else np.asarray(base_point, dtype=float)
    _, phi = crtbp.flow_stm(params, base, orbit.period)
    return MonodromyMatrix(phi, base.copy(), orbit.period)


def _orient(v: np.ndarray) -> np.ndarray:
    v = np.real(v)
    v = v / np.linalg.norm(v)
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return v


def manifold_directions(M: MonodromyMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Unit stable and unstable eigenvectors and the dominant eigenvalue.

    Signs are fixed so that the x-component is positive (ties broken by y).
    """
    mat = M.matrix if isinstance(M, MonodromyMatrix) else np.asarray(M)
    vals, vecs = np.linalg.eig(mat)
    real = np.abs(vals.imag) < 1e-9 * np.maximum(1.0, np.abs(vals))
    if not np.any(real & (vals.real > 1 + 1e-9)):
        raise NotHyperbolicError(f"no real eigenvalue above 1 (eigenvalues {np.round(vals, 6)})")
    idx_u = int(np.argmax(np.where(real, vals.real, -np.inf)))
    lam_u = float(vals[idx_u].real)
    idx_s = int(np.argmin(np.abs(vals - 1.0 / lam_u)))
    return _orient(vecs[:, idx_s]), _orient(vecs[:, idx_u]), lam_u


@dataclass
class ManifoldFiber:
    origin: np.ndarray
    stability: Stability
    branch: int
    alpha: float
    trajectory: Trajectory | None
    phase: float
    direction: np.ndarray
    seed: np.ndarray
    section_state: np.ndarray | None = None
    section_time: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


SECTIONS = {"U2": -1.0, "U3": 1.0}


def section_plane(mu: float, section: str) -> Hyperplane:
    """x = 1 - mu restricted to y < 0 (U2) or y > 0 (U3)."""
    try:
        sign = SECTIONS[section]
    except KeyError:
        raise ValueError(f"unknown section {section!r}; expected one of {sorted(SECTIONS)}") from None
    return Hyperplane(0, 1.0 - mu, side_index=1, side_sign=sign)


class DirectionField:
    """Eigendirections transported along an orbit by the state-transition matrix."""

    def __init__(self, params: SystemParams, orbit: PeriodicOrbit):
        self.params = params
        self.orbit = orbit
        n = orbit.initial_state.size
        self.n = n
        self.M = monodromy(params, orbit)
        self.stable, self.unstable, self.lam = manifold_directions(self.M)
        y0 = np.concatenate([orbit.initial_state, np.eye(n).ravel()])
        self._traj = propagate(crtbp.variational_field(params, n), y0, (0.0, orbit.period))

    def state(self, phase: float) -> np.ndarray:
        return self._traj(float(phase) % self.orbit.period)[: self.n]

    def direction(self, phase: float, stability: Stability) -> np.ndarray:
        y = self._traj(float(phase) % self.orbit.period)
        phi = y[self.n:].reshape(self.n, self.n)
        v = phi @ (self.unstable if stability == "unstable" else self.stable)
        return v / np.linalg.norm(v)

    def seed(self, phase: float, stability: Stability, branch: int, alpha: float,
             project_energy: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orbit point, unit direction and offset seed at ``phase``.

        With ``project_energy`` the seed is moved along the energy gradient
        back onto the orbit's energy level.
        """
        x = self.state(phase)
        v = self.direction(phase, stability)
        s = x + branch * alpha * v
        if project_energy:
            s = project_to_energy(self.params, s, self.orbit.energy)
        return x, v, s


def project_to_energy(params: SystemParams, s: np.ndarray, target: float, iters: int = 3) -> np.ndarray:
    s = s.copy()
    for _ in range(iters):
        g = crtbp.energy_gradient(params.mu, s)
        s -= (crtbp.energy(params, s) - target) * g / (g @ g)
    return s


def propagate_fiber(params: SystemParams, seed: np.ndarray, stability: Stability,
                    horizon: float = DEFAULT_HORIZON, section: str | None = None,
                    crossing: int = 1, dense: bool = False):
    """Run a seed forward (unstable) or backward (stable) to the section or the horizon.

    Returns ``(trajectory, section_state, section_time)``; the last two are
    None when no section is armed.
    """
    sign = 1.0 if stability == "unstable" else -1.0
    fld = crtbp.natural_field(params)
    if section is None:
        return propagate(fld, seed, (0.0, sign * horizon), dense=dense), None, None
    state, t_ev, traj = propagate_to_event(fld, seed, section_plane(params.mu, section),
                                           t_max=sign * horizon, count=crossing, dense=dense)
    return traj, state, t_ev


def globalize(params: SystemParams, orbit: PeriodicOrbit, n_points: int, stability: Stability,
              branch: int = 1, alpha: float = DEFAULT_ALPHA, horizon: float = DEFAULT_HORIZON,
              section: str | None = None, crossing: int = 1, dense: bool = False,
              directions: DirectionField | None = None, project_energy: bool = False) -> list[ManifoldFiber]:
    """Seed ``n_points`` fibers at equally spaced phases and propagate each one.

    Failures are recorded on the fiber (``error``) instead of raised.
    """
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    if stability not in ("stable", "unstable"):
        raise ValueError("stability must be 'stable' or 'unstable'")
    dirs = directions or DirectionField(params, orbit)
    fibers = []
    for k in range(n_points):
        phase = k * orbit.period / n_points
        x, v, s = dirs.seed(phase, stability, branch, alpha, project_energy)
        fiber = ManifoldFiber(x, stability, branch, alpha, None, phase, v, s)
        try:
            fiber.trajectory, fiber.section_state, fiber.section_time = propagate_fiber(
                params, s, stability, horizon, section, crossing, dense)
        except (PropagationError, NoEventError) as exc:
            fiber.error = str(exc)
        fibers.append(fiber)
    bad = sum(not f.ok for f in fibers)
    if bad:
        log.info("%d of %d fibers failed to reach their target", bad, n_points)
    return fibers


def _scan_crossings(traj: Trajectory, plane: Hyperplane, crossing: int):
    from scipy.optimize import brentq
    g = traj.ys[:, plane.index] - plane.value
    seen = 0
    for k in range(len(g) - 1):
        if g[k] * g[k + 1] >= 0 and not (g[k + 1] == 0 and g[k] != 0):
            continue
        t_ev = brentq(lambda t: plane(traj(t)), traj.ts[k], traj.ts[k + 1], xtol=1e-15)
        y = traj(t_ev)
        if plane.accepts(y):
            seen += 1
            if seen == crossing:
                return y, t_ev
    return None


def section_cut(fibers: Sequence[ManifoldFiber], section: str = "U2", crossing: int = 1,
                mu: float | None = None) -> list[tuple[int, np.ndarray]]:
    """Crossings of the section by each fiber, as ``(fiber index, state)`` pairs.

    Fibers propagated with the section armed report their stored crossing;
    otherwise dense trajectories are scanned for the ``crossing``-th one.
    """
    out = []
    for i, f in enumerate(fibers):
        if not f.ok:
            continue
        if f.section_state is not None:
            out.append((i, f.section_state))
            continue
        if f.trajectory is None or f.trajectory.coeffs is None:
            continue
        plane = section_plane(mu if mu is not None else crtbp.EARTH_MOON.mu, section)
        hit = _scan_crossings(f.trajectory, plane, crossing)
        if hit is not None:
            out.append((i, hit[0]))
    return out


def write_fibers_csv(path, fibers: Sequence[ManifoldFiber], samples: int = 200) -> None:
    """Long-format export: one row per sample with the fiber id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = None
        for i, f in enumerate(fibers):
            if not f.ok or f.trajectory is None:
                continue
            traj = f.trajectory
            if traj.coeffs is not None:
                times, states = traj.sample(samples)
            else:
                times, states = traj.ts, traj.ys
            if n is None:
                n = states.shape[1]
                labels = ["x", "y", "z", "vx", "vy", "vz"] if n == 6 else ["x", "y", "vx", "vy"]
                w.writerow(["fiber", "phase", "t", *labels])
            for t, s in zip(times, states):
                w.writerow([i, repr(f.phase), repr(float(t)), *(repr(float(v)) for v in s)])
