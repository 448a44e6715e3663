"""Symmetric periodic orbits about the collinear points: Lyapunov (planar) and Halo (spatial).

Orbits are stored by their crossing of the y = 0 plane with zero x-velocity
(and zero z-velocity in space), so half a period later the trajectory
crosses the plane again with the same symmetry.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import crtbp
from .crtbp import SystemParams
from .numerics import (
    ContinuationSchedule,
    NonConvergenceError,
    Trajectory,
    continuation_run,
    newton_solve,
    propagate,
)

log = logging.getLogger(__name__)

CLOSURE_TOL = 1e-9
HALF_PERIOD_TOL = 1e-11


class CorrectionError(RuntimeError):
    """Differential correction of a periodic orbit did not converge."""


class GuessValidityWarning(UserWarning):
    """Amplitude outside the range where the analytic guess is trustworthy."""


# unit-tagged names for the correction record in serialized orbits
_SEED_TAGS = {"iterations": "iterations_count", "steps": "steps_count", "guess": "guess_nd",
              "guess_period": "guess_period_nd", "amplitude": "amplitude_nd"}


@dataclass
class PeriodicOrbit:
    initial_state: np.ndarray
    period: float
    energy: float
    center: int
    mu: float = crtbp.EARTH_MOON.mu
    seed: dict = field(default_factory=dict)

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float)

    @property
    def spatial(self) -> bool:
        return self.initial_state.size == 6

    @property
    def dim(self) -> int:
        return self.initial_state.size // 2

    @cached_property
    def trajectory(self) -> Trajectory:
        """One full period with dense output."""
        field_ = crtbp.natural_field(SystemParams(mu=self.mu))
        return propagate(field_, self.initial_state, (0.0, self.period))

    def state_at(self, t: float) -> np.ndarray:
        """State after time ``t`` (taken modulo the period)."""
        return self.trajectory(float(t) % self.period)

    def discretize(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` equally spaced phases over one period (endpoint excluded)."""
        times = np.arange(n) * (self.period / n)
        return times, self.trajectory(times)

    def closure_error(self) -> float:
        end = crtbp.flow_state(SystemParams(mu=self.mu), self.initial_state, self.period)
        return float(np.linalg.norm(end - self.initial_state))

    def half_period_residual(self) -> np.ndarray:
        half = crtbp.flow_state(SystemParams(mu=self.mu), self.initial_state, 0.5 * self.period)
        return half[_symmetry_indices(self.dim)]

    def z_excursion(self, n: int = 400) -> float:
        """Largest |z| along the orbit (0 for planar orbits)."""
        if not self.spatial:
            return 0.0
        _, states = self.discretize(n)
        return float(np.max(np.abs(states[:, 2])))

    def to_dict(self) -> dict:
        return {
            "initial_state_nd": self.initial_state.tolist(),
            "period_nd": self.period,
            "energy_nd": self.energy,
            "center_index": self.center,
            "mu_nd": self.mu,
            "seed": {_SEED_TAGS.get(k, k): v for k, v in self.seed.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PeriodicOrbit":
        untag = {v: k for k, v in _SEED_TAGS.items()}
        seed = {untag.get(k, k): v for k, v in data.get("seed", {}).items()}
        return cls(np.array(data["initial_state_nd"]), float(data["period_nd"]), float(data["energy_nd"]),
                   int(data["center_index"]), float(data.get("mu_nd", crtbp.EARTH_MOON.mu)), seed)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path, n: int = 500) -> None:
        labels = ["x", "y", "z", "vx", "vy", "vz"] if self.spatial else ["x", "y", "vx", "vy"]
        times = np.linspace(0.0, self.period, n)
        states = self.trajectory(times)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *labels])
            for t, s in zip(times, states):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in s)])


def _symmetry_indices(d: int) -> list[int]:
    # y and vx, plus vz in space
    return [1, d] if d == 2 else [1, 3, 5]


# ---------------------------------------------------------------- analytic guesses

def _gamma(mu: float, center: int) -> float:
    xl = crtbp.lagrange_point(mu, center)[0]
    return abs(xl - (1.0 - mu))


def _cn(mu: float, center: int, gamma: float, n: int) -> float:
    # Legendre coefficients of the potential expanded about L1 or L2, x axis along the
    # rotating-frame x axis
    if center == 1:
        return (mu + (-1) ** n * (1 - mu) * gamma ** (n + 1) / (1 - gamma) ** (n + 1)) / gamma ** 3
    return ((-1) ** n * mu + (-1) ** n * (1 - mu) * gamma ** (n + 1) / (1 + gamma) ** (n + 1)) / gamma ** 3


def _in_plane(c2: float) -> tuple[float, float]:
    """In-plane frequency of the linear centre about a collinear point and y/x amplitude ratio."""
    lam = math.sqrt((2 - c2 + math.sqrt(9 * c2 ** 2 - 8 * c2)) / 2)
    k = (lam ** 2 + 1 + 2 * c2) / (2 * lam)
    return lam, k


def planar_guess(params: SystemParams, center: int, amplitude: float) -> tuple[np.ndarray, float]:
    """Linear in-plane oscillation about L1/L2/L3 with x-amplitude ``amplitude``.

    The state starts on the side of the point closer to the Earth.
    """
    mu = params.mu
    xl = crtbp.lagrange_point(mu, center)[0]
    r1 = abs(xl + mu)
    r2 = abs(xl - 1 + mu)
    c2 = (1 - mu) / r1 ** 3 + mu / r2 ** 3
    lam, k = _in_plane(c2)
    if amplitude > 0.05 * min(r2, r1):
        warnings.warn(f"amplitude {amplitude:g} is large for a linear guess", GuessValidityWarning, stacklevel=2)
    state = np.array([xl - amplitude, 0.0, 0.0, k * amplitude * lam])
    return state, 2 * math.pi / lam


def halo_guess(params: SystemParams, center: int, az: float) -> tuple[np.ndarray, float]:
    """Third-order Halo approximation with out-of-plane amplitude ``az`` (normalized length).

    Coefficients follow D. L. Richardson, "Analytic construction of periodic
    orbits about the collinear points", Celestial Mechanics 22 (1980). A
    positive ``az`` gives the northern family (z > 0 at the returned state),
    a negative one the southern family.
    """
    if center not in (1, 2):
        raise ValueError("Halo guesses are implemented about L1 and L2 only")
    mu = params.mu
    g = _gamma(mu, center)
    c2, c3, c4 = (_cn(mu, center, g, n) for n in (2, 3, 4))
    lam, k = _in_plane(c2)
    d1 = 3 * lam ** 2 / k * (k * (6 * lam ** 2 - 1) - 2 * lam)
    d2 = 8 * lam ** 2 / k * (k * (11 * lam ** 2 - 1) - 2 * lam)

    a21 = 3 * c3 * (k ** 2 - 2) / (4 * (1 + 2 * c2))
    a22 = 3 * c3 / (4 * (1 + 2 * c2))
    a23 = -3 * c3 * lam / (4 * k * d1) * (3 * k ** 3 * lam - 6 * k * (k - lam) + 4)
    a24 = -3 * c3 * lam / (4 * k * d1) * (2 + 3 * k * lam)
    b21 = -3 * c3 * lam / (2 * d1) * (3 * k * lam - 4)
    b22 = 3 * c3 * lam / d1
    d21 = -c3 / (2 * lam ** 2)

    a31 = (-9 * lam / (4 * d2) * (4 * c3 * (k * a23 - b21) + k * c4 * (4 + k ** 2))
           + (9 * lam ** 2 + 1 - c2) / (2 * d2) * (3 * c3 * (2 * a23 - k * b21) + c4 * (2 + 3 * k ** 2)))
    a32 = (-9 * lam / (4 * d2) * (4 * c3 * (3 * k * a24 - b22) + k * c4)
           - 3 * (9 * lam ** 2 + 1 - c2) / (2 * d2) * (c3 * (k * b22 + d21 - 2 * a24) - c4))
    b31 = (3 / (8 * d2) * (8 * lam * (3 * c3 * (k * b21 - 2 * a23) - c4 * (2 + 3 * k ** 2))
                           + (9 * lam ** 2 + 1 + 2 * c2) * (4 * c3 * (k * a23 - b21) + k * c4 * (4 + k ** 2))))
    b32 = (9 * lam / d2 * (c3 * (k * b22 + d21 - 2 * a24) - c4)
           + 3 * (9 * lam ** 2 + 1 + 2 * c2) / (8 * d2) * (4 * c3 * (k * a24 - b22) + k * c4))
    d31 = 3 / (64 * lam ** 2) * (4 * c3 * a24 + c4)
    d32 = 3 / (64 * lam ** 2) * (4 * c3 * (a23 - d21) + c4 * (4 + k ** 2))

    s1 = ((3 / 2 * c3 * (2 * a21 * (k ** 2 - 2) - a23 * (k ** 2 + 2) - 2 * k * b21)
           - 3 / 8 * c4 * (3 * k ** 4 - 8 * k ** 2 + 8)) / (2 * lam * (lam * (1 + k ** 2) - 2 * k)))
    s2 = ((3 / 2 * c3 * (2 * a22 * (k ** 2 - 2) + a24 * (k ** 2 + 2) + 2 * k * b22 + 5 * d21)
           + 3 / 8 * c4 * (12 - k ** 2)) / (2 * lam * (lam * (1 + k ** 2) - 2 * k)))
    l1 = -3 / 2 * c3 * (2 * a21 + a23 + 5 * d21) - 3 / 8 * c4 * (12 - k ** 2) + 2 * lam ** 2 * s1
    l2 = 3 / 2 * c3 * (a24 - 2 * a22) + 9 / 8 * c4 + 2 * lam ** 2 * s2
    delta = lam ** 2 - c2

    Az = abs(az) / g
    ax2 = (-delta - l2 * Az ** 2) / l1
    if ax2 <= 0:
        warnings.warn(f"z-amplitude {az:g} below the Halo bifurcation; guess is not a Halo orbit",
                      GuessValidityWarning, stacklevel=2)
        ax2 = 0.0
    Ax = math.sqrt(ax2)
    if Az > 0.6 or Ax > 0.6:
        warnings.warn(f"amplitude (Ax={Ax:.3g}, Az={Az:.3g}) outside the third-order validity range",
                      GuessValidityWarning, stacklevel=2)
    nu = 1 + s1 * Ax ** 2 + s2 * Az ** 2
    dn = 1.0 if az >= 0 else -1.0
    # tau1 = 0: x at its Earth-side extreme, y = 0
    x = a21 * Ax ** 2 + a22 * Az ** 2 - Ax + a23 * Ax ** 2 - a24 * Az ** 2 + a31 * Ax ** 3 - a32 * Ax * Az ** 2
    z = dn * Az - 2 * dn * d21 * Ax * Az + dn * (d32 * Az * Ax ** 2 - d31 * Az ** 3)
    ydot = lam * nu * (k * Ax + 2 * (b21 * Ax ** 2 - b22 * Az ** 2) + 3 * (b31 * Ax ** 3 - b32 * Ax * Az ** 2))
    xl = crtbp.lagrange_point(mu, center)[0]
    state = np.array([xl + g * x, 0.0, g * z, 0.0, g * ydot, 0.0])
    return state, 2 * math.pi / (lam * nu)


def richardson_guess(params: SystemParams, center: int, amplitude: float,
                     spatial: bool = False) -> tuple[np.ndarray, float]:
    """Planar linear guess (``amplitude`` = x-amplitude) or third-order Halo guess (z-amplitude)."""
    if amplitude == 0.0:
        n = 6 if spatial else 4
        c2 = _lagrange_c2(params.mu, center)
        lam, _ = _in_plane(c2)
        return crtbp.lagrange_point(params.mu, center, spatial=(n == 6)), 2 * math.pi / lam
    if spatial:
        return halo_guess(params, center, amplitude)
    return planar_guess(params, center, amplitude)


def _lagrange_c2(mu: float, center: int) -> float:
    xl = crtbp.lagrange_point(mu, center)[0]
    return (1 - mu) / abs(xl + mu) ** 3 + mu / abs(xl - 1 + mu) ** 3


# ---------------------------------------------------------------- correction

class _Corrector:
    """Residuals and STM Jacobians for the symmetric-crossing conditions.

    ``free`` lists the free initial-state components (indices into the
    state); the half period is always the last unknown.
    """

    def __init__(self, params: SystemParams, base: np.ndarray, free: list[int],
                 energy_target: float | None = None):
        self.params = params
        self.base = np.asarray(base, dtype=float).copy()
        self.free = free
        self.energy_target = energy_target
        self.sym = _symmetry_indices(self.base.size // 2)

    def state(self, z: np.ndarray) -> np.ndarray:
        s = self.base.copy()
        s[self.free] = z[:-1]
        return s

    def residual(self, z: np.ndarray) -> np.ndarray:
        s = self.state(z)
        half = crtbp.flow_state(self.params, s, z[-1])
        r = half[self.sym]
        if self.energy_target is not None:
            r = np.append(r, crtbp.energy(self.params, s) - self.energy_target)
        return r

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        s = self.state(z)
        half, phi = crtbp.flow_stm(self.params, s, z[-1])
        f = crtbp.natural_rhs(0.0, half, np.array([self.params.mu]))
        J = np.column_stack([phi[np.ix_(self.sym, self.free)], f[self.sym]])
        if self.energy_target is not None:
            grad = crtbp.energy_gradient(self.params.mu, s)
            J = np.vstack([J, np.append(grad[self.free], 0.0)])
        return J


def _free_components(d: int, fixed: str, energy: bool) -> list[int]:
    if d == 2:
        return [0, 3] if energy else [3]
    if energy:
        return [0, 2, 4]
    if fixed == "z0":
        return [0, 4]
    if fixed == "x0":
        return [2, 4]
    raise ValueError(f"fixed coordinate must be 'x0' or 'z0', got {fixed!r}")


def _finish(params: SystemParams, state: np.ndarray, half: float, center: int, seed: dict) -> PeriodicOrbit:
    orbit = PeriodicOrbit(state, 2.0 * half, crtbp.energy(params, state), center, params.mu, dict(seed))
    err = orbit.closure_error()
    if err > CLOSURE_TOL:
        log.warning("orbit closure %.2e exceeds %.0e", err, CLOSURE_TOL)
    return orbit


def correct_orbit(params: SystemParams, guess: np.ndarray, period: float, center: int,
                  fixed: str = "x0", tol: float = HALF_PERIOD_TOL, max_iter: int = 30) -> PeriodicOrbit:
    """Differential correction of a symmetric periodic orbit.

    Planar: ``x0`` is held and ``(T, vy0)`` are solved so that ``y`` and
    ``vx`` vanish at ``T/2``. Spatial: additionally ``vz(T/2) = 0``, with
    ``x0`` or ``z0`` held.
    """
    guess = np.asarray(guess, dtype=float).copy()
    d = guess.size // 2
    if d == 2:
        guess[[1, 2]] = 0.0
    elif d == 3:
        guess[[1, 3, 5]] = 0.0
    else:
        raise ValueError("state must have 4 or 6 components")
    corr = _Corrector(params, guess, _free_components(d, fixed, False))
    z0 = np.append(guess[corr.free], 0.5 * period)
    try:
        res = newton_solve(corr.residual, z0, tol=tol, max_iter=max_iter, jacobian=corr.jacobian)
    except NonConvergenceError as exc:
        raise CorrectionError(f"periodic-orbit correction failed: {exc}") from exc
    seed = {"fixed": fixed, "iterations": res.iterations, "guess": guess.tolist(), "guess_period": period}
    return _finish(params, corr.state(res.x), res.x[-1], center, seed)


def continue_family(params: SystemParams, orbit0: PeriodicOrbit, target: float, coordinate: str = "x0",
                    schedule: ContinuationSchedule | None = None,
                    tol: float = HALF_PERIOD_TOL) -> PeriodicOrbit:
    """Walk the family by a held initial coordinate (``x0``, or ``z0`` for Halo orbits)."""
    schedule = schedule or ContinuationSchedule.uniform(50)
    k = {"x0": 0, "z0": 2}[coordinate]
    if k == 2 and not orbit0.spatial:
        raise ValueError("z0 continuation needs a spatial orbit")
    start = orbit0.initial_state[k]
    if target == start:
        return orbit0
    base = orbit0.initial_state.copy()
    free = _free_components(orbit0.dim, coordinate, False)

    def corrector(lam: float) -> _Corrector:
        b = base.copy()
        b[k] = start + lam * (target - start)
        return _Corrector(params, b, free)

    z0 = np.append(base[free], 0.5 * orbit0.period)
    out = continuation_run(lambda lam: corrector(lam).residual, schedule, z0, tol=tol,
                           jacobian_family=lambda lam: corrector(lam).jacobian)
    final = corrector(1.0)
    return _finish(params, final.state(out.solution), out.solution[-1], orbit0.center,
                   {**orbit0.seed, "continued_by": coordinate, "steps": out.steps})


def continue_family_x0(params: SystemParams, orbit0: PeriodicOrbit, x0_target: float,
                       schedule: ContinuationSchedule | None = None,
                       tol: float = HALF_PERIOD_TOL) -> PeriodicOrbit:
    """Walk the family by the initial x-coordinate from ``orbit0`` to ``x0_target``."""
    return continue_family(params, orbit0, x0_target, "x0", schedule, tol)


def continue_family_energy(params: SystemParams, orbit0: PeriodicOrbit, energy_target: float,
                           schedule: ContinuationSchedule | None = None,
                           tol: float = HALF_PERIOD_TOL) -> PeriodicOrbit:
    """Walk the family by energy, solving for the period and the free initial coordinates."""
    schedule = schedule or ContinuationSchedule.uniform(50)
    e_start = crtbp.energy(params, orbit0.initial_state)
    e_point = crtbp.energy(params, crtbp.lagrange_point(params.mu, orbit0.center, orbit0.spatial))
    if energy_target < e_point:
        raise ValueError(f"energy {energy_target} is below that of L{orbit0.center} ({e_point:.10f})")
    if abs(energy_target - e_start) <= 1e-14:
        return orbit0
    base = orbit0.initial_state.copy()
    free = _free_components(orbit0.dim, "", True)

    def corrector(lam: float) -> _Corrector:
        return _Corrector(params, base, free, e_start + lam * (energy_target - e_start))

    z0 = np.append(base[free], 0.5 * orbit0.period)
    out = continuation_run(lambda lam: corrector(lam).residual, schedule, z0, tol=tol,
                           jacobian_family=lambda lam: corrector(lam).jacobian)
    orbit = _finish(params, corrector(1.0).state(out.solution), out.solution[-1], orbit0.center,
                    {**orbit0.seed, "continued_by": "energy", "steps": out.steps})
    return orbit


def orbit_at_energy(params: SystemParams, center: int, energy_target: float, spatial: bool = False,
                    seed_amplitude: float | None = None, steps: int = 20) -> PeriodicOrbit:
    """Lyapunov or Halo orbit at a prescribed energy, seeded from an analytic guess.

    ``seed_amplitude`` is the x-amplitude (planar) or the signed z-amplitude
    (spatial) of the seed orbit, in normalized length.
    """
    default = seed_amplitude is None
    if default:
        seed_amplitude = 0.01 if not spatial else 16000e3 / params.l_star
    with warnings.catch_warnings():
        if default:  # the default seed is corrected at once; its linear-range warning is noise
            warnings.simplefilter("ignore", GuessValidityWarning)
        guess, period = richardson_guess(params, center, seed_amplitude, spatial)
    seed_orbit = correct_orbit(params, guess, period, center, fixed="z0" if spatial else "x0")
    seed_orbit.seed["amplitude"] = seed_amplitude
    return continue_family_energy(params, seed_orbit, energy_target, ContinuationSchedule.uniform(steps))


def sweep_family(params: SystemParams, orbit0: PeriodicOrbit, values, by: str = "energy",
                 steps: int = 5) -> list[PeriodicOrbit]:
    """Members of ``orbit0``'s family at each of ``values``, continued one after another.

    ``by`` is ``energy``, ``x0`` or ``z0``.
    """
    if by not in ("energy", "x0", "z0"):
        raise ValueError("by must be 'energy', 'x0' or 'z0'")
    members, current = [], orbit0
    schedule = ContinuationSchedule.uniform(steps)
    for v in values:
        if by == "energy":
            current = continue_family_energy(params, current, float(v), schedule)
        else:
            current = continue_family(params, current, float(v), by, schedule)
        members.append(current)
    return members


def halo_at_excursion(params: SystemParams, center: int, z0_target: float, steps: int = 20) -> PeriodicOrbit:
    """Halo orbit whose symmetric initial state has ``z = z0_target`` (signed, normalized).

    A small-amplitude analytic seed is corrected and then continued in ``z0``.
    """
    seed_az = math.copysign(min(abs(z0_target), 2000e3 / params.l_star), z0_target)
    guess, period = richardson_guess(params, center, seed_az, spatial=True)
    seed_orbit = correct_orbit(params, guess, period, center, fixed="z0")
    seed_orbit.seed["amplitude"] = seed_az
    return continue_family(params, seed_orbit, z0_target, "z0", ContinuationSchedule.uniform(steps))
