"""Earth-Moon circular restricted three-body model in the rotating frame.

Units: length = primary separation, time such that the primaries' period is
2*pi, mass of the primaries = 1. States are ``(x, y, vx, vy)`` in the plane
or ``(x, y, z, vx, vy, vz)`` in space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit
from scipy.optimize import brentq

from .numerics import VectorField

SECONDS_PER_DAY = 86400.0
MIN_RADIUS = 1e-6


class SingularityError(ValueError):
    """State too close to a primary for the model to be evaluated."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of a primary pair and the spacecraft engine.

    ``mu`` defaults to the mass ratio of the tabulated Earth and Moon masses;
    ``eps`` and ``beta_star`` are derived, never stored.
    """

    mu: float = 7.349e22 / (5.972e24 + 7.349e22)
    l_star: float = 384402e3          # m
    v_star: float = 1.025e3           # m/s, tabulated value
    t_star: float = 2.361e6           # s, period of the primaries
    isp: float = 2000.0               # s
    g0: float = 9.8                   # m/s^2
    m0: float = 1500.0                # kg
    tmax: float = 60.0                # N
    earth_mass: float = 5.972e24
    moon_mass: float = 7.349e22

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"mass ratio must lie in (0, 1), got {self.mu}")
        for name in ("l_star", "t_star", "isp", "g0", "m0", "tmax"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def time_unit(self) -> float:
        """Seconds per normalized time unit."""
        return self.t_star / (2.0 * math.pi)

    @property
    def velocity_unit(self) -> float:
        """Metres per second per normalized velocity unit (2*pi*l*/t*)."""
        return self.l_star / self.time_unit

    @property
    def accel_unit(self) -> float:
        return self.l_star / self.time_unit ** 2

    @property
    def eps(self) -> float:
        """Maximal thrust in kg * normalized acceleration: Tmax t*^2 / (4 pi^2 l*)."""
        return self.tmax / self.accel_unit

    @property
    def beta(self) -> float:
        """Inverse exhaust speed 1/(Isp g0) in s/m."""
        return 1.0 / (self.isp * self.g0)

    @property
    def beta_star(self) -> float:
        """Mass-flow coefficient so that dm/dt = -beta_star * eps * |u| in kg per normalized time."""
        return self.beta * self.velocity_unit

    def with_thrust(self, tmax: float) -> "SystemParams":
        return replace(self, tmax=float(tmax))

    def eps_for(self, tmax: float) -> float:
        return tmax / self.accel_unit

    def tmax_for(self, eps: float) -> float:
        return eps * self.accel_unit


EARTH_MOON = SystemParams()


# ---------------------------------------------------------------- dynamics

@njit(cache=True)
def _accel(y, mu, d):
    # gravity + centrifugal + Coriolis acceleration for position/velocity split at d
    x = y[0]
    yy = y[1]
    z = y[2] if d == 3 else 0.0
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1 = math.sqrt(dx1 * dx1 + yy * yy + z * z)
    r2 = math.sqrt(dx2 * dx2 + yy * yy + z * z)
    k1 = (1.0 - mu) / (r1 * r1 * r1)
    k2 = mu / (r2 * r2 * r2)
    a = np.empty(d)
    a[0] = x + 2.0 * y[d + 1] - k1 * dx1 - k2 * dx2
    a[1] = yy - 2.0 * y[d] - k1 * yy - k2 * yy
    if d == 3:
        a[2] = -k1 * z - k2 * z
    return a


@njit(cache=True)
def _gravity_hessian(y, mu, d):
    # d(accel)/d(position), symmetric
    x = y[0]
    yy = y[1]
    z = y[2] if d == 3 else 0.0
    p = np.array([x + mu, yy, z])
    q = np.array([x - 1.0 + mu, yy, z])
    r1 = math.sqrt(p[0] ** 2 + p[1] ** 2 + p[2] ** 2)
    r2 = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2)
    k1 = (1.0 - mu) / r1 ** 3
    k2 = mu / r2 ** 3
    c1 = 3.0 * (1.0 - mu) / r1 ** 5
    c2 = 3.0 * mu / r2 ** 5
    G = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            G[i, j] = c1 * p[i] * p[j] + c2 * q[i] * q[j]
        G[i, i] -= k1 + k2
    G[0, 0] += 1.0
    G[1, 1] += 1.0
    return G


@njit(cache=True)
def natural_rhs(t, y, prm):
    """Uncontrolled field for a 4- or 6-component state; ``prm = [mu]``."""
    d = y.size // 2
    out = np.empty(y.size)
    out[:d] = y[d:]
    out[d:] = _accel(y, prm[0], d)
    return out


@njit(cache=True)
def variational_rhs(t, y, prm):
    """State plus row-major state-transition matrix; ``prm = [mu, n]``."""
    n = int(prm[1])
    d = n // 2
    state = y[:n]
    phi = y[n:].reshape((n, n))
    out = np.empty(y.size)
    out[:d] = state[d:]
    out[d:n] = _accel(state, prm[0], d)
    A = np.zeros((n, n))
    for i in range(d):
        A[i, d + i] = 1.0
    A[d:, :d] = _gravity_hessian(state, prm[0], d)
    A[d, d + 1] = 2.0
    A[d + 1, d] = -2.0
    out[n:] = (A @ phi).ravel()
    return out


def natural_field(params: SystemParams) -> VectorField:
    return VectorField(natural_rhs, np.array([params.mu]), "lowthrust.crtbp:natural_rhs")


def variational_field(params: SystemParams, n: int) -> VectorField:
    return VectorField(variational_rhs, np.array([params.mu, float(n)]), "lowthrust.crtbp:variational_rhs")


def _dim(s: np.ndarray) -> int:
    if s.shape[-1] not in (4, 6):
        raise ValueError(f"state must have 4 or 6 components, got {s.shape[-1]}")
    return s.shape[-1] // 2


def distances(mu: float, s) -> tuple[float, float]:
    s = np.asarray(s, dtype=float)
    d = _dim(s)
    pos = np.zeros(3)
    pos[:d] = s[:d]
    r1 = math.dist(pos, (-mu, 0.0, 0.0))
    r2 = math.dist(pos, (1.0 - mu, 0.0, 0.0))
    return r1, r2


def _guard(mu: float, s) -> None:
    r1, r2 = distances(mu, s)
    if r1 < MIN_RADIUS or r2 < MIN_RADIUS:
        raise SingularityError(f"state within {MIN_RADIUS} of a primary (r1={r1:.3g}, r2={r2:.3g})")


def vector_field(params: SystemParams | float, s) -> np.ndarray:
    """Time derivative of a planar or spatial state."""
    mu = params if isinstance(params, float) else params.mu
    s = np.asarray(s, dtype=float)
    _guard(mu, s)
    return natural_rhs(0.0, s, np.array([mu]))


def jacobian(params: SystemParams | float, s) -> np.ndarray:
    """d(field)/d(state) at ``s``."""
    mu = params if isinstance(params, float) else params.mu
    s = np.asarray(s, dtype=float)
    n = s.size
    d = n // 2
    A = np.zeros((n, n))
    A[:d, d:] = np.eye(d)
    A[d:, :d] = _gravity_hessian(s, mu, d)
    A[d, d + 1] = 2.0
    A[d + 1, d] = -2.0
    return A


def potential(mu: float, pos) -> float:
    pos = np.asarray(pos, dtype=float)
    p3 = np.zeros(3)
    p3[:pos.size] = pos
    r1 = math.dist(p3, (-mu, 0.0, 0.0))
    r2 = math.dist(p3, (1.0 - mu, 0.0, 0.0))
    return -0.5 * (p3[0] ** 2 + p3[1] ** 2) - (1.0 - mu) / r1 - mu / r2 - 0.5 * mu * (1.0 - mu)


def energy(params: SystemParams | float, s) -> float:
    """Half squared speed plus the effective potential (conserved by the free flow)."""
    mu = params if isinstance(params, float) else params.mu
    s = np.asarray(s, dtype=float)
    _guard(mu, s)
    d = _dim(s)
    return 0.5 * float(s[d:] @ s[d:]) + potential(mu, s[:d])


def energy_gradient(mu: float, s) -> np.ndarray:
    """d(energy)/d(state)."""
    s = np.asarray(s, dtype=float)
    d = _dim(s)
    grad = np.empty_like(s)
    grad[d:] = s[d:]
    a = _accel(np.concatenate([s[:d], np.zeros(d)]), mu, d)
    grad[:d] = -a  # with zero velocity the acceleration is minus the potential gradient
    return grad


# ---------------------------------------------------------------- equilibria

def _collinear_residual(x: float, mu: float) -> float:
    return x - (1 - mu) * (x + mu) / abs(x + mu) ** 3 - mu * (x - 1 + mu) / abs(x - 1 + mu) ** 3


def lagrange_points(mu: float, spatial: bool = False) -> list[np.ndarray]:
    """Five equilibria L1..L5 as zero-velocity states."""
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mass ratio must lie in (0, 1), got {mu}")
    tiny = 1e-9
    x1 = brentq(_collinear_residual, -mu + tiny, 1 - mu - tiny, args=(mu,), xtol=1e-15, rtol=1e-15)
    x2 = brentq(_collinear_residual, 1 - mu + tiny, 2.0, args=(mu,), xtol=1e-15, rtol=1e-15)
    x3 = brentq(_collinear_residual, -2.0, -mu - tiny, args=(mu,), xtol=1e-15, rtol=1e-15)
    xs = [(x1, 0.0), (x2, 0.0), (x3, 0.0),
          (0.5 - mu, math.sqrt(3) / 2), (0.5 - mu, -math.sqrt(3) / 2)]
    n = 6 if spatial else 4
    out = []
    for x, y in xs:
        s = np.zeros(n)
        s[0], s[1] = x, y
        out.append(s)
    return out


def lagrange_point(mu: float, index: int, spatial: bool = False) -> np.ndarray:
    return lagrange_points(mu, spatial)[index - 1]


# ---------------------------------------------------------------- units

def to_physical(params: SystemParams, s=None, t: float | None = None):
    """Scale a normalized state (m, m/s) and/or time (s)."""
    out_s = None
    if s is not None:
        s = np.asarray(s, dtype=float)
        d = _dim(s)
        out_s = np.concatenate([s[:d] * params.l_star, s[d:] * params.velocity_unit])
    out_t = None if t is None else t * params.time_unit
    return out_s, out_t


def from_physical(params: SystemParams, s=None, t: float | None = None):
    out_s = None
    if s is not None:
        s = np.asarray(s, dtype=float)
        d = _dim(s)
        out_s = np.concatenate([s[:d] / params.l_star, s[d:] / params.velocity_unit])
    out_t = None if t is None else t / params.time_unit
    return out_s, out_t


def to_days(params: SystemParams, t: float) -> float:
    return t * params.time_unit / SECONDS_PER_DAY


# ---------------------------------------------------------------- flows

def flow_state(params: SystemParams, s, t: float, t0: float = 0.0, tol=(1e-12, 1e-12)) -> np.ndarray:
    """Uncontrolled flow of ``s`` from ``t0`` to ``t``."""
    from .numerics import flow
    return flow(natural_field(params), s, t0, t, tol)


def flow_stm(params: SystemParams, s, t: float, t0: float = 0.0,
             tol=(1e-12, 1e-12)) -> tuple[np.ndarray, np.ndarray]:
    """Flow of ``s`` together with its state-transition matrix."""
    from .numerics import flow
    s = np.asarray(s, dtype=float)
    n = s.size
    y0 = np.concatenate([s, np.eye(n).ravel()])
    y = flow(variational_field(params, n), y0, t0, t, tol)
    return y[:n], y[n:].reshape(n, n)
