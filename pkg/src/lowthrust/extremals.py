"""Energy-optimal extremals of the mass-varying controlled problem and local transfers.

Costates are carried in a scaled form ``s = kappa * p`` with
``kappa = (eps / m0)**2``: the control acceleration is then roughly
``|s_v| / 2`` whatever the engine size, which keeps Newton well scaled and
makes thrust continuation almost trivial while the control is unsaturated.
Only the switching function sees ``kappa``; every public result reports the
unscaled costate ``p = s / kappa``.

Extremal state layout (``d`` = 2 or 3): ``[r (d), v (d), m, s_r (d), s_v (d), s_m]``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import crtbp
from .crtbp import SystemParams, _accel, _gravity_hessian
from .numerics import (
    ContinuationSchedule,
    ContinuationStall,
    Trajectory,
    VectorField,
    continuation_run,
    flow,
    newton_solve,
    propagate,
)
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

SHOOT_TOL = 1e-10


# ---------------------------------------------------------------- compiled field

@njit(cache=True)
def _control(y, eps, bstar, kappa, d):
    n = 2 * d
    m = y[n]
    sv = y[n + 1 + d: 2 * n + 1]
    nv = math.sqrt(np.sum(sv * sv))
    psi = (eps / m * nv - bstar * eps * y[2 * n + 1]) / (2.0 * kappa)
    u = np.zeros(d)
    if psi > 0.0 and nv > 0.0:
        rho = psi if psi < 1.0 else 1.0
        for i in range(d):
            u[i] = rho * sv[i] / nv
    return u, psi


@njit(cache=True)
def _extremal(y, prm, d):
    mu, eps, bstar, kappa = prm[0], prm[1], prm[2], prm[3]
    n = 2 * d
    m = y[n]
    u, _ = _control(y, eps, bstar, kappa, d)
    rho = math.sqrt(np.sum(u * u))
    out = np.empty(2 * n + 2)
    out[:d] = y[d:n]
    acc = _accel(y[:n], mu, d)
    for i in range(d):
        out[d + i] = acc[i] + eps / m * u[i]
    out[n] = -bstar * eps * rho
    sr = y[n + 1: n + 1 + d]
    sv = y[n + 1 + d: 2 * n + 1]
    G = _gravity_hessian(y[:n], mu, d)
    for i in range(d):
        acc_i = 0.0
        for j in range(d):
            acc_i += G[j, i] * sv[j]
        out[n + 1 + i] = -acc_i
    out[n + 1 + d] = -sr[0] + 2.0 * sv[1]
    out[n + 2 + d] = -sr[1] - 2.0 * sv[0]
    if d == 3:
        out[n + 3 + d] = -sr[2]
    out[2 * n + 1] = eps / (m * m) * np.sum(sv * u)
    return out, rho, m


@njit(cache=True)
def extremal_rhs(t, y, prm):
    """Extremal field; ``prm = [mu, eps, beta_star, kappa, dim]``."""
    d = int(prm[4])
    out, _, _ = _extremal(y, prm, d)
    return out


@njit(cache=True)
def extremal_cost_rhs(t, y, prm):
    """Extremal field followed by the integrands |u|^2 and |u|^2/m^2."""
    d = int(prm[4])
    base = 4 * d + 2
    out, rho, m = _extremal(y[:base], prm, d)
    full = np.empty(base + 2)
    full[:base] = out
    full[base] = rho * rho
    full[base + 1] = rho * rho / (m * m)
    return full


@njit(cache=True)
def _third_term(p, s, coef, r):
    # d/dr of (Hessian of coef/|p|) applied to s
    d = p.size
    ps = 0.0
    for i in range(d):
        ps += p[i] * s[i]
    r5 = r ** 5
    M = np.empty((d, d))
    for i in range(d):
        for k in range(d):
            M[i, k] = coef * (3.0 * p[i] * s[k] + 3.0 * s[i] * p[k] - 15.0 * ps * p[i] * p[k] / (r * r)) / r5
        M[i, i] += coef * 3.0 * ps / r5
    return M


@njit(cache=True)
def _extremal_jacobian(y, prm, d):
    mu, eps, bstar, kappa = prm[0], prm[1], prm[2], prm[3]
    n = 2 * d
    N = 2 * n + 2
    A = np.zeros((N, N))
    m = y[n]
    sv = y[n + 1 + d: 2 * n + 1]
    nv = math.sqrt(np.sum(sv * sv))
    psi = (eps / m * nv - bstar * eps * y[2 * n + 1]) / (2.0 * kappa)
    rho = 0.0
    shat = np.zeros(d)
    if nv > 0.0:
        shat = sv / nv
    # derivatives of rho with respect to m, s_v, s_m (zero when off or saturated)
    drho_m = 0.0
    drho_sv = np.zeros(d)
    drho_sm = 0.0
    if psi > 0.0 and nv > 0.0:
        if psi < 1.0:
            rho = psi
            drho_m = -eps * nv / (2.0 * kappa * m * m)
            drho_sv = eps / (2.0 * kappa * m) * shat
            drho_sm = -bstar * eps / (2.0 * kappa)
        else:
            rho = 1.0
    u = rho * shat
    du_sv = np.zeros((d, d))
    if nv > 0.0 and rho > 0.0:
        for i in range(d):
            for j in range(d):
                du_sv[i, j] = shat[i] * drho_sv[j] - rho * shat[i] * shat[j] / nv
            du_sv[i, i] += rho / nv
    elif nv == 0.0 and y[2 * n + 1] == 0.0:
        # u = eps s_v / (2 kappa m) near s = 0: keep that slope so zero-costate nodes stay solvable
        for i in range(d):
            du_sv[i, i] = eps / (2.0 * kappa * m)
    du_m = shat * drho_m
    du_sm = shat * drho_sm
    # position rows
    for i in range(d):
        A[i, d + i] = 1.0
    # velocity rows
    G = _gravity_hessian(y[:n], mu, d)
    for i in range(d):
        for j in range(d):
            A[d + i, j] = G[i, j]
    A[d, d + 1] = 2.0
    A[d + 1, d] = -2.0
    for i in range(d):
        A[d + i, n] = -eps / (m * m) * u[i] + eps / m * du_m[i]
        for j in range(d):
            A[d + i, n + 1 + d + j] = eps / m * du_sv[i, j]
        A[d + i, 2 * n + 1] = eps / m * du_sm[i]
    # mass row
    A[n, n] = -bstar * eps * drho_m
    for j in range(d):
        A[n, n + 1 + d + j] = -bstar * eps * drho_sv[j]
    A[n, 2 * n + 1] = -bstar * eps * drho_sm
    # s_r rows: -G s_v
    x = y[0]
    yy = y[1]
    z = y[2] if d == 3 else 0.0
    p1 = np.empty(d)
    p2 = np.empty(d)
    p1[0] = x + mu
    p2[0] = x - 1.0 + mu
    p1[1] = yy
    p2[1] = yy
    if d == 3:
        p1[2] = z
        p2[2] = z
    r1 = math.sqrt(np.sum(p1 * p1))
    r2 = math.sqrt(np.sum(p2 * p2))
    M = _third_term(p1, sv, 1.0 - mu, r1) + _third_term(p2, sv, mu, r2)
    for i in range(d):
        for k in range(d):
            A[n + 1 + i, k] = -M[i, k]
            A[n + 1 + i, n + 1 + d + k] = -G[k, i]
    # s_v rows: -s_r - C^T s_v
    for i in range(d):
        A[n + 1 + d + i, n + 1 + i] = -1.0
    A[n + 1 + d, n + 2 + d] = 2.0
    A[n + 2 + d, n + 1 + d] = -2.0
    # s_m row: (eps/m^2) rho |s_v|
    c = eps / (m * m)
    A[2 * n + 1, n] = -2.0 * eps * rho * nv / (m * m * m) + c * nv * drho_m
    for j in range(d):
        A[2 * n + 1, n + 1 + d + j] = c * (rho * shat[j] + nv * drho_sv[j])
    A[2 * n + 1, 2 * n + 1] = c * nv * drho_sm
    return A


@njit(cache=True)
def extremal_variational_rhs(t, Y, prm):
    """Extremal field with its state-transition matrix appended (row-major)."""
    d = int(prm[4])
    N = 4 * d + 2
    y = Y[:N]
    out = np.empty(N + N * N)
    f, _, _ = _extremal(y, prm, d)
    out[:N] = f
    A = _extremal_jacobian(y, prm, d)
    Phi = Y[N:].reshape((N, N))
    out[N:] = (A @ Phi).ravel()
    return out


# ---------------------------------------------------------------- python-side model

@dataclass
class ExtremalState:
    x: np.ndarray
    m: float
    p: np.ndarray
    p_m: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.p.shape != self.x.shape:
            raise ValueError("costate and state dimensions differ")

    @property
    def dim(self) -> int:
        return self.x.size // 2

    def pack(self, kappa: float = 1.0) -> np.ndarray:
        return np.concatenate([self.x, [self.m], kappa * self.p, [kappa * self.p_m]])

    @classmethod
    def unpack(cls, y: np.ndarray, kappa: float = 1.0) -> "ExtremalState":
        n = (y.size - 2) // 2
        return cls(y[:n].copy(), float(y[n]), y[n + 1: 2 * n + 1] / kappa, float(y[2 * n + 1]) / kappa)


@dataclass(frozen=True)
class ExtremalSystem:
    """Extremal flow for a given engine (``eps``) and costate scale ``kappa``."""

    params: SystemParams
    eps: float
    kappa: float
    dim: int = 2

    @classmethod
    def for_engine(cls, params: SystemParams, eps: float, m0: float, dim: int) -> "ExtremalSystem":
        return cls(params, float(eps), (eps / m0) ** 2, dim)

    @property
    def size(self) -> int:
        return 4 * self.dim + 2

    def _prm(self) -> np.ndarray:
        return np.array([self.params.mu, self.eps, self.params.beta_star, self.kappa, float(self.dim)])

    def field(self) -> VectorField:
        return VectorField(extremal_rhs, self._prm(), "lowthrust.extremals:extremal_rhs")

    def cost_field(self) -> VectorField:
        return VectorField(extremal_cost_rhs, self._prm(), "lowthrust.extremals:extremal_cost_rhs")

    def flow(self, y0, duration: float, t0: float = 0.0) -> np.ndarray:
        return flow(self.field(), y0, t0, t0 + duration)

    def flow_stm(self, y0, duration: float) -> tuple[np.ndarray, np.ndarray]:
        """Endpoint and state-transition matrix of the extremal flow."""
        N = self.size
        Y0 = np.concatenate([np.asarray(y0, dtype=float), np.eye(N).ravel()])
        fld = VectorField(extremal_variational_rhs, self._prm(), "lowthrust.extremals:extremal_variational_rhs")
        Y = flow(fld, Y0, 0.0, duration)
        return Y[:N], Y[N:].reshape(N, N)

    def jacobian(self, y) -> np.ndarray:
        return _extremal_jacobian(np.asarray(y, dtype=float), self._prm(), self.dim)

    def propagate(self, y0, duration: float) -> Trajectory:
        return propagate(self.field(), y0, (0.0, duration))

    def control(self, y) -> np.ndarray:
        u, _ = _control(np.asarray(y, dtype=float), self.eps, self.params.beta_star, self.kappa, self.dim)
        return u

    def switching(self, y) -> float:
        _, psi = _control(np.asarray(y, dtype=float), self.eps, self.params.beta_star, self.kappa, self.dim)
        return float(psi)

    def hamiltonian(self, y, u=None) -> float:
        """Hamiltonian in true costate units, at ``u`` or at the maximizing control."""
        e = ExtremalState.unpack(np.asarray(y, dtype=float), self.kappa)
        return hamiltonian(self.params, e, self.eps, u)

    def scaled_hamiltonian(self, y) -> float:
        return self.kappa * self.hamiltonian(y)


def control_law(e: ExtremalState, eps: float, beta_star: float) -> tuple[np.ndarray, bool]:
    """Maximizing control and a flag raised at the singular case ``p_v = 0`` with ``psi > 0``."""
    d = e.dim
    pv = e.p[d:]
    nv = float(np.linalg.norm(pv))
    psi = (eps / e.m * nv - beta_star * eps * e.p_m) / 2.0
    if psi <= 0.0:
        return np.zeros(d), False
    if nv == 0.0:
        log.debug("singular control: zero velocity costate with positive switching function")
        return np.zeros(d), True
    return min(psi, 1.0) * pv / nv, False


def hamiltonian(params: SystemParams, e: ExtremalState, eps: float, u=None) -> float:
    d = e.dim
    if u is None:
        u, _ = control_law(e, eps, params.beta_star)
    u = np.asarray(u, dtype=float)
    f0 = crtbp.natural_rhs(0.0, e.x, np.array([params.mu]))
    return float(-u @ u + e.p @ f0 + eps / e.m * (e.p[d:] @ u)
                 - e.p_m * params.beta_star * eps * np.linalg.norm(u))


def extremal_field(params: SystemParams, e: ExtremalState, eps: float) -> ExtremalState:
    """Time derivative of an extremal state (true costate units)."""
    sys_ = ExtremalSystem(params, eps, 1.0, e.dim)
    crtbp._guard(params.mu, e.x)
    dy = extremal_rhs(0.0, e.pack(), sys_._prm())
    return _derivative(dy, e.x.size)


def _derivative(dy: np.ndarray, n: int) -> ExtremalState:
    # a derivative is not a state; bypass the positive-mass check
    obj = object.__new__(ExtremalState)
    obj.x = dy[:n].copy()
    obj.m = float(dy[n])
    obj.p = dy[n + 1: 2 * n + 1].copy()
    obj.p_m = float(dy[2 * n + 1])
    return obj


# ---------------------------------------------------------------- single shooting

@dataclass
class TransferProblem:
    start: np.ndarray
    start_mass: float
    target: np.ndarray
    duration: float
    eps: float

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.duration <= 0:
            raise ValueError("transfer duration must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.start.shape != self.target.shape:
            raise ValueError("start and target dimensions differ")

    @property
    def dim(self) -> int:
        return self.start.size // 2

    def system(self, params: SystemParams) -> ExtremalSystem:
        return ExtremalSystem.for_engine(params, self.eps, self.start_mass, self.dim)


def _shoot_residual(system: ExtremalSystem, prob: TransferProblem, target: np.ndarray):
    n = prob.start.size

    def residual(z):
        y0 = np.concatenate([prob.start, [prob.start_mass], z])
        yf = system.flow(y0, prob.duration)
        return np.append(yf[:n] - target, yf[2 * n + 1] / system.kappa)
    return residual


def shoot_single(params: SystemParams, prob: TransferProblem, guess=None, tol: float = SHOOT_TOL,
                 max_iter: int = 30) -> tuple[np.ndarray, float]:
    """Initial costate ``(p0, p_m0)`` (true units) steering ``start`` to ``target`` with free final mass."""
    system = prob.system(params)
    n = prob.start.size
    z0 = np.zeros(n + 1) if guess is None else system.kappa * np.concatenate([guess[0], [guess[1]]])
    res = newton_solve(_shoot_residual(system, prob, prob.target), z0, tol=tol, max_iter=max_iter)
    return res.x[:n] / system.kappa, float(res.x[n]) / system.kappa


@dataclass
class ExtremalArc:
    """A solved extremal leg: packed scaled initial state plus the system that flows it."""

    system: ExtremalSystem
    y0: np.ndarray
    duration: float
    t_start: float = 0.0

    @property
    def dim(self) -> int:
        return self.system.dim

    def final(self) -> np.ndarray:
        return self.system.flow(self.y0, self.duration)

    def trajectory(self) -> Trajectory:
        return self.system.propagate(self.y0, self.duration)

    def initial_costate(self) -> tuple[np.ndarray, float]:
        e = ExtremalState.unpack(self.y0, self.system.kappa)
        return e.p, e.p_m

    def quadratures(self) -> tuple[np.ndarray, float, float]:
        """Final extremal state and the integrals of |u|^2 and |u|^2/m^2."""
        y = flow(self.system.cost_field(), np.append(self.y0, [0.0, 0.0]), 0.0, self.duration)
        base = self.system.size
        return y[:base], float(y[base]), float(y[base + 1])

    def rows(self, n: int = 400) -> list[list[float]]:
        """Samples as ``t, x, y, z, vx, vy, vz, m, ux, uy, uz, u_norm, H`` (empty z fields in the plane)."""
        traj = self.trajectory()
        out = []
        for t in np.linspace(0.0, self.duration, n):
            y = traj(t)
            out.append(sample_row(self.system, self.t_start + t, y))
        return out


def sample_row(system: ExtremalSystem, t: float, y: np.ndarray) -> list:
    d = system.dim
    u = system.control(y)
    if d == 2:
        pos = [y[0], y[1], ""]
        vel = [y[2], y[3], ""]
        uu = [u[0], u[1], ""]
    else:
        pos, vel, uu = list(y[:3]), list(y[3:6]), list(u)
    return [t, *pos, *vel, y[2 * d], *uu, float(np.linalg.norm(u)), system.hamiltonian(y)]


CSV_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "m", "ux", "uy", "uz", "u_norm", "H"]


def write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(["" if v == "" else repr(float(v)) for v in r])


# ---------------------------------------------------------------- local transfers

@dataclass
class Anchors:
    start: np.ndarray
    end: np.ndarray
    duration: float
    natural_end: np.ndarray       # uncontrolled image of ``start`` after ``duration``
    orbit_point: np.ndarray       # closest orbit sample to the manifold seed
    orbit_phase: float            # its time along the orbit
    start_phase: float | None = None  # orbit phase of ``start`` when it lies on the orbit
    end_phase: float | None = None    # orbit phase of ``end`` when it lies on the orbit


def closest_orbit_point(orbit: PeriodicOrbit, point, n: int = 1000) -> tuple[float, np.ndarray]:
    times, states = orbit.discretize(n)
    k = int(np.argmin(np.linalg.norm(states - np.asarray(point), axis=1)))
    return float(times[k]), states[k]


def build_anchor_points(params: SystemParams, orbit: PeriodicOrbit, seed, t_orbit: float,
                        t_free: float, departure: bool = True, n: int = 1000) -> Anchors:
    """Fixed endpoints of a local transfer between an orbit and a free trajectory.

    ``seed`` is the manifold point next to the orbit. For a departure leg the
    closest orbit point is flowed back ``t_orbit`` to give the start and the
    seed is flowed forward ``t_free`` to give the end; an arrival leg mirrors
    this (seed back ``t_free``, orbit point forward ``t_orbit``).
    """
    seed = np.asarray(seed, dtype=float)
    phase, point = closest_orbit_point(orbit, seed, n)
    duration = t_orbit + t_free
    if departure:
        start = crtbp.flow_state(params, point, -t_orbit) if t_orbit else point.copy()
        end = crtbp.flow_state(params, seed, t_free) if t_free else seed.copy()
        start_phase, end_phase = (phase - t_orbit) % orbit.period, None
    else:
        start = crtbp.flow_state(params, seed, -t_free) if t_free else seed.copy()
        end = crtbp.flow_state(params, point, t_orbit) if t_orbit else point.copy()
        start_phase, end_phase = None, (phase + t_orbit) % orbit.period
    natural = crtbp.flow_state(params, start, duration) if duration else start.copy()
    return Anchors(start, end, duration, natural, point, phase, start_phase, end_phase)


def free_anchor_points(params: SystemParams, point1, point2, t1: float, t2: float) -> Anchors:
    """Endpoints of a bridging leg between two free trajectories meeting a section.

    ``point1`` is flowed back ``t1`` and ``point2`` forward ``t2``.
    """
    start = crtbp.flow_state(params, point1, -t1)
    end = crtbp.flow_state(params, point2, t2)
    natural = crtbp.flow_state(params, start, t1 + t2)
    return Anchors(start, end, t1 + t2, natural, np.asarray(point1, dtype=float), 0.0)


@dataclass
class LocalTransfer:
    arc: ExtremalArc
    anchors: Anchors
    iterations: int
    steps: int
    final_mass: float
    cost: float
    residual: float
    runtime: float = 0.0
    lambdas: list = field(default_factory=list)

    @property
    def costate(self) -> tuple[np.ndarray, float]:
        return self.arc.initial_costate()


def solve_local_transfer(params: SystemParams, anchors: Anchors, start_mass: float, eps: float,
                         schedule: ContinuationSchedule | None = None, tol: float = SHOOT_TOL) -> LocalTransfer:
    """Final-state continuation from the uncontrolled endpoint to the anchor target.

    At lambda = 0 the target is the natural image of the start, solved by the
    zero costate; each later step is warm-started by linear prediction.
    """
    import time
    t0 = time.perf_counter()
    schedule = schedule or ContinuationSchedule.uniform(20)
    prob = TransferProblem(anchors.start, start_mass, anchors.end, anchors.duration, eps)
    system = prob.system(params)
    n = prob.start.size

    def family(lam):
        target = (1.0 - lam) * anchors.natural_end + lam * anchors.end
        return _shoot_residual(system, prob, target)

    try:
        out = continuation_run(family, schedule, np.zeros(n + 1), tol=tol)
    except ContinuationStall:
        log.error("local transfer continuation stalled")
        raise
    y0 = np.concatenate([prob.start, [start_mass], out.solution])
    arc = ExtremalArc(system, y0, prob.duration)
    yf, q1, _ = arc.quadratures()
    res = float(np.max(np.abs(family(1.0)(out.solution))))
    return LocalTransfer(arc, anchors, out.newton_iterations, out.steps, float(yf[n]), q1, res,
                         time.perf_counter() - t0, out.lambdas)
