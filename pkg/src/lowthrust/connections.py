"""Heteroclinic connections on a Poincaré section and closest manifold pairs for bridging."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .crtbp import SystemParams
from .manifolds import DEFAULT_ALPHA, DirectionField, ManifoldFiber, globalize, propagate_fiber, section_cut
from .numerics import NonConvergenceError, Trajectory, newton_solve
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

ENERGY_MATCH_TOL = 1e-9


class NoConnectionError(RuntimeError):
    """The manifold cuts do not come close enough to seed a connection."""


class NoCandidatesError(RuntimeError):
    """A section cut was empty."""


@dataclass
class HeteroclinicOrbit:
    phase1: float
    phase2: float
    alpha: float
    seed1: np.ndarray           # alpha-offset start near the departure orbit
    seed2: np.ndarray           # alpha-offset end near the arrival orbit
    unstable_leg: Trajectory    # seed1 forward to the section
    stable_leg: Trajectory      # seed2 backward to the section
    t_unstable: float
    t_stable: float             # positive duration of the stable leg
    junction: np.ndarray        # state difference at the section
    mu: float
    grid_distance: float = math.nan
    iterations: int = 0
    crossings: tuple[int, int] = (1, 1)
    horizon: float = 20.0
    section: str = "U2"

    @property
    def total_time(self) -> float:
        return self.t_unstable + self.t_stable

    @property
    def junction_mismatch(self) -> float:
        return float(np.max(np.abs(self.junction)))

    def state_at(self, t: float) -> np.ndarray:
        """State ``t`` time units after leaving ``seed1``."""
        if t <= self.t_unstable:
            return self.unstable_leg(min(max(t, 0.0), self.t_unstable))
        return self.stable_leg(max(t - self.total_time, -self.t_stable))

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        times = np.linspace(0.0, self.total_time, n)
        return times, np.array([self.state_at(t) for t in times])

    def windings(self, n: int = 4000) -> float:
        """Signed number of turns about the Moon along the path."""
        _, states = self.sample(n)
        ang = np.unwrap(np.arctan2(states[:, 1], states[:, 0] - (1.0 - self.mu)))
        return float((ang[-1] - ang[0]) / (2 * math.pi))

    def revolutions(self, n: int = 4000) -> int:
        """Complete turns about the Moon."""
        return int(math.floor(abs(self.windings(n))))

    def to_dict(self) -> dict:
        return {
            "phase1_nd": self.phase1, "phase2_nd": self.phase2, "alpha_nd": self.alpha,
            "seed1_nd": self.seed1.tolist(), "seed2_nd": self.seed2.tolist(),
            "t_unstable_nd": self.t_unstable, "t_stable_nd": self.t_stable,
            "total_time_nd": self.total_time, "junction_mismatch_nd": self.junction_mismatch,
            "windings_turns": self.windings(), "revolutions_count": self.revolutions(),
            "grid_distance_nd": self.grid_distance, "crossings_count": list(self.crossings),
            "horizon_nd": self.horizon, "section": self.section,
        }

    @classmethod
    def from_dict(cls, params: SystemParams, data: dict) -> "HeteroclinicOrbit":
        """Rebuild from :meth:`to_dict` output by re-propagating both seeds."""
        k1, k2 = data["crossings_count"]
        seed1, seed2 = np.array(data["seed1_nd"]), np.array(data["seed2_nd"])
        horizon, section = data["horizon_nd"], data["section"]
        leg1, p1, t1 = propagate_fiber(params, seed1, "unstable", horizon, section, k1, dense=True)
        leg2, p2, t2 = propagate_fiber(params, seed2, "stable", horizon, section, k2, dense=True)
        return cls(float(data["phase1_nd"]), float(data["phase2_nd"]), float(data["alpha_nd"]), seed1, seed2,
                   leg1, leg2, float(t1), float(-t2), p1 - p2, params.mu,
                   float(data.get("grid_distance_nd", math.nan)), 0, (k1, k2), float(horizon), section)

    def write_csv(self, path, n: int = 2000) -> None:
        times, states = self.sample(n)
        labels = ["x", "y", "z", "vx", "vy", "vz"] if states.shape[1] == 6 else ["x", "y", "vx", "vy"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *labels])
            for t, s in zip(times, states):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in s)])


@dataclass
class BridgePair:
    point_1: np.ndarray
    point_2: np.ndarray
    gap: float
    index_1: int
    index_2: int
    time_1: float | None = None
    time_2: float | None = None

    def to_dict(self) -> dict:
        return {"point_1_nd": self.point_1.tolist(), "point_2_nd": self.point_2.tolist(), "gap_nd": self.gap,
                "index_1_count": self.index_1, "index_2_count": self.index_2,
                "time_1_nd": self.time_1, "time_2_nd": self.time_2}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _cut_arrays(fibers: Sequence[ManifoldFiber], cut) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.array([i for i, _ in cut], dtype=int)
    states = np.array([s for _, s in cut])
    times = np.array([fibers[i].section_time for i in idx])
    return idx, states, times


def find_heteroclinic(params: SystemParams, orbit1: PeriodicOrbit, orbit2: PeriodicOrbit,
                      alpha: float = DEFAULT_ALPHA, n_grid: int = 100, section: str = "U2",
                      crossings: tuple[int, int] = (1, 1), branches: tuple[int, int] = (1, -1),
                      horizon: float = 20.0, tol: float = 1e-10) -> HeteroclinicOrbit:
    """Zero-control connection from the unstable manifold of ``orbit1`` to the stable one of ``orbit2``.

    Both manifolds are cut by the section; the pair of grid phases closest in
    ``(y, vy)`` seeds a Newton solve over the two phases. Seeds are projected
    onto the orbits' common energy so that matching ``(y, vy)`` also matches
    ``vx``.
    """
    if orbit1.spatial or orbit2.spatial:
        raise ValueError("heteroclinic search is planar; use closest_approach for spatial orbits")
    if np.allclose(orbit1.initial_state, orbit2.initial_state) and orbit1.center == orbit2.center:
        raise ValueError("departure and arrival orbits are the same orbit")
    e1, e2 = orbit1.energy, orbit2.energy
    if abs(e1 - e2) > ENERGY_MATCH_TOL:
        raise ValueError(f"orbits must share an energy (got {e1:.12f} and {e2:.12f})")
    k1, k2 = crossings
    b1, b2 = branches
    d1 = DirectionField(params, orbit1)
    d2 = DirectionField(params, orbit2)
    f1 = globalize(params, orbit1, n_grid, "unstable", b1, alpha, horizon, section, k1,
                   directions=d1, project_energy=True)
    f2 = globalize(params, orbit2, n_grid, "stable", b2, alpha, horizon, section, k2,
                   directions=d2, project_energy=True)
    c1, c2 = section_cut(f1, section), section_cut(f2, section)
    if not c1 or not c2:
        raise NoConnectionError(f"empty section cut ({len(c1)} unstable, {len(c2)} stable crossings)")
    i1, s1, _ = _cut_arrays(f1, c1)
    i2, s2, _ = _cut_arrays(f2, c2)
    dist = np.hypot(s1[:, 1, None] - s2[None, :, 1], s1[:, 3, None] - s2[None, :, 3])
    a, b = np.unravel_index(np.argmin(dist), dist.shape)
    grid_min = float(dist[a, b])
    log.info("closest grid pair %d/%d at distance %.3e", i1[a], i2[b], grid_min)
    # the cuts are closed curves; if the nearest pair is farther apart than the
    # typical spacing along either curve there is no crossing to polish
    spacing = max(_curve_spacing(s1[:, [1, 3]]), _curve_spacing(s2[:, [1, 3]]))
    if grid_min > 5.0 * spacing:
        raise NoConnectionError(f"section cuts do not intersect (closest grid distance {grid_min:.3e})")

    def cross(dirs, phase, stability, branch, k):
        _, _, seed = dirs.seed(phase, stability, branch, alpha, project_energy=True)
        _, state, t_ev = propagate_fiber(params, seed, stability, horizon, section, k, dense=False)
        return seed, state, t_ev

    def residual(z):
        _, p1, _ = cross(d1, z[0], "unstable", b1, k1)
        _, p2, _ = cross(d2, z[1], "stable", b2, k2)
        return np.array([p1[1] - p2[1], p1[3] - p2[3]])

    z0 = np.array([f1[i1[a]].phase, f2[i2[b]].phase])
    try:
        res = newton_solve(residual, z0, tol=tol, max_iter=40, rel_step=1e-7)
    except NonConvergenceError as exc:
        raise NoConnectionError(f"phase Newton failed: {exc}") from exc
    ph1, ph2 = float(res.x[0] % orbit1.period), float(res.x[1] % orbit2.period)
    seed1, _, _ = cross(d1, ph1, "unstable", b1, k1)
    seed2, _, _ = cross(d2, ph2, "stable", b2, k2)
    leg1, p1, t1 = propagate_fiber(params, seed1, "unstable", horizon, section, k1, dense=True)
    leg2, p2, t2 = propagate_fiber(params, seed2, "stable", horizon, section, k2, dense=True)
    return HeteroclinicOrbit(ph1, ph2, alpha, seed1, seed2, leg1, leg2, float(t1), float(-t2),
                             p1 - p2, params.mu, grid_min, res.iterations, (k1, k2), horizon, section)


def _curve_spacing(pts: np.ndarray) -> float:
    if len(pts) < 2:
        return math.inf
    return float(np.median(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def closest_approach(fibers1: Sequence[ManifoldFiber], fibers2: Sequence[ManifoldFiber],
                     section: str = "U2", mu: float | None = None) -> BridgePair:
    """Pair of section crossings (one per fiber set) with the smallest full-state distance.

    Ties resolve to the lowest ``(index_1, index_2)``.
    """
    c1 = section_cut(fibers1, section, mu=mu)
    c2 = section_cut(fibers2, section, mu=mu)
    if not c1 or not c2:
        raise NoCandidatesError(f"empty section cut ({len(c1)} and {len(c2)} crossings)")
    i1, s1, t1 = _cut_arrays(fibers1, c1)
    i2, s2, t2 = _cut_arrays(fibers2, c2)
    dist = np.linalg.norm(s1[:, None, :] - s2[None, :, :], axis=2)
    a, b = np.unravel_index(np.argmin(dist), dist.shape)
    return BridgePair(s1[a].copy(), s2[b].copy(), float(dist[a, b]), int(i1[a]), int(i2[b]),
                      None if t1[a] is None else float(t1[a]), None if t2[b] is None else float(t2[b]))


def bridge_manifolds(params: SystemParams, orbit1: PeriodicOrbit, orbit2: PeriodicOrbit,
                     alpha: float = DEFAULT_ALPHA, n_points: int = 1000, section: str = "U2",
                     crossings: tuple[int, int] = (1, 1), branches: tuple[int, int] = (1, -1),
                     horizon: float = 12.0):
    """Globalize both manifolds to the section and return the closest pair with its fibers."""
    f1 = globalize(params, orbit1, n_points, "unstable", branches[0], alpha, horizon, section, crossings[0])
    f2 = globalize(params, orbit2, n_points, "stable", branches[1], alpha, horizon, section, crossings[1])
    pair = closest_approach(f1, f2, section, params.mu)
    return pair, f1[pair.index_1], f2[pair.index_2]


__all__ = ["BridgePair", "HeteroclinicOrbit", "NoCandidatesError", "NoConnectionError",
           "bridge_manifolds", "closest_approach", "find_heteroclinic"]
