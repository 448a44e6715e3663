"""Scenario files: flat ``key = value unit`` text with dotted keys.

Example::

    mission.kind = lyapunov-lyapunov-1rev
    system.l_star = 384402 km
    mission.energy = -1.592081 nd
    thrust.start = 60 N

Lines starting with ``#`` and trailing ``# ...`` comments are ignored. Every
dimensional value carries a unit tag (``nd`` marks normalized quantities);
counts, pairs and names are untagged. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .crtbp import SystemParams
from .missions import HaloMission, LyapunovMission

KINDS = ("lyapunov-lyapunov-1rev", "lyapunov-lyapunov-2rev", "halo-halo")
OUTPUT_ENV = "LOWTHRUST_OUTPUT_DIR"


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario."""


# unit tag -> factor to the internal unit of each dimension
_UNITS = {
    "length_m": {"m": 1.0, "km": 1e3},
    "length_km": {"km": 1.0, "m": 1e-3},
    "time_s": {"s": 1.0, "days": 86400.0},
    "speed": {"m/s": 1.0, "km/s": 1e3},
    "accel": {"m/s^2": 1.0},
    "mass": {"kg": 1.0},
    "force": {"N": 1.0},
    "isp": {"s": 1.0},
    "nd": {"nd": 1.0},
}

_INTERNAL_UNIT = {"length_m": "m", "length_km": "km", "time_s": "s", "speed": "m_per_s", "accel": "m_per_s2",
                  "mass": "kg", "force": "N", "isp": "s", "nd": "nd", "int": "count", "pair": "count"}


@dataclass(frozen=True)
class _Key:
    target: str          # "system", "mission" or "scenario"
    attr: str
    kind: str            # a unit dimension, "int", "pair" or "str"
    positive: bool = True


_KEYS = {
    "mission.kind": _Key("scenario", "kind", "str"),
    "output.dir": _Key("scenario", "output_dir", "str"),
    "system.mu": _Key("system", "mu", "nd"),
    "system.l_star": _Key("system", "l_star", "length_m"),
    "system.v_star": _Key("system", "v_star", "speed"),
    "system.t_star": _Key("system", "t_star", "time_s"),
    "system.isp": _Key("system", "isp", "isp"),
    "system.g0": _Key("system", "g0", "accel"),
    "system.earth_mass": _Key("system", "earth_mass", "mass"),
    "system.moon_mass": _Key("system", "moon_mass", "mass"),
    "spacecraft.m0": _Key("mission", "m0", "mass"),
    "mission.energy": _Key("mission", "energy", "nd", positive=False),
    "mission.energy_1": _Key("mission", "energy_1", "nd", positive=False),
    "mission.energy_2": _Key("mission", "energy_2", "nd", positive=False),
    "mission.z0_1": _Key("mission", "z0_km_1", "length_km", positive=False),
    "mission.z0_2": _Key("mission", "z0_km_2", "length_km", positive=False),
    "mission.alpha": _Key("mission", "alpha", "nd"),
    "mission.crossings": _Key("mission", "crossings", "pair"),
    "mission.branches": _Key("mission", "branches", "pair", positive=False),
    "mission.horizon": _Key("mission", "horizon", "nd"),
    "grid.heteroclinic": _Key("mission", "n_grid", "int"),
    "grid.bridge": _Key("mission", "n_points", "int"),
    "anchors.t_orbit": _Key("mission", "t_orbit", "nd"),
    "anchors.t_free": _Key("mission", "t_free", "nd"),
    "anchors.t_bridge": _Key("mission", "t_bridge", "nd"),
    "nodes.extra": _Key("mission", "extra_nodes", "int"),
    "nodes.extra_pair": _Key("mission", "extra_nodes", "pair"),
    "nodes.free_costate": _Key("mission", "free_costate", "str"),
    "thrust.start": _Key("mission", "tmax_start", "force"),
    "thrust.target": _Key("mission", "tmax_target", "force"),
    "thrust.steps": _Key("mission", "thrust_steps", "int"),
    "local.steps": _Key("mission", "local_steps", "int"),
    "solver.transfer_tol": _Key("mission", "transfer_tol", "nd"),
    "solver.mission_tol": _Key("mission", "mission_tol", "nd"),
    "solver.transversality_tol": _Key("mission", "transversality_tol", "nd"),
    "solver.heteroclinic_tol": _Key("mission", "heteroclinic_tol", "nd"),
}

TOLERANCE_KEYS = {k.split(".", 1)[1]: k for k in _KEYS if k.startswith("solver.")}


@dataclass
class Scenario:
    kind: str
    system: SystemParams
    mission: LyapunovMission | HaloMission
    output_dir: Path
    source: Path | None = None
    values: dict = field(default_factory=dict)   # parsed entries as written, for metadata

    @property
    def is_halo(self) -> bool:
        return self.kind == "halo-halo"

    def tagged_values(self) -> dict:
        """Parsed entries keyed by ``<key>_<internal unit>`` so every number names its unit."""
        def tag(k):
            if k == "mission.branches":
                return f"{k}_sign"
            return k if _KEYS[k].kind == "str" else f"{k}_{_INTERNAL_UNIT[_KEYS[k].kind]}"
        return {tag(k): v for k, v in self.values.items()}

    def with_tolerances(self, overrides: dict[str, float]) -> "Scenario":
        changes = {}
        for name, value in overrides.items():
            key = TOLERANCE_KEYS.get(name) or (name if name in _KEYS and name.startswith("solver.") else None)
            if key is None:
                raise ScenarioError(f"unknown tolerance {name!r}; expected one of {sorted(TOLERANCE_KEYS)}")
            if not value > 0:
                raise ScenarioError(f"tolerance {name} must be positive")
            changes[_KEYS[key].attr] = float(value)
        return dataclasses.replace(self, mission=dataclasses.replace(self.mission, **changes))


def _parse_value(key: str, spec: _Key, text: str):
    parts = text.split()
    if spec.kind == "str":
        if len(parts) != 1:
            raise ScenarioError(f"{key}: expected a single word, got {text!r}")
        return parts[0]
    if spec.kind in ("int", "pair"):
        items = [p.strip() for p in text.split(",")]
        try:
            nums = [int(p) for p in items]
        except ValueError:
            raise ScenarioError(f"{key}: expected integer{'s' if spec.kind == 'pair' else ''}, got {text!r}") from None
        if spec.kind == "int" and len(nums) != 1 or spec.kind == "pair" and len(nums) != 2:
            raise ScenarioError(f"{key}: wrong number of values in {text!r}")
        if spec.positive and any(n < 0 for n in nums):
            raise ScenarioError(f"{key}: values must be non-negative")
        return nums[0] if spec.kind == "int" else tuple(nums)
    if len(parts) != 2:
        raise ScenarioError(f"{key}: expected '<number> <unit>' with unit in {sorted(_UNITS[spec.kind])}, "
                            f"got {text!r}")
    number, unit = parts
    units = _UNITS[spec.kind]
    if unit not in units:
        raise ScenarioError(f"{key}: unit {unit!r} not accepted here; use one of {sorted(units)}")
    try:
        value = float(number) * units[unit]
    except ValueError:
        raise ScenarioError(f"{key}: {number!r} is not a number") from None
    if not math.isfinite(value):
        raise ScenarioError(f"{key}: value must be finite")
    if spec.positive and value <= 0:
        raise ScenarioError(f"{key}: value must be positive")
    return value


def parse_text(text: str) -> dict[str, object]:
    """Parse the raw entries; duplicates and unknown keys are errors."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(key, _KEYS[key], value)
    return out


def build(entries: dict[str, object], source: Path | None = None, output_dir: str | None = None) -> Scenario:
    kind = entries.get("mission.kind")
    if kind not in KINDS:
        raise ScenarioError(f"mission.kind must be one of {KINDS}, got {kind!r}")
    halo = kind == "halo-halo"
    system_kw, mission_kw = {}, {}
    for key, value in entries.items():
        spec = _KEYS[key]
        if spec.target == "system":
            system_kw[spec.attr] = value
        elif spec.target == "mission":
            mission_kw[spec.attr] = value
    if halo:
        cfg_cls, base = HaloMission, HaloMission()
        if "nodes.extra" in entries:
            raise ScenarioError("halo missions take nodes.extra_pair (one count per manifold leg)")
        for key in ("mission.energy", "grid.heteroclinic"):
            if key in entries:
                raise ScenarioError(f"{key} does not apply to halo-halo missions")
    else:
        cfg_cls = LyapunovMission
        base = LyapunovMission(crossings=(2, 2), extra_nodes=5, energy=-1.5890) \
            if kind.endswith("2rev") else LyapunovMission()
        for key in ("mission.energy_1", "mission.energy_2", "mission.z0_1", "mission.z0_2",
                    "grid.bridge", "anchors.t_bridge", "nodes.extra_pair"):
            if key in entries:
                raise ScenarioError(f"{key} does not apply to {kind} missions")
    if mission_kw.get("free_costate", "zero") not in ("zero", "carry"):
        raise ScenarioError("nodes.free_costate must be 'zero' or 'carry'")
    if "branches" in mission_kw and any(b not in (1, -1) for b in mission_kw["branches"]):
        raise ScenarioError("mission.branches entries must be +1 or -1")
    if "crossings" in mission_kw and min(mission_kw["crossings"]) < 1:
        raise ScenarioError("mission.crossings entries must be at least 1")
    if "mu" not in system_kw and ("earth_mass" in system_kw or "moon_mass" in system_kw):
        base_sys = SystemParams()
        earth = system_kw.get("earth_mass", base_sys.earth_mass)
        moon = system_kw.get("moon_mass", base_sys.moon_mass)
        system_kw["mu"] = moon / (earth + moon)
    try:
        system = SystemParams(**system_kw)
        mission = dataclasses.replace(base, **mission_kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    if not isinstance(mission, cfg_cls):
        raise ScenarioError("internal: configuration class mismatch")
    out = output_dir or entries.get("output.dir") or os.environ.get(OUTPUT_ENV) or "out"
    return Scenario(kind, system, mission, Path(out), source, dict(entries))


def load(path, output_dir: str | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return build(parse_text(text), path, output_dir)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``name`` without extension)."""
    path = Path(__file__).parent / "scenarios" / f"{name}.scn"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario {name!r}; available: {', '.join(bundled_names())}")
    return path


def bundled_names() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).parent / "scenarios").glob("*.scn"))


__all__ = ["KINDS", "OUTPUT_ENV", "Scenario", "ScenarioError", "build", "bundled", "bundled_names", "load",
           "parse_text"]
