import json

import numpy as np
import pytest

from lowthrust import crtbp
from lowthrust.connections import (
    HeteroclinicOrbit,
    NoConnectionError,
    closest_approach,
    find_heteroclinic,
)
from lowthrust.manifolds import DEFAULT_ALPHA, globalize


def test_junction_and_section(params, heteroclinic1):
    het = heteroclinic1
    assert het.junction_mismatch <= 1e-9
    for leg in (het.unstable_leg, het.stable_leg):
        assert abs(leg.y1[0] - (1 - params.mu)) <= 1e-12
        assert leg.y1[1] < 0


def test_energy_constant_along_connection(params, heteroclinic1):
    _, states = heteroclinic1.sample(3000)
    e = np.array([crtbp.energy(params, s) for s in states])
    assert np.max(np.abs(e - e[0])) <= 1e-8


def test_endpoints_are_seeds(heteroclinic1):
    het = heteroclinic1
    assert np.allclose(het.state_at(0.0), het.seed1, atol=1e-14)
    assert np.allclose(het.state_at(het.total_time), het.seed2, atol=1e-14)
    assert het.revolutions() == int(abs(het.windings()))


def test_polish_improves_on_grid(params, lyap_pair, heteroclinic1):
    f1 = globalize(params, lyap_pair[0], 100, "unstable", 1, DEFAULT_ALPHA, 20.0, "U2", 2, project_energy=True)
    f2 = globalize(params, lyap_pair[1], 100, "stable", -1, DEFAULT_ALPHA, 20.0, "U2", 2, project_energy=True)
    pair = closest_approach(f1, f2, "U2", params.mu)
    all_gaps = [np.linalg.norm(a.section_state - b.section_state) for a in f1 for b in f2 if a.ok and b.ok]
    assert pair.gap == pytest.approx(min(all_gaps))
    assert heteroclinic1.junction_mismatch <= pair.gap
    assert heteroclinic1.junction_mismatch <= heteroclinic1.grid_distance


def test_round_trip(params, heteroclinic1, tmp_path):
    data = json.loads(json.dumps(heteroclinic1.to_dict()))
    back = HeteroclinicOrbit.from_dict(params, data)
    assert back.total_time == pytest.approx(heteroclinic1.total_time, abs=1e-12)
    assert back.junction_mismatch <= 1e-9
    heteroclinic1.write_csv(tmp_path / "h.csv", n=11)
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 12


def test_first_crossings_do_not_connect(params, lyap_pair):
    with pytest.raises(NoConnectionError):
        find_heteroclinic(params, *lyap_pair, crossings=(1, 1), n_grid=60)


def test_rejects_mismatched_energy(params, lyap_pair):
    from lowthrust.orbits import orbit_at_energy
    other = orbit_at_energy(params, 2, -1.5900)
    with pytest.raises(ValueError):
        find_heteroclinic(params, lyap_pair[0], other)
    with pytest.raises(ValueError):
        find_heteroclinic(params, lyap_pair[0], lyap_pair[0])
