import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coulomb_lab.errors import ConfigurationError, InvalidPointError
from coulomb_lab.geometry import (INFINITY, NORTH_POLE, BaseMeasure, Domain, build_grid,
                                  chordal_distance, read_grid_csv, stereo_check,
                                  stereo_inverse, stereo_project, write_grid_csv)

finite = st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False)


def test_projection_examples():
    assert np.allclose(stereo_project(0), [0, 0, 0])
    assert np.array_equal(stereo_project(INFINITY), NORTH_POLE)
    assert np.allclose(stereo_project(1), [0.5, 0, 0.5])


def test_inverse_examples():
    assert stereo_inverse([0, 0, 0]) == 0
    assert stereo_inverse([0, 0, 1]) is INFINITY
    assert stereo_inverse([0.5, 0, 0.5]) == pytest.approx(1)


def test_inverse_rejects_off_sphere_point():
    with pytest.raises(InvalidPointError):
        stereo_inverse([0.3, 0.3, 0.9])


def test_chordal_examples():
    assert chordal_distance(0, INFINITY) == pytest.approx(1.0, abs=1e-15)
    assert chordal_distance(1, 0) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert chordal_distance(2 + 3j, 2 + 3j) == 0
    assert chordal_distance(INFINITY, INFINITY) == 0


def test_infinity_marker_equals_only_itself():
    assert INFINITY == INFINITY
    assert INFINITY != 1e308
    assert INFINITY != float("inf")


@settings(max_examples=300, deadline=None)
@given(finite)
def test_projection_lands_on_sphere_and_round_trips(z):
    p = stereo_project(z)
    assert abs(p[0] ** 2 + p[1] ** 2 + (p[2] - 0.5) ** 2 - 0.25) <= 1e-12
    back = stereo_inverse(p)
    assert abs(back - z) <= 1e-9 * max(1.0, abs(z))


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_chordal_identity_and_diameter(z, u):
    d = chordal_distance(z, u)
    assert d <= 1.0 + 1e-15
    assert d == pytest.approx(np.linalg.norm(stereo_project(z) - stereo_project(u)), abs=1e-12)


def test_stereo_check_batch():
    res = stereo_check(pairs=10_000, seed=3)
    assert res["passed"]
    assert res["pairs_with_infinity"] > 0


def test_interval_grid_examples():
    g = build_grid(Domain.interval(-1, 1), 4)
    assert np.allclose(g.plane_nodes.real, [-0.75, -0.25, 0.25, 0.75])
    assert np.allclose(g.cell_measures, 0.5)
    g = build_grid(Domain.interval(0, 2), 2)
    assert np.allclose(g.plane_nodes.real, [0.5, 1.5])
    assert np.allclose(g.cell_measures, 1.0)


def test_grid_needs_two_nodes():
    with pytest.raises(ConfigurationError):
        build_grid(Domain.interval(-1, 1), 1)


@pytest.mark.parametrize("domain, base, mass", [
    (Domain.interval(-1, 3), "lebesgue", 4.0),
    (Domain.interval(-1, 1), "normal", math.erf(1 / math.sqrt(2))),
    (Domain.disk(2.0), "lebesgue", 4 * math.pi),
])
def test_bounded_grid_total_mass(domain, base, mass):
    g = build_grid(domain, 400, base)
    assert math.fsum(g.cell_measures) == pytest.approx(mass, rel=1e-9)


def test_realline_grid_is_sphere_chart_and_window_masses_are_lebesgue():
    g = build_grid(Domain.realline(), 100)
    assert g.chart == "sphere" and g.n == 100
    assert np.all(np.abs(np.linalg.norm(g.nodes - [0, 0, 0.5], axis=1) - 0.5) <= 1e-12)
    e = g.edges
    assert e[0] == -np.inf and e[-1] == np.inf
    lo, hi = 10, 80
    window = math.fsum(g.cell_measures[lo:hi])
    assert window == pytest.approx(e[hi] - e[lo], abs=1e-6)


def test_cap_excluding_grid_stays_finite():
    g = build_grid(Domain.realline(), 50, truncation="cap-excluding", theta_max=3.0)
    assert np.all(np.isfinite(g.edges))
    assert np.all(np.isfinite(g.cell_measures))


def test_unknown_domain_and_truncation():
    with pytest.raises(ConfigurationError):
        Domain("annulus", (1, 2))
    with pytest.raises(ConfigurationError):
        Domain.interval(1, 1)
    with pytest.raises(ConfigurationError):
        build_grid(Domain.interval(0, 1), 10, truncation="chop")


def test_domain_parse():
    assert Domain.parse("interval:-1,1") == Domain.interval(-1, 1)
    assert Domain.parse("realline") == Domain.realline()
    assert Domain.parse("disk:2") == Domain.disk(2)


def test_base_measure_atoms_parse():
    nu = BaseMeasure.parse("lebesgue+atoms:0.5@0,0.25@0.3")
    assert nu.atoms == ((0j, 0.5), (0.3 + 0j, 0.25))
    assert nu.total_mass(Domain.interval(-1, 1)) == pytest.approx(2.75)


def test_grid_csv_round_trip(tmp_path):
    g = build_grid(Domain.realline(), 40)
    path = tmp_path / "grid.csv"
    write_grid_csv(g, path)
    assert path.read_text().startswith("# chart=sphere")
    back = read_grid_csv(path, Domain.realline())
    assert back.chart == "sphere"
    assert np.allclose(back.plane_nodes, g.plane_nodes, rtol=1e-12)
    assert np.array_equal(back.spacing, g.spacing)
