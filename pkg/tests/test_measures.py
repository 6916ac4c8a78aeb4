import math

import numpy as np
import pytest

from coulomb_lab.errors import (ContractError, NorthPoleMassError, SingularConfigurationError,
                                UnboundedPotentialError)
from coulomb_lab.geometry import Domain, build_grid, stereo_project
from coulomb_lab.measures import (DiscreteMeasure, EmpiricalMeasure, _bl_transport, bl_distance,
                                  bl_distance_samples, energy, grid_energy, interaction_energy,
                                  kernel_matrix, potential, pushforward, quadratic_energy,
                                  read_measure_csv, weighted_energy, write_measure_csv)
from coulomb_lab.weights import WeightSpec, to_sphere_weight

from conftest import arcsine_measure, uniform_measure

LOG2 = math.log(2.0)


def atoms(points, masses=None):
    points = np.asarray(points, dtype=complex)
    masses = np.full(len(points), 1.0 / len(points)) if masses is None else masses
    return DiscreteMeasure(points, masses)


def test_measure_invariants():
    with pytest.raises(ContractError):
        DiscreteMeasure([0, 1], [0.5, -0.1])
    with pytest.raises(ContractError):
        DiscreteMeasure([0, 1], [0.5])
    mu = atoms([0, 1, 2])
    assert mu.total_mass == pytest.approx(1.0, abs=1e-15) and mu.is_probability()


def test_potential_examples():
    delta = DiscreteMeasure.atom(0)
    assert potential(delta, 1) == 0.0
    assert potential(delta, 0) == math.inf
    assert potential(atoms([-1, 1]), 0) == 0.0


def test_potential_refuses_non_finite_support():
    with pytest.raises(UnboundedPotentialError):
        potential(DiscreteMeasure(np.array([np.inf + 0j]), [1.0]), 0.0)


def test_interaction_energy_examples():
    assert interaction_energy([0, 1], [0.5, 0.5]) == 0.0
    assert interaction_energy([0, 2], [0.5, 0.5]) == pytest.approx(-0.5 * LOG2, abs=1e-15)
    third = [1 / 3] * 3
    assert interaction_energy([0, 1, 2], third) == pytest.approx(-(2 / 9) * LOG2, abs=1e-15)
    with pytest.raises(SingularConfigurationError):
        interaction_energy([0, 0], [0.5, 0.5])


def test_grid_energy_examples():
    g = build_grid(Domain.interval(-1, 1), 2000)
    assert grid_energy(uniform_measure(g)) == pytest.approx(1.5 - LOG2, abs=1e-3)
    assert grid_energy(arcsine_measure(g)) == pytest.approx(LOG2, abs=2e-3)
    one = DiscreteMeasure([0.5], [1.0], cell_widths=[1.0])
    assert grid_energy(one) == 1.5
    with pytest.raises(ContractError):
        grid_energy(atoms([0, 1]))


def test_atomic_measures_have_infinite_energy():
    assert energy(atoms([0, 1])) == math.inf
    assert weighted_energy(atoms([0, 1]), WeightSpec.zero()) == math.inf


@pytest.mark.parametrize("make, exact, n", [(uniform_measure, 1.5 - LOG2, 1000),
                                            (arcsine_measure, LOG2, 2000)])
def test_grid_energy_first_order(make, exact, n):
    e1 = grid_energy(make(build_grid(Domain.interval(-1, 1), n))) - exact
    e2 = grid_energy(make(build_grid(Domain.interval(-1, 1), 2 * n))) - exact
    assert 1.7 <= e1 / e2 <= 2.3


def test_weighted_energy_examples(interval_grid, arcsine_eq, line_grid):
    assert weighted_energy(arcsine_eq.measure, WeightSpec.zero()) == pytest.approx(LOG2, abs=2e-3)
    mu = uniform_measure(interval_grid)
    assert weighted_energy(mu, WeightSpec.zero()) == grid_energy(mu)
    # Cauchy law on the sphere chart of the real line with the lifted weight (identically 0)
    cauchy = DiscreteMeasure.from_grid(line_grid, np.diff(np.arctan(line_grid.edges)) / math.pi)
    lifted = to_sphere_weight(WeightSpec.cauchy_log(1), Domain.realline())
    assert weighted_energy(cauchy, lifted) == pytest.approx(LOG2, abs=5e-3)


def test_sphere_plane_energy_consistency():
    rng = np.random.default_rng(5)
    g = build_grid(Domain.interval(-3, 2), 300)
    for Q in (WeightSpec.zero(), WeightSpec.gaussian(0.7), WeightSpec.cauchy_log(1)):
        mu = DiscreteMeasure.from_grid(g, rng.dirichlet(np.ones(g.n)))
        lifted = to_sphere_weight(Q, Domain.interval(-3, 2), M=0.0)
        on_sphere = weighted_energy(pushforward(mu, "to-sphere"), lifted)
        assert abs(weighted_energy(mu, Q) - on_sphere) <= 1e-8


def test_potential_correspondence():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pts = rng.normal(size=8) + 1j * rng.normal(size=8)
        mu = atoms(pts, rng.dirichlet(np.ones(8)))
        z = complex(rng.normal(scale=3), rng.normal(scale=3))
        sphere = potential(pushforward(mu, "to-sphere"), stereo_project(z))
        plane = (potential(mu, z) + 0.5 * math.log1p(abs(z) ** 2)
                 + 0.5 * float(np.dot(mu.masses, np.log1p(np.abs(pts) ** 2))))
        assert sphere == pytest.approx(plane, abs=1e-9)


def test_energy_positivity_of_differences():
    rng = np.random.default_rng(7)
    g = build_grid(Domain.interval(-1, 1), 150)
    A = kernel_matrix(uniform_measure(g))
    for _ in range(100):
        d = rng.dirichlet(np.ones(g.n)) - rng.dirichlet(np.ones(g.n))
        assert quadratic_energy(A, d) >= -1e-9
    assert quadratic_energy(A, np.zeros(g.n)) == 0.0


def test_pushforward_examples():
    img = pushforward(DiscreteMeasure.atom(0), "to-sphere")
    assert np.allclose(img.support, [[0, 0, 0]]) and img.masses[0] == 1.0
    g = build_grid(Domain.interval(-2, 5), 50)
    mu = uniform_measure(g)
    back = pushforward(pushforward(mu, "to-sphere"), "to-plane")
    assert np.allclose(back.support, mu.support, rtol=1e-10, atol=1e-12)
    assert np.allclose(back.cell_widths, mu.cell_widths, rtol=1e-10)
    pole = DiscreteMeasure(np.array([[0.0, 0.0, 1.0]]), [1.0], chart="sphere")
    with pytest.raises(NorthPoleMassError):
        pushforward(pole, "to-plane")


def test_bl_examples():
    mu = atoms([0.2, -0.4, 0.9])
    assert bl_distance(mu, mu) == 0.0
    assert bl_distance(DiscreteMeasure.atom(0), DiscreteMeasure.atom(1)) == pytest.approx(1.0, abs=1e-12)
    assert bl_distance(DiscreteMeasure.atom(0), DiscreteMeasure.atom(3)) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ContractError):
        bl_distance(DiscreteMeasure.atom(0, 0.5), DiscreteMeasure.atom(1))


def test_bl_metric_axioms():
    rng = np.random.default_rng(8)
    for complex_support in (False, True):
        for _ in range(20):
            def rand():
                n = int(rng.integers(1, 7))
                z = rng.normal(scale=1.5, size=n) + (1j * rng.normal(size=n) if complex_support else 0)
                return atoms(z, rng.dirichlet(np.ones(n)))
            a, b, c = rand(), rand(), rand()
            ab, ba = bl_distance(a, b), bl_distance(b, a)
            assert ab == pytest.approx(ba, abs=1e-10)
            assert bl_distance(a, c) <= ab + bl_distance(b, c) + 1e-10


def test_bl_real_line_formula_matches_transport_lp():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = atoms(rng.normal(scale=2, size=5), rng.dirichlet(np.ones(5)))
        b = atoms(rng.normal(scale=2, size=7), rng.dirichlet(np.ones(7)))
        assert bl_distance(a, b) == pytest.approx(_bl_transport(a, b), abs=1e-10)


def test_bl_samples_matches_pairwise(arcsine_eq):
    rng = np.random.default_rng(10)
    samples = np.sort(rng.uniform(-1, 1, size=(30, 12)), axis=1)
    fast = bl_distance_samples(samples, arcsine_eq.measure)
    slow = [bl_distance(EmpiricalMeasure(s), arcsine_eq.measure) for s in samples]
    assert np.allclose(fast, slow, atol=1e-12)


def test_measure_csv_round_trip(tmp_path):
    g = build_grid(Domain.realline(), 30)
    mu = DiscreteMeasure.from_grid(g, np.full(g.n, 1 / g.n))
    path = tmp_path / "mu.csv"
    write_measure_csv(mu, path)
    back = read_measure_csv(path)
    assert back.chart == "sphere" and back.is_grid
    assert np.allclose(back.support, mu.support, atol=1e-15)
    assert np.array_equal(back.masses, mu.masses)
