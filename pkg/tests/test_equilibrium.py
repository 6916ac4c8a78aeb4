import math

import numpy as np
import pytest

from coulomb_lab.equilibrium import (density_1d, frostman_report, neg_potential_roundtrip,
                                     solve_equilibrium, uniqueness_gap)
from coulomb_lab.errors import ContractError, InfeasibleError
from coulomb_lab.geometry import Domain, build_grid
from coulomb_lab.measures import DiscreteMeasure, bl_distance, integrate, pushforward, weighted_energy
from coulomb_lab.weights import WeightSpec

from conftest import arcsine_measure, semicircle_measure, uniform_measure

LOG2 = math.log(2.0)


def test_arcsine(interval_grid, arcsine_eq):
    assert arcsine_eq.converged
    assert arcsine_eq.V_w == pytest.approx(LOG2, abs=2e-3)
    assert bl_distance(arcsine_eq.measure, arcsine_measure(interval_grid)) <= 5e-3


def test_cauchy_weight_density(cauchy_eq):
    assert cauchy_eq.route == "sphere"
    x, dens = density_1d(cauchy_eq)
    win = np.abs(x) <= 5
    assert np.max(np.abs(dens[win] * math.pi * (1 + x[win] ** 2) - 1)) <= 0.02


def test_semicircle(semicircle_eq, line_grid):
    x, dens = density_1d(semicircle_eq)
    inner = np.abs(x) <= 0.9
    assert np.max(np.abs(dens[inner] - 2 / math.pi * np.sqrt(1 - x[inner] ** 2))) <= 0.02
    assert semicircle_eq.V_w == pytest.approx(0.75 + LOG2, abs=5e-3)
    assert np.all(np.abs(x[semicircle_eq.support_mask]) <= 1.01)


def test_result_invariants(arcsine_eq, semicircle_eq, cauchy_eq):
    for res in (arcsine_eq, semicircle_eq, cauchy_eq):
        assert res.measure.is_probability()
        Q = res.weight
        assert res.F_w == pytest.approx(res.V_w - integrate(res.measure, Q), abs=1e-9)
    assert arcsine_eq.V_w == pytest.approx(weighted_energy(arcsine_eq.measure, WeightSpec.zero()), abs=1e-12)


def test_frostman_arcsine(interval_grid, arcsine_eq):
    rep = frostman_report(arcsine_eq, WeightSpec.zero(), interval_grid)
    interior = rep.support_mask & (np.abs(interval_grid.plane_nodes.real) < 0.99)
    assert np.max(np.abs(rep.residuals[interior])) <= 5e-3
    assert rep.max_violation_off_support <= 1e-8


def test_frostman_cauchy(line_grid, cauchy_eq):
    rep = frostman_report(cauchy_eq, WeightSpec.cauchy_log(1), line_grid)
    assert cauchy_eq.F_w == pytest.approx(0.0, abs=1e-2)
    assert rep.max_abs_residual_on_support <= 1e-2
    assert rep.max_violation_off_support <= 1e-8


def test_discrete_kkt_certificate(semicircle_eq):
    r = semicircle_eq.residuals
    tol = 1e-8
    assert np.all(r >= -tol)
    assert np.all(r[semicircle_eq.support_mask] <= tol)


def test_uniqueness(interval_grid):
    assert uniqueness_gap(interval_grid, WeightSpec.gaussian(0.4), seed=1) <= 10 * 1e-8


def test_shift_covariance():
    g = build_grid(Domain.interval(-1, 1), 600)
    Q = WeightSpec.gaussian(0.8)
    a = solve_equilibrium(g, Q)
    b = solve_equilibrium(g, Q.shifted(0.7))
    assert np.max(np.abs(a.masses - b.masses)) <= 1e-9
    assert b.V_w - a.V_w == pytest.approx(1.4, abs=1e-9)
    assert b.F_w - a.F_w == pytest.approx(0.7, abs=1e-9)


def test_sphere_route_on_bounded_interval():
    direct = solve_equilibrium(build_grid(Domain.interval(-1, 1), 800), WeightSpec.gaussian(0.5))
    lifted = solve_equilibrium(build_grid(Domain.interval(-1, 1), 800, chart="sphere"), WeightSpec.gaussian(0.5))
    assert lifted.route == "sphere"
    assert bl_distance(direct.measure, lifted.measure) <= 5e-8
    assert lifted.V_w == pytest.approx(direct.V_w, abs=1e-9)


@pytest.mark.parametrize("make", [arcsine_measure, uniform_measure, semicircle_measure])
def test_negative_potential_roundtrip(make):
    g = build_grid(Domain.interval(-1, 1), 500)
    mu0 = make(g)
    assert bl_distance(neg_potential_roundtrip(mu0, g).measure, mu0) <= 1e-2


def test_negative_potential_roundtrip_on_the_line(line_grid):
    mu0 = DiscreteMeasure.from_grid(line_grid, np.diff(np.arctan(line_grid.edges)) / math.pi)
    res = neg_potential_roundtrip(mu0, line_grid)
    assert bl_distance(res.measure, pushforward(mu0, "to-plane")) <= 1e-2


def test_disk_capacity():
    res = solve_equilibrium(build_grid(Domain.disk(1.0), 2000), WeightSpec.zero())
    z = res.measure.support
    assert res.masses[np.abs(z) > 0.95].sum() == pytest.approx(1.0, abs=1e-9)
    assert res.V_w == pytest.approx(0.0, abs=0.02)


def test_gaussian_weight_in_the_plane():
    # Q = |z|^2: uniform law on the disk of radius 1/sqrt(2), V_w = 3/4 + log(2)/2
    res = solve_equilibrium(build_grid(Domain.plane(), 2000), WeightSpec.gaussian(1.0))
    z = res.measure.support
    assert res.masses[np.abs(z) < 0.5].sum() == pytest.approx(0.5, abs=0.03)
    assert res.V_w == pytest.approx(0.75 + 0.5 * LOG2, abs=5e-3)


def test_infinite_weight_nodes_get_no_mass():
    g = build_grid(Domain.interval(0, 1), 200)
    vals = np.where(g.plane_nodes.real < 0.3, np.inf, 0.0)
    res = solve_equilibrium(g, WeightSpec.tabulated(g.plane_nodes, vals, g.edges))
    assert np.all(res.masses[np.isinf(vals)] == 0)
    assert res.converged


def test_errors_and_nonconvergence():
    g = build_grid(Domain.interval(-1, 1), 300)
    with pytest.raises(InfeasibleError):
        solve_equilibrium(g, WeightSpec.tabulated(g.plane_nodes, np.full(g.n, np.inf), g.edges))
    with pytest.raises(ContractError):
        solve_equilibrium(g, WeightSpec.zero(), tol=0)
    assert not solve_equilibrium(g, WeightSpec.zero(), method="away-step", max_iter=3).converged


@pytest.mark.parametrize("method", ["away-step", "projected-gradient"])
def test_alternative_solvers_agree(method):
    g = build_grid(Domain.interval(-1, 1), 300)
    ref = solve_equilibrium(g, WeightSpec.zero())
    other = solve_equilibrium(g, WeightSpec.zero(), method=method, tol=1e-6)
    assert other.converged
    assert other.V_w == pytest.approx(ref.V_w, abs=1e-6)
