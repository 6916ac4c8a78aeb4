import math
from types import SimpleNamespace

import numpy as np
import pytest

from coulomb_lab.ensemble import EnsembleConfig, MCMCSettings, sample_ensemble
from coulomb_lab.errors import ContractError, UnsupportedError
from coulomb_lab.geometry import Domain
from coulomb_lab.partition import (available_closed_form, log_selberg, log_z_quadrature, log_z_ti,
                                   outlier_bound, outlier_probability, zk_asymptotics, zk_reference)
from coulomb_lab.weights import WeightSpec

LOG2 = math.log(2.0)
INTERVAL = Domain.interval(-1, 1)
LINE = Domain.realline()
HALF = Domain.halfline()


def test_two_points_on_the_interval():
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 2)
    for mode in ("quadrature", "selberg"):
        assert math.exp(zk_reference(c, mode).log_z) == pytest.approx(8 / 3, abs=1e-10)
    assert zk_reference(c).mode == "selberg"


def test_two_standard_normals():
    c = EnsembleConfig(LINE, WeightSpec.zero(), 2, base_measure="normal")
    assert math.exp(zk_reference(c, "mehta").log_z) == pytest.approx(2.0, abs=1e-12)
    assert math.exp(zk_reference(c, "quadrature").log_z) == pytest.approx(2.0, abs=1e-12)


def test_quadrature_limit():
    with pytest.raises(UnsupportedError):
        zk_reference(EnsembleConfig(INTERVAL, WeightSpec.zero(), 5), "quadrature")
    with pytest.raises(UnsupportedError):
        zk_reference(EnsembleConfig(INTERVAL, WeightSpec.zero(), 3), "mehta")


def test_k2_normalisation_is_half_log_z():
    r = zk_reference(EnsembleConfig(INTERVAL, WeightSpec.gaussian(0.3), 2))
    assert r.normalised == r.log_z / 2


def test_selberg_small_cases():
    assert log_selberg(1, 1.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert math.exp(log_selberg(2, 1.0, 1.0, 1.0)) == pytest.approx(1 / 6, abs=1e-15)
    # int_0^1 x^{a-1}(1-x)^{b-1} = B(a, b)
    assert math.exp(log_selberg(1, 2.0, 3.0, 0.7)) == pytest.approx(1 / 12, abs=1e-15)


@pytest.mark.parametrize("convention", ["k-1", "k"])
@pytest.mark.parametrize("beta", [1.0, 2.0])
def test_closed_forms_match_quadrature(convention, beta):
    cases = [(LINE, WeightSpec.gaussian(0.7), "lebesgue", "mehta"),
             (LINE, WeightSpec.gaussian(0.4), "normal", "mehta"),
             (HALF, WeightSpec.laguerre(1.3, 0.6), "lebesgue", "laguerre"),
             (Domain.interval(-0.5, 2.0), WeightSpec.zero(), "lebesgue", "selberg")]
    for domain, Q, nu, mode in cases:
        for k in range(1, 4):
            if k == 1 and convention == "k-1" and not domain.bounded and nu == "lebesgue":
                continue  # c = 0: no confinement, not normalizable
            c = EnsembleConfig(domain, Q, k, beta=beta, base_measure=nu, exponent_convention=convention)
            assert available_closed_form(c) == mode
            assert zk_reference(c, mode).log_z == pytest.approx(log_z_quadrature(c), abs=1e-9)


@pytest.mark.parametrize("domain, Q, mode", [(LINE, WeightSpec.gaussian(0.7), "mehta"),
                                             (HALF, WeightSpec.laguerre(1.0, 0.5), "laguerre")])
def test_four_point_quadrature(domain, Q, mode):
    c = EnsembleConfig(domain, Q, 4)
    assert zk_reference(c, mode).log_z == pytest.approx(zk_reference(c, "quadrature").log_z, abs=1e-8)


def test_interval_asymptotics_shrinking_gap():
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 2)
    rows = zk_asymptotics(c, [2, 4, 8, 16, 32], SimpleNamespace(V_w=LOG2))
    assert rows[0]["normalised"] == pytest.approx(math.log(8 / 3) / 2, abs=1e-12)
    assert rows[0]["target"] == -LOG2
    gaps = [r["gap"] for r in rows]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    with pytest.raises(ContractError):
        zk_asymptotics(c, [1], None)


@pytest.mark.parametrize("convention", ["k-1", "k"])
def test_gaussian_asymptotics(convention, semicircle_eq):
    c = EnsembleConfig(LINE, WeightSpec.gaussian(1.0), 2, exponent_convention=convention)
    rows = zk_asymptotics(c, [8, 16, 32], semicircle_eq, mode="mehta")
    assert rows[-1]["gap"] < rows[0]["gap"]
    assert rows[-1]["gap"] < rows[1]["gap"]


@pytest.mark.slow
def test_thermodynamic_integration_against_selberg():
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 3,
                       mcmc=MCMCSettings(iterations=3000, burn_in=500, chains=4, seed=0))
    ti = log_z_ti(c)
    exact = zk_reference(c, "selberg").log_z
    assert ti.std_error > 0
    assert abs(ti.log_z - exact) <= 3 * ti.std_error
    assert ti.log_z0 == pytest.approx(3 * LOG2, abs=1e-12)


def test_outlier_bound_arithmetic():
    assert outlier_bound(10, 0.1, 0.5, 2.0) == pytest.approx(0.9 ** 90 * 2 ** 10, rel=1e-12)


def test_outlier_degenerate_eta(arcsine_eq):
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 6)
    rep = outlier_probability(c, 0.0, None, arcsine_eq)
    assert rep.passed is None and "declined" in rep.note
    rep = outlier_probability(c, 0.9, None, arcsine_eq)
    assert rep.fraction == 0.0 and rep.passed


def test_outlier_probability_below_bound(arcsine_eq):
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 20,
                       mcmc=MCMCSettings(iterations=2000, burn_in=500, chains=4, seed=8))
    rep = outlier_probability(c, 0.05, sample_ensemble(c), arcsine_eq)
    assert rep.bound == pytest.approx(outlier_bound(20, 0.05, math.exp(-arcsine_eq.V_w), 2.0))
    assert rep.fraction <= rep.bound + 3 * rep.std_error
    assert rep.passed
