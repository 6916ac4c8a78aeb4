import math

import numpy as np
import pytest

from coulomb_lab.errors import AdmissibilityError, ConfigurationError, DomainError
from coulomb_lab.geometry import INFINITY, Domain, stereo_project
from coulomb_lab.weights import (WeightSpec, check_weight_domain, classify_admissibility,
                                 eval_weight, parse_weight, to_sphere_weight)

REAL = Domain.realline()


def test_eval_examples():
    assert eval_weight(WeightSpec.laguerre(1, 1), 0.0) == math.inf
    assert eval_weight(WeightSpec.cauchy_log(1), 0.0) == 0.0
    assert eval_weight(WeightSpec.gaussian(1), 2.0) == 4.0


def test_eval_outside_natural_domain():
    with pytest.raises(DomainError):
        eval_weight(WeightSpec.laguerre(1, 1), -1.0)
    with pytest.raises(DomainError):
        eval_weight(WeightSpec.zero(), 2.0, Domain.interval(-1, 1))


def test_catalog_constraints():
    with pytest.raises(ConfigurationError):
        WeightSpec.laguerre(1, -1)
    with pytest.raises(ConfigurationError):
        WeightSpec("tabulated", table_points=np.array([0, 1]), table_values=np.array([0, -np.inf]))
    with pytest.raises(AdmissibilityError):
        check_weight_domain(WeightSpec.laguerre(1, 1), Domain.interval(-1, 1))


def test_parse_keys():
    assert parse_weight("gaussian:2").params == (2.0,)
    assert parse_weight("cauchy-log:1").form == "cauchy-log"
    assert parse_weight("laguerre:1,0.5").params == (1.0, 0.5)
    with pytest.raises(ConfigurationError):
        parse_weight("mystery:1")


def test_classify_examples():
    rep = classify_admissibility(WeightSpec.cauchy_log(1), REAL)
    assert rep.klass == "weakly admissible" and rep.M_estimate == pytest.approx(0.0, abs=1e-12)
    assert rep.method == "certified"
    assert classify_admissibility(WeightSpec.gaussian(1), REAL).klass == "strongly admissible"
    assert classify_admissibility(WeightSpec.zero(), Domain.interval(-1, 1)).klass == "strongly admissible"
    assert classify_admissibility(WeightSpec.zero(), REAL).klass == "not admissible"


def test_probed_classification_agrees_with_closed_form():
    for w, expected in ((WeightSpec.cauchy_log(1), "weakly admissible"),
                        (WeightSpec.gaussian(1), "strongly admissible")):
        rep = classify_admissibility(w, REAL, method="probe")
        assert rep.method == "probed" and rep.klass == expected
    rep = classify_admissibility(WeightSpec.cauchy_log(1), REAL, method="probe")
    assert rep.M_estimate == pytest.approx(0.0, abs=1e-6)


def test_classification_monotone_flags():
    for w in (WeightSpec.zero(), WeightSpec.gaussian(1), WeightSpec.cauchy_log(1), WeightSpec.cauchy_log(3)):
        for method in ("auto", "probe"):
            rep = classify_admissibility(w, REAL, method=method)
            if rep.passes_strong:
                assert rep.passes_admissible
            if rep.passes_admissible:
                assert rep.passes_weak
            assert math.isfinite(rep.M_estimate) == (rep.klass == "weakly admissible")


def test_classify_needs_four_increasing_radii():
    with pytest.raises(ValueError):
        classify_admissibility(WeightSpec.zero(), REAL, radii=(1, 10, 100))


def test_sphere_weight_of_cauchy_log_vanishes():
    qt = to_sphere_weight(WeightSpec.cauchy_log(1), REAL)
    z = np.random.default_rng(0).normal(scale=100, size=50)
    assert np.max(np.abs(qt(stereo_project(z)))) <= 1e-12
    assert qt(stereo_project(INFINITY)) == 0.0


def test_sphere_weight_identity():
    w = WeightSpec.cauchy_log(1).shifted(0.3)
    qt = to_sphere_weight(w, REAL)
    assert qt.M == pytest.approx(0.3)
    z = np.random.default_rng(1).normal(scale=10, size=200)
    lhs = qt.at_plane(z) + 0.5 * np.log1p(z**2)
    assert np.max(np.abs(lhs - eval_weight(w, z))) <= 1e-12
    assert qt.at_plane(0.0) == eval_weight(w, 0.0)


def test_sphere_weight_refuses_strongly_admissible():
    with pytest.raises(AdmissibilityError):
        to_sphere_weight(WeightSpec.gaussian(1), REAL)
    qt = to_sphere_weight(WeightSpec.gaussian(1), REAL, allow_admissible=True)
    assert qt.M == math.inf


def test_shift_and_scale():
    w = WeightSpec.gaussian(2.0)
    assert eval_weight(w.shifted(1.5), 1.0) == pytest.approx(3.5)
    assert eval_weight(w.scaled(0.5), 1.0) == pytest.approx(1.0)
