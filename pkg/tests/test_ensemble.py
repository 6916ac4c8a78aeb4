import math

import numpy as np
import pytest
from scipy import stats

from coulomb_lab.ensemble import (CHAIN_GROUP, EnsembleConfig, MCMCSettings, chain_rng, ldp_conditions,
                                  log_ensemble_density, normalizability, pair_log_sums, sample_ensemble,
                                  split_rhat)
from coulomb_lab.errors import AdmissibilityError, ConfigurationError
from coulomb_lab.geometry import BaseMeasure, Domain
from coulomb_lab.weights import WeightSpec, eval_weight

LOG2 = math.log(2.0)
INTERVAL = Domain.interval(-1, 1)
LINE = Domain.realline()


def cfg(domain=INTERVAL, Q=None, k=4, **kw):
    return EnsembleConfig(domain, Q or WeightSpec.zero(), k, **kw)


def test_density_examples():
    Q = WeightSpec.gaussian(1.5)
    for beta in (0.5, 1.0, 3.0):
        c1 = cfg(LINE, Q, 1, beta=beta, exponent_convention="k")
        assert log_ensemble_density(c1, [0.7]) == pytest.approx(-2 * c1.c * 1.5 * 0.49, abs=1e-15)
    c2 = cfg(k=2, exponent_convention="k")
    assert c2.c == 2
    assert log_ensemble_density(c2, [0, 1]) == 0.0
    c3 = cfg(Domain.interval(0, 2), k=2, beta=2.0)
    assert log_ensemble_density(c3, [0, 2]) == pytest.approx(4 * LOG2, abs=1e-15)


def test_density_sentinels():
    c = cfg(k=3)
    assert log_ensemble_density(c, [0.1, 0.1, 0.5]) == -math.inf
    assert log_ensemble_density(c, [0.1, 0.2, 1.5]) == -math.inf


def test_convention_equivalence():
    rng = np.random.default_rng(0)
    Q = WeightSpec.gaussian(0.8)
    k = 6
    km1 = cfg(LINE, Q, k, exponent_convention="k-1")
    kk = cfg(LINE, Q, k, exponent_convention="k")
    mapped = cfg(LINE, Q.scaled(k / (k - 1)), k, exponent_convention="k-1")
    for _ in range(50):
        z = rng.normal(size=k)
        direct = 2 * pair_log_sums(z[None, :])[0] - 2 * (k - 1) * float(np.sum(eval_weight(Q, z)))
        assert log_ensemble_density(km1, z) == pytest.approx(direct, abs=1e-12)
        assert log_ensemble_density(kk, z) == pytest.approx(log_ensemble_density(mapped, z), abs=1e-12)


def test_base_measure_terms():
    normal = cfg(LINE, WeightSpec.zero(), 1, base_measure="normal")
    x = 0.3
    assert log_ensemble_density(normal, [x]) == pytest.approx(stats.norm.logpdf(x), abs=1e-14)
    atoms = cfg(k=2, base_measure=BaseMeasure.parse("lebesgue+atoms:0.5@0"))
    assert log_ensemble_density(atoms, [0.0, 0.5]) == pytest.approx(math.log(0.5) + 2 * math.log(0.5), abs=1e-14)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        cfg(beta=0)
    with pytest.raises(ConfigurationError):
        cfg(k=0)
    with pytest.raises(ConfigurationError):
        cfg(exponent_convention="k+1")
    with pytest.raises(AdmissibilityError):
        cfg(INTERVAL, WeightSpec.laguerre(1, 1))
    with pytest.raises(AdmissibilityError):
        cfg(LINE, WeightSpec.zero())
    with pytest.raises(ConfigurationError):
        MCMCSettings(iterations=10, burn_in=10)


def test_normalizability_boundary():
    # Cauchy-log on the line: 2 beta (k-1) + 1 < 2 c, so with c = k it holds only for beta < 1 + 1/(2(k-1))
    ok, _ = normalizability(cfg(LINE, WeightSpec.cauchy_log(1), 5, exponent_convention="k"))
    assert ok
    with pytest.raises(AdmissibilityError):
        cfg(LINE, WeightSpec.cauchy_log(1), 5, exponent_convention="k-1")
    with pytest.raises(AdmissibilityError):
        cfg(LINE, WeightSpec.cauchy_log(1), 5, beta=1.2, exponent_convention="k")
    flags = ldp_conditions(cfg(LINE, WeightSpec.cauchy_log(1), 5, exponent_convention="k"))
    assert isinstance(flags, dict)


def test_run_shape_and_diagnostics():
    c = cfg(k=5, mcmc=MCMCSettings(iterations=700, burn_in=200, thinning=5, chains=3, seed=9))
    run = sample_ensemble(c)
    assert run.samples.shape == (3, 100, 5)
    assert run.count == 3 * (700 - 200) // 5
    assert 0 < run.acceptance_rate < 1
    assert run.chain_seeds == ((9, 0), (9, 1), (9, 2))
    assert np.all(np.abs(run.flat_samples) <= 1)
    diag = run.diagnostics()
    assert {"acceptance_rate", "rhat", "converged"} <= set(diag)
    assert len(list(run.empirical_measures())) == run.count


def test_reproducible_and_chain_streams_independent_of_grouping():
    settings = dict(iterations=300, burn_in=100, seed=4)
    a = sample_ensemble(cfg(k=4, mcmc=MCMCSettings(chains=CHAIN_GROUP + 2, **settings)))
    b = sample_ensemble(cfg(k=4, mcmc=MCMCSettings(chains=CHAIN_GROUP + 2, **settings)))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples[0], a.samples[1])
    assert chain_rng(4, 1).random() != chain_rng(4, 2).random()


def test_split_rhat():
    rng = np.random.default_rng(1)
    assert split_rhat(rng.normal(size=(4, 2000))) < 1.01
    shifted = rng.normal(size=(4, 2000)) + np.arange(4)[:, None]
    assert split_rhat(shifted) > 1.5


def _toy_transition_matrix(c, states):
    """Metropolis kernel with uniform proposals among three one-point states."""
    logp = np.array([log_ensemble_density(c, [s]) for s in states])
    n = len(states)
    P = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                P[i, j] = min(1.0, math.exp(logp[j] - logp[i])) / (n - 1)
        P[i, i] = 1.0 - P[i].sum()
    pi = np.exp(logp - logp.max())
    return P, pi / pi.sum()


def test_detailed_balance_toy_chain():
    c = cfg(LINE, WeightSpec.gaussian(1.0), 1, exponent_convention="k")
    P, pi = _toy_transition_matrix(c, [-0.4, 0.1, 0.9])
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.max(np.abs(pi @ P - pi)) <= 1e-12
    flux = pi[:, None] * P
    assert np.max(np.abs(flux - flux.T)) <= 1e-12


def test_exchangeability():
    c = cfg(Domain.halfline(), WeightSpec.laguerre(1.0, 0.5), 4,
            mcmc=MCMCSettings(iterations=6000, burn_in=1000, chains=4, seed=2))
    x = sample_ensemble(c).samples.real                       # (chains, saved, k)
    batches = x.reshape(4 * 20, -1, 4).mean(axis=1)          # batch means per coordinate
    means = batches.mean(axis=0)
    se = batches.std(axis=0, ddof=1) / math.sqrt(len(batches))
    spread = np.max(np.abs(means - means.mean()))
    assert spread <= 4 * se.max()


@pytest.mark.slow
@pytest.mark.parametrize("name, domain, Q, dist", [
    ("gaussian", LINE, WeightSpec.gaussian(1.0), stats.norm(scale=0.5)),
    ("laguerre", Domain.halfline(), WeightSpec.laguerre(1.0, 0.5), stats.gamma(2.0, scale=0.5)),
    ("cauchy-log", LINE, WeightSpec.cauchy_log(1.0), stats.cauchy()),
])
def test_single_particle_marginal(name, domain, Q, dist):
    # k = 1, c = k = 1: density proportional to exp(-2 Q)
    c = EnsembleConfig(domain, Q, 1, exponent_convention="k",
                       mcmc=MCMCSettings(iterations=126_000, burn_in=1000, thinning=10, chains=8, seed=11))
    x = sample_ensemble(c).flat_samples.real.ravel()
    assert len(x) == 100_000
    edges = dist.ppf(np.linspace(0, 1, 41))
    observed = np.histogram(x, edges)[0]
    assert stats.chisquare(observed).pvalue > 0.001


def test_gaussian_k1_moments():
    c = EnsembleConfig(LINE, WeightSpec.gaussian(1.0), 1, exponent_convention="k",
                       mcmc=MCMCSettings(iterations=21_000, burn_in=1000, chains=4, seed=1))
    x = sample_ensemble(c).samples[..., 0].real
    b = x.reshape(40, -1)
    se_mean = b.mean(axis=1).std(ddof=1) / math.sqrt(40)
    se_var = (b**2).mean(axis=1).std(ddof=1) / math.sqrt(40)
    assert abs(x.mean()) <= 3 * se_mean
    assert abs(x.var() - 0.25) <= 3 * se_var


def test_semicircle_second_moment():
    c = EnsembleConfig(LINE, WeightSpec.gaussian(1.0), 64, exponent_convention="k",
                       mcmc=MCMCSettings(iterations=3000, burn_in=1000, chains=4, seed=2))
    run = sample_ensemble(c)
    assert np.mean(np.abs(run.flat_samples) ** 2) == pytest.approx(0.25, abs=0.02)
    assert run.converged


def test_cauchy_ensemble_marginal():
    c = EnsembleConfig(LINE, WeightSpec.cauchy_log(1.0), 16, exponent_convention="k",
                       mcmc=MCMCSettings(iterations=12_000, burn_in=2000, chains=4, seed=3))
    run = sample_ensemble(c)
    assert stats.kstest(run.flat_samples.real.ravel(), stats.cauchy.cdf).statistic <= 0.1
    assert run.converged


def test_atoms_in_base_measure():
    # k = 1 on [-1, 1]: nu = Lebesgue + 0.5 delta_0 has total mass 2.5, so P(point at 0) = 0.2
    c = EnsembleConfig(INTERVAL, WeightSpec.zero(), 1, base_measure="lebesgue+atoms:0.5@0",
                       mcmc=MCMCSettings(iterations=20_000, burn_in=1000, chains=4, seed=6))
    x = sample_ensemble(c).flat_samples.ravel()
    frac = float(np.mean(x == 0))
    assert frac == pytest.approx(0.2, abs=0.02)


def test_disk_ensemble():
    # k = 1, Q = 0 on the unit disk: uniform, E|z|^2 = 1/2
    c = EnsembleConfig(Domain.disk(1.0), WeightSpec.zero(), 1,
                       mcmc=MCMCSettings(iterations=10_000, burn_in=1000, chains=4, seed=7))
    z = sample_ensemble(c).flat_samples.ravel()
    assert np.iscomplexobj(z)
    assert np.mean(np.abs(z) ** 2) == pytest.approx(0.5, abs=0.02)


def test_atoms_with_heavy_tailed_proposals():
    # k = 1, Q = 1/2 log(1+x^2), c = 1: continuous mass pi, atom mass 0.5 / (1 + 9)
    c = EnsembleConfig(LINE, WeightSpec.cauchy_log(1.0), 1, base_measure="lebesgue+atoms:0.5@3",
                       exponent_convention="k",
                       mcmc=MCMCSettings(iterations=40_000, burn_in=1000, chains=8, seed=6))
    x = sample_ensemble(c).flat_samples.ravel()
    expected = 0.05 / (math.pi + 0.05)
    assert float(np.mean(x == 3)) == pytest.approx(expected, abs=0.003)
