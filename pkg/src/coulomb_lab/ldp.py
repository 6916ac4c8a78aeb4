"""Rate functions, ball probabilities and the large-deviation slope check.

Events are bounded-Lipschitz balls around a probability measure.  For a
ball G, sigma_k(G) is the ensemble probability that the empirical measure of
k sampled points lies in G; at speed k^2 one expects
log sigma_k(G) ~ -k^2 inf_G (I^Q - V_w).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleConfig, pair_log_sums, sample_ensemble
from .errors import ContractError, UnsupportedError
from .measures import (DiscreteMeasure, bl_distance, bl_distance_samples, energy, integrate,
                       weighted_energy)
from .partition import gauss_rule, zk_reference
from .weights import WeightSpec

RATE_CLAMP = 1e-6
MAX_QUAD_K = 3


def rate_function(mu: DiscreteMeasure, Q: WeightSpec, eq) -> float:
    """I^Q(mu) - V_w; +inf for measures with atoms.

    Values in [-1e-6, 0) are discretisation noise around the minimiser and
    are clamped to 0; anything more negative means mu and the equilibrium
    were discretised inconsistently and is refused.
    """
    if not eq.converged:
        raise ContractError("rate_function needs a converged equilibrium")
    val = weighted_energy(mu, Q) - eq.V_w
    if val < 0:
        if val < -RATE_CLAMP:
            raise ContractError(f"weighted energy {val:+.3e} below V_w: inconsistent discretisations")
        return 0.0
    return float(val)


def beta_rate(mu: DiscreteMeasure, Q: WeightSpec, beta: float) -> float:
    """beta I(mu) + 2 int Q dmu."""
    return beta * energy(mu) + 2.0 * integrate(mu, Q)


def beta_rate_identity(mu: DiscreteMeasure, Q: WeightSpec, beta: float) -> float:
    """|I_beta^Q(mu) - beta I^{Q/beta}(mu)|, the two sides computed independently."""
    if not beta > 0:
        raise ContractError("beta must be positive")
    lhs = beta_rate(mu, Q, beta)
    rhs = beta * weighted_energy(mu, Q.scaled(1.0 / beta))
    return abs(lhs - rhs)


def rate_lipschitz_estimate(mu: DiscreteMeasure, Q: WeightSpec, eq, directions: int = 8,
                            t: float = 0.05, seed: int = 0) -> float:
    """Largest |rate(mu_t) - rate(mu)| / BL(mu_t, mu) along mixtures toward random grid measures.

    Heuristic local Lipschitz constant used only for the reported lower bound
    rate(center) - L * radius over a ball.
    """
    if not mu.is_grid:
        raise ContractError("Lipschitz estimate needs a grid measure")
    rng = np.random.default_rng(seed)
    base = rate_function(mu, Q, eq)
    best = 0.0
    for _ in range(directions):
        other = rng.dirichlet(np.full(mu.n, 0.5))
        mt = mu.with_masses((1 - t) * mu.masses + t * other)
        d = bl_distance(mt, mu)
        if d > 0:
            best = max(best, abs(rate_function(mt, Q, eq) - base) / d)
    return best


@dataclass(frozen=True, eq=False)
class NeighborhoodSpec:
    center: DiscreteMeasure
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractError("radius must be positive")
        if not self.center.is_probability():
            raise ContractError("the ball center must be a probability measure")


@dataclass(frozen=True)
class SigmaEstimate:
    k: int
    value: float
    std_error: float
    samples: int
    hits: int
    method: str = "monte-carlo"
    caveat: str = ""

    @property
    def log_value(self) -> float:
        return math.log(self.value) if self.value > 0 else -math.inf

    @property
    def log_std_error(self) -> float:
        """Standard error of log sigma (delta method, Agresti-Coull floor)."""
        if self.method != "monte-carlo":
            return 0.0
        n = self.samples
        p = (self.hits + 2) / (n + 4)
        se = math.sqrt(p * (1 - p) / (n + 4))
        return se / max(self.value, p)


def _distances(G: NeighborhoodSpec, samples, chunk: int = 20_000) -> np.ndarray:
    samples = np.asarray(samples)
    out = np.empty(len(samples))
    for s in range(0, len(samples), chunk):
        out[s:s + chunk] = bl_distance_samples(samples[s:s + chunk], G.center)
    return out


def estimate_sigma(G: NeighborhoodSpec, run) -> SigmaEstimate:
    """Fraction of sampled configurations whose empirical measure lies in the ball."""
    x = run.flat_samples
    if len(x) == 0:
        raise ContractError("empty run")
    d = _distances(G, x)
    hits = int(np.sum(d <= G.radius))
    n = len(d)
    p = hits / n
    caveat = ""
    if hits == 0:
        caveat = f"no sampled configuration in the ball: sigma below Monte Carlo resolution 1/{n}"
    return SigmaEstimate(x.shape[1], p, math.sqrt(p * (1 - p) / n), n, hits, "monte-carlo", caveat)


def sigma_quadrature(G: NeighborhoodSpec, cfg: EnsembleConfig, nodes: int = 200) -> SigmaEstimate:
    """sigma_k(G) by tensor Gauss quadrature of the ensemble density (k <= 3, real domains).

    The indicator of the ball is discontinuous, so this is a consistency
    value rather than a high-accuracy one.
    """
    if cfg.k > MAX_QUAD_K:
        raise UnsupportedError(f"quadrature sigma supports k <= {MAX_QUAD_K}")
    x, logw = gauss_rule(cfg, nodes)
    idx = np.array(list(itertools.product(range(len(x)), repeat=cfg.k)))
    pts = x[idx]
    lw = logw[idx].sum(axis=1)
    if cfg.k > 1:
        lw = lw + 2.0 * cfg.beta * pair_log_sums(pts)
    fin = np.isfinite(lw)
    w = np.zeros(len(lw))
    w[fin] = np.exp(lw[fin] - lw[fin].max())
    inside = _distances(G, pts) <= G.radius
    val = float(w[inside].sum() / w.sum())
    return SigmaEstimate(cfg.k, val, 0.0, len(pts), int(inside.sum()), "quadrature",
                         "tensor quadrature of a discontinuous indicator")


@dataclass(frozen=True)
class JEstimate:
    k: int
    log_j: float
    sigma: SigmaEstimate
    log_z: float
    log_z_mode: str
    std_error: float
    caveat: str = ""


def j_functional_estimate(G: NeighborhoodSpec, cfg: EnsembleConfig, eq=None, run=None,
                          zk=None) -> JEstimate:
    """log J_k(G) = (log sigma_k(G) + log Z_k) / (k(k-1)).

    ``run`` and ``zk`` are computed when not supplied.  ``eq`` is unused by
    the estimate itself and accepted for symmetry with the other reports.
    """
    k = cfg.k
    if k < 2:
        raise ContractError("k must be at least 2")
    run = run if run is not None else sample_ensemble(cfg)
    zk = zk if zk is not None else zk_reference(cfg)
    sig = estimate_sigma(G, run)
    norm = k * (k - 1)
    if sig.hits == 0:
        return JEstimate(k, -math.inf, sig, zk.log_z, zk.mode, math.inf,
                         "sigma = 0 in the sample; reported as -inf (Monte Carlo)")
    se = math.hypot(sig.log_std_error, zk.std_error) / norm
    return JEstimate(k, (sig.log_value + zk.log_z) / norm, sig, zk.log_z, zk.mode, se)


# ---------------------------------------------------------------------------
# slope check

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    std_error: float
    intercept: float


def _fit(x, y, se) -> SlopeFit:
    x, y, se = map(np.asarray, (x, y, se))
    w = 1.0 / np.maximum(se, 1e-12) ** 2
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    beta = cov @ (X.T @ (w * y))
    return SlopeFit(float(beta[1]), float(math.sqrt(cov[1, 1])), float(beta[0]))


@dataclass(frozen=True, eq=False)
class LDPReport:
    k_list: tuple
    sigma_hat: tuple
    sigma_std_error: tuple
    slopes: tuple                 # log sigma_k / k^2
    slopes_kk1: tuple             # log sigma_k / (k(k-1))
    rate_at_center: float
    rate_lower_bound_over_ball: float
    lipschitz: float
    radius: float
    center_contains_equilibrium: bool
    fit_k2: SlopeFit | None
    fit_kk1: SlopeFit | None
    expected_slope: float
    verdict: str
    note: str = ""
    quadrature_rows: tuple = field(default=())

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        for key in ("fit_k2", "fit_kk1"):
            out[key] = None if out[key] is None else dict(out[key].__dict__)
        out["quadrature_rows"] = [dict(r.__dict__) for r in self.quadrature_rows]
        return out


def ldp_slope_check(estimates, rate_at_center: float, radius: float, contains_equilibrium: bool,
                    lipschitz: float = 0.0, quadrature_rows=()) -> LDPReport:
    """Fit log sigma_k against k^2 (and k(k-1)) and grade it; an order-of-magnitude check.

    PASS for a ball away from the equilibrium measure means a negative slope
    within a factor [0.3, 3] of -(rate_at_center - radius * lipschitz); for a
    ball containing it, a slope within 3 standard errors of 0.  Fewer than
    three positive sigma estimates give INCONCLUSIVE.
    """
    est = sorted(estimates, key=lambda e: e.k)
    ks = np.array([e.k for e in est], dtype=float)
    sig = tuple(e.value for e in est)
    logs = np.array([e.log_value for e in est])
    lower = max(0.0, rate_at_center - radius * lipschitz)
    expected = -lower
    pos = np.isfinite(logs)
    common = dict(k_list=tuple(int(k) for k in ks), sigma_hat=sig,
                  sigma_std_error=tuple(e.std_error for e in est),
                  slopes=tuple(logs / ks**2), slopes_kk1=tuple(logs / (ks * (ks - 1))),
                  rate_at_center=rate_at_center, rate_lower_bound_over_ball=lower,
                  lipschitz=lipschitz, radius=radius,
                  center_contains_equilibrium=contains_equilibrium, expected_slope=expected,
                  quadrature_rows=tuple(quadrature_rows))
    if pos.sum() < 3:
        return LDPReport(fit_k2=None, fit_kk1=None, verdict="INCONCLUSIVE",
                         note=f"only {int(pos.sum())} positive sigma estimates; need 3", **common)
    se = np.array([e.log_std_error for e in est])[pos]
    f2 = _fit(ks[pos] ** 2, logs[pos], se)
    f1 = _fit(ks[pos] * (ks[pos] - 1), logs[pos], se)
    if contains_equilibrium:
        ok = abs(f2.slope) <= 3 * f2.std_error
        note = "ball contains the equilibrium measure: slope compared with 0"
    else:
        ok = f2.slope < 0 and expected < 0 and 0.3 <= f2.slope / expected <= 3.0
        note = "order-of-magnitude check against the rate at the ball center"
    return LDPReport(fit_k2=f2, fit_kk1=f1, verdict="PASS" if ok else "FAIL", note=note, **common)


def ldp_report(G: NeighborhoodSpec, cfg: EnsembleConfig, eq, Q: WeightSpec, k_list,
               lipschitz: float | None = None, quadrature_k=()) -> LDPReport:
    """Sample each k, estimate sigma_k(G), and run the slope check."""
    estimates = [estimate_sigma(G, sample_ensemble(cfg.with_k(int(k)))) for k in k_list]
    rate = rate_function(G.center, Q, eq) if G.center.is_grid else math.inf
    L = rate_lipschitz_estimate(G.center, Q, eq) if lipschitz is None and G.center.is_grid else (lipschitz or 0.0)
    contains = bl_distance(G.center, eq.measure) <= G.radius
    quad = tuple(sigma_quadrature(G, cfg.with_k(int(k))) for k in quadrature_k)
    return ldp_slope_check(estimates, rate, G.radius, contains, L, quad)
