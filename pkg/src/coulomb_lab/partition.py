"""Partition functions Z_k of log-gas ensembles: closed forms, quadrature and
thermodynamic integration, plus the outlier-probability bound.

Z_k = int prod_{i<j}|z_i - z_j|^{2 beta} prod_i e^{-2 c Q(z_i)} dnu(z_1)...dnu(z_k)
with c as in :class:`~coulomb_lab.ensemble.EnsembleConfig`.

Closed forms used (gamma = beta):

* Gaussian (Mehta): a density e^{-g x^2} on the line with a = sqrt(2 g) gives
  Z_k = a^{-k - beta k(k-1)} (2 pi)^{k/2} prod_{j=1}^k Gamma(1 + j beta) / Gamma(1 + beta).
* Interval [a, b], Q = 0 (Selberg with exponents 1, 1): scaling [0, 1] to
  length L multiplies Z by L^{k + beta k(k-1)}.
* Laguerre Q = lam x - s log x on [0, inf): e^{-2cQ} = x^{A-1} e^{-B x} with
  A = 1 + 2 c s, B = 2 c lam, and
  Z_k = B^{-(k A + beta k(k-1))} prod_{j=0}^{k-1} Gamma(A + j beta) Gamma(1 + (j+1) beta) / Gamma(1 + beta).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, roots_genlaguerre, roots_hermite, roots_legendre

from .ensemble import EnsembleConfig, pair_log_sums, sample_ensemble
from .errors import ContractError, UnsupportedError
from .weights import eval_weight

QUAD_NODES = 64
QUAD_MAX_K = 4
TI_TICKS = 21
MODES = ("auto", "quadrature", "mehta", "selberg", "laguerre", "ti")


@dataclass(frozen=True)
class ZkResult:
    k: int
    log_z: float
    std_error: float
    mode: str

    @property
    def normalised(self) -> float:
        """log Z_k / (k(k-1))."""
        return self.log_z / (self.k * (self.k - 1)) if self.k > 1 else math.nan


def _gaussian_coefficient(cfg: EnsembleConfig):
    """(g, log prefactor) with e^{-2cQ} nu(dx) = prefactor * e^{-g x^2} dx, or None."""
    nu, Q = cfg.base_measure, cfg.Q
    if cfg.domain.kind != "realline" or nu.atoms or nu.kind == "density":
        return None
    if Q.form == "gaussian":
        g = 2.0 * cfg.c * Q.params[0]
    elif Q.form == "zero":
        g = 0.0
    else:
        return None
    pref = 0.0
    if nu.kind == "normal":
        g += 0.5
        pref = -0.5 * math.log(2 * math.pi)
    return (g, pref) if g > 0 else None


def _is_selberg(cfg):
    nu = cfg.base_measure
    return cfg.domain.kind == "interval" and cfg.Q.form == "zero" and nu.kind == "lebesgue" and not nu.atoms


def _laguerre_params(cfg):
    nu, Q = cfg.base_measure, cfg.Q
    if cfg.domain.kind != "halfline" or Q.form != "laguerre" or nu.kind != "lebesgue" or nu.atoms:
        return None
    lam, s = Q.params
    A, B = 1.0 + 2.0 * cfg.c * s, 2.0 * cfg.c * lam
    return (A, B) if A > 0 and B > 0 else None


def log_z_mehta(cfg: EnsembleConfig) -> float:
    gp = _gaussian_coefficient(cfg)
    if gp is None:
        raise UnsupportedError("mehta mode needs a Gaussian density on the real line")
    g, pref = gp
    k, b = cfg.k, cfg.beta
    log_a = 0.5 * math.log(2.0 * g)
    j = np.arange(1, k + 1)
    return (-(k + b * k * (k - 1)) * log_a + 0.5 * k * math.log(2 * math.pi)
            + math.fsum(gammaln(1 + j * b) - gammaln(1 + b)) + k * pref)


def log_selberg(k: int, a: float, b: float, gamma: float) -> float:
    """log of int_{[0,1]^k} prod x^{a-1}(1-x)^{b-1} |Delta|^{2 gamma} dx."""
    j = np.arange(k)
    terms = (gammaln(a + j * gamma) + gammaln(b + j * gamma) + gammaln(1 + (j + 1) * gamma)
             - gammaln(a + b + (k + j - 1) * gamma) - gammaln(1 + gamma))
    return math.fsum(terms)


def log_z_selberg(cfg: EnsembleConfig) -> float:
    if not _is_selberg(cfg):
        raise UnsupportedError("selberg mode needs an interval, Q = 0 and Lebesgue reference")
    lo, hi = cfg.domain.params
    k, b = cfg.k, cfg.beta
    return (k + b * k * (k - 1)) * math.log(hi - lo) + log_selberg(k, 1.0, 1.0, b)


def log_z_laguerre(cfg: EnsembleConfig) -> float:
    p = _laguerre_params(cfg)
    if p is None:
        raise UnsupportedError("laguerre mode needs a Laguerre weight on [0, inf) with Lebesgue reference")
    A, B = p
    k, b = cfg.k, cfg.beta
    j = np.arange(k)
    return (-(k * A + b * k * (k - 1)) * math.log(B)
            + math.fsum(gammaln(A + j * b) + gammaln(1 + (j + 1) * b) - gammaln(1 + b)))


def gauss_rule(cfg: EnsembleConfig, nodes: int = QUAD_NODES):
    """Nodes x and log weights so that sum w f(x) ~ int f e^{-2cQ} dnu."""
    d, nu, Q = cfg.domain, cfg.base_measure, cfg.Q
    if nu.atoms or nu.kind == "density":
        raise UnsupportedError("quadrature mode supports Lebesgue or normal reference without atoms")
    gp = _gaussian_coefficient(cfg)
    if gp is not None:
        g, pref = gp
        t, w = roots_hermite(nodes)
        x = t / math.sqrt(g)
        return x, np.log(w) - 0.5 * math.log(g) + pref
    lp = _laguerre_params(cfg)
    if lp is not None:
        A, B = lp
        t, w = roots_genlaguerre(nodes, A - 1.0)
        return t / B, np.log(w) - A * math.log(B)
    if d.kind == "interval":
        a, b = d.params
        t, w = roots_legendre(nodes)
        x = 0.5 * (a + b) + 0.5 * (b - a) * t
        q = np.asarray(eval_weight(Q, x), dtype=float)
        logw = np.log(0.5 * (b - a) * w) - 2.0 * cfg.c * q + np.asarray(nu.log_density(x, 1), dtype=float)
        return x, logw
    raise UnsupportedError("quadrature mode needs a bounded interval or an exponentially confined line")


def log_z_quadrature(cfg: EnsembleConfig) -> float:
    """Tensor Gauss rule with 64 nodes per axis (k <= 4)."""
    if cfg.k > QUAD_MAX_K:
        raise UnsupportedError(f"quadrature mode supports k <= {QUAD_MAX_K}, got {cfg.k}")
    x, logw = gauss_rule(cfg)
    k, n = cfg.k, len(x)
    total = []
    # iterate over the first axis to keep memory at n^(k-1)
    rest = np.array(list(itertools.product(range(n), repeat=k - 1)), dtype=int).reshape(n ** (k - 1), k - 1)
    for i0 in range(n):
        idx = np.concatenate([np.full((len(rest), 1), i0), rest], axis=1)
        pts = x[idx]
        lw = logw[idx].sum(axis=1)
        if k > 1:
            lw = lw + 2.0 * cfg.beta * pair_log_sums(pts)
        total.append(lw)
    lw = np.concatenate(total)
    top = lw[np.isfinite(lw)].max()
    return float(top + math.log(math.fsum(np.exp(lw[np.isfinite(lw)] - top))))


def log_z_single(cfg: EnsembleConfig) -> float:
    """log of int e^{-2cQ} dnu over the domain (one particle, used by TI)."""
    d, nu, Q = cfg.domain, cfg.base_measure, cfg.Q
    c2 = 2.0 * cfg.c
    atoms = sum(m * math.exp(-c2 * float(eval_weight(Q, loc))) for loc, m in nu.atoms if d.contains(loc))

    def f_line(x):
        return math.exp(-c2 * float(eval_weight(Q, x)) + float(nu.log_density(x, 1)))

    if d.is_real:
        a, b = d.real_bounds
        if d.kind == "realline":
            val = integrate.quad(f_line, -np.inf, 0)[0] + integrate.quad(f_line, 0, np.inf)[0]
        else:
            val = integrate.quad(f_line, a, b, limit=200)[0]
    else:
        if Q.form not in ("zero", "gaussian", "cauchy-log"):
            raise UnsupportedError("2D single-particle normaliser needs a radial catalog weight")
        r_lo = 0.0
        r_hi = d.params[0] if d.kind == "disk" else np.inf
        if d.kind == "sphere-subset":
            r_lo = math.tan(d.params[0] / 2)
            r_hi = math.tan(d.params[1] / 2) if d.params[1] < math.pi else np.inf

        def f_rad(r):
            return 2 * math.pi * r * math.exp(-c2 * float(eval_weight(Q, r)) + float(nu.log_density(r, 2)))

        val = integrate.quad(f_rad, r_lo, r_hi, limit=200)[0]
    return math.log(val + atoms)


@dataclass(frozen=True, eq=False)
class TIResult:
    log_z: float
    std_error: float
    ticks: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    log_z0: float


def _batch_se(series: np.ndarray, batches: int = 10) -> float:
    """Batch-means standard error of the pooled mean of an (chains, n) array."""
    C, n = series.shape
    b = max(1, min(batches, n // 2))
    m = n // b
    bm = series[:, :b * m].reshape(C, b, m).mean(axis=2).ravel()
    if len(bm) < 2:
        return math.nan
    return float(bm.std(ddof=1) / math.sqrt(len(bm)))


def log_z_ti(cfg: EnsembleConfig, ticks: int = TI_TICKS) -> TIResult:
    """Thermodynamic integration over the pair-interaction strength tau in [0, 1].

    d/dtau log Z(tau) = E_tau[2 beta sum_{i<j} log|z_i - z_j|]; the integral is
    taken with a Gauss-Legendre rule, error bars from batch means.
    """
    t, w = roots_legendre(ticks)
    tau, w = 0.5 * (t + 1.0), 0.5 * w
    log_z0 = cfg.k * log_z_single(cfg)
    means, ses = np.empty(ticks), np.empty(ticks)
    for i, ti in enumerate(tau):
        run = sample_ensemble(replace_seed(cfg, i), interaction=float(ti))
        vals = 2.0 * cfg.beta * run.pair_log_sums
        means[i] = vals.mean()
        ses[i] = _batch_se(vals)
    log_z = log_z0 + math.fsum(w * means)
    err = math.sqrt(math.fsum((w * ses) ** 2))
    return TIResult(log_z, err, tau, means, ses, log_z0)


def replace_seed(cfg: EnsembleConfig, offset: int) -> EnsembleConfig:
    return cfg.with_mcmc(seed=cfg.mcmc.seed + 1000 * (offset + 1))


def available_closed_form(cfg: EnsembleConfig) -> str | None:
    if _gaussian_coefficient(cfg) is not None:
        return "mehta"
    if _is_selberg(cfg):
        return "selberg"
    if _laguerre_params(cfg) is not None:
        return "laguerre"
    return None


def zk_reference(cfg: EnsembleConfig, mode: str = "auto") -> ZkResult:
    """log Z_k by the requested mode; ``auto`` prefers closed forms, then quadrature, then TI."""
    if mode not in MODES:
        raise UnsupportedError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "auto":
        mode = available_closed_form(cfg) or ("quadrature" if cfg.k <= QUAD_MAX_K else "ti")
        if mode == "quadrature":
            try:
                gauss_rule(cfg)
            except UnsupportedError:
                mode = "ti"
    if mode == "quadrature":
        return ZkResult(cfg.k, log_z_quadrature(cfg), 0.0, mode)
    if mode == "mehta":
        return ZkResult(cfg.k, log_z_mehta(cfg), 0.0, mode)
    if mode == "selberg":
        return ZkResult(cfg.k, log_z_selberg(cfg), 0.0, mode)
    if mode == "laguerre":
        return ZkResult(cfg.k, log_z_laguerre(cfg), 0.0, mode)
    ti = log_z_ti(cfg)
    return ZkResult(cfg.k, ti.log_z, ti.std_error, "ti")


def zk_asymptotics(cfg: EnsembleConfig, k_list, eq, mode: str = "auto") -> list[dict]:
    """Rows (k, log Z_k / (k(k-1)), target -V_w, gap) for each k >= 2."""
    rows = []
    target = -eq.V_w if eq is not None else math.nan
    for k in k_list:
        if k < 2:
            raise ContractError("k must be at least 2 for the k(k-1) normalisation")
        res = zk_reference(cfg.with_k(int(k)), mode)
        norm = res.normalised
        rows.append({"k": int(k), "log_z": res.log_z, "normalised": norm, "std_error": res.std_error,
                     "normalised_std_error": res.std_error / (k * (k - 1)), "target": target,
                     "gap": abs(norm - target), "mode": res.mode})
    return rows


# ---------------------------------------------------------------------------
# outliers

@dataclass(frozen=True)
class OutlierReport:
    k: int
    eta: float
    delta_q: float
    threshold: float
    fraction: float | None
    std_error: float | None
    bound: float | None
    nu_mass: float
    passed: bool | None
    note: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def outlier_bound(k: int, eta: float, delta_q: float, nu_mass: float) -> float:
    """(1 - eta/(2 delta))^{k(k-1)} nu(K)^k, the bound on the outlier probability."""
    return math.exp(k * (k - 1) * math.log1p(-eta / (2.0 * delta_q)) + k * math.log(nu_mass))


def outlier_probability(cfg: EnsembleConfig, eta: float, run, eq) -> OutlierReport:
    """Fraction of sampled configurations whose weighted Vandermonde is below (delta - eta)^{k(k-1)/2}.

    A configuration counts when 2 log|VDM^Q| / (k(k-1)) < log(delta^Q - eta),
    with the weighted Vandermonde taken with exponent k - 1 on the weight.
    """
    k = cfg.k
    delta_q = math.exp(-eq.V_w)
    nu_mass = cfg.base_measure.total_mass(cfg.domain) if cfg.base_measure.kind != "density" else math.inf
    if not eta > 0:
        return OutlierReport(k, eta, delta_q, math.nan, None, None, None, nu_mass, None,
                             "declined: eta must be positive")
    if eta >= delta_q:
        return OutlierReport(k, eta, delta_q, -math.inf, 0.0, 0.0, None, nu_mass, True,
                             "eta >= delta: the outlier set is empty")
    if k < 2:
        raise ContractError("k must be at least 2")
    x = run.flat_samples
    pairs = run.pair_log_sums.reshape(-1)
    q = np.asarray(eval_weight(cfg.Q, x.astype(complex)), dtype=float).sum(axis=1)
    norm_vdm = 2.0 * (pairs - (k - 1) * q) / (k * (k - 1))
    threshold = math.log(delta_q - eta)
    hits = norm_vdm < threshold
    p = float(hits.mean())
    se = math.sqrt(p * (1 - p) / len(hits))
    bound = outlier_bound(k, eta, delta_q, nu_mass) if math.isfinite(nu_mass) else None
    passed = None if bound is None else bool(p <= bound + 3 * se)
    note = "" if bound is not None else "reference mass infinite: no bound"
    return OutlierReport(k, eta, delta_q, threshold, p, se, bound, nu_mass, passed, note)
