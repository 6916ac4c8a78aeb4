"""Bernstein-Markov constants and the weighted Bernstein-Walsh check.

For a measure nu on grid nodes, the best constant M_k in

    sup_K |p e^{-kQ}| <= M_k ||p e^{-kQ}||_{L^2(nu)},   deg p <= k,

is the square root of the sup of the weighted Christoffel sum
sum_j |q_j(x)|^2 e^{-2kQ(x)} over an orthonormal basis q_j of L^2(e^{-2kQ} nu).
The orthonormal basis comes from a column-pivoted QR factorisation of the
weighted design matrix in a Chebyshev (real nodes) or scaled monomial
(complex nodes) basis, which avoids forming an ill-conditioned Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.polynomial import chebyshev

from .errors import ContractError, DegenerateMeasureError
from .geometry import Grid
from .measures import potential
from .weights import WeightSpec, eval_weight

MAX_DEGREE = 64


@dataclass(frozen=True)
class BMReport:
    degrees: tuple
    M_k: tuple
    M_k_kth_root: tuple

    def rows(self):
        return list(zip(self.degrees, self.M_k, self.M_k_kth_root))


def _eval_points(grid: Grid) -> np.ndarray:
    """Grid nodes plus finite cell edges: the sup of a Christoffel function sits at the ends."""
    if grid.edges is None:
        return grid.plane_nodes
    e = grid.edges[np.isfinite(grid.edges)].astype(complex)
    return np.concatenate([grid.plane_nodes, e])


class _Basis:
    def __init__(self, pts, k):
        self.k = k
        self.real = bool(np.all(pts.imag == 0))
        if self.real:
            lo, hi = pts.real.min(), pts.real.max()
            self.c, self.r = 0.5 * (lo + hi), max(0.5 * (hi - lo), 1e-300)
        else:
            self.c = pts.mean()
            self.r = max(np.abs(pts - self.c).max(), 1e-300)

    def __call__(self, z):
        t = (np.asarray(z) - self.c) / self.r
        if self.real:
            return chebyshev.chebvander(t.real, self.k)
        return np.vander(t, self.k + 1, increasing=True)


def _check_degree(k):
    if k < 0:
        raise ContractError("degree must be nonnegative")
    if k > MAX_DEGREE:
        raise ContractError(f"degree {k} exceeds the supported maximum {MAX_DEGREE}")


def bm_constant(grid: Grid, nu_masses, Q: WeightSpec, k: int) -> float:
    """Smallest M_k for polynomials of degree <= k on the discretised set."""
    _check_degree(k)
    nu = np.asarray(nu_masses, dtype=float)
    if nu.shape != (grid.n,):
        raise ContractError("need one nu-mass per grid node")
    if np.any(nu < 0):
        raise ContractError("nu-masses must be nonnegative")
    z = grid.plane_nodes
    q = np.asarray(eval_weight(Q, z), dtype=float)
    rows = (nu > 0) & np.isfinite(q)
    if np.any(np.isinf(nu[rows])):
        raise ContractError("infinite nu-mass cells: use monic_bm_ratio for exact-degree polynomials")
    if rows.sum() < k + 1:
        raise DegenerateMeasureError(f"nu charges {rows.sum()} usable nodes, need at least {k + 1}")
    ev = _eval_points(grid)
    qe = np.asarray(eval_weight(Q, ev), dtype=float)
    okev = np.isfinite(qe)
    ev, qe = ev[okev], qe[okev]
    basis = _Basis(ev, k)
    shift = min(q[rows].min(), qe.min())
    B = basis(z[rows]) * (np.exp(-k * (q[rows] - shift)) * np.sqrt(nu[rows]))[:, None]
    _, R, piv = scipy.linalg.qr(B, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d[-1] <= 1e-13 * d[0] * math.sqrt(B.shape[0]):
        raise DegenerateMeasureError("weighted design matrix is numerically rank deficient")
    V = basis(ev)[:, piv]
    coef = scipy.linalg.solve_triangular(R, V.T, trans="T", lower=False)
    chris = np.sum(np.abs(coef) ** 2, axis=0) * np.exp(-2.0 * k * (qe - shift))
    return float(math.sqrt(chris.max()))


def bm_report(grid: Grid, nu_masses, Q: WeightSpec, degrees) -> BMReport:
    degs = tuple(int(d) for d in degrees)
    Ms = tuple(bm_constant(grid, nu_masses, Q, d) for d in degs)
    roots = tuple(M ** (1.0 / d) if d > 0 else M for d, M in zip(degs, Ms))
    return BMReport(degs, Ms, roots)


def monic_bm_ratio(grid: Grid, nu_masses, Q: WeightSpec, k: int, trials: int = 100,
                   seed: int = 0) -> float:
    """Largest sup/L^2 ratio over random monic degree-k weighted polynomials.

    On infinite-mass cells a weighted monic polynomial that does not vanish
    there has infinite L^2 norm, so the ratio is 0 for it.
    """
    _check_degree(k)
    nu = np.asarray(nu_masses, dtype=float)
    rng = np.random.default_rng(seed)
    z = grid.plane_nodes
    q = np.asarray(eval_weight(Q, z), dtype=float)
    fin = np.isfinite(q)
    ev = _eval_points(grid)
    qe = np.asarray(eval_weight(Q, ev), dtype=float)
    ev, qe = ev[np.isfinite(qe)], qe[np.isfinite(qe)]
    best = 0.0
    for _ in range(trials):
        roots = rng.choice(z[fin], size=k) + rng.normal(scale=0.1, size=k) * (0 if grid.is_real else 1)
        with np.errstate(divide="ignore"):
            lp = np.sum(np.log(np.abs(z[fin][:, None] - roots[None, :])), axis=1) - k * q[fin]
            lpe = np.sum(np.log(np.abs(ev[:, None] - roots[None, :])), axis=1) - k * qe
        top = max(lp.max(), lpe.max())
        with np.errstate(invalid="ignore"):
            l2 = np.sum(nu[fin] * np.exp(2.0 * (lp - top)))
        if not np.isfinite(l2):
            continue
        best = max(best, math.exp(lpe.max() - top) / math.sqrt(l2))
    return best


# ---------------------------------------------------------------------------
# Bernstein-Walsh

@dataclass(frozen=True)
class BWReport:
    degree: int
    trials: int
    max_log_violation: float
    signed_max: float
    n_test_points: int
    worst_point: complex

    @property
    def passed(self) -> bool:
        return self.max_log_violation <= 1e-4


def _support_samples(eq, grid: Grid, per_cell: int = 9):
    mask = eq.support_mask
    if grid.edges is not None:
        return grid.cell_samples(per_cell)[mask].reshape(-1).astype(complex)
    return grid.plane_nodes[mask]


def _random_roots(eq, grid, k, rng):
    m = eq.chart_measure.masses if eq.chart_measure is not None else eq.measure.masses
    cells = rng.choice(grid.n, size=k, p=m / m.sum())
    if grid.edges is None:
        return grid.plane_nodes[cells]
    u = rng.random(k)
    if grid.param_edges is not None:
        th = grid.param_edges[cells] + u * (grid.param_edges[cells + 1] - grid.param_edges[cells])
        th = np.clip(th, -math.pi * (1 - 1e-9), math.pi * (1 - 1e-9))
        return np.tan(th / 2.0).astype(complex)
    e = grid.edges
    return (e[cells] + u * (e[cells + 1] - e[cells])).astype(complex)


def default_test_points(eq, grid: Grid) -> np.ndarray:
    """Off-support grid nodes plus a lattice of complex points off the real domain."""
    z = grid.plane_nodes
    q = np.asarray(eval_weight(eq.weight, z), dtype=float) if eq.weight is not None else np.zeros(grid.n)
    pts = [z[(~eq.support_mask) & np.isfinite(q)]]
    if grid.is_real:
        sup = z[eq.support_mask].real
        if grid.param_edges is not None:
            xs = np.tan(np.linspace(-0.49, 0.49, 41) * math.pi)
            ys = (0.25, 1.0, 4.0)
        else:
            xs = np.linspace(sup.min() - 1.0, sup.max() + 1.0, 41)
            ys = (0.05, 0.25, 1.0)
        pts += [xs + 1j * y for y in ys] + [xs - 1j * y for y in ys]
    else:
        r = np.abs(z).max()
        ang = np.exp(2j * math.pi * np.arange(32) / 32)
        pts += [1.1 * r * ang, 2.0 * r * ang]
    return np.concatenate(pts)


def bernstein_walsh_check(eq, Q: WeightSpec, grid: Grid, trials: int = 100, k: int = 10,
                          seed: int = 0, test_points=None, roots_list=None) -> BWReport:
    """Check |p(z)| <= M exp(k(-U(z) + F_w)) for random degree-k polynomials.

    M is the sup of |p e^{-kQ}| over the support (sampled densely inside each
    support cell, plus the limit at infinity when the support reaches the north
    pole); U and F_w are the plane-side potential and Robin constant.  The
    reported violation is max(0, log|p(z)| - log bound) over all test points.
    """
    if not eq.converged:
        raise ContractError("Bernstein-Walsh check needs a converged equilibrium")
    rng = np.random.default_rng(seed)
    tp = default_test_points(eq, grid) if test_points is None else np.asarray(test_points, dtype=complex)
    green = -np.asarray(potential(eq.measure, tp), dtype=float) + eq.F_w
    sup_pts = _support_samples(eq, grid)
    q_sup = np.asarray(eval_weight(Q, sup_pts), dtype=float)
    reaches_pole = grid.edges is not None and (
        (eq.support_mask[0] and grid.edges[0] == -math.inf)
        or (eq.support_mask[-1] and grid.edges[-1] == math.inf))
    worst, worst_pt = -math.inf, complex("nan")
    n_trials = trials if roots_list is None else len(roots_list)
    for t in range(n_trials):
        roots = _random_roots(eq, grid, k, rng) if roots_list is None else np.asarray(roots_list[t], dtype=complex)
        deg = len(roots)
        lp_sup = np.sum(np.log(np.abs(sup_pts[:, None] - roots[None, :])), axis=1) if deg else np.zeros(len(sup_pts))
        logM = float(np.max(lp_sup - deg * q_sup))
        if reaches_pole and math.isfinite(eq.pole_value):
            logM = max(logM, -deg * eq.pole_value)
        with np.errstate(divide="ignore"):
            lp = np.sum(np.log(np.abs(tp[:, None] - roots[None, :])), axis=1) if deg else np.zeros(len(tp))
        viol = lp - logM - deg * green
        i = int(np.argmax(viol))
        if viol[i] > worst:
            worst, worst_pt = float(viol[i]), complex(tp[i])
    return BWReport(k, n_trials, max(0.0, worst), worst, len(tp), worst_pt)
