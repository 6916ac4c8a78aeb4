"""Weighted equilibrium measures on a grid.

The discrete problem is the convex quadratic program

    minimise  m^T A m + 2 q^T m   over the probability simplex,

with A the discrete log kernel of the grid and q the weight at the nodes.
A is conditionally positive definite (positive on sum-zero vectors), so the
minimiser is unique.  Unbounded domains are solved in the sphere chart with
the lifted weight q~ = Q - 1/2 log(1+|z|^2) and pulled back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import AdmissibilityError, ContractError, InfeasibleError
from .geometry import Grid, conformal_factor, pairwise_distances
from .measures import DiscreteMeasure, bl_distance
from .weights import WeightSpec, classify_admissibility, eval_weight

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_SUPPORT_THRESHOLD = 1e-6


@dataclass(eq=False)
class EquilibriumResult:
    measure: DiscreteMeasure
    V_w: float
    F_w: float
    support_mask: np.ndarray
    frostman_max_violation_off_support: float
    frostman_max_violation_on_support: float
    iterations: int
    converged: bool
    fw_gap: float = math.nan
    route: str = "plane"
    chart_measure: DiscreteMeasure | None = None
    F_w_chart: float = math.nan
    pole_value: float = math.nan
    residuals: np.ndarray | None = None
    method: str = ""
    grid: Grid | None = field(default=None, repr=False)
    weight: WeightSpec | None = field(default=None, repr=False)

    @property
    def masses(self) -> np.ndarray:
        return self.measure.masses

    def summary(self) -> dict:
        return {
            "V_w": self.V_w,
            "F_w": self.F_w,
            "F_w_chart": self.F_w_chart,
            "route": self.route,
            "pole_value": self.pole_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "fw_gap": self.fw_gap,
            "support_size": int(np.sum(self.support_mask)),
            "frostman_max_violation_off_support": self.frostman_max_violation_off_support,
            "frostman_max_violation_on_support": self.frostman_max_violation_on_support,
            "method": self.method,
        }


# ---------------------------------------------------------------------------
# kernel and weight on a grid

def grid_kernel(grid: Grid, idx=None) -> np.ndarray:
    """Discrete log kernel of the grid in its chart (optionally on a node subset)."""
    z = grid.plane_nodes if idx is None else grid.plane_nodes[idx]
    h = grid.spacing if idx is None else grid.spacing[idx]
    c = grid.self_consts if idx is None else grid.self_consts[idx]
    d = pairwise_distances(z, grid.chart)
    np.fill_diagonal(d, 1.0)
    A = -np.log(d)
    np.fill_diagonal(A, np.log(1.0 / h) + c)
    return A


def chart_weight(grid: Grid, Q: WeightSpec) -> np.ndarray:
    """Q at the nodes, lifted to the sphere (Q - 1/2 log(1+|z|^2)) for sphere-chart grids."""
    z = grid.plane_nodes
    q = np.asarray(eval_weight(Q, z), dtype=float)
    if grid.chart == "sphere":
        q = q - 0.5 * np.log1p(np.abs(z) ** 2)
    return q


def _pole_value(grid: Grid, Q: WeightSpec) -> float:
    if grid.domain.bounded:
        return math.inf
    rep = classify_admissibility(Q, grid.domain)
    if rep.klass in ("not admissible", "inconclusive"):
        raise AdmissibilityError(f"weight {Q} is {rep.klass} on {grid.domain}")
    return rep.M_estimate


# ---------------------------------------------------------------------------
# simplex QP solvers

def _objective(A, q, m):
    return float(m @ (A @ m) + 2.0 * q @ m)


def _face_solve(A, q, idx):
    """Minimiser of the quadratic on the affine face {m_idx sums to 1, zero elsewhere}."""
    k = len(idx)
    if k == 1:
        return np.ones(1)
    K = np.empty((k + 1, k + 1))
    K[:k, :k] = 2.0 * A[np.ix_(idx, idx)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    K[k, k] = 0.0
    rhs = np.concatenate([-2.0 * q[idx], [1.0]])
    sol = scipy.linalg.solve(K, rhs, assume_a="sym", check_finite=False)
    return sol[:k]


def _fw_gap(A, q, m):
    g = 2.0 * (A @ m + q)
    return float(g @ m - g.min()), g


def active_set_qp(A, q, m0, tol=DEFAULT_TOL, max_iter=500):
    """Fully corrective Frank-Wolfe: grow the face by all descent vertices, re-optimise on it.

    Each inner step solves the KKT system on the working face.  Negative
    coordinates are pruned; if the pruned face does not improve the objective
    a ratio-test step toward the face minimiser is taken instead (a combined
    away step), which always decreases the objective.  Stops when the
    Frank-Wolfe gap drops below ``tol``.
    """
    n = len(q)
    m = m0.copy()
    f = _objective(A, q, m)
    it = 0
    gap, g = _fw_gap(A, q, m)
    while it < max_iter:
        if gap <= tol:
            return m, gap, it, True
        lam = g @ m
        S = (m > 0) | (g < lam)
        idx = np.flatnonzero(S)
        it += 1
        sol0 = _face_solve(A, q, idx)
        sol = sol0
        cur = idx
        while np.any(sol < 0):
            cur = cur[sol > 0]
            sol = _face_solve(A, q, cur)
            it += 1
        cand = np.zeros(n)
        cand[cur] = sol
        fc = _objective(A, q, cand)
        if fc < f - 1e-15 * abs(f) or fc <= f:
            m, f = cand, fc
        else:
            # ratio test from m toward the unpruned face minimiser
            mi = m[idx]
            d = sol0 - mi
            neg = d < 0
            alpha = 1.0 if not np.any(neg) else min(1.0, float(np.min(mi[neg] / -d[neg])))
            new = np.maximum(mi + alpha * d, 0.0)
            new /= new.sum()
            m = np.zeros(n)
            m[idx] = new
            f = _objective(A, q, m)
        gap, g = _fw_gap(A, q, m)
    return m, gap, it, gap <= tol


def away_step_fw(A, q, m0, tol=DEFAULT_TOL, max_iter=200_000):
    """Frank-Wolfe with away steps and exact line search for the simplex QP."""
    m = m0.copy()
    Am = A @ m
    diagA = np.diag(A)
    for it in range(1, max_iter + 1):
        g = 2.0 * (Am + q)
        lam = g @ m
        s = int(np.argmin(g))
        gap = lam - g[s]
        if gap <= tol:
            return m, gap, it, True
        supp = np.flatnonzero(m > 0)
        v = supp[int(np.argmax(g[supp]))]
        mAm = m @ Am
        if gap >= g[v] - lam:
            # toward vertex s: d = e_s - m
            gd = g[s] - lam
            dAd = diagA[s] - 2.0 * Am[s] + mAm
            gmax = 1.0
            col = A[:, s]
            sign = 1.0
        else:
            # away from vertex v: d = m - e_v
            gd = lam - g[v]
            dAd = diagA[v] - 2.0 * Am[v] + mAm
            gmax = m[v] / (1.0 - m[v]) if m[v] < 1.0 else 1e12
            col = A[:, v]
            sign = -1.0
        gamma = gmax if dAd <= 0 else min(gmax, -gd / (2.0 * dAd))
        if sign > 0:
            m = (1.0 - gamma) * m
            m[s] += gamma
            Am = (1.0 - gamma) * Am + gamma * col
        else:
            m = (1.0 + gamma) * m
            m[v] -= gamma
            Am = (1.0 + gamma) * Am - gamma * col
            if gamma == gmax:
                m[v] = 0.0
        m[m < 0] = 0.0
    gap, _ = _fw_gap(A, q, m)
    return m, gap, max_iter, gap <= tol


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = ind[u - css / ind > 0][-1]
    return np.maximum(v - css[rho - 1] / rho, 0.0)


def projected_gradient(A, q, m0, tol=DEFAULT_TOL, max_iter=20_000):
    """Projected gradient with Armijo backtracking (fallback solver)."""
    m = m0.copy()
    f = _objective(A, q, m)
    step = 1.0 / (2.0 * np.abs(A).sum(axis=1).max())
    for it in range(1, max_iter + 1):
        gap, g = _fw_gap(A, q, m)
        if gap <= tol:
            return m, gap, it, True
        t = step * 4.0
        while True:
            cand = _project_simplex(m - t * g)
            fc = _objective(A, q, cand)
            if fc <= f + 1e-4 * g @ (cand - m) or t < 1e-16:
                break
            t *= 0.5
        m, f = cand, fc
    gap, _ = _fw_gap(A, q, m)
    return m, gap, max_iter, gap <= tol


_METHODS = {"active-set": active_set_qp, "away-step": away_step_fw,
            "projected-gradient": projected_gradient}


# ---------------------------------------------------------------------------
# driver

def solve_equilibrium(grid: Grid, Q: WeightSpec, tol: float = DEFAULT_TOL, max_iter: int | None = None,
                      method: str = "active-set", start=None,
                      support_threshold: float = DEFAULT_SUPPORT_THRESHOLD,
                      pole_value: float | None = None) -> EquilibriumResult:
    """Minimise the discretised weighted energy over probability measures on the grid.

    Sphere-chart grids work with the lifted weight; the returned ``measure``
    is always the plane-chart pullback, ``chart_measure`` the measure in the
    grid's chart.  V_w is chart independent; F_w is reported in the plane
    normalisation (F_w_chart - 1/2 int log(1+|t|^2) dmu).  ``pole_value``
    overrides the lifted weight's value at the north pole, which is otherwise
    taken from the admissibility classification.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    if method not in _METHODS:
        raise ContractError(f"unknown method {method!r}")
    if pole_value is not None:
        pole = float(pole_value)
    else:
        pole = _pole_value(grid, Q) if grid.chart == "sphere" else math.inf
    q = chart_weight(grid, Q)
    feas = np.isfinite(q)
    idx = np.flatnonzero(feas)
    if len(idx) < 2:
        raise InfeasibleError("fewer than two grid nodes have a finite weight")
    A = grid_kernel(grid, idx)
    qf = q[idx]
    if start is None:
        m0 = np.full(len(idx), 1.0 / len(idx))
    else:
        m0 = np.asarray(start, dtype=float)[idx]
        if np.any(m0 < 0) or m0.sum() <= 0:
            raise ContractError("start must be a nonnegative vector with mass on feasible nodes")
        m0 = m0 / m0.sum()
    solver = _METHODS[method]
    kw = {} if max_iter is None else {"max_iter": max_iter}
    try:
        mf, gap, iters, ok = solver(A, qf, m0, tol=tol, **kw)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        log.warning("face solve failed; falling back to projected gradient")
        mf, gap, iters, ok = projected_gradient(A, qf, m0, tol=tol, **kw)
        method = "projected-gradient"
    if not ok and method == "active-set":
        log.warning("active set stalled at gap %.3g; continuing with away-step Frank-Wolfe", gap)
        mf, gap, it2, ok = away_step_fw(A, qf, mf, tol=tol)
        iters += it2
        method = "active-set+away-step"
    m = np.zeros(grid.n)
    m[idx] = mf
    return _assemble(grid, Q, q, A, idx, m, gap, iters, ok, method, pole, support_threshold)


def _assemble(grid, Q, q, A, idx, m, gap, iters, ok, method, pole, support_threshold):
    mf = m[idx]
    pot = A @ mf
    int_q = float(q[idx] @ mf)
    V = float(mf @ pot) + 2.0 * int_q
    F_chart = V - int_q
    if grid.chart == "sphere":
        F = F_chart - 0.5 * float(np.log1p(np.abs(grid.plane_nodes) ** 2) @ m)
    else:
        F = F_chart
    residuals = np.full(grid.n, np.inf)
    residuals[idx] = pot + q[idx] - F_chart
    chart_mu = DiscreteMeasure.from_grid(grid, m)
    if grid.chart == "sphere":
        widths = grid.spacing / conformal_factor(grid.plane_nodes)
        plane_mu = DiscreteMeasure(grid.plane_nodes, m, widths, grid.self_consts, "plane")
    else:
        plane_mu = chart_mu
    res = EquilibriumResult(plane_mu, V, F, np.zeros(grid.n, bool), math.nan, math.nan, iters, ok,
                            fw_gap=gap, route=grid.chart, chart_measure=chart_mu, F_w_chart=F_chart,
                            pole_value=pole, residuals=residuals, method=method, grid=grid, weight=Q)
    rep = frostman_report(res, Q, grid, support_threshold)
    res.support_mask = rep.support_mask
    res.frostman_max_violation_off_support = rep.max_violation_off_support
    res.frostman_max_violation_on_support = rep.max_violation_on_support
    return res


def density_1d(res: EquilibriumResult):
    """(nodes, mass / Lebesgue cell length) for a 1D grid; 0 on cells reaching infinity."""
    grid = res.grid
    if grid is None or grid.edges is None:
        raise ContractError("density_1d needs the 1D grid of the solve")
    with np.errstate(invalid="ignore"):
        length = np.diff(grid.edges)
    dens = np.where(np.isfinite(length), res.measure.masses / np.where(np.isfinite(length), length, 1.0), 0.0)
    return grid.plane_nodes.real, dens


@dataclass(frozen=True, eq=False)
class FrostmanReport:
    nodes: np.ndarray
    residuals: np.ndarray
    support_mask: np.ndarray
    max_violation_off_support: float
    max_violation_on_support: float
    max_abs_residual_on_support: float

    def rows(self):
        for z, r, s in zip(self.nodes, self.residuals, self.support_mask):
            yield z.real, z.imag, r, int(s)


def frostman_report(res: EquilibriumResult, Q: WeightSpec, grid: Grid,
                    support_threshold: float = DEFAULT_SUPPORT_THRESHOLD) -> FrostmanReport:
    """U^mu + Q - F_w at every node, with the support split by a mass threshold.

    Off the support the residual should be >= 0, on it <= 0; each violation is
    reported as a nonnegative number (0 when the inequality holds).
    """
    m = res.chart_measure.masses if res.chart_measure is not None else res.measure.masses
    if res.residuals is not None:
        r = res.residuals
    else:
        q = chart_weight(grid, Q)
        idx = np.flatnonzero(np.isfinite(q))
        A = grid_kernel(grid, idx)
        r = np.full(grid.n, np.inf)
        r[idx] = A @ m[idx] + q[idx] - res.F_w_chart
    mask = m > support_threshold * m.max()
    off = r[~mask]
    on = r[mask]
    off_v = float(max(0.0, -np.min(off))) if off.size else 0.0
    on_v = float(max(0.0, np.max(on))) if on.size else 0.0
    on_abs = float(np.max(np.abs(on))) if on.size else 0.0
    return FrostmanReport(grid.plane_nodes, r, mask, off_v, on_v, on_abs)


def neg_potential_roundtrip(mu0: DiscreteMeasure, grid: Grid, tol: float = DEFAULT_TOL,
                            **kw) -> EquilibriumResult:
    """Solve with Q = -U^{mu0} tabulated on the grid; the minimiser should be mu0 itself."""
    if not mu0.is_grid or not mu0.is_probability():
        raise ContractError("mu0 must be a grid probability measure")
    if mu0.n != grid.n or not np.allclose(_plane(mu0), grid.plane_nodes, rtol=0, atol=1e-12):
        raise ContractError("mu0 must live on the grid's nodes")
    A = grid_kernel(grid)
    q_chart = -(A @ mu0.masses)
    if grid.chart == "sphere":
        q_plane = q_chart + 0.5 * np.log1p(np.abs(grid.plane_nodes) ** 2)
    else:
        q_plane = q_chart
    Q = WeightSpec.tabulated(grid.plane_nodes, q_plane, grid.edges)
    if grid.chart == "sphere" and not grid.domain.bounded:
        # chart potential at the north pole: log(1/|P0 - T(t)|) = 1/2 log(1+|t|^2)
        kw.setdefault("pole_value", -0.5 * float(np.log1p(np.abs(grid.plane_nodes) ** 2) @ mu0.masses))
    return solve_equilibrium(grid, Q, tol=tol, **kw)


def _plane(mu):
    return mu.plane_support() if mu.chart == "sphere" else mu.support


def uniqueness_gap(grid: Grid, Q: WeightSpec, tol: float = DEFAULT_TOL, seed: int = 0) -> float:
    """BL distance between solutions started from the uniform and from a random feasible point."""
    rng = np.random.default_rng(seed)
    a = solve_equilibrium(grid, Q, tol=tol)
    b = solve_equilibrium(grid, Q, tol=tol, start=rng.random(grid.n))
    return bl_distance(a.measure, b.measure)
