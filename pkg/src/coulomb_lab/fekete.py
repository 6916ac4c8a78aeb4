"""Weighted Fekete points on a grid.

The objective is the log weighted Vandermonde

    sum_{i<j} log|x_i - x_j| - (k-1) sum_j Q(x_j),

maximised over k-subsets of grid nodes by greedy Leja seeding followed by
single-point exchanges until no swap improves it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InfeasibleError
from .geometry import Grid
from .measures import EmpiricalMeasure, bl_distance
from .weights import WeightSpec, eval_weight


@dataclass(frozen=True, eq=False)
class FeketeResult:
    points: np.ndarray
    log_vdm_q: float
    delta_k: float
    method: str
    exchanges: int
    node_indices: np.ndarray | None = None
    locally_optimal: bool = True

    @property
    def k(self) -> int:
        return len(self.points)


def _sort_key(z):
    z = np.asarray(z, dtype=complex)
    return np.lexsort((z.imag, z.real))


def log_vdm_weighted(points, Q: WeightSpec | None = None) -> float:
    """Log weighted Vandermonde; -inf for coincident points or infinite weight."""
    z = np.asarray(points, dtype=complex).reshape(-1)
    k = len(z)
    if k < 2:
        raise ContractError("need at least two points")
    z = z[_sort_key(z)]
    iu = np.triu_indices(k, 1)
    d = np.abs(z[iu[0]] - z[iu[1]])
    if np.any(d == 0):
        return -math.inf
    total = math.fsum(np.log(d))
    if Q is not None:
        q = np.asarray(eval_weight(Q, z), dtype=float)
        if np.any(np.isinf(q)):
            return -math.inf
        total -= (k - 1) * math.fsum(q)
    return total


def delta_from_log_vdm(log_vdm: float, k: int) -> float:
    return math.exp(2.0 * log_vdm / (k * (k - 1)))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("COULOMB_LAB_THREADS", "1")))
    except ValueError:
        return 1


class _Exchange:
    """Incremental objective bookkeeping for subsets of grid nodes."""

    def __init__(self, z, q, k):
        self.z = z
        self.q = q
        self.k = k

    def logdist(self, j):
        # the node's own entry is set to 0 so sums over the other columns stay finite;
        # chosen rows are always masked before use
        d = np.abs(self.z - self.z[j])
        d[j] = 1.0
        return np.log(d)

    def leja(self, first):
        n, k = len(self.z), self.k
        chosen = [first]
        L = np.zeros((n, k))
        L[:, 0] = self.logdist(first)
        score = L[:, 0].copy()
        for s in range(1, k):
            val = score - s * self.q
            val[chosen] = -np.inf
            nxt = int(np.argmax(val))
            chosen.append(nxt)
            L[:, s] = self.logdist(nxt)
            score += L[:, s]
        return np.array(chosen), L

    def optimise(self, chosen, L, max_sweeps=10_000):
        k, q = self.k, self.q
        chosen = chosen.copy()
        total = L.sum(axis=1)
        swaps = 0
        for _ in range(max_sweeps):
            improved = False
            for i in range(k):
                others = total - L[:, i]
                val = others - (k - 1) * q
                cur = val[chosen[i]]
                val[chosen] = -np.inf
                best = int(np.argmax(val))
                if val[best] > cur + 1e-12 * max(1.0, abs(cur)):
                    chosen[i] = best
                    L[:, i] = self.logdist(best)
                    total = others + L[:, i]
                    swaps += 1
                    improved = True
            if not improved:
                return chosen, swaps, True
        return chosen, swaps, False


def candidate_points(grid: Grid) -> np.ndarray:
    """Search set: the grid nodes, plus the finite cell edges of a 1D grid.

    Fekete points of an interval include its endpoints, which cell midpoints
    never reach, so 1D searches run over the closure of the cells.
    """
    if grid.edges is None:
        return grid.plane_nodes
    e = grid.edges[np.isfinite(grid.edges)].astype(complex)
    pts = np.concatenate([grid.plane_nodes, e])
    return pts[np.argsort(pts.real, kind="stable")]


def compute_fekete(grid: Grid, Q: WeightSpec, k: int, restarts: int = 4, seed: int = 0,
                   refine: bool = False) -> FeketeResult:
    """Best of ``restarts`` Leja-seeded exchange searches over the candidate points.

    Restart 0 is seeded deterministically at the node of smallest weight
    (first in grid order on ties); the others at random nodes drawn from
    ``seed``.  With ``refine=True`` the points of a 1D grid are then moved
    continuously inside their cells by coordinate ascent (heuristic).
    """
    if k < 2:
        raise ContractError("k must be at least 2")
    z = candidate_points(grid)
    q = np.asarray(eval_weight(Q, z), dtype=float)
    feas = np.flatnonzero(np.isfinite(q))
    if len(feas) < k:
        raise InfeasibleError(f"only {len(feas)} nodes have finite weight, need {k}")
    ex = _Exchange(z[feas], q[feas], k)
    rng = np.random.default_rng(seed)
    firsts = [int(np.argmin(ex.q))] + [int(v) for v in rng.integers(0, len(feas), size=max(0, restarts - 1))]

    def run(first):
        chosen, L = ex.leja(first)
        chosen, swaps, ok = ex.optimise(chosen, L)
        pts = ex.z[chosen]
        order = _sort_key(pts)
        return log_vdm_weighted(pts, Q), swaps, ok, feas[chosen[order]]

    with ThreadPoolExecutor(max_workers=min(_threads(), len(firsts))) as pool:
        results = list(pool.map(run, firsts))
    best = max(results, key=lambda r: (r[0], tuple(-np.asarray(z[r[3]].real))))
    val, swaps, ok, nodes = best
    pts = z[nodes]
    method = "grid-exchange"
    if refine:
        pts, val = _refine(grid, Q, pts, val)
        method = "continuous-refine"
    return FeketeResult(pts, val, delta_from_log_vdm(val, k), method, swaps, nodes, ok)


def _refine(grid, Q, pts, val, sweeps=5):
    from scipy.optimize import minimize_scalar

    if grid.edges is None:
        raise ContractError("continuous refinement is implemented for 1D grids")
    x = pts.real.copy()
    k = len(x)
    edges = grid.edges
    for _ in range(sweeps):
        for i in range(k):
            cell = int(np.clip(np.searchsorted(edges, x[i], side="right") - 1, 0, len(edges) - 2))
            lo, hi = edges[cell], edges[cell + 1]
            if not (math.isfinite(lo) and math.isfinite(hi)):
                continue
            others = np.delete(x, i)

            def neg(t):
                d = np.abs(t - others)
                if np.any(d == 0):
                    return math.inf
                qt = float(eval_weight(Q, t))
                return -(np.sum(np.log(d)) - (k - 1) * qt)

            r = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                options={"xatol": 1e-12 * max(1.0, abs(hi - lo))})
            if -r.fun > -neg(x[i]):
                x[i] = r.x
    x = np.sort(x)
    return x.astype(complex), log_vdm_weighted(x, Q)


def delta_limit_study(grid: Grid, Q: WeightSpec, k_list, eq=None, restarts: int = 4,
                      seed: int = 0) -> list[dict]:
    """One row per k: delta_k, normalised log-VDM and BL distance to the equilibrium measure."""
    k_list = list(k_list)
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ContractError("k_list must be increasing")
    target = math.exp(-eq.V_w) if eq is not None else math.nan
    rows = []
    for k in k_list:
        res = compute_fekete(grid, Q, k, restarts=restarts, seed=seed)
        row = {"k": k, "delta_k": res.delta_k,
               "normalised_log_vdm": 2.0 * res.log_vdm_q / (k * (k - 1)),
               "target_delta": target, "exchanges": res.exchanges,
               "locally_optimal": res.locally_optimal}
        if eq is not None:
            row["bl_to_equilibrium"] = bl_distance(EmpiricalMeasure(res.points), eq.measure)
        rows.append(row)
    return rows
