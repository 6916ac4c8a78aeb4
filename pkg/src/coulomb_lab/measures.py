"""Discrete measures, logarithmic potentials and energies, and the BL metric."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import (ContractError, NorthPoleMassError, SingularConfigurationError,
                     UnboundedPotentialError, UnsupportedError)
from .geometry import (INTERVAL_SELF_CONSTANT, conformal_factor, stereo_inverse_array,
                       stereo_project)

PROB_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported positive measure.

    ``support`` is a complex array in the plane chart or an ``(N, 3)`` array
    in the sphere chart.  Grid measures also carry ``cell_widths`` (chart
    metric) and ``cell_consts``; the pair fixes the cell self-energy
    m_i^2 (log(1/h_i) + c_i).
    """

    support: np.ndarray
    masses: np.ndarray
    cell_widths: np.ndarray | None = None
    cell_consts: np.ndarray | None = None
    chart: str = "plane"

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=float)
        if masses.ndim != 1:
            raise ContractError("masses must be one-dimensional")
        if np.any(masses < 0) or np.any(~np.isfinite(masses)):
            raise ContractError("masses must be finite and nonnegative")
        if self.chart == "plane":
            support = np.asarray(self.support, dtype=complex).reshape(-1)
        elif self.chart == "sphere":
            support = np.asarray(self.support, dtype=float).reshape(-1, 3)
        else:
            raise ContractError(f"unknown chart {self.chart!r}")
        if len(support) != len(masses):
            raise ContractError("support and masses differ in length")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", masses)
        if self.cell_widths is not None:
            w = np.asarray(self.cell_widths, dtype=float)
            if w.shape != masses.shape or np.any(w <= 0):
                raise ContractError("cell widths must be positive, one per atom")
            object.__setattr__(self, "cell_widths", w)
            c = self.cell_consts
            c = np.full(len(w), INTERVAL_SELF_CONSTANT) if c is None else np.asarray(c, dtype=float)
            object.__setattr__(self, "cell_consts", c)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses)

    @property
    def n(self) -> int:
        return len(self.masses)

    @property
    def is_grid(self) -> bool:
        return self.cell_widths is not None

    def is_probability(self, tol: float = PROB_TOL) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def plane_support(self) -> np.ndarray:
        if self.chart == "plane":
            return self.support
        z, at_inf = stereo_inverse_array(self.support)
        if np.any(at_inf & (self.masses > 0)):
            raise NorthPoleMassError("measure charges the north pole")
        return z

    def with_masses(self, masses) -> "DiscreteMeasure":
        return DiscreteMeasure(self.support, masses, self.cell_widths, self.cell_consts, self.chart)

    @classmethod
    def from_grid(cls, grid, masses) -> "DiscreteMeasure":
        """Grid measure in the grid's chart."""
        return cls(grid.nodes, masses, grid.spacing, grid.self_consts, grid.chart)

    @classmethod
    def atom(cls, z, mass: float = 1.0) -> "DiscreteMeasure":
        return cls(np.array([z], dtype=complex), np.array([mass]))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """(1/k) sum of unit atoms at ``points``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        if len(pts) < 1:
            raise ContractError("an empirical measure needs k >= 1 points")
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return len(self.points)

    def to_measure(self, chart: str = "plane") -> DiscreteMeasure:
        k = self.k
        return DiscreteMeasure(self.points, np.full(k, 1.0 / k), chart=chart)


def _as_measure(mu) -> DiscreteMeasure:
    return mu.to_measure() if isinstance(mu, EmpiricalMeasure) else mu


# ---------------------------------------------------------------------------
# distances in a chart

def _dist_matrix(a, b, chart):
    if chart == "plane":
        return np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    diff = np.asarray(a)[:, None, :] - np.asarray(b)[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(mu: DiscreteMeasure) -> np.ndarray:
    """Discrete log kernel: -log distance off the diagonal, cell self-energy on it."""
    if not mu.is_grid:
        raise ContractError("the discrete kernel needs cell widths")
    d = _dist_matrix(mu.support, mu.support, mu.chart)
    np.fill_diagonal(d, 1.0)
    if np.any(d == 0):
        raise SingularConfigurationError("two cells share a node")
    A = -np.log(d)
    np.fill_diagonal(A, np.log(1.0 / mu.cell_widths) + mu.cell_consts)
    return A


def quadratic_energy(A: np.ndarray, m: np.ndarray, m2: np.ndarray | None = None) -> float:
    m2 = m if m2 is None else m2
    return float(m @ (A @ m2))


# ---------------------------------------------------------------------------
# potentials and energies

def potential(mu, z):
    """U^mu(z) = sum_j m_j log(1/|z - t_j|), with z in mu's chart.

    At one of its own nodes a grid measure uses the cell-averaged self term
    m_i (log(1/h_i) + c_i), matching the energy diagonal; an atomic measure
    gives +inf there.
    """
    mu = _as_measure(mu)
    if mu.chart == "plane":
        if not np.all(np.isfinite(mu.support)):
            raise UnboundedPotentialError("support has non-finite coordinates")
        zz = np.asarray(z, dtype=complex)
        single = zz.ndim == 0
        zz = zz.reshape(-1)
    else:
        zz = np.asarray(z, dtype=float)
        single = zz.ndim == 1
        zz = zz.reshape(-1, 3)
    d = _dist_matrix(zz, mu.support, mu.chart)
    out = np.empty(len(zz))
    m = mu.masses
    hit = d == 0
    with np.errstate(divide="ignore"):
        logs = -np.log(np.where(hit, 1.0, d))
    base = logs @ m
    rows = np.any(hit & (m[None, :] > 0), axis=1)
    out[:] = base
    if np.any(rows):
        if mu.is_grid:
            self_term = np.log(1.0 / mu.cell_widths) + mu.cell_consts
            out[rows] = base[rows] + (hit[rows] * (m * self_term)[None, :]).sum(axis=1)
        else:
            out[rows] = np.inf
    return float(out[0]) if single else out


def grid_potential(mu: DiscreteMeasure) -> np.ndarray:
    """U^mu at the measure's own nodes (cell-averaged self terms)."""
    return kernel_matrix(mu) @ mu.masses


def interaction_energy(points, masses, chart: str = "plane") -> float:
    """Off-diagonal double sum  sum_{i != j} m_i m_j log(1/|x_i - x_j|)."""
    mu = DiscreteMeasure(points, masses, chart=chart)
    d = _dist_matrix(mu.support, mu.support, chart)
    iu = np.triu_indices(mu.n, 1)
    dd = d[iu]
    if np.any(dd == 0):
        raise SingularConfigurationError("coincident points in interaction energy")
    terms = mu.masses[iu[0]] * mu.masses[iu[1]] * -np.log(dd)
    return 2.0 * math.fsum(terms)


def grid_energy(mu: DiscreteMeasure) -> float:
    """Midpoint-rule log energy of the piecewise-uniform density a grid measure represents."""
    if not mu.is_grid:
        raise ContractError("grid_energy needs cell widths")
    return quadratic_energy(kernel_matrix(mu), mu.masses)


def energy(mu) -> float:
    """Log energy; +inf for atomic measures."""
    mu = _as_measure(mu)
    if not mu.is_grid:
        return math.inf if np.any(mu.masses > 0) else 0.0
    return grid_energy(mu)


def integrate(mu: DiscreteMeasure, Q) -> float:
    """Integral of Q against mu; mass-free nodes never contribute (0 * inf = 0)."""
    q = _weight_values(mu, Q)
    charged = mu.masses > 0
    if np.any(np.isinf(q[charged])):
        return math.inf
    return float(np.dot(mu.masses[charged], q[charged]))


def _weight_values(mu, Q):
    if mu.chart == "sphere":
        return np.asarray(Q(mu.support), dtype=float).reshape(-1)
    return np.asarray(Q(mu.support), dtype=float).reshape(-1)


def weighted_energy(mu, Q) -> float:
    """I^Q(mu) = I(mu) + 2 int Q dmu; ``Q`` must live in mu's chart."""
    mu = _as_measure(mu)
    if not mu.is_probability():
        raise ContractError("weighted energy is defined for probability measures")
    e = energy(mu)
    if math.isinf(e):
        return e
    return e + 2.0 * integrate(mu, Q)


def pushforward(mu: DiscreteMeasure, direction: str) -> DiscreteMeasure:
    """Map a measure through T (``to-sphere``) or its inverse (``to-plane``)."""
    if direction == "to-sphere":
        if mu.chart != "plane":
            raise ContractError("to-sphere needs a plane measure")
        w = None if mu.cell_widths is None else mu.cell_widths * conformal_factor(mu.support)
        return DiscreteMeasure(stereo_project(mu.support).reshape(-1, 3), mu.masses, w,
                               mu.cell_consts, "sphere")
    if direction == "to-plane":
        if mu.chart != "sphere":
            raise ContractError("to-plane needs a sphere measure")
        z, at_inf = stereo_inverse_array(mu.support)
        if np.any(mu.masses[at_inf] > 0):
            raise NorthPoleMassError("cannot pull back a measure with mass at the north pole")
        keep = ~at_inf
        z = z[keep]
        w = None if mu.cell_widths is None else mu.cell_widths[keep] / conformal_factor(z)
        c = None if mu.cell_consts is None else mu.cell_consts[keep]
        return DiscreteMeasure(z, mu.masses[keep], w, c, "plane")
    raise ContractError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# bounded-Lipschitz distance

MAX_LP_VARIABLES = 400_000


def _signed_union(mu, nu):
    if mu.chart == "plane":
        pts = np.concatenate([mu.support, nu.support])
        keys = np.round(pts.real, 15) + 1j * np.round(pts.imag, 15)
        uniq, inv = np.unique(keys, return_inverse=True)
    else:
        pts = np.concatenate([mu.support, nu.support])
        uniq, inv = np.unique(np.round(pts, 15), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    d = np.zeros(len(uniq))
    np.add.at(d, inv[: mu.n], mu.masses)
    np.add.at(d, inv[mu.n:], -nu.masses)
    return uniq, d


def _bl_real_line(x, d):
    order = np.argsort(x)
    x, d = x[order], d[order]
    gaps = np.diff(x)
    if x[-1] - x[0] <= 2.0:
        # any 1-Lipschitz f on a set of diameter <= 2 shifts into [-1, 1], so BL = W1
        return float(np.sum(np.abs(np.cumsum(d)[:-1]) * gaps))
    n = len(x)
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.column_stack([np.arange(n - 1), np.arange(1, n)]).reshape(-1)
    vals = np.tile([-1.0, 1.0], n - 1)
    D = sparse.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))
    A = sparse.vstack([D, -D]).tocsr()
    b = np.concatenate([gaps, gaps])
    res = linprog(-d, A_ub=A, b_ub=b, bounds=[(-1.0, 1.0)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"BL linear program failed: {res.message}")
    return float(-res.fun)


def _bl_transport(mu, nu):
    nm, nn = mu.n, nu.n
    if nm * nn > MAX_LP_VARIABLES:
        raise UnsupportedError(
            f"BL distance between {nm}- and {nn}-atom measures in 2D exceeds the LP size limit")
    cost = np.minimum(_dist_matrix(mu.support, nu.support, mu.chart), 2.0).reshape(-1)
    rows_a = sparse.kron(sparse.eye(nm), np.ones((1, nn)))
    rows_b = sparse.kron(np.ones((1, nm)), sparse.eye(nn))
    A = sparse.vstack([rows_a, rows_b]).tocsr()
    b = np.concatenate([mu.masses, nu.masses])
    res = linprog(cost, A_eq=A[:-1], b_eq=b[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport linear program failed: {res.message}")
    return float(res.fun)


def bl_distance(mu, nu) -> float:
    """Bounded-Lipschitz distance between probability measures on the same chart.

    Equal to the transport distance for the metric min(d, 2).  Real supports
    use the exact one-dimensional reduction; other supports solve the
    transport linear program.
    """
    mu, nu = _as_measure(mu), _as_measure(nu)
    if mu.chart != nu.chart:
        raise ContractError("measures live on different charts")
    if not (mu.is_probability() and nu.is_probability()):
        raise ContractError("bl_distance needs probability measures")
    if mu.chart == "plane" and np.all(mu.support.imag == 0) and np.all(nu.support.imag == 0):
        x, d = _signed_union(mu, nu)
        return max(0.0, _bl_real_line(x.real, d))
    return max(0.0, _bl_transport(mu, nu))


def bl_distance_samples(samples, nu: DiscreteMeasure) -> np.ndarray:
    """BL distance from each row of a real (S, k) sample array to the real measure ``nu``."""
    samples = np.asarray(samples)
    if np.iscomplexobj(samples) and np.any(samples.imag != 0):
        return np.array([bl_distance(EmpiricalMeasure(s), nu) for s in samples])
    if not (nu.chart == "plane" and np.all(nu.support.imag == 0)):
        raise ContractError("fast path needs a real plane measure")
    if not nu.is_probability():
        raise ContractError("bl_distance needs probability measures")
    xs = np.sort(samples.real.astype(float), axis=1)
    S, k = xs.shape
    order = np.argsort(nu.support.real, kind="stable")
    xn, mn = nu.support.real[order], nu.masses[order]
    lo = min(xs.min(), xn.min())
    hi = max(xs.max(), xn.max())
    if hi - lo > 2.0:
        return np.array([bl_distance(EmpiricalMeasure(s), nu) for s in xs])
    # W1 = int |F_s - F_nu|.  F_s is constant between sorted sample points, so each
    # piece is int_a^b |c - F_nu|, split where the monotone F_nu crosses c.
    cdf = np.cumsum(mn)
    G_nodes = np.concatenate([[0.0], np.cumsum(cdf[:-1] * np.diff(xn))])

    def G(x):
        j = np.searchsorted(xn, x, side="right") - 1
        jc = np.maximum(j, 0)
        return np.where(j >= 0, G_nodes[jc] + cdf[jc] * (x - xn[jc]), 0.0)

    a = np.concatenate([np.full((S, 1), lo), xs], axis=1)
    b = np.concatenate([xs, np.full((S, 1), hi)], axis=1)
    c = np.broadcast_to(np.arange(k + 1) / k, a.shape)
    cross_idx = np.minimum(np.searchsorted(cdf, c - 1e-15, side="left"), len(xn) - 1)
    t = np.clip(xn[cross_idx], a, b)
    Ga, Gb, Gt = G(a), G(b), G(t)
    piece = c * (t - a) - (Gt - Ga) + (Gb - Gt) - c * (b - t)
    return np.maximum(0.0, np.sum(piece, axis=1))


# ---------------------------------------------------------------------------
# files

def write_measure_csv(mu: DiscreteMeasure, path) -> None:
    from .io import fmt

    coords = ["re", "im"] if mu.chart == "plane" else ["x", "y", "z"]
    if mu.chart == "plane":
        pts = np.column_stack([mu.support.real, mu.support.imag])
    else:
        pts = mu.support
    with open(path, "w", newline="") as fh:
        fh.write(f"# chart={mu.chart}\n")
        w = csv.writer(fh)
        cols = coords + ["mass"] + (["cell_width", "cell_const"] if mu.is_grid else [])
        w.writerow(cols)
        for i in range(mu.n):
            row = [fmt(v) for v in pts[i]] + [fmt(mu.masses[i])]
            if mu.is_grid:
                row += [fmt(mu.cell_widths[i]), fmt(mu.cell_consts[i])]
            w.writerow(row)


def read_measure_csv(path) -> DiscreteMeasure:
    """Read a measure file (``# chart=...`` line optional; default plane)."""
    chart = "plane"
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip()]
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)
        if "chart=" in head:
            chart = head.split("chart=", 1)[1].split()[0]
    rows = list(csv.reader(lines))
    cols = [c.strip() for c in rows[0]]
    data = np.array(rows[1:], dtype=float)
    ncoord = 3 if chart == "sphere" else (2 if "im" in cols else 1)
    if chart == "sphere":
        support = data[:, :3]
    elif ncoord == 2:
        support = data[:, 0] + 1j * data[:, 1]
    else:
        support = data[:, 0].astype(complex)
    masses = data[:, ncoord]
    widths = data[:, cols.index("cell_width")] if "cell_width" in cols else None
    consts = data[:, cols.index("cell_const")] if "cell_const" in cols else None
    return DiscreteMeasure(support, masses, widths, consts, chart)
