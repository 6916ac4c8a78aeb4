"""Domains, grids and the stereographic correspondence.

The plane (plus a point at infinity) is identified with the sphere of radius
1/2 centred at (0, 0, 1/2); the point at infinity goes to the north pole
``NORTH_POLE = (0, 0, 1)``.

Plane points are Python/numpy complex numbers.  Sphere points are length-3
float arrays (or ``(N, 3)`` stacks).  The point at infinity is the singleton
``INFINITY``; no formula ever substitutes a large float for it.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import norm

from .errors import ConfigurationError, DomainError, InvalidPointError

SPHERE_RADIUS = 0.5
NORTH_POLE = np.array([0.0, 0.0, 1.0])
SPHERE_TOL = 1e-9


class _Infinity:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("coulomb_lab.infinity")

    def __repr__(self):
        return "INFINITY"

    def __reduce__(self):
        return (_Infinity, ())


INFINITY = _Infinity()


def is_infinity(z) -> bool:
    return z is INFINITY


# ---------------------------------------------------------------------------
# stereographic map

def stereo_project(z):
    """Map plane point(s) to the sphere.

    Scalars (including ``INFINITY``) give a length-3 array, complex arrays
    give an ``(N, 3)`` array.
    """
    if z is INFINITY:
        return NORTH_POLE.copy()
    arr = np.asarray(z, dtype=complex)
    r2 = arr.real**2 + arr.imag**2
    d = 1.0 + r2
    out = np.stack([arr.real / d, arr.imag / d, r2 / d], axis=-1)
    return out


def _on_sphere(p, tol=SPHERE_TOL):
    p = np.asarray(p, dtype=float)
    dev = p[..., 0] ** 2 + p[..., 1] ** 2 + (p[..., 2] - 0.5) ** 2 - 0.25
    return np.abs(dev) <= tol


def stereo_inverse(p, tol: float = SPHERE_TOL):
    """Inverse of :func:`stereo_project` for a single sphere point."""
    p = np.asarray(p, dtype=float)
    if p.shape != (3,):
        raise InvalidPointError("stereo_inverse expects one sphere point; use stereo_inverse_array")
    if not _on_sphere(p, tol):
        raise InvalidPointError(f"point {p} is not on the sphere")
    z, isinf = stereo_inverse_array(p[None, :], tol)
    return INFINITY if isinf[0] else complex(z[0])


def stereo_inverse_array(P, tol: float = SPHERE_TOL):
    """Vectorised inverse.  Returns ``(z, at_infinity)``; ``z`` is 0 where at_infinity."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if not np.all(_on_sphere(P, tol)):
        raise InvalidPointError("some points are not on the sphere")
    x, y, h = P[:, 0], P[:, 1], P[:, 2]
    rho2 = x * x + y * y
    at_inf = (rho2 == 0.0) & (h > 0.5)
    # x^2 + y^2 = h (1 - h) on the sphere, which avoids cancellation in 1 - h near the pole
    upper = h > 0.5
    scale = np.empty_like(h)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale[upper] = h[upper] / rho2[upper]
        scale[~upper] = 1.0 / (1.0 - h[~upper])
    scale[at_inf] = 0.0
    return (x + 1j * y) * scale, at_inf


def chordal_distance(z, u):
    """Euclidean distance between T(z) and T(u), computed from plane coordinates."""
    if z is INFINITY and u is INFINITY:
        return 0.0
    if z is INFINITY:
        z, u = u, z
    if u is INFINITY:
        zz = np.asarray(z, dtype=complex)
        out = 1.0 / np.sqrt(1.0 + np.abs(zz) ** 2)
        return float(out) if out.ndim == 0 else out
    zz = np.asarray(z, dtype=complex)
    uu = np.asarray(u, dtype=complex)
    out = np.abs(zz - uu) / np.sqrt((1.0 + np.abs(zz) ** 2) * (1.0 + np.abs(uu) ** 2))
    return float(out) if out.ndim == 0 else out


def conformal_factor(z):
    """Length scale factor of T at z: chordal ds = |dz| / (1 + |z|^2)."""
    z = np.asarray(z, dtype=complex)
    return 1.0 / (1.0 + np.abs(z) ** 2)


def pairwise_distances(points, chart: str) -> np.ndarray:
    """Dense distance matrix between plane points under the chart metric."""
    z = np.asarray(points, dtype=complex)
    d = np.abs(z[:, None] - z[None, :])
    if chart == "sphere":
        s = np.sqrt(1.0 + np.abs(z) ** 2)
        d = d / s[:, None] / s[None, :]
    return d


def distances_to(points, targets, chart: str) -> np.ndarray:
    """Distances from each target (rows) to each point (columns)."""
    z = np.asarray(points, dtype=complex)
    t = np.atleast_1d(np.asarray(targets, dtype=complex))
    d = np.abs(t[:, None] - z[None, :])
    if chart == "sphere":
        d = d / np.sqrt(1.0 + np.abs(t) ** 2)[:, None] / np.sqrt(1.0 + np.abs(z) ** 2)[None, :]
    return d


def stereo_check(pairs: int = 10_000, seed: int = 0, inf_fraction: float = 0.02) -> dict:
    """Compare |T(z) - T(u)| with chordal_distance on random pairs, some at infinity.

    Also measures plane -> sphere -> plane and sphere -> plane -> sphere round
    trips (relative error for plane points).
    """
    rng = np.random.default_rng(seed)
    r = 10.0 ** rng.uniform(-6, 6, size=(pairs, 2))
    z = r * np.exp(2j * np.pi * rng.random((pairs, 2)))
    at_inf = rng.random((pairs, 2)) < inf_fraction
    ident = 0.0
    P = stereo_project(z)
    P[at_inf] = NORTH_POLE
    eucl = np.linalg.norm(P[:, 0] - P[:, 1], axis=1)
    for i in np.flatnonzero(at_inf.any(axis=1)):
        a = INFINITY if at_inf[i, 0] else z[i, 0]
        b = INFINITY if at_inf[i, 1] else z[i, 1]
        ident = max(ident, abs(eucl[i] - chordal_distance(a, b)))
    fin = ~at_inf.any(axis=1)
    if fin.any():
        ident = max(ident, float(np.max(np.abs(eucl[fin] - chordal_distance(z[fin, 0], z[fin, 1])))))
    flat = z.reshape(-1)
    back, isinf = stereo_inverse_array(stereo_project(flat))
    plane_rt = float(np.max(np.abs(back - flat) / np.maximum(1.0, np.abs(flat))))
    pts = P.reshape(-1, 3)
    zb, inf_b = stereo_inverse_array(pts)
    again = stereo_project(zb)
    again[inf_b] = NORTH_POLE
    sphere_rt = float(np.max(np.linalg.norm(again - pts, axis=1)))
    return {"pairs": pairs, "pairs_with_infinity": int(at_inf.any(axis=1).sum()),
            "max_identity_error": ident, "max_plane_roundtrip_error": plane_rt,
            "max_sphere_roundtrip_error": sphere_rt,
            "passed": bool(ident <= 1e-12 and plane_rt <= 1e-9 and sphere_rt <= 1e-9)}


# ---------------------------------------------------------------------------
# domains

_KINDS = ("interval", "realline", "halfline", "disk", "plane", "sphere-subset")


@dataclass(frozen=True)
class Domain:
    """A closed subset of the plane (or of the sphere for ``sphere-subset``).

    ``params``: interval -> (a, b); disk -> (radius,); sphere-subset -> the
    polar-angle band (psi_min, psi_max) measured from the origin, psi = pi
    being the north pole.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if self.kind == "interval":
            if len(p) != 2 or not p[0] < p[1] or not all(map(math.isfinite, p)):
                raise ConfigurationError("interval needs finite a < b")
        elif self.kind == "disk":
            if len(p) != 1 or not p[0] > 0:
                raise ConfigurationError("disk needs a positive radius")
        elif self.kind == "sphere-subset":
            if len(p) != 2 or not 0.0 <= p[0] < p[1] <= math.pi:
                raise ConfigurationError("sphere-subset needs 0 <= psi_min < psi_max <= pi")
        elif p:
            raise ConfigurationError(f"{self.kind} takes no parameters")

    @classmethod
    def interval(cls, a: float, b: float) -> "Domain":
        return cls("interval", (a, b))

    @classmethod
    def realline(cls) -> "Domain":
        return cls("realline")

    @classmethod
    def halfline(cls) -> "Domain":
        return cls("halfline")

    @classmethod
    def disk(cls, radius: float = 1.0) -> "Domain":
        return cls("disk", (radius,))

    @classmethod
    def plane(cls) -> "Domain":
        return cls("plane")

    @classmethod
    def sphere_subset(cls, psi_min: float, psi_max: float) -> "Domain":
        return cls("sphere-subset", (psi_min, psi_max))

    @classmethod
    def parse(cls, text: str) -> "Domain":
        """Parse ``interval:-1,1``, ``realline``, ``halfline``, ``disk:2``, ``plane``, ``sphere-subset:0,3``."""
        name, _, rest = text.strip().partition(":")
        try:
            params = tuple(float(v) for v in rest.split(",")) if rest else ()
        except ValueError as exc:
            raise ConfigurationError(f"bad domain parameters in {text!r}") from exc
        return cls(name, params)

    def __str__(self):
        if self.params:
            return f"{self.kind}:" + ",".join(repr(v) for v in self.params)
        return self.kind

    @property
    def is_real(self) -> bool:
        return self.kind in ("interval", "realline", "halfline")

    @property
    def dim(self) -> int:
        return 1 if self.is_real else 2

    @property
    def bounded(self) -> bool:
        if self.kind in ("interval", "disk"):
            return True
        if self.kind == "sphere-subset":
            return self.params[1] < math.pi
        return False

    @property
    def real_bounds(self) -> tuple[float, float]:
        if self.kind == "interval":
            return self.params
        if self.kind == "halfline":
            return (0.0, math.inf)
        if self.kind == "realline":
            return (-math.inf, math.inf)
        raise DomainError(f"{self.kind} is not a real domain")

    def contains(self, z, atol: float = 1e-12):
        z = np.asarray(z, dtype=complex)
        if self.is_real:
            a, b = self.real_bounds
            return (np.abs(z.imag) <= atol) & (z.real >= a - atol) & (z.real <= b + atol)
        if self.kind == "disk":
            return np.abs(z) <= self.params[0] * (1 + atol)
        if self.kind == "plane":
            return np.isfinite(z)
        psi = 2.0 * np.arctan(np.abs(z))
        return (psi >= self.params[0] - atol) & (psi <= self.params[1] + atol)


# ---------------------------------------------------------------------------
# base measures

@dataclass(frozen=True)
class BaseMeasure:
    """Reference measure nu on the domain.

    kind: ``lebesgue`` (length or area), ``normal`` (standard Gaussian density,
    complex Gaussian exp(-|z|^2)/pi on 2D domains) or ``density`` with a
    user-supplied nonnegative callable.  ``atoms`` are extra point masses.
    """

    kind: str = "lebesgue"
    atoms: tuple = ()
    density: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("lebesgue", "normal", "density"):
            raise ConfigurationError(f"unknown base measure {self.kind!r}")
        if self.kind == "density" and not callable(self.density):
            raise ConfigurationError("density base measure needs a callable")
        atoms = tuple((complex(loc), float(m)) for loc, m in self.atoms)
        if any(m <= 0 for _, m in atoms):
            raise ConfigurationError("atom masses must be positive")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def parse(cls, text: str) -> "BaseMeasure":
        """``lebesgue``, ``normal``, ``lebesgue+atoms:0.5@0,0.25@0.3``."""
        head, _, rest = text.strip().partition(":")
        kind, plus, extra = head.partition("+")
        atoms = []
        if plus:
            if extra != "atoms":
                raise ConfigurationError(f"unknown base-measure modifier {extra!r}")
            for item in filter(None, rest.split(",")):
                mass, _, loc = item.partition("@")
                try:
                    atoms.append((complex(loc.replace(" ", "")), float(mass)))
                except ValueError as exc:
                    raise ConfigurationError(f"bad atom spec {item!r}") from exc
        return cls(kind, tuple(atoms))

    def __str__(self):
        if not self.atoms:
            return self.kind
        items = ",".join(f"{m!r}@{_fmt_complex(loc)}" for loc, m in self.atoms)
        return f"{self.kind}+atoms:{items}"

    def log_density(self, z, dim: int):
        """Log density w.r.t. Lebesgue of the continuous part."""
        z = np.asarray(z, dtype=complex)
        if self.kind == "lebesgue":
            return np.zeros(z.shape)
        if self.kind == "normal":
            if dim == 1:
                return -0.5 * z.real**2 - 0.5 * math.log(2 * math.pi)
            return -np.abs(z) ** 2 - math.log(math.pi)
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.density(z), dtype=float))

    def total_mass(self, domain: Domain) -> float:
        atoms = sum(m for loc, m in self.atoms if domain.contains(loc))
        if self.kind == "lebesgue":
            if domain.kind == "interval":
                return domain.params[1] - domain.params[0] + atoms
            if domain.kind == "disk":
                return math.pi * domain.params[0] ** 2 + atoms
            if domain.kind == "sphere-subset" and domain.bounded:
                r0, r1 = (math.tan(p / 2) for p in domain.params)
                return math.pi * (r1**2 - r0**2) + atoms
            return math.inf
        if self.kind == "normal":
            if domain.is_real:
                a, b = domain.real_bounds
                return float(norm.cdf(b) - norm.cdf(a)) + atoms
            if domain.kind == "disk":
                return 1.0 - math.exp(-domain.params[0] ** 2) + atoms
            if domain.kind == "plane":
                return 1.0 + atoms
            r0, r1 = (math.tan(p / 2) if p < math.pi else math.inf for p in domain.params)
            return math.exp(-r0**2) - math.exp(-r1**2) + atoms
        raise ConfigurationError("total mass of a density base measure is not tabulated")


def _fmt_complex(z: complex) -> str:
    return repr(z.real) if z.imag == 0 else f"{z.real!r}{z.imag:+.17g}j"


# ---------------------------------------------------------------------------
# diagonal self-energy constants

_GL64 = roots_legendre(64)


def _gl(a, b, nodes=_GL64):
    x, w = nodes
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


@functools.lru_cache(maxsize=None)
def rectangle_self_constant(aspect: float) -> float:
    """c such that the log energy of the uniform law on an area-A rectangle is log(1/sqrt(A)) + c.

    Evaluated with a 64-point tensor Gauss-Legendre rule on the difference
    density, after splitting along the diagonal and a Duffy substitution that
    removes the log singularity at the origin.
    """
    a = math.sqrt(aspect)
    b = 1.0 / a
    total = 0.0
    # two triangles of [0,a]x[0,b] sharing the origin vertex
    for (p, q) in ((a, b), (b, a)):
        # s = p * sigma^2 smooths the s log s behaviour at the origin
        sg, wsg = _gl(0.0, 1.0)
        t, wt = _gl(0.0, 1.0)
        SG, T = np.meshgrid(sg, t, indexing="ij")
        W = np.outer(wsg, wt)
        S = p * SG * SG
        u = S
        v = S * T * (q / p)
        jac = S * (q / p) * 2.0 * p * SG
        f = (p - u) * (q - v) * 0.5 * np.log(u * u + v * v)
        total += float(np.sum(W * jac * f))
    # symmetric in the four quadrants, difference density (a-|u|)(b-|v|)/(ab)^2
    return -4.0 * total / (a * b) ** 2


DISK_SELF_CONSTANT = 0.25 + 0.5 * math.log(math.pi)
INTERVAL_SELF_CONSTANT = 1.5


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True, eq=False)
class Grid:
    """Discretisation of a domain.

    All node positions are kept as plane points (``plane_nodes``), which never
    include infinity; ``nodes`` gives them in the grid's chart.  ``spacing``
    and ``self_consts`` are in the chart metric and define the diagonal of the
    discrete log kernel: log(1/spacing) + self_const.
    """

    domain: Domain
    chart: str
    plane_nodes: np.ndarray
    cell_measures: np.ndarray
    spacing: np.ndarray
    self_consts: np.ndarray
    edges: np.ndarray | None = None
    param_edges: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    atoms: tuple = ()

    def __post_init__(self):
        if self.chart not in ("plane", "sphere"):
            raise ConfigurationError("chart must be 'plane' or 'sphere'")
        if len(self.plane_nodes) < 2:
            raise ConfigurationError("a grid needs at least two nodes")
        if np.any(np.asarray(self.cell_measures) < 0):
            raise ConfigurationError("cell measures must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.plane_nodes)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def nodes(self):
        if self.chart == "sphere":
            return stereo_project(self.plane_nodes)
        return self.plane_nodes

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.plane_nodes.imag == 0))

    def lift_to_sphere(self) -> "Grid":
        """Same cells viewed in the sphere chart (lengths scaled by the conformal factor)."""
        if self.chart == "sphere":
            return self
        s = conformal_factor(self.plane_nodes)
        return Grid(self.domain, "sphere", self.plane_nodes, self.cell_measures,
                    self.spacing * s, self.self_consts, self.edges, self.param_edges,
                    dict(self.metadata, lifted_from="plane"), self.atoms)

    def cell_samples(self, per_cell: int = 9):
        """Points spread over each 1D cell including its edges, as (cell, points) rows.

        Cells reaching infinity are sampled uniformly in the chart angle, so the
        open end is approached but never reached.
        """
        if self.edges is None:
            raise ConfigurationError("cell sampling is only defined for 1D grids")
        t = np.linspace(0.0, 1.0, per_cell)
        if self.param_edges is not None:
            th = self.param_edges[:-1, None] + t[None, :] * np.diff(self.param_edges)[:, None]
            th = np.clip(th, -math.pi * (1 - 1e-9), math.pi * (1 - 1e-9))
            return np.tan(th / 2.0)
        e = self.edges
        return e[:-1, None] + t[None, :] * np.diff(e)[:, None]


def _cell_masses_1d(domain, base, edges, theta_edges):
    """Base-measure mass of 1D cells given plane edges (and chart angles if unbounded)."""
    if base.kind == "lebesgue":
        masses = np.diff(edges)
    elif base.kind == "normal":
        masses = np.diff(norm.cdf(edges))
    else:
        x, w = roots_legendre(16)
        masses = np.empty(len(edges) - 1)
        for i in range(len(masses)):
            if theta_edges is not None:
                a, b = theta_edges[i], theta_edges[i + 1]
                th = 0.5 * (b - a) * x + 0.5 * (a + b)
                xs = np.tan(th / 2)
                jac = 0.5 / np.cos(th / 2) ** 2
                masses[i] = 0.5 * (b - a) * np.sum(w * jac * base.density(xs))
            else:
                a, b = edges[i], edges[i + 1]
                xs = 0.5 * (b - a) * x + 0.5 * (a + b)
                masses[i] = 0.5 * (b - a) * np.sum(w * base.density(xs))
    masses = np.asarray(masses, dtype=float)
    for loc, m in base.atoms:
        if not domain.contains(loc):
            raise ConfigurationError(f"atom at {loc} lies outside the domain")
        i = int(np.clip(np.searchsorted(edges, loc.real, side="right") - 1, 0, len(masses) - 1))
        masses[i] += m
    return masses


def build_grid(domain: Domain, n: int, base_measure: BaseMeasure | str = "lebesgue",
               truncation: str = "cap-including", theta_max: float | None = None,
               chart: str | None = None) -> Grid:
    """Build a midpoint grid of ``domain``.

    Bounded real domains get ``n`` uniform cells in the plane chart.  Unbounded
    real domains get ``n`` cells uniform in the chart angle theta = 2 arctan(x)
    on the sphere; with ``truncation='cap-including'`` the two end cells reach
    the north pole (their Lebesgue mass is infinite), with ``'cap-excluding'``
    the grid stops at |theta| = theta_max.  Two-dimensional domains use polar
    rings of near-square cells and ``n`` is the target cell count.
    """
    if n < 2:
        raise ConfigurationError("n must be at least 2")
    if isinstance(base_measure, str):
        base_measure = BaseMeasure.parse(base_measure)
    if truncation not in ("cap-including", "cap-excluding"):
        raise ConfigurationError(f"unknown truncation policy {truncation!r}")
    if domain.is_real:
        grid = _build_real(domain, n, base_measure, truncation, theta_max)
    else:
        grid = _build_2d(domain, n, base_measure, truncation, theta_max)
    if chart == "sphere":
        grid = grid.lift_to_sphere()
    elif chart not in (None, grid.chart):
        raise ConfigurationError(f"domain {domain} cannot be gridded in the {chart} chart")
    return grid


def _build_real(domain, n, base, truncation, theta_max):
    if domain.kind == "interval":
        a, b = domain.params
        edges = np.linspace(a, b, n + 1)
        nodes = 0.5 * (edges[:-1] + edges[1:])
        masses = _cell_masses_1d(domain, base, edges, None)
        h = np.diff(edges)
        return Grid(domain, "plane", nodes.astype(complex), masses, h,
                    np.full(n, INTERVAL_SELF_CONSTANT), edges, None,
                    {"parametrization": "uniform", "truncation": "none"}, base.atoms)
    lo = -math.pi if domain.kind == "realline" else 0.0
    hi = math.pi
    if truncation == "cap-excluding":
        if theta_max is None or not 0 < theta_max < math.pi:
            raise ConfigurationError("cap-excluding grids need 0 < theta_max < pi")
        hi = theta_max
        lo = -theta_max if domain.kind == "realline" else 0.0
    th = np.linspace(lo, hi, n + 1)
    edges = np.tan(th / 2.0)
    edges[th >= math.pi] = math.inf
    edges[th <= -math.pi] = -math.inf
    mid = 0.5 * (th[:-1] + th[1:])
    nodes = np.tan(mid / 2.0)
    masses = _cell_masses_1d(domain, base, edges, th)
    spacing = 0.5 * np.diff(th)  # arc length on the radius-1/2 sphere
    meta = {"parametrization": "uniform chart angle theta = 2*arctan(x)",
            "truncation": truncation, "theta_range": [float(lo), float(hi)]}
    return Grid(domain, "sphere", nodes.astype(complex), masses, spacing,
                np.full(n, INTERVAL_SELF_CONSTANT), edges, th, meta, base.atoms)


def _ring_cells(r_edges, phi_counts):
    """Yield (r0, r1, phi0, phi1) for every cell of a ring layout."""
    for j in range(len(r_edges) - 1):
        m = phi_counts[j]
        ph = np.linspace(0.0, 2 * math.pi, m + 1)
        for i in range(m):
            yield r_edges[j], r_edges[j + 1], ph[i], ph[i + 1]


def _build_2d(domain, n, base, truncation, theta_max):
    if base.kind == "density":
        raise ConfigurationError("density base measures are only supported on real domains")
    if domain.kind == "disk":
        R = domain.params[0]
        nr = max(2, int(round(math.sqrt(n / math.pi))))
        dr = R / (nr - 0.5)
        r_edges = np.concatenate([[0.0], dr / 2 + dr * np.arange(nr)])
        r_edges[-1] = R
        counts = [1] + [max(3, int(round(2 * math.pi * 0.5 * (r_edges[j] + r_edges[j + 1]) / dr)))
                        for j in range(1, nr)]
        nodes, area, spacing, consts, masses = [], [], [], [], []
        for (r0, r1, p0, p1) in _ring_cells(r_edges, counts):
            a = 0.5 * (p1 - p0) * (r1 * r1 - r0 * r0)
            if r0 == 0.0:
                nodes.append(0.0)
                consts.append(DISK_SELF_CONSTANT)
            else:
                rm, pm = 0.5 * (r0 + r1), 0.5 * (p0 + p1)
                nodes.append(rm * np.exp(1j * pm))
                consts.append(rectangle_self_constant(round(rm * (p1 - p0) / (r1 - r0), 3)))
            spacing.append(math.sqrt(a))
            if base.kind == "lebesgue":
                masses.append(a)
            else:
                masses.append((p1 - p0) / (2 * math.pi) * (math.exp(-r0 * r0) - math.exp(-r1 * r1)))
        nodes = np.asarray(nodes, dtype=complex)
        masses = _add_atoms_2d(domain, base, nodes, np.asarray(masses))
        return Grid(domain, "plane", nodes, masses, np.asarray(spacing), np.asarray(consts),
                    None, None, {"parametrization": "polar rings", "truncation": "none",
                                 "rings": nr}, base.atoms)
    # plane or sphere band, built on the sphere
    if domain.kind == "plane":
        psi_lo, psi_hi = 0.0, math.pi
    else:
        psi_lo, psi_hi = domain.params
    if truncation == "cap-excluding" and psi_hi >= math.pi:
        if theta_max is None or not psi_lo < theta_max < math.pi:
            raise ConfigurationError("cap-excluding grids need psi_min < theta_max < pi")
        psi_hi = theta_max
    band = psi_hi - psi_lo
    nr = max(2, int(round(math.sqrt(n * band**2 / (2 * math.pi * (math.cos(psi_lo) - math.cos(psi_hi)))))))
    dpsi = band / nr
    psi_edges = psi_lo + dpsi * np.arange(nr + 1)
    psi_edges[-1] = psi_hi
    counts = []
    for j in range(nr):
        p0, p1 = psi_edges[j], psi_edges[j + 1]
        if p0 == 0.0:
            counts.append(1)
        elif p1 >= math.pi:
            counts.append(4)
        else:
            counts.append(max(3, int(round(2 * math.pi * math.sin(0.5 * (p0 + p1)) / dpsi))))
    nodes, spacing, consts, masses = [], [], [], []
    for (s0, s1, f0, f1) in _ring_cells(psi_edges, counts):
        area = 0.25 * (f1 - f0) * (math.cos(s0) - math.cos(s1))
        if s0 == 0.0:
            psi_node, c = 0.0, DISK_SELF_CONSTANT
        elif s1 >= math.pi:
            psi_node, c = math.pi - 2.0 * (s1 - s0) / 3.0, rectangle_self_constant(1.0)
        else:
            psi_node = 0.5 * (s0 + s1)
            w = 0.5 * math.sin(psi_node) * (f1 - f0)
            c = rectangle_self_constant(round(w / (0.5 * (s1 - s0)), 3))
        nodes.append(math.tan(psi_node / 2) * np.exp(0.5j * (f0 + f1)))
        spacing.append(math.sqrt(area))
        consts.append(c)
        r0 = math.tan(s0 / 2)
        r1 = math.tan(s1 / 2) if s1 < math.pi else math.inf
        if base.kind == "lebesgue":
            masses.append(0.5 * (f1 - f0) * (r1 * r1 - r0 * r0))
        else:
            masses.append((f1 - f0) / (2 * math.pi) * (math.exp(-r0 * r0) - math.exp(-r1 * r1)))
    nodes = np.asarray(nodes, dtype=complex)
    masses = _add_atoms_2d(domain, base, nodes, np.asarray(masses))
    meta = {"parametrization": "polar-angle rings on the sphere", "truncation": truncation,
            "psi_range": [float(psi_lo), float(psi_hi)], "rings": nr}
    return Grid(domain, "sphere", nodes, masses, np.asarray(spacing), np.asarray(consts),
                None, None, meta, base.atoms)


def _add_atoms_2d(domain, base, nodes, masses):
    masses = masses.astype(float).copy()
    for loc, m in base.atoms:
        if not domain.contains(loc):
            raise ConfigurationError(f"atom at {loc} lies outside the domain")
        masses[int(np.argmin(np.abs(nodes - loc)))] += m
    return masses


# ---------------------------------------------------------------------------
# serialization

def write_grid_csv(grid: Grid, path) -> None:
    """Columns: node coordinates in the chart, cell_measure, spacing, self_const."""
    from .io import fmt

    coords = ["x", "y", "z"] if grid.chart == "sphere" else ["re", "im"]
    pts = grid.nodes if grid.chart == "sphere" else np.column_stack(
        [grid.plane_nodes.real, grid.plane_nodes.imag])
    with open(path, "w", newline="") as fh:
        fh.write(f"# chart={grid.chart} domain={grid.domain} "
                 f"parametrization={grid.metadata.get('parametrization', '')!r}\n")
        w = csv.writer(fh)
        w.writerow(coords + ["cell_measure", "spacing", "self_const"])
        for row, m, h, c in zip(pts, grid.cell_measures, grid.spacing, grid.self_consts):
            w.writerow([fmt(v) for v in row] + [fmt(m), fmt(h), fmt(c)])


def read_grid_csv(path, domain: Domain) -> Grid:
    """Read a grid written by :func:`write_grid_csv` (1D edges are not restored)."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# chart="):
            raise ConfigurationError(f"{path}: missing chart header")
        chart = header.split()[1].split("=", 1)[1]
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = np.array(rows[1:], dtype=float)
    if chart == "sphere":
        z, at_inf = stereo_inverse_array(data[:, :3])
        if at_inf.any():
            raise InvalidPointError("grid nodes may not sit at the north pole")
        k = 3
    else:
        z = data[:, 0] + 1j * data[:, 1]
        k = 2
    consts = data[:, k + 2] if len(cols) > k + 2 else np.full(len(z), INTERVAL_SELF_CONSTANT)
    return Grid(domain, chart, z, data[:, k], data[:, k + 1], consts,
                metadata={"source": str(path)})
