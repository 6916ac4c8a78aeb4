"""External fields Q: catalog, evaluation, admissibility and the sphere lift."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityError, ConfigurationError, ContractError, DomainError
from .geometry import INFINITY, Domain, stereo_inverse_array

FORMS = ("zero", "gaussian", "cauchy-log", "laguerre", "stieltjes-wigert",
         "neg-potential", "tabulated", "shifted", "scaled", "sphere-lift")

DEFAULT_RADII = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8)


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """A lower semicontinuous weight Q.

    Catalog forms take real ``params``: gaussian (t,) for t|z|^2, cauchy-log
    (c,) for c/2 log(1+|z|^2), laguerre (lam, s) for lam x - s log x,
    stieltjes-wigert (c,) for c (log x)^2.  ``neg-potential`` holds a measure,
    ``tabulated`` holds node positions and values, and ``shifted``/``scaled``
    wrap another weight.
    """

    form: str
    params: tuple = ()
    measure: object = None
    table_points: np.ndarray | None = None
    table_values: np.ndarray | None = None
    table_edges: np.ndarray | None = None
    base: "WeightSpec | None" = None
    label: str = field(default="")

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigurationError(f"unknown weight form {self.form!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        need = {"zero": 0, "gaussian": 1, "cauchy-log": 1, "laguerre": 2,
                "stieltjes-wigert": 1, "shifted": 1, "scaled": 1, "sphere-lift": 1}
        if self.form in need and len(p) != need[self.form]:
            raise ConfigurationError(f"{self.form} takes {need[self.form]} parameter(s)")
        if self.form == "laguerre" and not (p[0] > 0 and p[1] > 0):
            raise ConfigurationError("laguerre needs lambda > 0 and s > 0")
        if self.form == "stieltjes-wigert" and not p[0] > 0:
            raise ConfigurationError("stieltjes-wigert needs c > 0")
        if self.form == "scaled" and not p[0] > 0:
            raise ConfigurationError("scale factor must be positive")
        if self.form == "tabulated":
            vals = np.asarray(self.table_values, dtype=float)
            if np.any(np.isnan(vals)) or np.any(vals == -np.inf):
                raise ConfigurationError("tabulated weights must be > -inf")
        if self.form == "neg-potential" and self.measure is None:
            raise ConfigurationError("neg-potential needs a measure")

    # constructors -----------------------------------------------------
    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def gaussian(cls, t: float = 1.0):
        return cls("gaussian", (t,))

    @classmethod
    def cauchy_log(cls, c: float = 1.0):
        return cls("cauchy-log", (c,))

    @classmethod
    def laguerre(cls, lam: float, s: float):
        return cls("laguerre", (lam, s))

    @classmethod
    def stieltjes_wigert(cls, c: float):
        return cls("stieltjes-wigert", (c,))

    @classmethod
    def neg_potential(cls, mu):
        return cls("neg-potential", measure=mu)

    @classmethod
    def tabulated(cls, points, values, edges=None):
        pts = np.asarray(points, dtype=complex)
        vals = np.asarray(values, dtype=float)
        if pts.shape != vals.shape:
            raise ConfigurationError("table points and values differ in length")
        return cls("tabulated", table_points=pts, table_values=vals,
                   table_edges=None if edges is None else np.asarray(edges, dtype=float))

    def shifted(self, c: float) -> "WeightSpec":
        return WeightSpec("shifted", (c,), base=self)

    def scaled(self, f: float) -> "WeightSpec":
        return WeightSpec("scaled", (f,), base=self)

    def __str__(self):
        if self.form in ("neg-potential", "tabulated"):
            return self.label or self.form
        if self.form in ("shifted", "scaled", "sphere-lift"):
            return f"{self.form}({self.params[0]!r}, {self.base})"
        if self.params:
            return f"{self.form}:" + ",".join(repr(v) for v in self.params)
        return self.form

    # evaluation -------------------------------------------------------
    @property
    def natural_domain(self) -> Domain | None:
        if self.form in ("laguerre", "stieltjes-wigert"):
            return Domain.halfline()
        if self.form in ("shifted", "scaled"):
            return self.base.natural_domain
        return None

    def __call__(self, z):
        return eval_weight(self, z)

    def _raw(self, z: np.ndarray) -> np.ndarray:
        f, p = self.form, self.params
        if f == "zero":
            return np.zeros(z.shape)
        if f == "gaussian":
            return p[0] * (z.real**2 + z.imag**2)
        if f == "cauchy-log":
            return 0.5 * p[0] * np.log1p(z.real**2 + z.imag**2)
        if f in ("laguerre", "stieltjes-wigert"):
            x = z.real
            out = np.full(x.shape, np.inf)
            pos = x > 0
            if f == "laguerre":
                out[pos] = p[0] * x[pos] - p[1] * np.log(x[pos])
            else:
                out[pos] = p[0] * np.log(x[pos]) ** 2
            return out
        if f == "neg-potential":
            from .measures import potential

            return -np.asarray(potential(self.measure, z), dtype=float)
        if f == "tabulated":
            return self._table_lookup(z)
        if f == "shifted":
            return self.base._raw(z) + p[0]
        if f == "scaled":
            return p[0] * self.base._raw(z)
        if f == "sphere-lift":
            return self.base._raw(z) - 0.5 * np.log1p(z.real**2 + z.imag**2)
        raise AssertionError(f)

    def _table_lookup(self, z):
        pts, vals = self.table_points, self.table_values
        out = np.empty(z.shape)
        flat_z, flat_o = z.reshape(-1), out.reshape(-1)
        if self.table_edges is not None:
            e = self.table_edges
            if np.any(np.abs(flat_z.imag) > 0) or np.any(flat_z.real < e[0]) or np.any(flat_z.real > e[-1]):
                raise DomainError("point outside the tabulated range")
            x = flat_z.real
            right = np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(vals) - 1)
            left = np.clip(np.searchsorted(e, x, side="left") - 1, 0, len(vals) - 1)
            # on a cell edge take the smaller neighbour (lower semicontinuous envelope)
            flat_o[:] = np.minimum(vals[right], vals[left])
            exact = np.isclose(x, pts.real[right], rtol=0, atol=0)
            flat_o[exact] = vals[right][exact]
            return out
        for i, zi in enumerate(flat_z):
            flat_o[i] = vals[int(np.argmin(np.abs(pts - zi)))]
        return out


def eval_weight(w: WeightSpec, z, domain: Domain | None = None):
    """Q(z) for a point or array of plane points; ``+inf`` allowed, ``-inf`` never."""
    if z is INFINITY:
        raise DomainError("weights are evaluated at finite points; use the sphere lift at infinity")
    arr = np.asarray(z, dtype=complex)
    nat = w.natural_domain
    if nat is not None and not np.all(nat.contains(arr)):
        raise DomainError(f"{w.form} weight is defined on [0, inf) only")
    if domain is not None and not np.all(domain.contains(arr)):
        raise DomainError(f"point outside domain {domain}")
    out = w._raw(arr)
    if np.any(out == -np.inf) or np.any(np.isnan(out)):
        raise ContractError("weight evaluated to -inf or nan; weights must be bounded below")
    return float(out) if out.ndim == 0 else out


def parse_weight(key: str, loader=None) -> WeightSpec:
    """Build a weight from a catalog key such as ``gaussian:1`` or ``laguerre:1,0.5``.

    ``neg-potential:file`` and ``table:file`` need ``loader(path)`` returning a
    measure or ``(points, values)`` respectively; by default CSV readers from
    :mod:`coulomb_lab.measures` are used.
    """
    name, _, rest = key.strip().partition(":")
    if name in ("neg-potential", "table"):
        if not rest:
            raise ConfigurationError(f"{name} needs a file path")
        from .measures import read_measure_csv

        if name == "neg-potential":
            mu = (loader or read_measure_csv)(rest)
            return WeightSpec("neg-potential", measure=mu, label=key)
        mu = (loader or read_measure_csv)(rest)
        if isinstance(mu, tuple):
            pts, vals = mu
        else:
            pts, vals = mu.support, mu.masses
        return WeightSpec("tabulated", table_points=np.asarray(pts, dtype=complex),
                          table_values=np.asarray(vals, dtype=float), label=key)
    form = {"cauchy-log": "cauchy-log", "quadratic-log": "cauchy-log"}.get(name, name)
    if form not in ("zero", "gaussian", "cauchy-log", "laguerre", "stieltjes-wigert"):
        raise ConfigurationError(f"unknown weight key {key!r}")
    try:
        params = tuple(float(v) for v in rest.split(",")) if rest else ()
    except ValueError as exc:
        raise ConfigurationError(f"bad weight parameters in {key!r}") from exc
    return WeightSpec(form, params)


def check_weight_domain(w: WeightSpec, d: Domain) -> None:
    """Raise AdmissibilityError when the catalog constraints on the domain fail."""
    nat = w.natural_domain
    if nat is None:
        return
    if not d.is_real:
        raise AdmissibilityError(f"{w.form} needs a domain inside [0, inf), got {d}")
    a, _ = d.real_bounds
    if a < 0:
        raise AdmissibilityError(f"{w.form} needs a domain inside [0, inf), got {d}")


# ---------------------------------------------------------------------------
# admissibility

CLASSES = ("weakly admissible", "admissible", "strongly admissible", "not admissible", "inconclusive")


@dataclass(frozen=True)
class AdmissibilityReport:
    klass: str
    M_estimate: float
    probe_radii: tuple
    method: str  # "certified" or "probed"
    passes_weak: bool = False
    passes_admissible: bool = False
    passes_strong: bool = False
    probe_values: tuple = ()
    probe_pattern: str = ""

    def __post_init__(self):
        if self.klass not in CLASSES:
            raise ValueError(self.klass)


def _growth(w: WeightSpec):
    """Closed-form asymptotics Q(z) = alpha log|z| + M0 + o(1); alpha may be +-inf.

    Returns None when no closed form is known.
    """
    f, p = w.form, w.params
    if f == "zero":
        return 0.0, 0.0
    if f == "gaussian":
        if p[0] == 0:
            return 0.0, 0.0
        return (math.inf if p[0] > 0 else -math.inf), math.nan
    if f == "cauchy-log":
        return p[0], 0.0
    if f in ("laguerre", "stieltjes-wigert"):
        return math.inf, math.nan
    if f == "neg-potential":
        return float(w.measure.total_mass), 0.0
    if f in ("shifted", "scaled"):
        g = _growth(w.base)
        if g is None:
            return None
        a, m = g
        if f == "shifted":
            return a, m + p[0]
        return a * p[0], m * p[0]
    return None


def _probe(w: WeightSpec, d: Domain, radii):
    vals = []
    for r in radii:
        if d.kind == "realline":
            pts = np.array([-r, r], dtype=complex)
        elif d.kind == "halfline":
            pts = np.array([r], dtype=complex)
        else:
            pts = r * np.exp(2j * np.pi * np.arange(64) / 64)
        try:
            q = eval_weight(w, pts)
        except DomainError:
            return None
        vals.append(float(np.min(q)) - math.log(r))
    return np.array(vals)


def classify_admissibility(w: WeightSpec, d: Domain, radii=DEFAULT_RADII,
                           method: str = "auto") -> AdmissibilityReport:
    """Classify Q on an unbounded domain by the growth of Q(z) - log|z|.

    Catalog weights are classified from closed-form limits ("certified");
    other weights, or ``method='probe'``, use the minimum over circles (or the
    endpoints +-r on the line) at each radius ("probed").  Compact domains are
    always strongly admissible.
    """
    radii = tuple(float(r) for r in radii)
    if len(radii) < 4 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ContractError("radii must be increasing with at least 4 values")
    if d.bounded:
        return AdmissibilityReport("strongly admissible", math.inf, radii, "certified",
                                   True, True, True, (), "compact domain")
    g = _growth(w) if method != "probe" else None
    if g is not None:
        alpha, m0 = g
        if alpha > 1:
            return AdmissibilityReport("strongly admissible", math.inf, radii, "certified",
                                       True, True, True, (), "closed-form limit")
        if alpha == 1:
            return AdmissibilityReport("weakly admissible", m0, radii, "certified",
                                       True, False, False, (), "closed-form limit")
        return AdmissibilityReport("not admissible", -math.inf, radii, "certified",
                                   False, False, False, (), "closed-form limit")
    pattern = {"realline": "min over x = +-r", "halfline": "x = r"}.get(d.kind, "min over 64 points on |z| = r")
    s = _probe(w, d, radii)
    if s is None or not np.all(np.isfinite(s) | (s == np.inf)):
        return AdmissibilityReport("inconclusive", math.nan, radii, "probed", probe_pattern=pattern)
    if np.all(s == np.inf):
        return AdmissibilityReport("strongly admissible", math.inf, radii, "probed",
                                   True, True, True, tuple(s), pattern)
    logs = np.log(radii)
    ds = np.diff(s)
    scale = max(1.0, float(np.max(np.abs(s))))
    tol = 1e-9 * scale
    tail = slice(len(ds) // 2, None)
    slopes = ds / np.diff(logs)
    settled = abs(ds[-1]) <= 1e-3 * max(1.0, abs(s[-1]))
    if np.all(ds >= -tol):
        if np.min(slopes[tail]) >= 0.05:
            return AdmissibilityReport("strongly admissible", math.inf, radii, "probed",
                                       True, True, True, tuple(s), pattern)
        if settled:
            return AdmissibilityReport("weakly admissible", float(s[-1]), radii, "probed",
                                       True, False, False, tuple(s), pattern)
        return AdmissibilityReport("admissible", math.inf, radii, "probed",
                                   True, True, False, tuple(s), pattern)
    if np.all(ds <= tol):
        if settled:
            return AdmissibilityReport("weakly admissible", float(s[-1]), radii, "probed",
                                       True, False, False, tuple(s), pattern)
        if np.max(slopes[tail]) <= -0.05:
            return AdmissibilityReport("not admissible", -math.inf, radii, "probed",
                                       False, False, False, tuple(s), pattern)
    return AdmissibilityReport("inconclusive", math.nan, radii, "probed",
                               probe_values=tuple(s), probe_pattern=pattern)


# ---------------------------------------------------------------------------
# sphere lift

@dataclass(frozen=True, eq=False)
class SphereWeight:
    """Q~ on the sphere: Q~(T(z)) = Q(z) - 1/2 log(1+|z|^2), Q~(north pole) = M."""

    base: WeightSpec
    M: float

    def at_plane(self, z):
        """Q~(T(z)) evaluated from the plane preimage (no round trip through R^3)."""
        arr = np.asarray(z, dtype=complex)
        q = np.asarray(eval_weight(self.base, arr), dtype=float)
        out = q - 0.5 * np.log1p(arr.real**2 + arr.imag**2)
        return float(out) if out.ndim == 0 else out

    def __call__(self, p):
        P = np.asarray(p, dtype=float)
        single = P.ndim == 1
        P = np.atleast_2d(P)
        z, at_inf = stereo_inverse_array(P)
        out = np.empty(len(P))
        out[at_inf] = self.M
        if np.any(~at_inf):
            out[~at_inf] = self.at_plane(z[~at_inf])
        return float(out[0]) if single else out


def to_sphere_weight(w: WeightSpec, d: Domain, M: float | None = None,
                     allow_admissible: bool = False) -> SphereWeight:
    """Lift Q to the sphere with value M at the north pole.

    If ``M`` is omitted it is taken from :func:`classify_admissibility`.
    Admissible (M = +inf) weights are refused unless ``allow_admissible``.
    """
    if M is None:
        rep = classify_admissibility(w, d)
        if rep.klass == "weakly admissible":
            M = rep.M_estimate
        elif rep.klass in ("admissible", "strongly admissible") and allow_admissible:
            M = math.inf
        elif rep.klass in ("admissible", "strongly admissible"):
            raise AdmissibilityError(
                f"{w} is {rep.klass} (liminf = +inf); use the admissible pathway with value +inf at the pole")
        else:
            raise AdmissibilityError(f"{w} is {rep.klass} on {d}")
    elif not math.isfinite(M) and not (M == math.inf and allow_admissible):
        raise AdmissibilityError("the value at the north pole must be finite")
    return SphereWeight(w, float(M))

