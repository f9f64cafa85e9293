"""Sampled C1 interval maps: representation, calculus and the C1 metric.

A map is stored as (nodes, values, derivatives) with a monotone piecewise
cubic Hermite interpolant between nodes.  Maps built from closed formulas
keep their formula as an evaluation backend, so orbit computations do not
accumulate interpolation error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import (
    CompositionError,
    DomainError,
    InvarianceError,
)

DEFAULT_NODE_COUNT = 513
COMPOSE_NODE_CAP_FACTOR = 4
INVERSION_TOL = 1e-13
DIST_SAMPLES_PER_CELL = 10
FIXED_POINT_TOL = 1e-9


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] with lo < hi, both finite."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DomainError("interval endpoints must be finite")
        if not self.lo < self.hi:
            raise DomainError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        pad = tol * max(1.0, self.width)
        return bool(np.all(x >= self.lo - pad) and np.all(x <= self.hi + pad))

    def clip(self, x):
        return np.clip(x, self.lo, self.hi)

    def subset_of(self, other: "Interval", tol: float = 1e-12) -> bool:
        pad = tol * max(1.0, other.width)
        return self.lo >= other.lo - pad and self.hi <= other.hi + pad

    def to_json(self):
        return {"lo": self.lo, "hi": self.hi}

    @staticmethod
    def from_json(d) -> "Interval":
        return Interval(float(d["lo"]), float(d["hi"]))


UNIT = Interval(0.0, 1.0)


def geometric_grid(domain: Interval, n: int = DEFAULT_NODE_COUNT,
                   edge_scale: float = 1e-12) -> np.ndarray:
    """Node grid with geometric refinement near both endpoints.

    Orbits accumulate at the endpoints, so uniform grids waste resolution
    in the middle.  One third of the nodes form a geometric ladder at each
    end (innermost spacing edge_scale*width), the rest is uniform.
    """
    if n < 9:
        n = 9
    n_edge = n // 3
    n_mid = n - 2 * n_edge
    w = domain.width
    # ladder of offsets edge_scale * r**k reaching width/4 at k = n_edge-1
    r = (0.25 / edge_scale) ** (1.0 / (n_edge - 1))
    ladder = edge_scale * r ** np.arange(n_edge)
    left = domain.lo + w * ladder
    right = domain.hi - w * ladder[::-1]
    mid = np.linspace(domain.lo + 0.25 * w, domain.hi - 0.25 * w, n_mid)
    grid = np.concatenate(([domain.lo], left, mid, right, [domain.hi]))
    grid = np.unique(grid)
    return dedupe_grid(grid)


def dedupe_grid(grid: np.ndarray, rel: float = 1e-14) -> np.ndarray:
    """Drop float-indistinguishable points: gap below rel * local magnitude.

    The scale is the point magnitude itself, so deliberately fine grids
    deep near 0 are preserved while ULP-level collisions elsewhere go.
    """
    if grid.size < 3:
        return grid
    scale = np.maximum(np.abs(grid[1:]), np.abs(grid[:-1]))
    scale = np.maximum(scale, 1e-300)
    keep = np.empty(grid.size, dtype=bool)
    keep[0] = True
    keep[1:] = np.diff(grid) > rel * scale
    keep[-1] = True
    # if the last kept interior point crowds the endpoint, drop it instead
    idx = np.where(keep)[0]
    if idx.size >= 3 and grid[idx[-1]] - grid[idx[-2]] <= rel * max(abs(grid[idx[-2]]), abs(grid[-1])):
        keep[idx[-2]] = False
    return grid[keep]


def _hermite_cell_monotone(dy, m0, m1):
    """Fritsch-Carlson sufficient condition for a strictly increasing cell."""
    if dy <= 0:
        return False
    a = m0 / dy
    b = m1 / dy
    if a < 0 or b < 0:
        return False
    return a * a + b * b <= 9.0


class C1Map:
    """Orientation-preserving C1 map of an interval onto an interval.

    Node positions, values and derivatives are authoritative; between nodes
    a monotone cubic Hermite rule interpolates.  When `fn`/`dfn` callables
    are attached they are used for evaluation instead of the interpolant.
    """

    def __init__(self, domain: Interval, nodes, values, derivs,
                 target: Interval | None = None,
                 fn=None, dfn=None, inverse_fn=None, name: str = ""):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.shape != derivs.shape:
            raise DomainError("nodes/values/derivs must be equal-length 1-D arrays")
        if nodes.size < 2:
            raise DomainError("need at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("nodes must be strictly increasing")
        if np.any(np.diff(values) <= 0):
            raise DomainError("values must be strictly increasing")
        if np.any(derivs <= 0):
            raise DomainError("derivatives must be strictly positive")
        self.domain = domain
        self.target = target if target is not None else Interval(values[0], values[-1])
        if abs(nodes[0] - domain.lo) > 1e-9 * max(1, domain.width) or \
           abs(nodes[-1] - domain.hi) > 1e-9 * max(1, domain.width):
            raise DomainError("first/last node must be the domain endpoints")
        self.nodes = nodes
        self.values = values
        self.derivs = derivs
        self._fn = fn
        self._dfn = dfn
        self._inverse_fn = inverse_fn
        self.name = name
        self._spline = None
        self._dspline = None
        self._clamped_cells = 0
        self._enforce_monotone_cells()

    # -- construction -------------------------------------------------

    @staticmethod
    def from_callable(fn, dfn, domain: Interval, target: Interval | None = None,
                      nodes=None, n: int = DEFAULT_NODE_COUNT,
                      inverse_fn=None, name: str = "") -> "C1Map":
        if nodes is None:
            nodes = geometric_grid(domain, n)
        nodes = dedupe_grid(np.asarray(nodes, dtype=float))
        values = np.asarray(fn(nodes), dtype=float)
        derivs = np.asarray(dfn(nodes), dtype=float)
        bad = int(np.sum(np.diff(values) <= 0))
        if bad:
            # tolerate isolated float-level collisions, not real decreases
            if bad > max(3, nodes.size // 100):
                raise DomainError(
                    f"callable is not strictly increasing on the grid "
                    f"({bad} violations)")
            nodes, values, derivs = _strictify(nodes, values, derivs)
        return C1Map(domain, nodes, values, derivs, target=target,
                     fn=fn, dfn=dfn, inverse_fn=inverse_fn, name=name)

    @staticmethod
    def identity(domain: Interval = UNIT, n: int = DEFAULT_NODE_COUNT) -> "C1Map":
        return C1Map.from_callable(
            lambda x: np.asarray(x, dtype=float),
            lambda x: np.ones_like(np.asarray(x, dtype=float)),
            domain, target=domain,
            inverse_fn=lambda y: np.asarray(y, dtype=float),
            n=n, name="identity")

    def _enforce_monotone_cells(self):
        """Clamp node derivatives into the monotone-cubic region.

        With genuine diffeomorphism data this is almost always a no-op;
        the clamp count is kept for diagnostics.
        """
        dy = np.diff(self.values)
        dx = np.diff(self.nodes)
        sec = dy / dx
        m = self.derivs.copy()
        # each node deriv must be <= 3 * adjacent secants (Fritsch-Carlson box)
        cap = np.full_like(m, np.inf)
        cap[:-1] = np.minimum(cap[:-1], 3.0 * sec)
        cap[1:] = np.minimum(cap[1:], 3.0 * sec)
        over = m > cap
        if np.any(over):
            self._clamped_cells = int(np.sum(over))
            m = np.where(over, cap, m)
            self.derivs = m

    # -- evaluation ----------------------------------------------------

    @property
    def spline(self) -> CubicHermiteSpline:
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.nodes, self.values, self.derivs)
            self._dspline = self._spline.derivative()
        return self._spline

    def _check_scalar(self, x: float) -> float:
        dom = self.domain
        pad = 1e-9 * (dom.width if dom.width > 1 else 1.0)
        if x < dom.lo - pad or x > dom.hi + pad:
            raise DomainError(
                f"point {x} outside domain [{dom.lo}, {dom.hi}]")
        if x < dom.lo:
            return dom.lo
        if x > dom.hi:
            return dom.hi
        return x

    def __call__(self, x):
        if isinstance(x, float):
            xc = self._check_scalar(x)
            raw = self._fn(xc) if self._fn is not None else self.spline(xc)
            v = raw if isinstance(raw, float) else float(np.asarray(raw).ravel()[0])
            t = self.target
            return t.lo if v < t.lo else (t.hi if v > t.hi else v)
        x = np.asarray(x, dtype=float)
        if not self.domain.contains(x, tol=1e-9):
            raise DomainError(
                f"point(s) outside domain [{self.domain.lo}, {self.domain.hi}]")
        xc = self.domain.clip(x)
        if self._fn is not None:
            out = np.asarray(self._fn(xc), dtype=float)
        else:
            out = self.spline(xc)
        return self.target.clip(out)

    def deriv(self, x):
        if isinstance(x, float):
            xc = self._check_scalar(x)
            raw = self._dfn(xc) if self._dfn is not None else self._dspline_eval(xc)
            return raw if isinstance(raw, float) else float(np.asarray(raw).ravel()[0])
        x = np.asarray(x, dtype=float)
        if not self.domain.contains(x, tol=1e-9):
            raise DomainError(
                f"point(s) outside domain [{self.domain.lo}, {self.domain.hi}]")
        xc = self.domain.clip(x)
        if self._dfn is not None:
            return np.asarray(self._dfn(xc), dtype=float)
        self.spline
        return self._dspline(xc)

    def _dspline_eval(self, x):
        self.spline
        return self._dspline(x)

    def eval_c1(self, x):
        """Value and derivative at x."""
        return self(x), self.deriv(x)

    @property
    def has_formula(self) -> bool:
        return self._fn is not None

    def is_endpoint_fixing(self, tol: float = 1e-9) -> bool:
        return (abs(self.target.lo - self.domain.lo) <= tol
                and abs(self.target.hi - self.domain.hi) <= tol)

    # -- inversion -----------------------------------------------------

    @property
    def _inverse_spline(self) -> CubicHermiteSpline:
        if getattr(self, "_inv_spline", None) is None:
            self._inv_spline = CubicHermiteSpline(
                self.values, self.nodes, 1.0 / self.derivs)
        return self._inv_spline

    def inverse_point(self, y):
        """Preimage(s) of y, pointwise exact to ~1e-13.

        Newton from an inverse-spline guess, guarded by the bracketing
        node cell; falls back to bisection (+ one Newton polish) whenever
        Newton leaves the bracket or stalls.
        """
        scalar = np.ndim(y) == 0
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if not self.target.contains(y, tol=1e-9):
            raise DomainError("value(s) outside target interval")
        yc = self.target.clip(y)
        if self._inverse_fn is not None:
            x = np.asarray(self._inverse_fn(yc), dtype=float)
            return float(x[0]) if scalar else x
        idx = np.clip(np.searchsorted(self.values, yc) - 1, 0, self.nodes.size - 2)
        lo = self.nodes[idx].copy()
        hi = self.nodes[idx + 1].copy()
        x = np.clip(self._inverse_spline(yc), lo, hi)
        converged = np.zeros(x.shape, dtype=bool)
        for _ in range(6):
            fx = self(x) - yc
            d = np.maximum(self.deriv(x), 1e-300)
            step = fx / d
            converged = np.abs(step) <= INVERSION_TOL * np.maximum(1.0, np.abs(x))
            if np.all(converged):
                break
            xn = x - step
            inside = (xn >= lo) & (xn <= hi)
            x = np.where(inside, xn, x)
            if not np.all(inside):
                break
        if not np.all(converged):
            # bracketing bisection for the stragglers
            bad = ~converged
            blo, bhi = lo[bad], hi[bad]
            yb = yc[bad]
            span = float(np.max(bhi - blo))
            n_steps = int(np.ceil(np.log2(max(span, 1e-300) / INVERSION_TOL))) + 1
            n_steps = min(max(n_steps, 8), 80)
            for _ in range(n_steps):
                mid = 0.5 * (blo + bhi)
                below = self(mid) < yb
                blo = np.where(below, mid, blo)
                bhi = np.where(below, bhi, mid)
            xb = 0.5 * (blo + bhi)
            d = np.maximum(self.deriv(xb), 1e-300)
            xb = np.clip(xb - (self(xb) - yb) / d, blo, bhi)
            x[bad] = xb
        x = self.domain.clip(x)
        return float(x[0]) if scalar else x

    # -- transforms ----------------------------------------------------

    def flip(self) -> "C1Map":
        """Conjugate by x -> lo+hi-x on domain and target (reverses orientation roles)."""
        d, t = self.domain, self.target
        nodes = (d.lo + d.hi) - self.nodes[::-1]
        values = (t.lo + t.hi) - self.values[::-1]
        derivs = self.derivs[::-1].copy()
        fn = dfn = inv = None
        if self._fn is not None:
            f, df = self._fn, self._dfn
            fn = lambda x: (t.lo + t.hi) - np.asarray(f((d.lo + d.hi) - np.asarray(x, float)), float)
            dfn = lambda x: np.asarray(df((d.lo + d.hi) - np.asarray(x, float)), float)
        if self._inverse_fn is not None:
            g = self._inverse_fn
            inv = lambda y: (d.lo + d.hi) - np.asarray(g((t.lo + t.hi) - np.asarray(y, float)), float)
        return C1Map(d, nodes, values, derivs, target=t, fn=fn, dfn=dfn,
                     inverse_fn=inv, name=f"flip({self.name})" if self.name else "")

    def resampled(self, nodes) -> "C1Map":
        nodes = np.asarray(nodes, dtype=float)
        return C1Map(self.domain, nodes, self(nodes), self.deriv(nodes),
                     target=self.target, fn=self._fn, dfn=self._dfn,
                     inverse_fn=self._inverse_fn, name=self.name)

    def restrict(self, sub: Interval, n: int = 129) -> "C1Map":
        """Restriction to a subinterval, as a map onto its image."""
        if not sub.subset_of(self.domain):
            raise DomainError("restriction interval not inside domain")
        nodes = np.unique(np.concatenate([
            np.asarray([sub.lo, sub.hi]),
            self.nodes[(self.nodes > sub.lo) & (self.nodes < sub.hi)],
            np.linspace(sub.lo, sub.hi, n),
        ]))
        vals = self(nodes)
        target = Interval(vals[0], vals[-1])
        fn = self._fn
        dfn = self._dfn
        return C1Map(sub, nodes, vals, self.deriv(nodes), target=target,
                     fn=fn, dfn=dfn, name=f"{self.name}|[{sub.lo:.4g},{sub.hi:.4g}]")

    # -- orbits ----------------------------------------------------------

    def orbit(self, x: float, n: int, forward: bool = True) -> np.ndarray:
        """Points x, f(x), ..., f^n(x) (or backward with f^-1)."""
        out = np.empty(n + 1)
        out[0] = x
        cur = x
        for i in range(1, n + 1):
            cur = float(self(cur)) if forward else float(self.inverse_point(cur))
            out[i] = cur
        return out

    def iterate(self, x, n: int):
        """f^n(x) for n in Z (negative n uses the inverse)."""
        cur = x
        if n >= 0:
            for _ in range(n):
                cur = self(cur)
        else:
            for _ in range(-n):
                cur = self.inverse_point(cur)
        return cur

    # -- serialization ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "target": self.target.to_json(),
            "nodes": self.nodes.tolist(),
            "values": self.values.tolist(),
            "derivs": self.derivs.tolist(),
            "name": self.name,
        }

    def to_json_str(self) -> str:
        return json.dumps(self.to_json())

    @staticmethod
    def from_json(d) -> "C1Map":
        if isinstance(d, str):
            d = json.loads(d)
        return C1Map(Interval.from_json(d["domain"]), d["nodes"], d["values"],
                     d["derivs"], target=Interval.from_json(d["target"]),
                     name=d.get("name", ""))

    def __repr__(self):
        tag = self.name or "C1Map"
        return (f"<{tag}: [{self.domain.lo:.4g},{self.domain.hi:.4g}] -> "
                f"[{self.target.lo:.4g},{self.target.hi:.4g}], "
                f"{self.nodes.size} nodes>")


# -- operations ---------------------------------------------------------


def eval_c1(f: C1Map, x: float):
    """Value and derivative of f at x (module-level spelling)."""
    return f.eval_c1(x)


def _union_grid(f: C1Map, g: C1Map) -> np.ndarray:
    """Composition grid: g's nodes plus g-preimages of f's nodes, capped."""
    inner = f.nodes[(f.nodes > g.target.lo) & (f.nodes < g.target.hi)]
    if inner.size:
        pre = g.inverse_point(inner)
        pre = np.atleast_1d(pre)
    else:
        pre = np.empty(0)
    grid = np.unique(np.concatenate([g.nodes, pre]))
    grid = grid[(grid >= g.domain.lo) & (grid <= g.domain.hi)]
    cap = COMPOSE_NODE_CAP_FACTOR * DEFAULT_NODE_COUNT
    if grid.size > cap:
        keep = np.linspace(0, grid.size - 1, cap).astype(int)
        grid = np.unique(np.concatenate([grid[keep], [g.domain.lo, g.domain.hi]]))
    grid[0], grid[-1] = g.domain.lo, g.domain.hi
    return grid


_MAX_FORMULA_DEPTH = 48


def _formula_depth(f: C1Map) -> int:
    return getattr(f, "_depth", 1)


def _strictify(grid, values, derivs):
    """Drop interior grid points that break strict increase of nodes or values."""
    keep = np.ones(grid.size, dtype=bool)
    last_x, last_v = grid[0], values[0]
    for i in range(1, grid.size - 1):
        if grid[i] <= last_x or values[i] <= last_v:
            keep[i] = False
        else:
            last_x, last_v = grid[i], values[i]
    # the final node must stay; drop trailing offenders before it
    i = grid.size - 2
    while i > 0 and (grid[-1] <= grid[i] or values[-1] <= values[i]):
        if keep[i]:
            keep[i] = False
        i -= 1
    return grid[keep], values[keep], derivs[keep]


def compose(f: C1Map, g: C1Map) -> C1Map:
    """f after g, sampled on a refined grid; chain rule at nodes."""
    if not g.target.subset_of(f.domain, tol=1e-7):
        raise CompositionError(
            f"target of inner map [{g.target.lo}, {g.target.hi}] not inside "
            f"domain of outer map [{f.domain.lo}, {f.domain.hi}]")
    grid = _union_grid(f, g)
    gv = g(grid)
    gv = f.domain.clip(gv)
    values = f(gv)
    derivs = f.deriv(gv) * g.deriv(grid)
    derivs = np.maximum(derivs, 1e-300)
    grid, values, derivs = _strictify(grid, values, derivs)
    fn = dfn = None
    if f.has_formula and g.has_formula and \
            _formula_depth(f) + _formula_depth(g) <= _MAX_FORMULA_DEPTH:
        ff, fdf = f._fn, f._dfn
        gf, gdf = g._fn, g._dfn
        clip = f.domain.clip
        fn = lambda x: np.asarray(ff(clip(np.asarray(gf(x), float))), float)
        dfn = lambda x: (np.asarray(fdf(clip(np.asarray(gf(x), float))), float)
                         * np.asarray(gdf(x), float))
    inv = None
    if f._inverse_fn is not None and g._inverse_fn is not None and fn is not None:
        fi, gi = f._inverse_fn, g._inverse_fn
        inv = lambda y: np.asarray(gi(np.asarray(fi(y), float)), float)
    out = C1Map(g.domain, grid, values, derivs, target=f.target,
                fn=fn, dfn=dfn, inverse_fn=inv)
    out._depth = _formula_depth(f) + _formula_depth(g)
    return out


def invert(f: C1Map) -> C1Map:
    """Inverse map; node data is exact (swap of nodes and values).

    An analytic inverse becomes the evaluation backend when the map has
    one; otherwise the exact node swap is interpolated (pointwise-exact
    inversion stays available through inverse_point).
    """
    nodes = f.values.copy()
    values = f.nodes.copy()
    derivs = 1.0 / f.derivs
    inv_of_inv = f._fn
    fn = f._inverse_fn
    dfn = None
    if fn is not None and f._dfn is not None:
        df = f._dfn
        the_fn = fn
        dfn = lambda y: 1.0 / np.asarray(df(np.asarray(the_fn(y), float)), float)
    nodes, values, derivs = _strictify(nodes, values, derivs)
    out = C1Map(f.target, nodes, values, derivs, target=f.domain,
                fn=fn, dfn=dfn, inverse_fn=inv_of_inv,
                name=f"inv({f.name})" if f.name else "")
    out._depth = _formula_depth(f)
    return out


def conjugate(f: C1Map, h: C1Map, exact: bool = False) -> C1Map:
    """h o f o h^-1.

    With exact=True the inverse is evaluated pointwise (bisection+Newton)
    inside the returned map's formula, so coincidence zones of the result
    are clean to ~1e-13 instead of the interpolant's noise floor.
    """
    if not exact or h._inverse_fn is not None:
        return compose(compose(h, f), invert(h))

    def fn(x):
        x = np.asarray(x, dtype=float)
        y = h.inverse_point(h.target.clip(x))
        return np.asarray(h(f.domain.clip(np.asarray(f(y), float))), float)

    def dfn(x):
        x = np.asarray(x, dtype=float)
        y = h.inverse_point(h.target.clip(x))
        fy = f.domain.clip(np.asarray(f(y), float))
        return (np.asarray(h.deriv(fy), float) * np.asarray(f.deriv(y), float)
                / np.asarray(h.deriv(y), float))

    nodes = np.sort(np.asarray(h(f.nodes), dtype=float))
    nodes[0], nodes[-1] = h.target.lo, h.target.hi
    nodes = dedupe_grid(nodes)
    return C1Map.from_callable(fn, dfn, h.target, nodes=nodes,
                               name=f"conj({f.name})" if f.name else "conj")


def c1_distance(f: C1Map, g: C1Map, samples_per_cell: int = DIST_SAMPLES_PER_CELL) -> float:
    """sup|f-g| + sup|Df-Dg| over a dense sample grid.

    The sup is taken over samples_per_cell points per node cell of both
    maps, so the value carries a sampling-resolution caveat; comparisons
    between distances computed this way are consistent.
    """
    if abs(f.domain.lo - g.domain.lo) > 1e-9 or abs(f.domain.hi - g.domain.hi) > 1e-9:
        raise DomainError("c1_distance requires a common domain")
    grid = sample_grid(f, g, samples_per_cell)
    dv = np.max(np.abs(f(grid) - g(grid)))
    dd = np.max(np.abs(f.deriv(grid) - g.deriv(grid)))
    return float(dv + dd)


def sample_grid(f: C1Map, g: C1Map | None = None,
                samples_per_cell: int = DIST_SAMPLES_PER_CELL) -> np.ndarray:
    nodes = f.nodes if g is None else np.unique(np.concatenate([f.nodes, g.nodes]))
    nodes = dedupe_grid(nodes)
    left = nodes[:-1]
    right = nodes[1:]
    t = np.linspace(0.0, 1.0, samples_per_cell, endpoint=False)
    pts = (left[:, None] + (right - left)[:, None] * t[None, :]).ravel()
    return np.unique(np.concatenate([pts, nodes]))


@dataclass
class FixedFeature:
    """One element of the fixed-set structure of f - id."""

    kind: str            # "point" or "plateau"
    location: tuple      # (x,) or (lo, hi)
    left_sign: int       # sign of f-id just below (0 at domain edge)
    right_sign: int      # sign of f-id just above

    def to_json(self):
        return {"kind": self.kind, "location": list(self.location),
                "left_sign": self.left_sign, "right_sign": self.right_sign}


def fixed_points(f: C1Map, tol: float = FIXED_POINT_TOL, n_samples: int = 4096):
    """Sign-change structure of f - id at resolution tol.

    Returns a list of FixedFeature: isolated zeros, plateau intervals where
    |f - id| <= tol, and the signs of f - id on the flanking components.
    """
    if not f.is_endpoint_fixing(tol=1e-6 * max(1, f.domain.width)):
        raise DomainError("fixed-point structure needs an endpoint-fixing map")
    grid = np.unique(np.concatenate([
        f.nodes, np.linspace(f.domain.lo, f.domain.hi, n_samples)]))
    d = f(grid) - grid
    flat = np.abs(d) <= tol
    feats: list[FixedFeature] = []
    i = 0
    m = grid.size
    while i < m:
        if flat[i]:
            j = i
            while j + 1 < m and flat[j + 1]:
                j += 1
            lo, hi = grid[i], grid[j]
            left = 0 if i == 0 else int(np.sign(d[i - 1]))
            right = 0 if j == m - 1 else int(np.sign(d[j + 1]))
            # sub-resolution runs are isolated zeros, not genuine plateaus
            if hi - lo <= 1e-5 * f.domain.width:
                if abs(lo - f.domain.lo) < 1e-12 * max(1, f.domain.width):
                    loc = f.domain.lo
                elif abs(hi - f.domain.hi) < 1e-12 * max(1, f.domain.width):
                    loc = f.domain.hi
                else:
                    loc = 0.5 * (lo + hi)
                feats.append(FixedFeature("point", (loc,), left, right))
            else:
                feats.append(FixedFeature("plateau", (lo, hi), left, right))
            i = j + 1
        else:
            # scan for a sign change without a flat sample between
            j = i
            while j + 1 < m and not flat[j + 1] and np.sign(d[j + 1]) == np.sign(d[i]):
                j += 1
            if j + 1 < m and not flat[j + 1]:
                # sign change between grid[j] and grid[j+1]: bisect it
                a, b = grid[j], grid[j + 1]
                sa = np.sign(d[j])
                for _ in range(80):
                    mid = 0.5 * (a + b)
                    if np.sign(float(f(mid)) - mid) == sa:
                        a = mid
                    else:
                        b = mid
                    if b - a < 1e-14 * max(1.0, abs(b)):
                        break
                feats.append(FixedFeature("point", (0.5 * (a + b),),
                                          int(sa), int(-sa)))
            i = j + 1
    return feats


def sign_blocks(f: C1Map, tol: float = FIXED_POINT_TOL, n_samples: int = 4096):
    """Maximal intervals of constant sign of f-id, with plateaus absorbed.

    Returns a list of (Interval, sign, wave_size) ordered left to right;
    wave_size is sup|f-id| over the block.
    """
    grid = np.unique(np.concatenate([
        f.nodes, np.linspace(f.domain.lo, f.domain.hi, n_samples)]))
    d = f(grid) - grid
    sgn = np.where(np.abs(d) <= tol, 0, np.sign(d)).astype(int)
    blocks = []
    cur_sign = 0
    start = None
    peak = 0.0
    for i in range(grid.size):
        s = sgn[i]
        if s != 0 and cur_sign == 0:
            cur_sign, start, peak = s, grid[max(i - 1, 0)], abs(d[i])
        elif s != 0 and s == cur_sign:
            peak = max(peak, abs(d[i]))
        elif s != 0 and s == -cur_sign:
            blocks.append((Interval(start, grid[i - 1]), cur_sign, peak))
            cur_sign, start, peak = s, grid[i - 1], abs(d[i])
        elif s == 0 and cur_sign != 0:
            # plateau only closes the block if the sign does not resume;
            # look ahead for the next non-flat sample
            k = i
            while k < grid.size and sgn[k] == 0:
                k += 1
            if k >= grid.size or sgn[k] != cur_sign:
                blocks.append((Interval(start, grid[i]), cur_sign, peak))
                cur_sign, peak = 0, 0.0
            # else: same sign resumes, plateau is absorbed
    if cur_sign != 0:
        blocks.append((Interval(start, grid[-1]), cur_sign, peak))
    return blocks


def affine_renormalize(f: C1Map, sub: Interval, require_invariant: bool = True,
                       n: int = 257) -> C1Map:
    """A o (f|sub) o A^-1 on [0,1], A the increasing affine map sub -> [0,1].

    With an f-invariant sub the derivative values are preserved pointwise
    (affine conjugacy does not change Df).
    """
    if not sub.subset_of(f.domain):
        raise DomainError("sub-interval not inside domain")
    flo, fhi = float(f(sub.lo)), float(f(sub.hi))
    if require_invariant:
        tol = 1e-7 * max(1.0, sub.width)
        if abs(flo - sub.lo) > tol or abs(fhi - sub.hi) > tol:
            raise InvarianceError(
                f"f does not map [{sub.lo}, {sub.hi}] onto itself "
                f"(image [{flo}, {fhi}])")
        return renormalize_between(f, sub, sub, n=n)
    return renormalize_between(f, sub, Interval(flo, fhi), n=n)


def renormalize_between(f: C1Map, sub: Interval, image: Interval,
                        n: int = 257) -> C1Map:
    """B o (f|sub) o A^-1 where A: sub -> [0,1] and B: image -> [0,1]."""
    w_in, w_out = sub.width, image.width
    scale = w_in / w_out

    def fn(u):
        u = np.asarray(u, dtype=float)
        x = sub.lo + np.clip(u, 0.0, 1.0) * w_in
        return (np.asarray(f(x), float) - image.lo) / w_out

    def dfn(u):
        u = np.asarray(u, dtype=float)
        x = sub.lo + np.clip(u, 0.0, 1.0) * w_in
        return np.asarray(f.deriv(x), float) * scale

    inner = f.nodes[(f.nodes > sub.lo) & (f.nodes < sub.hi)]
    nodes = np.unique(np.concatenate([
        np.linspace(0.0, 1.0, n), (inner - sub.lo) / w_in, [0.0, 1.0]]))
    out = C1Map.from_callable(fn, dfn, UNIT, target=UNIT, nodes=nodes,
                              name=f"renorm({f.name})" if f.name else "renorm")
    # force exact endpoint values
    out.values[0], out.values[-1] = 0.0, 1.0
    return out


def unrenormalize_between(g: C1Map, sub: Interval, image: Interval) -> "C1Map":
    """Inverse of renormalize_between: B^-1 o g o A with A: sub->[0,1], B: image->[0,1]."""
    w_in, w_out = sub.width, image.width
    scale = w_out / w_in

    def fn(x):
        u = (np.asarray(x, float) - sub.lo) / w_in
        return image.lo + np.asarray(g(np.clip(u, 0.0, 1.0)), float) * w_out

    def dfn(x):
        u = (np.asarray(x, float) - sub.lo) / w_in
        return np.asarray(g.deriv(np.clip(u, 0.0, 1.0)), float) * scale

    nodes = sub.lo + g.nodes * w_in
    nodes[0], nodes[-1] = sub.lo, sub.hi
    return C1Map.from_callable(fn, dfn, sub, target=image, nodes=nodes)


@dataclass
class C1Path:
    """Discretized family t -> h_t with a per-step C1 continuity bound."""

    times: np.ndarray
    maps: list
    step_bound: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size != len(self.maps):
            raise DomainError("times and maps must have equal length")
        if self.times.size and abs(self.times[0]) > 1e-12:
            raise DomainError("path must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")

    def measure_steps(self) -> np.ndarray:
        gaps = [c1_distance(self.maps[i], self.maps[i + 1])
                for i in range(len(self.maps) - 1)]
        return np.asarray(gaps)

    def validate(self, tol_factor: float = 1.0 + 1e-9) -> bool:
        gaps = self.measure_steps()
        return bool(gaps.size == 0 or np.max(gaps) <= self.step_bound * tol_factor)
