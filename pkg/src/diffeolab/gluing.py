"""Blending two maps so the result coincides with each on prescribed zones.

All three gluing operations share one mechanism: a C1 cutoff profile
multiplies the difference, so the result equals one input on the flat-1
zones, the other on the flat-0 zones, and the C1 error is controlled by
the profile slope times the restricted C1 distance of the inputs.  The
admissible input distance for a target error eps is the margin
min(eps/2, eps/(4*m_phi)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import C1Map, Interval, _strictify, c1_distance, dedupe_grid
from .errors import DomainError, MarginError, MatchingError

_PROFILE_GRID = 20001


def _smoothstep(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _dsmoothstep(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * tc * tc * (1.0 - tc) ** 2, 0.0)


@dataclass
class BumpProfile:
    """Decreasing C1 profile on [0,1]: 1 on [0,1/2], 0 on [3/4,1].

    The transition is a quintic smoothstep; m_phi = max|Dphi| is computed
    numerically once and cached.
    """

    drop_start: float = 0.5
    drop_end: float = 0.75
    m_phi: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.drop_start < self.drop_end <= 1.0):
            raise DomainError("need 0 < drop_start < drop_end <= 1")
        grid = np.linspace(0.0, 1.0, _PROFILE_GRID)
        self.m_phi = float(np.max(np.abs(self.dphi(grid))))
        if self.m_phi <= 1.0:
            raise DomainError("profile slope max must exceed 1")

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        t = (x - self.drop_start) / (self.drop_end - self.drop_start)
        out = 1.0 - _smoothstep(t)
        out = np.where(x <= self.drop_start, 1.0, out)
        out = np.where(x >= self.drop_end, 0.0, out)
        return out

    def dphi(self, x):
        x = np.asarray(x, dtype=float)
        w = self.drop_end - self.drop_start
        t = (x - self.drop_start) / w
        return -_dsmoothstep(t) / w


DEFAULT_PROFILE = BumpProfile()


def bump(profile: BumpProfile, x):
    """Profile value at x in [0,1]."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise DomainError("bump profile argument must lie in [0,1]")
    return profile.phi(x)


def marg(eps: float, m_phi: float | None = None,
         profile: BumpProfile = DEFAULT_PROFILE) -> float:
    """Supremum of the admissible margin interval (0, min(eps/2, eps/(4 m)))."""
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    m = profile.m_phi if m_phi is None else float(m_phi)
    return min(eps / 2.0, eps / (4.0 * m))


def restricted_c1_norm(f: C1Map, g: C1Map, zone: Interval,
                       samples: int = 400) -> float:
    """sup|f-g| + sup|Df-Dg| over the given zone."""
    pts = np.linspace(zone.lo, zone.hi, samples)
    inner_f = f.nodes[(f.nodes >= zone.lo) & (f.nodes <= zone.hi)]
    inner_g = g.nodes[(g.nodes >= zone.lo) & (g.nodes <= zone.hi)]
    pts = np.unique(np.concatenate([pts, inner_f, inner_g]))
    dv = np.max(np.abs(f(pts) - g(pts)))
    dd = np.max(np.abs(f.deriv(pts) - g.deriv(pts)))
    return float(dv + dd)


def in_U(f: C1Map, g: C1Map, eps: float, a: float, b: float) -> bool:
    """Whether f is eps-close to g in C1 on both [0,a] and [b,1]."""
    d = f.domain
    if not (d.lo < a < d.hi and d.lo < b < d.hi):
        raise DomainError("zone endpoints must be interior")
    na = restricted_c1_norm(f, g, Interval(d.lo, a))
    nb = restricted_c1_norm(f, g, Interval(b, d.hi))
    return na < eps and nb < eps


@dataclass
class GlueReport:
    """Result of a gluing operation with its measured guarantees."""

    result: C1Map
    achieved_distance: float
    coincidence_zones: list
    eps: float
    eps_tilde: float
    measured_restricted: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "result": self.result.to_json(),
            "achieved_distance": self.achieved_distance,
            "coincidence_zones": [
                {"zone": z.to_json(), "source": s} for z, s in self.coincidence_zones],
            "eps": self.eps,
            "eps_tilde": self.eps_tilde,
            "measured_restricted": self.measured_restricted,
        }


class _ZoneProfile:
    """Piecewise cutoff built from rescaled/mirrored copies of a BumpProfile.

    pieces: list of (lo, hi, kind, p0, p1) with kind one of
    "one", "zero", "down" (1 at p0 falling to 0 at p1 via phi) and
    "up" (0 at p0 rising to 1 at p1).
    """

    def __init__(self, profile: BumpProfile, pieces):
        self.profile = profile
        self.pieces = pieces

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for lo, hi, kind, p0, p1 in self.pieces:
            m = (x >= lo) & (x <= hi)
            if not np.any(m):
                continue
            if kind == "one":
                out[m] = 1.0
            elif kind == "zero":
                out[m] = 0.0
            elif kind == "down":
                out[m] = self.profile.phi((x[m] - p0) / (p1 - p0))
            elif kind == "up":
                out[m] = self.profile.phi((p1 - x[m]) / (p1 - p0))
        return out

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for lo, hi, kind, p0, p1 in self.pieces:
            m = (x >= lo) & (x <= hi)
            if not np.any(m):
                continue
            if kind == "down":
                out[m] = self.profile.dphi((x[m] - p0) / (p1 - p0)) / (p1 - p0)
            elif kind == "up":
                out[m] = -self.profile.dphi((p1 - x[m]) / (p1 - p0)) / (p1 - p0)
        return out

    def transition_nodes(self, per_zone: int = 65):
        pts = []
        for lo, hi, kind, p0, p1 in self.pieces:
            pts.extend([lo, hi])
            if kind in ("down", "up"):
                pts.append(np.linspace(p0, p1, per_zone))
        return np.unique(np.hstack([np.atleast_1d(p) for p in pts]))


def _blend(keep_on_one: C1Map, keep_on_zero: C1Map, zone_profile: _ZoneProfile,
           name: str = "glued") -> C1Map:
    """phi*A + (1-phi)*B with the profile's breakpoints forced into the grid."""
    A, B = keep_on_one, keep_on_zero
    dom = A.domain
    nodes = np.unique(np.concatenate([
        A.nodes, B.nodes, zone_profile.transition_nodes()]))
    nodes = nodes[(nodes >= dom.lo) & (nodes <= dom.hi)]
    nodes = dedupe_grid(nodes)
    nodes[0], nodes[-1] = dom.lo, dom.hi
    phi = zone_profile(nodes)
    dphi = zone_profile.deriv(nodes)
    av, ad = A(nodes), A.deriv(nodes)
    bv, bd = B(nodes), B.deriv(nodes)
    values = phi * av + (1.0 - phi) * bv
    derivs = phi * ad + (1.0 - phi) * bd + dphi * (av - bv)
    if np.any(derivs <= 0):
        raise MarginError("gluing produced a non-monotone map",
                          measured={"min_deriv": float(np.min(derivs))})
    nodes, values, derivs = _strictify(nodes, values, derivs)
    fn = dfn = None
    if A.has_formula and B.has_formula:
        af, adf = A._fn, A._dfn
        bf, bdf = B._fn, B._dfn
        zp = zone_profile

        def fn(x):
            x = np.asarray(x, dtype=float)
            p = zp(x)
            return p * np.asarray(af(x), float) + (1.0 - p) * np.asarray(bf(x), float)

        def dfn(x):
            x = np.asarray(x, dtype=float)
            p = zp(x)
            return (p * np.asarray(adf(x), float)
                    + (1.0 - p) * np.asarray(bdf(x), float)
                    + zp.deriv(x) * (np.asarray(af(x), float) - np.asarray(bf(x), float)))

    return C1Map(dom, nodes, values, derivs, target=A.target,
                 fn=fn, dfn=dfn, name=name)


def glue_endpoints(f: C1Map, g: C1Map, a: float, b: float, eps: float,
                   eps_tilde: float | None = None,
                   profile: BumpProfile = DEFAULT_PROFILE) -> GlueReport:
    """Keep f near the endpoints and g on [a,b], staying eps-close to g.

    Requires f to be eps_tilde-close to g in C1 on [0,a] and on [b,1] for
    some eps_tilde below the margin; default eps_tilde = 0.9*marg(eps).
    """
    dom = f.domain
    if eps_tilde is None:
        eps_tilde = 0.9 * marg(eps, profile=profile)
    if not eps_tilde < marg(eps, profile=profile) * (1 + 1e-12):
        raise MarginError(f"eps_tilde {eps_tilde} not below marg(eps) "
                          f"{marg(eps, profile=profile)}")
    na = restricted_c1_norm(f, g, Interval(dom.lo, a))
    nb = restricted_c1_norm(f, g, Interval(b, dom.hi))
    if not (na < eps_tilde and nb < eps_tilde):
        raise MarginError(
            "inputs are not eps_tilde-close near the endpoints",
            measured={"norm_0_a": na, "norm_b_1": nb, "eps_tilde": eps_tilde})
    if a >= b:
        # degenerate case: the zones cover the interval and f itself works
        d = c1_distance(f, g)
        return GlueReport(f, d, [(Interval(dom.lo, dom.hi), "f")],
                          eps, eps_tilde,
                          {"norm_0_a": na, "norm_b_1": nb, "degenerate": True})
    lo = dom.lo
    # profile: 1 on [lo, mid(lo,a)], dropping to 0 at a; 0 on [a,b];
    # rising from 0 at b to 1 at mid(b,hi); 1 up to hi.
    half_a = lo + 0.5 * (a - lo)
    half_b1 = b + 0.5 * (dom.hi - b)
    zones = _ZoneProfile(profile, [
        (lo, half_a, "one", 0, 0),
        (half_a, a, "down", half_a, a),
        (a, b, "zero", 0, 0),
        (b, half_b1, "up", b, half_b1),
        (half_b1, dom.hi, "one", 0, 0),
    ])
    result = _blend(f, g, zones, name="glue_endpoints")
    d = c1_distance(result, g)
    report = GlueReport(result, d,
                        [(Interval(lo, half_a), "f"),
                         (Interval(half_b1, dom.hi), "f"),
                         (Interval(a, b), "g")],
                        eps, eps_tilde,
                        {"norm_0_a": na, "norm_b_1": nb})
    return report


def glue_partial(f: C1Map, g: C1Map, a: float, b: float, eps: float,
                 eps_tilde: float | None = None,
                 profile: BumpProfile = DEFAULT_PROFILE) -> GlueReport:
    """Keep g on [0,a] and near 1, insert f on [(a+1)/2, b].

    f only needs to be C1 and eps_tilde-close to g on [a,1]; requires
    b > (a+1)/2.
    """
    dom = f.domain
    if abs(dom.lo) > 1e-12 or abs(dom.hi - 1.0) > 1e-12:
        raise DomainError("partial gluing is stated on [0,1]")
    if eps_tilde is None:
        eps_tilde = 0.9 * marg(eps, profile=profile)
    if not eps_tilde < marg(eps, profile=profile) * (1 + 1e-12):
        raise MarginError(f"eps_tilde {eps_tilde} not below marg(eps)")
    mid = 0.5 * (a + 1.0)
    if not b > mid:
        raise MarginError(f"need b > (a+1)/2 = {mid}, got b = {b}")
    n_tail = restricted_c1_norm(f, g, Interval(a, 1.0))
    if not n_tail < eps_tilde:
        raise MarginError("f not eps_tilde-close to g on [a,1]",
                          measured={"norm_a_1": n_tail, "eps_tilde": eps_tilde})
    half_b1 = 0.5 * (b + 1.0)
    zones = _ZoneProfile(profile, [
        (0.0, a, "one", 0, 0),
        (a, mid, "down", a, mid),
        (mid, b, "zero", 0, 0),
        (b, half_b1, "up", b, half_b1),
        (half_b1, 1.0, "one", 0, 0),
    ])
    result = _blend(g, f, zones, name="glue_partial")
    d = c1_distance(result, g)
    return GlueReport(result, d,
                      [(Interval(0.0, a), "g"),
                       (Interval(half_b1, 1.0), "g"),
                       (Interval(mid, b), "f")],
                      eps, eps_tilde, {"norm_a_1": n_tail})


def glue_local(f: C1Map, g: C1Map, x0: float, eta: float, eps: float,
               eps_tilde: float | None = None,
               matching_tol: float = 1e-9,
               profile: BumpProfile = DEFAULT_PROFILE) -> GlueReport:
    """Replace g by f on [x0-eta, x0+eta], untouched outside the 2-eta window.

    Needs f(x0) = g(x0) (within matching_tol) and the restricted C1
    distance on the 2-eta window below the margin.
    """
    dom = f.domain
    if eps_tilde is None:
        eps_tilde = 0.9 * marg(eps, profile=profile)
    if not eps_tilde < marg(eps, profile=profile) * (1 + 1e-12):
        raise MarginError(f"eps_tilde {eps_tilde} not below marg(eps)")
    if not eta < min((x0 - dom.lo) / 2.0, (dom.hi - x0) / 2.0):
        raise MarginError(
            f"eta {eta} too large for x0 {x0} "
            f"(needs eta < min((x0-lo)/2, (hi-x0)/2))")
    gap = abs(float(f(x0)) - float(g(x0)))
    if gap > matching_tol:
        raise MatchingError(
            f"maps differ at the matching point: |f(x0)-g(x0)| = {gap:.3e}")
    win = Interval(x0 - 2 * eta, x0 + 2 * eta)
    nw = restricted_c1_norm(f, g, win)
    if not nw < eps_tilde:
        raise MarginError("restricted norm on the window is above eps_tilde",
                          measured={"norm_window": nw, "eps_tilde": eps_tilde})
    zones = _ZoneProfile(profile, [
        (dom.lo, win.lo, "zero", 0, 0),
        (win.lo, x0 - eta, "up", win.lo, x0 - eta),
        (x0 - eta, x0 + eta, "one", 0, 0),
        (x0 + eta, win.hi, "down", x0 + eta, win.hi),
        (win.hi, dom.hi, "zero", 0, 0),
    ])
    result = _blend(f, g, zones, name="glue_local")
    d = c1_distance(result, g)
    return GlueReport(result, d,
                      [(Interval(x0 - eta, x0 + eta), "f"),
                       (Interval(dom.lo, win.lo), "g"),
                       (Interval(win.hi, dom.hi), "g")],
                      eps, eps_tilde, {"norm_window": nw})


def coincides_on(result: C1Map, source: C1Map, zone: Interval) -> bool:
    """Node-exact coincidence check on a declared zone."""
    sel = (result.nodes >= zone.lo - 1e-15) & (result.nodes <= zone.hi + 1e-15)
    pts = result.nodes[sel]
    if pts.size == 0:
        return True
    rv = result(pts)
    sv = source(pts)
    rd = result.deriv(pts)
    sd = source.deriv(pts)
    return bool(np.array_equal(rv, sv) and np.array_equal(rd, sd))


def glue_endpoints_path(f: C1Map, path_maps, a_list, b_list, eps_list,
                        profile: BumpProfile = DEFAULT_PROFILE):
    """Parameter version: glue along a discretized path, measure continuity.

    Returns (reports, continuity_ratio) where continuity_ratio is the max
    over consecutive steps of (output C1 gap) / (input C1 gap).
    """
    reports = [glue_endpoints(f, gt, at, bt, et, profile=profile)
               for gt, at, bt, et in zip(path_maps, a_list, b_list, eps_list)]
    ratios = []
    for i in range(len(reports) - 1):
        gap_in = c1_distance(path_maps[i], path_maps[i + 1])
        gap_out = c1_distance(reports[i].result, reports[i + 1].result)
        if gap_in > 1e-15:
            ratios.append(gap_out / gap_in)
    return reports, (max(ratios) if ratios else 0.0)
