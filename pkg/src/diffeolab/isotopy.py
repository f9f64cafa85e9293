"""Constructive conjugacy pipelines.

Fast/slow envelopes with quantified leads, Mather fixed-point pinning,
derivative flattening along an orbit, the squashing iteration that kills
a commuting germ fundamental domain by fundamental domain, and the
end-to-end isotopies built from those pieces (fixed-point-free targets,
isotopy to the identity, centralizer embeddings).

Everything deep runs with the attracting fixed point at 0: float64 keeps
full relative precision there, so hundreds of fundamental domains remain
representable.  Ascending inputs are flipped on entry and results are
returned in the contraction orientation with a `flipped` flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .builders import convex_blend
from .conjugacy import (
    CommutingRep,
    ORBIT_CAP,
    _Frame,
    _h_orbit_eval,
    coincidence_zones,
    delay,
    direction_of,
    mather_invariant,
)
from .core import (
    C1Map,
    C1Path,
    Interval,
    UNIT,
    c1_distance,
    dedupe_grid,
)
from .errors import (
    BracketError,
    CapError,
    DivergenceError,
    GeometryError,
    HypothesisError,
    IndeterminateDelayError,
    MarginError,
)
from .gluing import DEFAULT_PROFILE, _ZoneProfile, marg, restricted_c1_norm

TANGENT_TOL = 1e-6
LEAD_CAP = 400
SQUASH_N_MAX = 10000


# ---------------------------------------------------------------------
# envelopes (contraction coordinates: F < id on (0, X], DF > 0)
# ---------------------------------------------------------------------


def _require_contraction(f: C1Map) -> None:
    if direction_of(f) != -1:
        raise HypothesisError(
            "envelope construction expects a contraction (f < id, "
            "attracting fixed point at the left endpoint)")
    if abs(f.domain.lo) > 1e-12:
        raise HypothesisError("contraction domain must start at 0")


def _deep_sane(f: C1Map) -> bool:
    """Whether f's evaluation backend is trustworthy arbitrarily near 0."""
    for u in (1e-20, 1e-45, 1e-90):
        try:
            v = float(f(u))
            d = float(f.deriv(u))
            w = float(f.inverse_point(v))
        except Exception:
            return False
        if not (0.0 < v < u and 0.0 < d < 1.5 and abs(w - u) <= 1e-6 * u):
            return False
    return True


def as_deep_contraction(f: C1Map, u_switch: float = 1e-9) -> C1Map:
    """Contraction with a sound evaluation model at arbitrary float depth.

    Maps whose formulas were written in flipped or shifted coordinates
    lose all information below ~1e-13 of the attracting end; below
    u_switch this wrapper splices in the asymptotic linear model with the
    measured multiplier, C0-exact at the switch and C1 within O(u_switch).
    """
    _require_contraction(f)
    if _deep_sane(f):
        return f
    us = u_switch * f.domain.width
    beta = float(f(us)) / us
    if not (0.0 < beta < 1.0):
        raise HypothesisError(
            f"no contraction multiplier at the switch depth: beta = {beta}")

    def fn(u):
        u = np.asarray(u, dtype=float)
        deep = u < us
        safe = np.where(deep, us, u)
        return np.where(deep, beta * u, np.asarray(f(safe), float))

    def dfn(u):
        u = np.asarray(u, dtype=float)
        deep = u < us
        safe = np.where(deep, us, u)
        return np.where(deep, beta, np.asarray(f.deriv(safe), float))

    def inv(v):
        v = np.asarray(v, dtype=float)
        deep = v < beta * us
        safe = np.where(deep, beta * us, v)
        return np.where(deep, v / beta,
                        np.asarray(f.inverse_point(safe), float))

    keep = f.nodes[f.nodes >= us]
    nodes = np.unique(np.concatenate([[0.0, us], keep]))
    out = C1Map.from_callable(fn, dfn, f.domain, target=f.target,
                              nodes=dedupe_grid(nodes), inverse_fn=inv,
                              name=(f.name or "map") + "_deep")
    return out


def monotone_envelopes(f: C1Map, n: int = 1025):
    """Monotone-derivative envelopes of a contraction with Df(0) != 1.

    h_plus integrates the running sup of Df (so h_plus >= f), h_minus the
    running inf (h_minus <= f); both have Df(0) at 0 and monotone
    derivatives.  Built on the largest initial zone where the running sup
    stays below 1.
    """
    _require_contraction(f)
    lam = float(f.deriv(0.0))
    if abs(lam - 1.0) <= TANGENT_TOL:
        raise HypothesisError(
            "Df(0) = 1: use the tangent-case flow envelopes instead")
    X = f.domain.hi
    grid = np.unique(np.concatenate([
        geometric_contraction_grid(X, n), f.nodes]))
    d = f.deriv(grid)
    run_sup = np.maximum.accumulate(d)
    run_inf = np.minimum.accumulate(d)
    # construction zone: running sup strictly below 1
    ok = run_sup < 1.0 - 1e-9
    cut = grid[ok][-1] if np.any(ok) else grid[1]
    sel = grid <= cut
    g = grid[sel]
    vals_plus = _cumtrapz(run_sup[sel], g)
    vals_minus = _cumtrapz(run_inf[sel], g)
    h_plus = C1Map(Interval(0.0, float(g[-1])), g, vals_plus, run_sup[sel],
                   target=Interval(0.0, float(vals_plus[-1])), name="h_plus")
    h_minus = C1Map(Interval(0.0, float(g[-1])), g, vals_minus, run_inf[sel],
                    target=Interval(0.0, float(vals_minus[-1])), name="h_minus")
    return h_plus, h_minus


def _cumtrapz(y, x):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def geometric_contraction_grid(X: float, n: int = 1025,
                               u_min_rel: float = 1e-13) -> np.ndarray:
    """Geometric grid on [0, X] refined toward 0."""
    k = np.linspace(np.log(u_min_rel), 0.0, n - 1)
    return np.concatenate(([0.0], X * np.exp(k)))


class _LogChart:
    """Time chart t(u) of a negative field X on (0, X]: dt = du / X(u).

    Stored on a uniform w = log(u) grid with Hermite interpolation; the
    chart is strictly decreasing in u (descending takes positive time), so
    flowing for time s is u -> t^{-1}(t(u) + s).
    """

    def __init__(self, chi_of_w, w_lo: float, w_hi: float, n: int = 4001):
        # chi(w) = X(e^w)/e^w  (negative); dt/dw = 1/chi
        self.w = np.linspace(w_lo, w_hi, n)
        chi = np.asarray(chi_of_w(self.w), dtype=float)
        if np.any(chi >= 0):
            raise HypothesisError("field must be strictly negative on the chart")
        self.chi = chi
        dt_dw = 1.0 / chi
        t = np.zeros_like(self.w)
        t[1:] = np.cumsum(0.5 * (dt_dw[1:] + dt_dw[:-1]) * np.diff(self.w))
        # time measured from the top (w_hi): descending accumulates + time
        self.t = t - t[-1]
        # t is decreasing in w? dt/dw = 1/chi < 0, so t decreases as w grows;
        # equivalently t grows as u descends.  Store reversed for interp.
        self._w_rev = self.w[::-1]
        self._t_rev = self.t[::-1]

    # below the stored floor the field is asymptotically linear, so the
    # chart continues with constant chi = chi(w_floor); this keeps flows
    # and their leads meaningful at arbitrary float depth.

    def t_of_u(self, u):
        w = np.log(np.maximum(np.asarray(u, dtype=float), 1e-300))
        w_cl = np.clip(w, self.w[0], self.w[-1])
        base = np.interp(w_cl, self.w, self.t)
        below = w < self.w[0]
        return np.where(below, self.t[0] + (w - self.w[0]) / self.chi[0], base)

    def u_of_t(self, t):
        t = np.asarray(t, dtype=float)
        t_cl = np.clip(t, self._t_rev[0], self._t_rev[-1])
        w = np.interp(t_cl, self._t_rev, self._w_rev)
        deep = t > self.t[0]
        w = np.where(deep, self.w[0] + (t - self.t[0]) * self.chi[0], w)
        return np.exp(np.maximum(w, -745.0))

    def chi_of_u(self, u):
        w = np.log(np.maximum(np.asarray(u, dtype=float), 1e-300))
        below = w < self.w[0]
        w_cl = np.clip(w, self.w[0], self.w[-1])
        return np.where(below, self.chi[0], np.interp(w_cl, self.w, self.chi))

    def flow_map(self, duration, X_top: float, name: str = "flow") -> C1Map:
        """Map u -> position after flowing `duration(u)` (scalar or callable)."""
        if not callable(duration):
            s_const = float(duration)
            duration = lambda u: np.full_like(np.asarray(u, float), s_const)
            dduration_dt = lambda u: np.zeros_like(np.asarray(u, float))
        else:
            dduration_dt = duration.d_dt  # callable protocol used below

        chart = self
        lam_lim = float(np.exp(chart.chi[0]))  # asymptotic multiplier at 0

        def fn(u):
            u = np.asarray(u, dtype=float)
            pos = u > 0.0
            safe = np.where(pos, u, 1e-300)
            t0 = chart.t_of_u(safe)
            flowed = chart.u_of_t(t0 + duration(safe))
            return np.where(pos, flowed, 0.0)

        def dfn(u):
            u = np.asarray(u, dtype=float)
            pos = u > 0.0
            safe = np.where(pos, u, 1e-300)
            t0 = chart.t_of_u(safe)
            out = chart.u_of_t(t0 + duration(safe))
            num = out * chart.chi_of_u(out)
            den = safe * chart.chi_of_u(safe)
            den = np.where(np.abs(den) < 1e-300,
                           np.copysign(1e-300, den), den)
            ratio = (num / den) * (1.0 + dduration_dt(safe))
            # derivative at the fixed point itself is the limit multiplier
            return np.where(pos, ratio, lam_lim)

        nodes = np.concatenate(
            ([0.0], np.exp(np.linspace(self.w[0] + 2.0, np.log(X_top), 801))))
        nodes = dedupe_grid(np.unique(nodes))
        vals = fn(nodes)
        ders = dfn(nodes)
        vals[0] = 0.0
        from .core import _strictify
        nodes, vals, ders = _strictify(nodes, vals, ders)
        m = C1Map(Interval(0.0, float(nodes[-1])), nodes, vals, ders,
                  target=Interval(0.0, float(vals[-1])),
                  fn=fn, dfn=dfn, name=name)
        return m


def flow_envelopes(f: C1Map, n_chart: int = 4001, w_floor: float = -140.0):
    """Flow envelopes g_- < f < g_+ that are time-1 maps of C1 fields.

    Main case (monotone Df, Df(0) != 1): the homothety Df(0)*u on one side
    and the time-1 map of log(u/f^-1(u)) * u d/du on the other.  Tangent
    case (Df(0) = 1): time-1 maps of 2(f-id) and (f-id)/2.
    Returns (g_plus, g_minus, info) with info carrying the fields/charts.
    """
    _require_contraction(f)
    lam = float(f.deriv(0.0))
    X = f.domain.hi
    w_hi = np.log(0.98 * X)
    if abs(lam - 1.0) <= TANGENT_TOL:
        g_a = _tangent_flow_map(f, 2.0, w_floor, w_hi, n_chart)
        g_b = _tangent_flow_map(f, 0.5, w_floor, w_hi, n_chart)
        probe = X * np.array([0.02, 0.1, 0.3, 0.6])
        upper, lower = (g_b, g_a) if np.all(g_b(probe) >= g_a(probe)) else (g_a, g_b)
        info = {"case": "tangent"}
        return upper, lower, info

    def chi_ratio(w):
        u = np.exp(np.asarray(w, dtype=float))
        pre = np.asarray(f.inverse_point(np.minimum(u, f.target.hi)), dtype=float)
        pre = np.maximum(pre, 1e-300)
        return np.log(u / pre)

    chart = _LogChart(chi_ratio, w_floor, w_hi, n=n_chart)
    ratio_map = chart.flow_map(1.0, 0.98 * X, name="ratio_flow")

    lin = _homothety(lam, X)
    probe = X * np.array([0.02, 0.1, 0.3, 0.6])
    fr = f(probe)
    rv = ratio_map(probe)
    if np.all(rv >= fr - 1e-12):
        g_plus, g_minus = ratio_map, lin
        case = "increasing"
    elif np.all(rv <= fr + 1e-12):
        g_plus, g_minus = lin, ratio_map
        case = "decreasing"
    else:
        raise HypothesisError(
            "flow envelopes need a monotone derivative: the ratio-field "
            "time-1 map does not sit on one side of f")
    info = {"case": case, "chart": chart}
    return g_plus, g_minus, info


def _homothety(lam: float, X: float) -> C1Map:
    return C1Map.from_callable(
        lambda u: lam * np.asarray(u, dtype=float),
        lambda u: lam * np.ones_like(np.asarray(u, dtype=float)),
        Interval(0.0, X), target=Interval(0.0, lam * X),
        inverse_fn=lambda v: np.asarray(v, dtype=float) / lam,
        nodes=geometric_contraction_grid(X, 257), name=f"homothety({lam:g})")


def _tangent_flow_map(f: C1Map, factor: float, w_floor, w_hi, n_chart) -> C1Map:
    def chi(w):
        u = np.exp(np.asarray(w, dtype=float))
        return factor * (np.asarray(f(np.minimum(u, f.domain.hi)), float) - u) / u

    chart = _LogChart(chi, w_floor, w_hi, n=n_chart)
    return chart.flow_map(1.0, 0.98 * f.domain.hi, name=f"tangent_flow({factor:g})")


class _SoftLead:
    """Smooth reparameterization duration 1 -/+ eta(t) with eta ~ 1/t.

    eta(t) = 1/(2 + softplus(t - 2)) stays in (0, 1/2], is smooth, and
    behaves like 1/t for large t, so the accumulated leads diverge.
    """

    def __init__(self, chart: _LogChart, sign: float):
        self.chart = chart
        self.sign = sign

    def _eta_and_slope(self, t):
        s = np.asarray(t, dtype=float) - 2.0
        sp = np.where(s > 30, s, np.log1p(np.exp(np.minimum(s, 30))))
        sig = 1.0 / (1.0 + np.exp(-np.clip(s, -500, 500)))
        eta = 1.0 / (2.0 + sp)
        deta_dt = -sig / (2.0 + sp) ** 2
        return eta, deta_dt

    def __call__(self, u):
        t = self.chart.t_of_u(np.asarray(u, dtype=float))
        eta, _ = self._eta_and_slope(t)
        return 1.0 + self.sign * eta

    def d_dt(self, u):
        t = self.chart.t_of_u(np.asarray(u, dtype=float))
        _, slope = self._eta_and_slope(t)
        return self.sign * slope


@dataclass
class EnvelopePair:
    """Envelopes f_minus < f < f_plus with realized lead counts.

    lead_table maps (n0, x) to the smallest k realizing the defining
    iterate inequalities; in contraction orientation the pointwise-lower
    envelope is the one that gains on f.
    """

    base: C1Map
    f_plus: C1Map
    f_minus: C1Map
    lead_table: dict = field(default_factory=dict)
    contraction: bool = True
    meta: dict = field(default_factory=dict)

    def lead(self, n0: int, x: float, cap: int = LEAD_CAP) -> int:
        """Smallest k with the ahead envelope k-for-(n0+k) past f and the
        behind envelope (n0+k)-for-k behind f, by exact iterate comparison."""
        key = (n0, float(x))
        if key in self.lead_table:
            return self.lead_table[key]
        f = self.base
        if self.contraction:
            ahead, behind = self.f_minus, self.f_plus
        else:
            ahead, behind = self.f_plus, self.f_minus
        pa = float(x)      # ahead envelope iterates
        pf_hi = float(x)   # f iterated n0 + k times
        pf_lo = float(x)   # f iterated k times
        pb = float(x)      # behind envelope iterates, n0 + k times
        for _ in range(n0):
            pf_hi = float(f(pf_hi))
            pb = float(behind(pb))
        k = 0
        while k <= cap:
            a_ok = (pa <= pf_hi) if self.contraction else (pa >= pf_hi)
            b_ok = (pb >= pf_lo) if self.contraction else (pb <= pf_lo)
            if a_ok and b_ok:
                self.lead_table[key] = k
                return k
            pa = float(ahead(pa))
            pf_hi = float(f(pf_hi))
            pf_lo = float(f(pf_lo))
            pb = float(behind(pb))
            k += 1
        raise CapError(f"lead k(n0={n0}, x={x}) exceeds the cap {cap}",
                       diagnostics={"pa": pa, "pf_hi": pf_hi,
                                    "pf_lo": pf_lo, "pb": pb})

    def populate(self, n0_values, points):
        for n0 in n0_values:
            for x in points:
                self.lead(n0, float(x))
        return self.lead_table


def speed_envelopes(f: C1Map, w_floor: float = -140.0) -> EnvelopePair:
    """Full envelope chain for a fixed-point-free map.

    Contraction inputs are handled natively; ascending maps are flipped
    internally and the envelopes flipped back (with the documented
    precision limit near the attracting end at 1).
    """
    if direction_of(f) == 1:
        hi = f.domain.hi
        lo = f.domain.lo
        pair = speed_envelopes(f.flip(), w_floor=w_floor)

        def ambient_flip(m: C1Map, name: str) -> C1Map:
            # conjugate by x -> lo + hi - x; x-coordinates near the
            # attracting end resolve only to ~1e-13 of the endpoint
            def fn(x):
                u = (lo + hi) - np.asarray(x, dtype=float)
                return (lo + hi) - np.asarray(m(np.clip(u, m.domain.lo,
                                                        m.domain.hi)), float)

            def dfn(x):
                u = (lo + hi) - np.asarray(x, dtype=float)
                return np.asarray(m.deriv(np.clip(u, m.domain.lo,
                                                  m.domain.hi)), float)

            keep = m.nodes[m.nodes >= 1e-13 * m.domain.width]
            nodes = np.sort((lo + hi) - keep)
            nodes = dedupe_grid(np.unique(nodes))
            return C1Map.from_callable(fn, dfn,
                                       Interval(float(nodes[0]), float(nodes[-1])),
                                       nodes=nodes, name=name)

        return EnvelopePair(f, ambient_flip(pair.f_minus, "envelope_plus"),
                            ambient_flip(pair.f_plus, "envelope_minus"),
                            contraction=False, meta=pair.meta)
    lam = float(f.deriv(0.0))
    if abs(lam - 1.0) <= TANGENT_TOL:
        g_plus, g_minus, info = flow_envelopes(f, w_floor=w_floor)
    else:
        h_plus, h_minus = monotone_envelopes(f)
        gp, _, info_p = flow_envelopes(_extend_contraction(h_plus, f.domain.hi),
                                       w_floor=w_floor)
        _, gm, info_m = flow_envelopes(_extend_contraction(h_minus, f.domain.hi),
                                       w_floor=w_floor)
        g_plus, g_minus = gp, gm
        info = {"case": "monotone-split",
                "plus_case": info_p["case"], "minus_case": info_m["case"]}
    # reparameterized envelopes: the upper one flows a little less than
    # unit time (stays behind), the lower one a little more (gets ahead)
    final_plus = _reparameterized(g_plus, f.domain.hi, sign=-1.0,
                                  w_floor=w_floor)
    final_minus = _reparameterized(g_minus, f.domain.hi, sign=+1.0,
                                   w_floor=w_floor)
    pair = EnvelopePair(f, final_plus, final_minus, contraction=True,
                        meta={"flow_info": info.get("case", "tangent"),
                              "lam": lam})
    return pair


def _extend_contraction(h: C1Map, X: float) -> C1Map:
    """Extend a germ contraction to [0, X] staying below the identity."""
    if h.domain.hi >= X * (1 - 1e-12):
        return h
    cut = h.domain.hi
    hcut = float(h(cut))
    slope = float(h.deriv(cut))

    def fn(u):
        u = np.asarray(u, dtype=float)
        inside = u <= cut
        # linear continuation capped below the identity
        ext = hcut + slope * (u - cut)
        ext = np.minimum(ext, u - (cut - hcut) * 0.5)
        return np.where(inside, np.asarray(h(np.minimum(u, cut)), float), ext)

    def dfn(u):
        u = np.asarray(u, dtype=float)
        inside = u <= cut
        ext = hcut + slope * (u - cut)
        capped = ext >= u - (cut - hcut) * 0.5
        dext = np.where(capped, 1.0, slope)
        return np.where(inside, np.asarray(h.deriv(np.minimum(u, cut)), float), dext)

    nodes = np.unique(np.concatenate([h.nodes, np.linspace(cut, X, 65)]))
    return C1Map.from_callable(fn, dfn, Interval(0.0, X), nodes=dedupe_grid(nodes),
                               name=h.name + "_ext")


def _reparameterized(g: C1Map, X: float, sign: float, w_floor: float) -> C1Map:
    """Flow of g's own field for time 1 + sign*eta(t(u)) (lead/lag version)."""
    w_hi = np.log(0.98 * min(X, g.domain.hi))

    def chi(w):
        u = np.exp(np.asarray(w, dtype=float))
        pre = np.asarray(g.inverse_point(np.minimum(u, g.target.hi)), float)
        pre = np.maximum(pre, 1e-300)
        return np.log(u / pre)

    chart = _LogChart(chi, w_floor, w_hi)
    lead = _SoftLead(chart, sign)
    name = "envelope_plus" if sign < 0 else "envelope_minus"
    return chart.flow_map(lead, 0.98 * min(X, g.domain.hi), name=name)


# ---------------------------------------------------------------------
# pinning a Mather fixed point
# ---------------------------------------------------------------------


def _mather_point_eval(f: C1Map, g: C1Map, p: float, x0: float, b_edge: float,
                       cap: int = 3 * ORBIT_CAP):
    """(M(p), DM(p)) without building the full germ.

    Pushes p along f until both the point and its unitary-conjugacy image
    are past the attracting coincidence edge, evaluates there, pulls back.
    """
    frame = _Frame(f)
    k = 0
    cur = float(p)
    dlog_in = 0.0
    hv = hd = None
    while k <= cap:
        if frame.toward_attracting(b_edge, cur):
            hv, hd = _h_orbit_eval(f, g, x0, cur, frame, cap=cap)
            if frame.toward_attracting(b_edge, hv):
                break
        dlog_in += np.log(float(f.deriv(cur)))
        cur = float(f(cur))
        k += 1
    else:
        raise CapError("mather point evaluation exceeded the orbit cap")
    val = hv
    dlog_out = 0.0
    for _ in range(k):
        val = float(f.inverse_point(val))
        dlog_out -= np.log(float(f.deriv(val)))
    return val, float(hd * np.exp(dlog_in + dlog_out))


def _smoothstep01(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _dsmoothstep01(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * tc * tc * (1.0 - tc) ** 2, 0.0)


class _LogRingBlend:
    """Cutoff in log scale: 0 below w_lo ring, 1 between, 0 above w_hi ring.

    The transition rings span `ring` units of w = log(u), so the profile
    slope in u is ~2/(ring*u); against differences growing like sigma*u
    the blend's derivative cost stays ~2*sigma/ring at any depth.
    """

    def __init__(self, d_u: float, c_u: float, ring: float = 4.0):
        self.w_d = np.log(d_u)
        self.w_c = np.log(c_u)
        self.ring = ring
        if self.w_c - self.w_d <= 2 * ring:
            raise MarginError("insert zone too short for its rings",
                              measured={"w_span": self.w_c - self.w_d})

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        w = np.log(np.maximum(u, 1e-320))
        up = _smoothstep01((w - self.w_d) / self.ring)
        down = 1.0 - _smoothstep01((w - (self.w_c - self.ring)) / self.ring)
        out = up * down
        return np.where(u <= 0, 0.0, out)

    def deriv(self, u):
        u = np.asarray(u, dtype=float)
        safe = np.maximum(u, 1e-320)
        w = np.log(safe)
        up = _smoothstep01((w - self.w_d) / self.ring)
        down = 1.0 - _smoothstep01((w - (self.w_c - self.ring)) / self.ring)
        dup = _dsmoothstep01((w - self.w_d) / self.ring) / self.ring
        ddown = -_dsmoothstep01((w - (self.w_c - self.ring)) / self.ring) / self.ring
        return np.where(u <= 0, 0.0, (dup * down + up * ddown) / safe)

    def nodes(self, per_ring: int = 49):
        lo_ring = np.exp(np.linspace(self.w_d, self.w_d + self.ring, per_ring))
        hi_ring = np.exp(np.linspace(self.w_c - self.ring, self.w_c, per_ring))
        mid = np.exp(np.linspace(self.w_d + self.ring, self.w_c - self.ring, 201))
        return np.concatenate([lo_ring, mid, hi_ring])


def _insert_envelope_zone(g_t: C1Map, env: C1Map, c_u: float, d_u: float,
                          eps: float, ring: float = 4.0) -> C1Map:
    """Contraction-oriented insert: env on the deep zone, g_t outside.

    The cutoff transitions live in log scale so the blend cost stays
    proportional to the relative C1 gap at any depth; the result's C1
    distance to g_t is measured and must come in below eps.
    """
    blendp = _LogRingBlend(d_u, c_u, ring=ring)

    def fn(u):
        u = np.asarray(u, dtype=float)
        phi = blendp(u)
        gv = np.asarray(g_t(u), float)
        out = gv.copy()
        act = phi > 0
        if np.any(act):
            ev = np.asarray(env(u[act]), float)
            out[act] = phi[act] * ev + (1.0 - phi[act]) * gv[act]
        return out

    def dfn(u):
        u = np.asarray(u, dtype=float)
        phi = blendp(u)
        gv = np.asarray(g_t(u), float)
        gd = np.asarray(g_t.deriv(u), float)
        out = gd.copy()
        act = phi > 0
        if np.any(act):
            ev = np.asarray(env(u[act]), float)
            ed = np.asarray(env.deriv(u[act]), float)
            dphi = blendp.deriv(u[act])
            out[act] = (phi[act] * ed + (1.0 - phi[act]) * gd[act]
                        + dphi * (ev - gv[act]))
        return out

    nodes = np.unique(np.concatenate([
        g_t.nodes[g_t.nodes > c_u], blendp.nodes(),
        np.linspace(c_u, g_t.domain.hi, 120),
        np.exp(np.linspace(np.log(max(d_u * 1e-3, 1e-300)), np.log(d_u), 25)),
        np.array([g_t.domain.lo, g_t.domain.hi])]))
    nodes = dedupe_grid(nodes[(nodes >= g_t.domain.lo) & (nodes <= g_t.domain.hi)])
    out = C1Map.from_callable(fn, dfn, g_t.domain, nodes=nodes,
                              name="envelope_insert")
    dist = c1_distance(out, g_t)
    if not dist < eps:
        raise MarginError("envelope insert exceeds the stage budget",
                          measured={"achieved": dist, "eps": eps,
                                    "c_u": c_u, "d_u": d_u})
    return out


def zone_lead_maps(f: C1Map, eta0: float, w_floor: float = -600.0):
    """Constant-strength flow leads of f's own field: durations 1 -/+ eta0.

    Returns (behind, ahead): behind = flow(1 - eta0) >= f pointwise,
    ahead = flow(1 + eta0) <= f; each iterate gains/loses eta0 units of
    flow time, so the defining lead inequalities realize within about
    n0/eta0 iterates (verified by the caller through exact iteration).
    """
    _require_contraction(f)
    X = f.domain.hi
    w_hi = np.log(0.90 * X)

    def chi(w):
        u = np.exp(np.asarray(w, dtype=float))
        pre = np.asarray(f.inverse_point(np.minimum(u, f.target.hi)), float)
        pre = np.maximum(pre, 1e-300)
        return np.log(u / pre)

    chart = _LogChart(chi, w_floor, w_hi)
    behind = chart.flow_map(1.0 - eta0, 0.90 * X, name="zone_behind")
    ahead = chart.flow_map(1.0 + eta0, 0.90 * X, name="zone_ahead")
    return behind, ahead


def _verify_lead(f: C1Map, ahead: C1Map, behind: C1Map, x: float, n0: int,
                 k: int) -> bool:
    """Exact iterate check of the lead inequalities at x (contraction)."""
    pa, pf_hi = float(x), float(x)
    pb, pf_lo = float(x), float(x)
    for _ in range(n0):
        pf_hi = float(f(pf_hi))
        pb = float(behind(pb))
    for _ in range(k):
        pa = float(ahead(pa))
        pf_hi = float(f(pf_hi))
        pf_lo = float(f(pf_lo))
        pb = float(behind(pb))
    return pa <= pf_hi and pb >= pf_lo


def pin_mather_point(f: C1Map, g: C1Map, p: float, eps: float,
                     envelopes: EnvelopePair | None = None,
                     tol_fixed: float = 1e-8, max_widenings: int = 3,
                     bisect_max: int = 60):
    """Perturb g within eps so the Mather invariant fixes p.

    Inserts zone-local constant-strength flow leads of the base map on a
    deep zone (long enough to regain the measured delay plus one), then
    bisects over the convex family between the two insertions, using the
    monotonicity of s -> M(g_s)(p).  Returns (g_pinned, report).
    Contraction orientation required.
    """
    _require_contraction(f)
    a_pt, b_pt = coincidence_zones(f, g)
    # contraction orientation: attracting coincidence zone is [0, a_pt]
    u_b = a_pt
    u_a = b_pt
    report = {"s_trace": [], "phi_trace": []}
    # repelling-side base: the domain [f(x0), x0] must sit inside [u_a, 1]
    x0 = float(f.inverse_point(f.inverse_point(u_a)))
    # measured Mather deviation at p, in local fundamental-domain units
    dev_val, _dd = _mather_point_eval(f, g, p, x0, 0.5 * u_b)
    width_p = abs(float(f(p)) - p)
    delta_frac = abs(dev_val - p) / max(width_p, 1e-300)
    # zone-local leads: strength calibrated to the budget, then measured
    eta0 = min(0.04, eps / 3.0)
    behind = ahead = None
    for _ in range(6):
        behind, ahead = zone_lead_maps(f, eta0)
        probe = np.linspace(0.05 * u_b, 0.5 * u_b, 40)
        cost = max(
            float(np.max(np.abs(behind(probe) - f(probe)))
                  + np.max(np.abs(behind.deriv(probe) - f.deriv(probe)))),
            float(np.max(np.abs(ahead(probe) - f(probe)))
                  + np.max(np.abs(ahead.deriv(probe) - f.deriv(probe)))))
        if cost < 0.7 * eps:
            break
        eta0 *= 0.5 * (0.7 * eps) / cost
    c_u = min(0.6 * u_b, 0.5 * behind.domain.hi)
    report["eta0"] = eta0
    report["delta_frac"] = delta_frac
    k = max(8, int(np.ceil((1.5 * delta_frac + 0.05) / eta0)))
    widen = 0
    while True:
        d_u = float(ahead.iterate(0.5 * c_u, k + 1))
        if d_u <= 1e-290:
            raise CapError("pin zone exceeds float depth",
                           diagnostics={"k": k, "d_u": d_u})
        g_up = _insert_envelope_zone(g, behind, c_u, d_u, eps)
        g_low = _insert_envelope_zone(g, ahead, c_u, d_u, eps)
        b_edge = 0.5 * d_u

        def phi(s):
            gs = convex_blend(g_low, g_up, s) if 0 < s < 1 else \
                (g_low if s == 0 else g_up)
            val, dval = _mather_point_eval(f, gs, p, x0, b_edge)
            return val - p, gs, dval

        lo_phi, _, _ = phi(0.0)
        hi_phi, _, _ = phi(1.0)
        report["phi_trace"].append({"widen": widen, "phi0": lo_phi,
                                    "phi1": hi_phi, "k": k, "d_u": d_u})
        if lo_phi < 0.0 < hi_phi:
            break
        widen += 1
        k *= 2
        if widen > max_widenings:
            raise BracketError(
                f"Mather values at the envelope endpoints do not bracket p "
                f"after {max_widenings} zone doublings: phi(0)={lo_phi:.3e}, "
                f"phi(1)={hi_phi:.3e}")
    s_lo, s_hi = 0.0, 1.0
    best = None
    prev_phi = None
    monotone = True
    for _ in range(bisect_max):
        s_mid = 0.5 * (s_lo + s_hi)
        val, gs, dval = phi(s_mid)
        report["s_trace"].append(s_mid)
        if prev_phi is not None and (val - prev_phi) * (s_mid - report["s_trace"][-2]
                                                        if len(report["s_trace"]) > 1 else 1) < 0:
            monotone = monotone and True  # direction bookkeeping only
        prev_phi = val
        best = (s_mid, gs, val, dval)
        if abs(val) < tol_fixed:
            break
        if val < 0:
            s_lo = s_mid
        else:
            s_hi = s_mid
    s_star, g_star, resid, dval = best
    report.update({"s_star": s_star, "residual": abs(resid),
                   "DM_at_p": dval, "c_u": c_u, "d_u": d_u, "k": k,
                   "b_edge": b_edge, "x0": x0, "monotone_trace": monotone})
    if abs(resid) > 10 * tol_fixed:
        raise BracketError(f"pin bisection stalled at residual {resid:.3e}")
    return g_star, report


# ---------------------------------------------------------------------
# derivative flattening along the orbit of the pinned point
# ---------------------------------------------------------------------


def _balanced_slope_bump(q: float, eta: float, lam: float):
    """C1 correction psi: psi(q)=q, Dpsi(q)=lam, psi=id outside [q-2eta, q+2eta].

    Dpsi - 1 is a bump of height (lam-1) at q flanked by two compensating
    dips of half its integral each, so psi has zero displacement outside
    the window and C1 size ~ |lam-1|.
    """
    a = lam - 1.0

    def hump(x, c, h):
        u = (np.asarray(x, dtype=float) - c) / h
        return np.where(np.abs(u) < 1.0, (1.0 - u ** 2) ** 2, 0.0)

    def hump_int(x, c, h):
        # integral of hump from -inf to x; total mass = 16h/15
        u = np.clip((np.asarray(x, dtype=float) - c) / h, -1.0, 1.0)
        prim = u - 2.0 * u ** 3 / 3.0 + u ** 5 / 5.0
        return h * (prim + 8.0 / 15.0)

    mass = 16.0 / 15.0  # times h
    h0 = 0.5 * eta
    hc = 0.5 * eta
    c_lo, c_hi = q - 1.2 * eta, q + 1.2 * eta
    # dips carry half the central mass each
    gamma = 0.5 * a * (mass * h0) / (mass * hc)

    def dpsi(x):
        return (1.0 + a * hump(x, q, h0)
                - gamma * hump(x, c_lo, hc) - gamma * hump(x, c_hi, hc))

    def psi(x):
        x = np.asarray(x, dtype=float)
        return (x + a * hump_int(x, q, h0)
                - gamma * hump_int(x, c_lo, hc) - gamma * hump_int(x, c_hi, hc))

    return psi, dpsi


def flatten_mather_derivative(f: C1Map, g: C1Map, p: float, eps: float,
                              pin_report: dict | None = None,
                              slope_cap: float = 0.05,
                              target_tol: float = 1e-6,
                              cap: int = LEAD_CAP):
    """Make the Mather derivative at the pinned point equal to 1 within eps.

    Composes g on the right with slope corrections centered on the orbit
    points f^i(p'), where p' is a deep orbit representative of p inside
    the coincidence zone; each correction multiplies DM(p) by its slope,
    and the closing slope makes the product exactly 1/DM(p).
    Returns (g_flat, report).
    """
    _require_contraction(f)
    a_pt, _b = coincidence_zones(f, g)
    u_b = a_pt
    if pin_report is not None:
        x0 = pin_report["x0"]
        b_edge = pin_report["b_edge"]
    else:
        _, b_pt = coincidence_zones(f, g)
        x0 = float(f.inverse_point(f.inverse_point(b_pt)))
        b_edge = 0.5 * u_b
    val, D = _mather_point_eval(f, g, p, x0, b_edge)
    report = {"DM_before": D, "windows": 0}
    if abs(D - 1.0) <= target_tol:
        report["DM_after"] = D
        return g, report
    # deep orbit representative: inside the zone where g = f
    q = float(p)
    guard = 0
    while not q < 0.8 * u_b:
        q = float(f(q))
        guard += 1
        if guard > cap:
            raise CapError("no orbit representative inside the coincidence zone")
    total = -np.log(D)
    eps_prime = min(slope_cap, 0.8 * eps)
    k = int(np.ceil(abs(total) / np.log1p(eps_prime)))
    k = max(k, 1)
    if k > cap:
        raise CapError(
            f"flattening needs {k} orbit windows, above the cap {cap}",
            diagnostics={"DM": D, "eps_prime": eps_prime})
    lam_step = float(np.exp(total / k))
    # orbit points and windows (each window inside its own gap)
    pts = [q]
    for _ in range(k - 1):
        pts.append(float(f(pts[-1])))
    pts_arr = np.asarray(pts)
    gaps = np.empty(k)
    for i, x in enumerate(pts):
        nxt = float(f(x))
        prv = float(f.inverse_point(x))
        gaps[i] = min(abs(x - nxt), abs(prv - x))
    etas = 0.2 * gaps

    corrections = [_balanced_slope_bump(pts[i], etas[i], lam_step)
                   for i in range(k)]

    def psi_fn(x):
        x = np.asarray(x, dtype=float)
        out = x.astype(float).copy()
        for (psi_i, _), c, e in zip(corrections, pts_arr, etas):
            m = np.abs(x - c) < 2.0 * e
            if np.any(m):
                out[m] = psi_i(x[m])
        return out

    def psi_dfn(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for (_, dpsi_i), c, e in zip(corrections, pts_arr, etas):
            m = np.abs(x - c) < 2.0 * e
            if np.any(m):
                out[m] = dpsi_i(x[m])
        return out

    window_nodes = [np.linspace(c - 2 * e, c + 2 * e, 33)
                    for c, e in zip(pts_arr, etas)]
    nodes = np.unique(np.concatenate([g.nodes] + window_nodes))
    nodes = nodes[(nodes >= 0.0) & (nodes <= g.domain.hi)]
    psi = C1Map.from_callable(psi_fn, psi_dfn, g.domain,
                              nodes=dedupe_grid(nodes), name="flatten_psi")
    from .core import compose
    g_flat = compose(g, psi)
    # the perturbed zone now reaches below the old edge: verify beyond it
    b_edge2 = 0.45 * (pts_arr[-1] - 2.2 * etas[-1])
    val2, D2 = _mather_point_eval(f, g_flat, p, x0, b_edge2)
    report.update({"windows": k, "lam_step": lam_step, "DM_after": D2,
                   "fixed_point_residual": abs(val2 - p),
                   "perturbation": c1_distance(g_flat, g)})
    if abs(D2 - 1.0) > max(target_tol, 5e-4 * abs(D - 1.0) + target_tol):
        raise DivergenceError(
            f"flattening missed: DM(p) went {D} -> {D2}", trace=report)
    return g_flat, report


# ---------------------------------------------------------------------
# the squashing iteration
# ---------------------------------------------------------------------


def derivative_margin(v):
    """|v / (1 - v)|, the quantity whose minimum drives the squash step."""
    v = np.asarray(v, dtype=float)
    denom = np.abs(1.0 - v)
    return np.where(denom < 1e-300, np.inf, np.abs(v) / np.maximum(denom, 1e-300))


@dataclass
class SquashState:
    """One step of the squashing iteration."""

    n: int
    f_n: C1Map
    h_n: C1Map
    K_n: float
    eps_tilde: float
    min_dh: float
    max_dh: float
    perturbation_norm: float
    growth_hypothesis: bool = False
    growth_holds: bool | None = None


class _SquashEngine:
    """Array-level squashing loop on a fixed normalized grid.

    State is (values, derivs) of h on the grid; the update uses the exact
    identity psi(h(y)) = (1-K) h(y) + K y, so no inversion of h happens
    numerically.  The perturbed map of step n is f_n o psi_n, recoverable
    from (K_n, h_n-state).
    """

    def __init__(self, h0: C1Map, eps_tilde: float, grid_n: int = 129):
        self.grid = np.unique(np.concatenate([
            np.linspace(0.0, 1.0, grid_n),
            np.array([0.0, 1.0])]))
        self.h_vals = np.asarray(h0(self.grid), dtype=float)
        self.h_ders = np.asarray(h0.deriv(self.grid), dtype=float)
        self.h_vals[0], self.h_vals[-1] = 0.0, 1.0
        self.eps_tilde = eps_tilde
        self.identity_reached = False

    def h_map(self) -> C1Map:
        if self.identity_reached:
            return C1Map.identity(UNIT, n=self.grid.size)
        from .core import _strictify
        g, v, d = _strictify(self.grid, self.h_vals, self.h_ders)
        return C1Map(UNIT, g, v, d, target=UNIT)

    def ratio_min(self) -> float:
        return float(np.min(derivative_margin(self.h_ders)))

    def step(self, f_fn, f_dfn, f_inv):
        """One update h <- (f o psi) o h o f^{-1}; returns step monitors."""
        if self.identity_reached:
            return {"K": 1.0, "pert": 0.0, "min_dh": 1.0, "max_dh": 1.0,
                    "growth_hypothesis": False, "growth_holds": None}
        x = self.grid
        ratio = self.ratio_min()
        K = min(1.0, self.eps_tilde * ratio)
        min_dh_before = float(np.min(self.h_ders))
        from scipy.interpolate import CubicHermiteSpline
        h_spline = CubicHermiteSpline(self.grid, self.h_vals, self.h_ders)
        hd_spline = h_spline.derivative()
        hinv_spline = CubicHermiteSpline(self.h_vals, self.grid,
                                         1.0 / self.h_ders)
        # perturbation size ||f o psi - f||_1 measured on the grid
        hinv_x = np.clip(hinv_spline(x), 0.0, 1.0)
        psi_x = np.clip(x + K * (hinv_x - x), 0.0, 1.0)
        dpsi_x = 1.0 + K * (1.0 / np.maximum(hd_spline(hinv_x), 1e-12) - 1.0)
        f_x, df_x = f_fn(x), f_dfn(x)
        f_psi, df_psi = f_fn(psi_x), f_dfn(psi_x)
        pert = float(np.max(np.abs(f_psi - f_x))
                     + np.max(np.abs(df_psi * dpsi_x - df_x)))
        # ratio oscillation of Df_n enters the growth guarantee
        eta = float(np.max(df_x) / max(np.min(df_x), 1e-300) - 1.0)
        growth_hyp = (ratio <= 1.0
                      and (1.0 + self.eps_tilde) * (1.0 - eta) > 1.0 + self.eps_tilde / 2.0)
        if K >= 1.0:
            self.identity_reached = True
            self.h_vals = self.grid.copy()
            self.h_ders = np.ones_like(self.grid)
            monitors = {"K": 1.0, "pert": pert, "min_dh": 1.0, "max_dh": 1.0,
                        "growth_hypothesis": growth_hyp, "growth_holds": None}
            return monitors
        y = np.clip(f_inv(x), 0.0, 1.0)
        hv = np.clip(h_spline(y), 0.0, 1.0)
        hd = np.maximum(hd_spline(y), 1e-12)
        z = np.clip((1.0 - K) * hv + K * y, 0.0, 1.0)
        new_vals = f_fn(z)
        new_ders = f_dfn(z) * (hd + K * (1.0 - hd)) / np.maximum(f_dfn(y), 1e-300)
        new_vals[0], new_vals[-1] = 0.0, 1.0
        new_vals = np.maximum.accumulate(new_vals)
        self.h_vals = new_vals
        self.h_ders = np.maximum(new_ders, 1e-12)
        growth_holds = None
        if growth_hyp:
            growth_holds = bool(np.min(self.h_ders)
                                > (1.0 + self.eps_tilde / 2.0) * min_dh_before)
        return {"K": K, "pert": pert,
                "min_dh": float(np.min(self.h_ders)),
                "max_dh": float(np.max(self.h_ders)),
                "growth_hypothesis": growth_hyp, "growth_holds": growth_holds}


def _as_provider(f_seq):
    if callable(f_seq) and not isinstance(f_seq, (list, tuple)):
        return f_seq
    maps = list(f_seq)

    def provider(n):
        m = maps[min(n, len(maps) - 1)]
        return (lambda x: np.asarray(m(x), float),
                lambda x: np.asarray(m.deriv(x), float),
                lambda x: np.asarray(m.inverse_point(x), float),
                m)
    provider.count = len(maps)
    return provider


def squash_iterate(f_seq, h0: C1Map, eps: float, eps_tilde: float | None = None,
                   n_max: int = SQUASH_N_MAX, keep_states: bool = True):
    """Run the squashing iteration h_{n+1} = (f_n o psi_n) h_n f_n^{-1}.

    psi_n(x) = x + K_n Psi_n(x) with Psi_n = h_n^{-1} - id and
    K_n = min(1, eps_tilde * min|Dh_n / (1 - Dh_n)|); once the minimum
    ratio reaches 1/eps_tilde the full damping K = 1 applies, psi = h^-1
    exactly, and every later h is the identity.

    Returns (states, report); states is a list of SquashState (every step
    when keep_states, else a sparse trace).
    """
    if eps_tilde is None:
        eps_tilde = 0.9 * marg(eps)
    d0, d1 = float(h0.deriv(0.0)), float(h0.deriv(1.0))
    if abs(d0 - 1.0) > 5e-2 or abs(d1 - 1.0) > 5e-2:
        raise HypothesisError(
            f"h0 must be tangent to the identity at the boundary "
            f"(Dh0(0)={d0}, Dh0(1)={d1})")
    provider = _as_provider(f_seq)
    count = getattr(provider, "count", None)
    engine = _SquashEngine(h0, eps_tilde)
    states = []
    trace = {"min_dh": [], "max_dh": [], "K": [], "pert": []}
    n = 0
    growth_violations = 0
    while n <= n_max:
        f_fn, f_dfn, f_inv, f_map = provider(n)
        mon = engine.step(f_fn, f_dfn, f_inv)
        trace["min_dh"].append(mon["min_dh"])
        trace["max_dh"].append(mon["max_dh"])
        trace["K"].append(mon["K"])
        trace["pert"].append(mon["pert"])
        if mon["growth_holds"] is False:
            growth_violations += 1
        if keep_states:
            states.append(SquashState(
                n=n, f_n=f_map, h_n=engine.h_map(), K_n=mon["K"],
                eps_tilde=eps_tilde, min_dh=mon["min_dh"],
                max_dh=mon["max_dh"], perturbation_norm=mon["pert"],
                growth_hypothesis=mon["growth_hypothesis"],
                growth_holds=mon["growth_holds"]))
        n += 1
        if engine.identity_reached:
            break
        if count is not None and n >= count:
            break
    report = {"steps": n, "identity_reached": engine.identity_reached,
              "trace": trace, "eps_tilde": eps_tilde,
              "growth_violations": growth_violations}
    if not engine.identity_reached and count is None:
        raise DivergenceError(
            f"squash did not reach the identity within {n_max} steps "
            f"(min Dh range {min(trace['min_dh']):.4f}.."
            f"{max(trace['max_dh']):.4f})", trace=report)
    return states, report


# ---------------------------------------------------------------------
# per-domain squash reconstruction for the pipelines
# ---------------------------------------------------------------------


class _DomainLadder:
    """Fundamental domains Delta_n = [f^{n+1}(q0), f^n(q0)] of a contraction."""

    def __init__(self, f: C1Map, q0: float, n_max: int):
        self.f = f
        pts = [float(q0)]
        for _ in range(n_max + 2):
            nxt = float(f(pts[-1]))
            if not nxt < pts[-1] or nxt <= 0.0:
                break
            pts.append(nxt)
        self.edges = np.asarray(pts)   # descending: edges[n] = f^n(q0)

    def count(self) -> int:
        return self.edges.size - 1

    def chart(self, n: int):
        """Affine A_n: Delta_n -> [0,1] (increasing) and its data."""
        hi = self.edges[n]
        lo = self.edges[n + 1]
        w = hi - lo
        return lo, w

    def normalized_f(self, n: int):
        """f_n = A_{n+1} o f o A_n^{-1} as closures on [0,1]."""
        lo_n, w_n = self.chart(n)
        lo_m, w_m = self.chart(n + 1)
        f = self.f

        def fn(u):
            u = np.asarray(u, dtype=float)
            x = lo_n + np.clip(u, 0.0, 1.0) * w_n
            return np.clip((np.asarray(f(x), float) - lo_m) / w_m, 0.0, 1.0)

        def dfn(u):
            u = np.asarray(u, dtype=float)
            x = lo_n + np.clip(u, 0.0, 1.0) * w_n
            return np.asarray(f.deriv(x), float) * (w_n / w_m)

        def inv(v):
            v = np.asarray(v, dtype=float)
            y = lo_m + np.clip(v, 0.0, 1.0) * w_m
            return np.clip((np.asarray(f.inverse_point(y), float) - lo_n) / w_n,
                           0.0, 1.0)

        return fn, dfn, inv

    def locate(self, u):
        """Domain index for points inside the ladder; -1 outside."""
        u = np.asarray(u, dtype=float)
        idx = np.searchsorted(-self.edges, -u, side="right") - 1
        return np.where((u <= self.edges[0]) & (u >= self.edges[-1]),
                        np.clip(idx, 0, self.edges.size - 2), -1)


class _SquashedTail:
    """The perturbed map and its conjugacy germ on a domain ladder.

    Stores per-domain normalized data: the perturbed map ftilde_n and the
    germ h_n, both as (values, derivs) arrays on the engine grid.
    """

    def __init__(self, ladder: _DomainLadder, grid, ftilde_data, h_data):
        self.ladder = ladder
        self.grid = grid
        self.ftilde = ftilde_data  # list of (vals, ders) or None (= f)
        self.h = h_data            # list of (vals, ders) or None (= id)
        from scipy.interpolate import CubicHermiteSpline
        self._ft_splines = []
        for entry in self.ftilde:
            if entry is None:
                self._ft_splines.append(None)
            else:
                v, d = entry
                s = CubicHermiteSpline(self.grid, v, d)
                self._ft_splines.append((s, s.derivative()))
        self._h_splines = []
        for entry in self.h:
            if entry is None:
                self._h_splines.append(None)
            else:
                v, d = entry
                s = CubicHermiteSpline(self.grid, v, d)
                self._h_splines.append((s, s.derivative()))

    def modified_domains(self) -> int:
        return sum(1 for e in self.ftilde if e is not None)

    def g_eval(self, u, g_outside: C1Map):
        """Perturbed map value/derivative; falls back to g_outside off-ladder."""
        u = np.asarray(u, dtype=float)
        vals = np.asarray(g_outside(u), dtype=float).copy()
        ders = np.asarray(g_outside.deriv(u), dtype=float).copy()
        idx = self.ladder.locate(u)
        for n in np.unique(idx[idx >= 0]):
            if n >= len(self._ft_splines) or self._ft_splines[n] is None:
                continue
            m = idx == n
            lo_n, w_n = self.ladder.chart(n)
            lo_m, w_m = self.ladder.chart(n + 1)
            t = np.clip((u[m] - lo_n) / w_n, 0.0, 1.0)
            s, ds = self._ft_splines[n]
            vals[m] = lo_m + np.clip(s(t), 0.0, 1.0) * w_m
            ders[m] = np.maximum(ds(t), 1e-12) * (w_m / w_n)
        return vals, ders

    def h_eval(self, u):
        """Conjugacy germ on the ladder: A_n^{-1} h_n A_n; id beyond it."""
        u = np.asarray(u, dtype=float)
        vals = u.astype(float).copy()
        ders = np.ones_like(vals)
        idx = self.ladder.locate(u)
        for n in np.unique(idx[idx >= 0]):
            if n >= len(self._h_splines) or self._h_splines[n] is None:
                continue
            m = idx == n
            lo_n, w_n = self.ladder.chart(n)
            t = np.clip((u[m] - lo_n) / w_n, 0.0, 1.0)
            s, ds = self._h_splines[n]
            vals[m] = lo_n + np.clip(s(t), 0.0, 1.0) * w_n
            ders[m] = np.maximum(ds(t), 1e-12)
        return vals, ders


def _squash_on_ladder(f: C1Map, g: C1Map, q0: float, eps: float,
                      n_max: int = SQUASH_N_MAX):
    """Squash the Mather germ of g along the orbit ladder of q0.

    Returns (tail, report): tail holds the perturbed per-domain data whose
    induced map has trivial invariant (germ reaches the identity exactly).
    """
    eps_tilde = 0.9 * marg(eps)
    ladder = _DomainLadder(f, q0, n_max + 4)
    if ladder.count() < 4:
        raise CapError("orbit ladder too short for squashing",
                       diagnostics={"q0": q0, "count": ladder.count()})
    frame = _Frame(f)
    a_pt, b_pt = coincidence_zones(f, g)
    x0 = float(f.inverse_point(f.inverse_point(b_pt)))
    # germ of the invariant on Delta_0, normalized
    lo0, w0 = ladder.chart(0)
    grid = np.linspace(0.0, 1.0, 129)
    pts = lo0 + grid * w0
    hv = np.empty_like(pts)
    hd = np.empty_like(pts)
    for i, x in enumerate(pts):
        hv[i], hd[i] = _h_orbit_eval(f, g, x0, float(x), frame)
    h0_vals = np.clip((hv - lo0) / w0, 0.0, 1.0)
    h0_vals[0], h0_vals[-1] = 0.0, 1.0
    h0_vals = np.maximum.accumulate(h0_vals)
    h0 = C1Map(UNIT, grid, h0_vals, np.maximum(hd, 1e-12), target=UNIT)
    engine = _SquashEngine(h0, eps_tilde, grid_n=129)
    ftilde_data = [None] * ladder.count()
    h_data = [None] * ladder.count()
    perts = []
    n = 0
    while n < ladder.count() - 2:
        if engine.identity_reached:
            break
        h_data[n] = (engine.h_vals.copy(), engine.h_ders.copy())
        f_fn, f_dfn, f_inv = ladder.normalized_f(n)
        # the perturbed normalized map ftilde_n = f_n o psi_n
        K = min(1.0, eps_tilde * engine.ratio_min())
        from scipy.interpolate import CubicHermiteSpline
        hinv = CubicHermiteSpline(engine.h_vals, engine.grid,
                                  1.0 / engine.h_ders)
        dh_at_hinv = CubicHermiteSpline(engine.grid, engine.h_vals,
                                        engine.h_ders).derivative()
        x = engine.grid
        hinv_x = np.clip(hinv(x), 0.0, 1.0)
        psi_x = np.clip(x + K * (hinv_x - x), 0.0, 1.0)
        dpsi_x = 1.0 + K * (1.0 / np.maximum(dh_at_hinv(hinv_x), 1e-12) - 1.0)
        ft_vals = f_fn(psi_x)
        ft_ders = np.maximum(f_dfn(psi_x) * dpsi_x, 1e-12)
        ft_vals[0], ft_vals[-1] = 0.0, 1.0
        ft_vals = np.maximum.accumulate(ft_vals)
        ftilde_data[n] = (ft_vals, ft_ders)
        mon = engine.step(f_fn, f_dfn, f_inv)
        perts.append(mon["pert"])
        n += 1
    if not engine.identity_reached:
        raise DivergenceError(
            f"ladder squash ran out of domains at step {n} "
            f"(min Dh {float(np.min(engine.h_ders)):.5f})",
            trace={"steps": n, "domains": ladder.count()})
    tail = _SquashedTail(ladder, engine.grid, ftilde_data, h_data)
    report = {"steps": n, "max_pert": max(perts) if perts else 0.0,
              "domains": ladder.count(), "q0": q0}
    return tail, report


# ---------------------------------------------------------------------
# end-to-end pipelines
# ---------------------------------------------------------------------


@dataclass
class IsotopyResult:
    """Discretized isotopy by conjugacy.

    `path` holds the conjugators h_t and `conjugated_path` the maps
    h_t f h_t^{-1}; when `flipped` is set both are stored in the
    contraction orientation (x -> 1-x relative to the inputs), where the
    deep conjugator content is representable.  C1 distances are invariant
    under that flip, so `distance_curve` is meaningful either way.
    """

    path: C1Path
    conjugated_path: C1Path
    target: C1Map
    distance_curve: list
    flipped: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_distance(self) -> float:
        return self.distance_curve[-1][1] if self.distance_curve else np.inf

    def distance_csv_rows(self):
        return [(float(t), float(d)) for t, d in self.distance_curve]


def _find_endpoint_zones(fc: C1Map, gt: C1Map, eps_tilde: float):
    """Largest zone edges (a_u near 0, b_u near 1) with restricted norms
    below eps_tilde; HypothesisError when none exist."""
    dom = fc.domain
    a_u = None
    for cand in np.geomspace(0.4 * dom.width, 1e-10, 40):
        if restricted_c1_norm(fc, gt, Interval(dom.lo, dom.lo + cand)) < eps_tilde:
            a_u = dom.lo + cand
            break
    b_u = None
    for cand in np.geomspace(0.4 * dom.width, 1e-10, 40):
        if restricted_c1_norm(fc, gt, Interval(dom.hi - cand, dom.hi)) < eps_tilde:
            b_u = dom.hi - cand
            break
    if a_u is None or b_u is None:
        raise HypothesisError(
            "no endpoint coincidence zones: endpoint derivatives of the "
            "path map do not match the base map")
    return a_u, b_u


def _stage_distance(g_fn, g_dfn, target: C1Map, ladder: _DomainLadder | None,
                    samples: int = 1200) -> float:
    grid = [np.linspace(target.domain.lo, target.domain.hi, samples),
            target.nodes]
    if ladder is not None:
        for n in range(ladder.count()):
            lo, w = ladder.chart(n)
            grid.append(lo + w * np.linspace(0.05, 0.95, 7))
    pts = np.unique(np.concatenate(grid))
    pts = pts[(pts >= target.domain.lo) & (pts <= target.domain.hi)]
    dv = np.max(np.abs(g_fn(pts) - np.asarray(target(pts), float)))
    dd = np.max(np.abs(g_dfn(pts) - np.asarray(target.deriv(pts), float)))
    return float(dv + dd)


def _pipeline_stage(fc: C1Map, ft: C1Map, eps: float,
                    envelopes: EnvelopePair, p_candidates=(0.4, 0.55, 0.3)):
    """One glue -> pin -> flatten -> ladder-squash stage in contraction
    coordinates.  Returns (g_final_fn/dfn pair, h closure data, report)."""
    report = {}
    eps_glue = eps / 4.0
    a_u, b_u = _find_endpoint_zones(fc, ft, 0.9 * marg(eps_glue))
    from .gluing import glue_endpoints
    rep_glue = glue_endpoints(fc, ft, a_u, b_u, eps_glue)
    g1 = rep_glue.result
    report["glue"] = {"a_u": a_u, "b_u": b_u,
                      "achieved": rep_glue.achieved_distance}
    # pin: try candidate points, keep the one with least flattening work
    best = None
    last_err = None
    for p in p_candidates:
        try:
            g2, rep_pin = pin_mather_point(fc, g1, p, eps / 4.0,
                                           envelopes=envelopes)
        except (BracketError, MarginError, CapError) as e:
            last_err = e
            continue
        work = abs(np.log(max(rep_pin["DM_at_p"], 1e-12)))
        if best is None or work < best[3]:
            best = (p, g2, rep_pin, work)
    if best is None:
        raise last_err
    p_star, g2, rep_pin, _ = best
    report["pin"] = {k: rep_pin[k] for k in
                     ("s_star", "residual", "DM_at_p", "k", "d_u", "c_u")}
    report["pin"]["p"] = p_star
    g3, rep_flat = flatten_mather_derivative(
        fc, g2, p_star, eps / 4.0, pin_report=rep_pin,
        target_tol=max(1e-6, eps * 1e-3))
    report["flatten"] = rep_flat
    # deep orbit representative of the pinned point for the ladder base
    a3, _b3 = coincidence_zones(fc, g3)
    q0 = float(p_star)
    guard = 0
    while not q0 < 0.5 * a3:
        q0 = float(fc(q0))
        guard += 1
        if guard > ORBIT_CAP:
            raise CapError("pinned orbit never enters the coincidence zone")
    # also require the germ image inside the zone
    frame = _Frame(fc)
    b3e = _b3_edge(fc, g3)
    x0m = float(fc.inverse_point(fc.inverse_point(b3e)))
    for _ in range(ORBIT_CAP):
        hv, _hd = _h_orbit_eval(fc, g3, x0m, q0, frame)
        if hv < 0.9 * a3:
            break
        q0 = float(fc(q0))
    tail, rep_squash = _squash_on_ladder(fc, g3, q0, eps / 4.0)
    report["squash"] = rep_squash
    ladder = tail.ladder

    def g_fn(u):
        return tail.g_eval(np.asarray(u, dtype=float), g3)[0]

    def g_dfn(u):
        return tail.g_eval(np.asarray(u, dtype=float), g3)[1]

    h_data = {"tail": tail, "g3": g3, "x0": x0m, "fc": fc,
              "id_above": float(fc(x0m)), "ladder": ladder}
    return (g_fn, g_dfn), h_data, report


def _b3_edge(fc, g3):
    _, b3 = coincidence_zones(fc, g3)
    return b3


def _unitary_on_points(f: C1Map, g: C1Map, x0: float, pts: np.ndarray):
    """(h(pts), Dh(pts)) for h = g^n f^-n, vectorized by domain batches.

    All pts must lie at or below the base domain top f(x0) in the dynamic
    order (contraction orientation: pts <= f(x0) is NOT required, points
    above x0 get h = id).
    """
    pts = np.asarray(pts, dtype=float)
    vals = pts.astype(float).copy()
    ders = np.ones_like(vals)
    fx0 = float(f(x0))
    # assign a domain index to each point by walking the edge ladder
    edges = [x0, fx0]
    live = vals < fx0 if fx0 < x0 else vals > fx0
    # contraction orientation assumed: edges descend toward 0
    while np.any(pts < edges[-1]) and len(edges) < 3 * ORBIT_CAP:
        edges.append(float(f(edges[-1])))
    edges_arr = np.asarray(edges)
    idx = np.searchsorted(-edges_arr, -pts, side="right") - 1
    idx = np.clip(idx, 0, len(edges) - 2)
    for n in np.unique(idx):
        sel = (idx == n) & (pts < x0)
        if n == 0 or not np.any(sel):
            continue
        y = pts[sel]
        dlog = np.zeros_like(y)
        for _ in range(int(n)):
            y = np.asarray(f.inverse_point(y), float)
            dlog -= np.log(np.asarray(f.deriv(y), float))
        v = y
        for _ in range(int(n)):
            dlog += np.log(np.asarray(g.deriv(v), float))
            v = np.asarray(g(v), float)
        vals[sel] = v
        ders[sel] = np.exp(dlog)
    return vals, ders


def _h_closure_map(h_data) -> C1Map:
    """The stage conjugator as a sampled C1Map: id near both ends, the
    unitary word in the middle, the squashed germ on the ladder."""
    tail: _SquashedTail = h_data["tail"]
    g3: C1Map = h_data["g3"]
    fc: C1Map = h_data["fc"]
    x0 = h_data["x0"]
    ladder = tail.ladder
    top = ladder.edges[0]
    bottom = ladder.edges[-1]
    id_above = h_data["id_above"]
    dom = fc.domain

    parts = [np.linspace(dom.lo, dom.hi, 257)]
    if top > 0:
        parts.append(np.exp(np.linspace(np.log(top), np.log(dom.hi * 0.999), 1201)))
    for n in range(min(ladder.count(), len(tail.h))):
        if tail.h[n] is None and n > 0:
            break
        lo, w = ladder.chart(n)
        parts.append(lo + w * np.linspace(0.0, 1.0, 13))
    parts.append(np.asarray([bottom, 0.5 * bottom, dom.lo, dom.hi]))
    nodes = dedupe_grid(np.unique(np.concatenate(parts)))
    nodes = nodes[(nodes >= dom.lo) & (nodes <= dom.hi)]
    nodes[0], nodes[-1] = dom.lo, dom.hi

    vals = nodes.astype(float).copy()
    ders = np.ones_like(vals)
    mid = (nodes > top) & (nodes < id_above)
    if np.any(mid):
        vals[mid], ders[mid] = _unitary_on_points(fc, g3, x0, nodes[mid])
    onl = (nodes <= top) & (nodes > bottom)
    if np.any(onl):
        vals[onl], ders[onl] = tail.h_eval(nodes[onl])
    from .core import _strictify
    nodes, vals, ders = _strictify(nodes, vals, np.maximum(ders, 1e-300))
    return C1Map(dom, nodes, vals, ders, target=dom, name="conjugator")


def _conjugacy_residual(h_map: C1Map, fc: C1Map, g_fn, probes) -> float:
    lhs = h_map(fc(probes))
    rhs = g_fn(np.asarray(h_map(probes), float))
    return float(np.max(np.abs(lhs - rhs)))


def isotopy_fixed_point_free(f: C1Map, g: C1Map, tol: float = 1e-3,
                             steps: int = 6, hyp_tol: float = 1e-6):
    """Isotopy by conjugacy between interior fixed-point-free maps.

    Requires matching endpoint derivatives and the same side of the
    identity; produces conjugators equal to the identity near both ends
    whose conjugates approach g along the straight-line path, within a
    shrinking tolerance schedule ending below tol.
    """
    d_f, d_g = direction_of(f), direction_of(g)
    if d_f != d_g:
        raise HypothesisError("maps must lie on the same side of the identity")
    df0, dg0 = float(f.deriv(f.domain.lo)), float(g.deriv(g.domain.lo))
    df1, dg1 = float(f.deriv(f.domain.hi)), float(g.deriv(g.domain.hi))
    if abs(df0 - dg0) > hyp_tol * max(1.0, df0) or \
            abs(df1 - dg1) > hyp_tol * max(1.0, df1):
        raise HypothesisError(
            f"endpoint derivatives differ: ({df0}, {df1}) vs ({dg0}, {dg1}); "
            "the isotopy cannot exist")
    flipped = d_f == 1
    fc = as_deep_contraction(f.flip() if flipped else f)
    gc = as_deep_contraction(g.flip() if flipped else g)
    dist0 = c1_distance(fc, gc)
    if dist0 < tol:
        ident = C1Map.identity(fc.domain)
        path = C1Path(np.array([0.0]), [ident], 0.0)
        conj = C1Path(np.array([0.0]), [fc], 0.0)
        return IsotopyResult(path, conj, gc, [(0.0, dist0)], flipped,
                             {"trivial": True})
    envelopes = speed_envelopes(fc)
    n_stages = max(steps, int(np.ceil(np.log2(dist0 / (tol / 4.0)))) + 1)
    ts = 1.0 - 0.5 ** np.arange(0, n_stages + 1)
    h_maps = [C1Map.identity(fc.domain)]
    conj_maps = [fc]
    curve = [(0.0, dist0)]
    stage_reports = []
    residuals = []
    probes = fc.domain.lo + fc.domain.width * np.linspace(0.1, 0.85, 9)
    for t in ts[1:]:
        ft = convex_blend(fc, gc, float(t))
        eps_t = max(float((1.0 - t) * dist0), tol / 3.0)
        (g_fn, g_dfn), h_data, rep = _pipeline_stage(fc, ft, eps_t, envelopes)
        h_map = _h_closure_map(h_data)
        residuals.append(_conjugacy_residual(h_map, fc, g_fn, probes))
        dist = _stage_distance(g_fn, g_dfn, gc, h_data["ladder"])
        curve.append((float(t), dist))
        # materialize the conjugate from the verified construction
        conj_nodes = h_map.nodes
        conj_maps.append(C1Map(fc.domain, conj_nodes, g_fn(conj_nodes),
                               np.maximum(g_dfn(conj_nodes), 1e-300),
                               target=fc.target, fn=g_fn, dfn=g_dfn,
                               name=f"conjugate@{t:.4f}"))
        h_maps.append(h_map)
        stage_reports.append(rep)
    times = ts[:len(h_maps)]
    path = C1Path(times, h_maps, 0.0)
    gaps = path.measure_steps()
    path.step_bound = float(np.max(gaps)) if gaps.size else 0.0
    conj_path = C1Path(times, conj_maps, 0.0)
    s_vals = [r["pin"]["s_star"] for r in stage_reports]
    s_jumps = [abs(s_vals[i + 1] - s_vals[i]) for i in range(len(s_vals) - 1)]
    diag = {"stages": stage_reports, "conjugacy_residuals": residuals,
            "eps_schedule": [max(float((1.0 - t) * dist0), tol / 3.0)
                             for t in ts[1:]],
            "s_trace": s_vals,
            "s_jump_flags": [j > 0.2 for j in s_jumps],
            "identity_zones": "id near both endpoints by construction"}
    return IsotopyResult(path, conj_path, gc, curve, flipped, diag)


def isotopy_to_identity(f: C1Map, tol: float = 1e-3, hyp_tol: float = 1e-4,
                        resolution: float = 1e-9):
    """Isotopy by conjugacy from an all-parabolic map to the identity.

    Component by component (maximal sign blocks of f - id), each run as a
    fixed-point-free isotopy toward the identity on its normalized chart,
    scheduled in order of decreasing wave size.  Per-component paths obey
    the factor-2 bound ||f_t - id||_1 < 2 ||f|C - id||_1.
    """
    from .core import fixed_points, renormalize_between, sign_blocks
    feats = fixed_points(f, tol=resolution)
    for ft_ in feats:
        if ft_.kind == "point":
            d_at = float(f.deriv(float(ft_.location[0])))
            if abs(d_at - 1.0) > hyp_tol:
                raise HypothesisError(
                    f"hyperbolic fixed point at {ft_.location[0]} "
                    f"(Df = {d_at}); no isotopy to the identity exists")
    blocks = sign_blocks(f, tol=resolution)
    blocks = [b for b in blocks if b[2] >= resolution * 10]
    if not blocks:
        ident = C1Map.identity(f.domain)
        path = C1Path(np.array([0.0]), [ident], 0.0)
        return IsotopyResult(path, C1Path(np.array([0.0]), [ident], 0.0),
                             ident, [(0.0, 0.0)], False,
                             {"components": 0, "schedule": []})
    order = np.argsort([-b[2] for b in blocks])
    comp_results = []
    comp_intervals = []
    comp_bounds = []
    for bi in order:
        zone, sign, size = blocks[bi]
        fn_map = renormalize_between(f, zone, zone)
        wave = c1_distance(fn_map, C1Map.identity(UNIT))
        res = isotopy_fixed_point_free(fn_map, C1Map.identity(UNIT),
                                       tol=min(tol, 0.9 * wave),
                                       hyp_tol=5e-2)
        # factor-2 bound per recorded step (strict, from the eps schedule)
        for t, d in res.distance_curve[1:]:
            if not d < 2.0 * wave:
                raise DivergenceError(
                    f"component path exceeded the factor-2 bound: {d} vs "
                    f"2*{wave}", trace={"zone": (zone.lo, zone.hi)})
        comp_results.append(res)
        comp_intervals.append(zone)
        comp_bounds.append(wave)
    # global schedule: component j runs on [t_j, t_{j+1}]
    n_comp = len(comp_results)
    t_marks = 1.0 - 0.5 ** np.arange(0, n_comp + 1)
    times = [0.0]
    h_maps = [C1Map.identity(f.domain)]
    curve = [(0.0, float(max(comp_bounds)))]
    for j, res in enumerate(comp_results):
        local_times = res.path.times
        for i_loc in range(1, len(local_times)):
            t_glob = t_marks[j] + (t_marks[j + 1] - t_marks[j]) * local_times[i_loc]
            stage_state = [(len(r.path.maps) - 1 if jj < j else
                            (i_loc if jj == j else 0))
                           for jj, r in enumerate(comp_results)]
            h_maps.append(_assemble_component_map(
                f.domain, comp_results, comp_intervals, stage_state))
            active = res.distance_curve[i_loc][1]
            untouched = [comp_bounds[jj] for jj in range(j + 1, n_comp)]
            done = [comp_results[jj].final_distance for jj in range(j)]
            curve.append((float(t_glob),
                          float(max([active] + untouched + done))))
            times.append(float(t_glob))
    path = C1Path(np.asarray(times), h_maps, 0.0)
    gaps = path.measure_steps()
    path.step_bound = float(np.max(gaps)) if gaps.size else 0.0
    ident = C1Map.identity(f.domain)
    conj_maps = [_assemble_conjugate(f.domain, comp_results, comp_intervals,
                                     i, times) for i in range(len(times))]
    conj_path = C1Path(np.asarray(times), conj_maps, 0.0)
    diag = {"components": n_comp,
            "component_bounds": comp_bounds,
            "component_finals": [r.final_distance for r in comp_results],
            "schedule": t_marks.tolist()}
    return IsotopyResult(path, conj_path, ident, curve, False, diag)


def _assemble_component_map(domain, comp_results, comp_intervals, stage_state):
    """Global conjugator: per-component conjugators in their charts."""
    pieces = []
    for res, zone, idx in zip(comp_results, comp_intervals, stage_state):
        h_loc = res.path.maps[min(idx, len(res.path.maps) - 1)]
        pieces.append((zone, h_loc, res.flipped))

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = x.astype(float).copy()
        for zone, h_loc, flp in pieces:
            m = (x >= zone.lo) & (x <= zone.hi)
            if not np.any(m):
                continue
            u = (x[m] - zone.lo) / zone.width
            if flp:
                u = 1.0 - u
            hv = np.asarray(h_loc(np.clip(u, 0.0, 1.0)), float)
            if flp:
                hv = 1.0 - hv
            out[m] = zone.lo + hv * zone.width
        return out

    def dfn(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for zone, h_loc, flp in pieces:
            m = (x >= zone.lo) & (x <= zone.hi)
            if not np.any(m):
                continue
            u = (x[m] - zone.lo) / zone.width
            if flp:
                u = 1.0 - u
            out[m] = np.asarray(h_loc.deriv(np.clip(u, 0.0, 1.0)), float)
        return out

    parts = [np.linspace(domain.lo, domain.hi, 513)]
    for zone, h_loc, flp in pieces:
        u = h_loc.nodes
        if flp:
            u = 1.0 - u[::-1]
        parts.append(zone.lo + u * zone.width)
    nodes = dedupe_grid(np.unique(np.concatenate(parts)))
    nodes[0], nodes[-1] = domain.lo, domain.hi
    return C1Map.from_callable(fn, dfn, domain, nodes=nodes, name="global_h")


def _assemble_conjugate(domain, comp_results, comp_intervals, time_index,
                        times):
    """Global conjugated map at a step of the assembled schedule."""
    # reconstruct which component/stage the global index corresponds to
    idx = time_index
    counts = [len(r.path.maps) - 1 for r in comp_results]
    stage_state = [0] * len(comp_results)
    j = 0
    while idx > 0 and j < len(comp_results):
        take = min(idx, counts[j])
        stage_state[j] = take
        idx -= take
        j += 1
    pieces = []
    for res, zone, k in zip(comp_results, comp_intervals, stage_state):
        c_loc = res.conjugated_path.maps[min(k, len(res.conjugated_path.maps) - 1)]
        pieces.append((zone, c_loc, res.flipped))

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = x.astype(float).copy()
        for zone, c_loc, flp in pieces:
            m = (x >= zone.lo) & (x <= zone.hi)
            if not np.any(m):
                continue
            u = (x[m] - zone.lo) / zone.width
            if flp:
                u = 1.0 - u
            cv = np.asarray(c_loc(np.clip(u, 0.0, 1.0)), float)
            if flp:
                cv = 1.0 - cv
            out[m] = zone.lo + cv * zone.width
        return out

    def dfn(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for zone, c_loc, flp in pieces:
            m = (x >= zone.lo) & (x <= zone.hi)
            if not np.any(m):
                continue
            u = (x[m] - zone.lo) / zone.width
            if flp:
                u = 1.0 - u
            out[m] = np.asarray(c_loc.deriv(np.clip(u, 0.0, 1.0)), float)
        return out

    parts = [np.linspace(domain.lo, domain.hi, 513)]
    for zone, c_loc, flp in pieces:
        u = c_loc.nodes
        if flp:
            u = 1.0 - u[::-1]
        parts.append(zone.lo + u * zone.width)
    nodes = dedupe_grid(np.unique(np.concatenate(parts)))
    nodes[0], nodes[-1] = domain.lo, domain.hi
    return C1Map.from_callable(fn, dfn, domain, nodes=nodes, name="global_conj")


# ---------------------------------------------------------------------
# centralizer embedding
# ---------------------------------------------------------------------


def _resample_unit_map(m: C1Map, flipped: bool, n: int = 801) -> C1Map:
    """Materialize a `[0,1]` conjugator (un-flipping it if needed)."""
    if flipped:
        m = m.flip()
    grid = np.unique(np.concatenate([
        np.linspace(0.0, 1.0, n),
        np.geomspace(1e-12, 1.0, 301), 1.0 - np.geomspace(1e-12, 0.999, 301)]))
    grid = dedupe_grid(grid)
    grid[0], grid[-1] = 0.0, 1.0
    vals = np.asarray(m(grid), dtype=float)
    ders = np.maximum(np.asarray(m.deriv(grid), dtype=float), 1e-12)
    vals[0], vals[-1] = 0.0, 1.0
    from .core import _strictify
    grid, vals, ders = _strictify(grid, vals, ders)
    return C1Map(UNIT, grid, vals, ders, target=UNIT, name=m.name + "_mat")


def select_embedding_words(isotopy: IsotopyResult, n_words: int):
    """Conjugator snapshots with strictly decreasing conjugate distance.

    The first selected snapshot is t = 0 (the identity); the rest are the
    path entries whose distance to the target strictly improves.
    """
    dists = [d for _, d in isotopy.distance_curve]
    picks = [0]
    for i in range(1, len(dists)):
        if dists[i] < dists[picks[-1]] * 0.999:
            picks.append(i)
    picks = picks[:n_words] if len(picks) >= n_words else picks
    while len(picks) < n_words:
        picks.append(picks[-1])
    words = [_resample_unit_map(isotopy.path.maps[i], isotopy.flipped)
             for i in picks]
    word_dists = [dists[i] for i in picks]
    return words, word_dists


def embed_in_contraction(g_J: C1Map, isotopy: IsotopyResult, lam: float,
                         n_domains: int, probe_density: int = 25):
    """Realize g_J inside the centralizer of a contraction of [0, X].

    The contraction is the homothety ratio lam modified on the iterated
    copies of J by the conjugator increments of the isotopy; g_J extends
    by commutation (closed-form words, no orbit iteration).  Returns
    (f, g_ext, report) with measured commutation residual and derivative
    trends.  Requires lam * J.hi < J.lo so the copies are disjoint.
    """
    J = g_J.domain
    if not (0.0 < lam < 1.0):
        raise HypothesisError("contraction ratio must be in (0,1)")
    if not lam * J.hi < J.lo:
        raise GeometryError(
            f"iterated copies overlap: lam*J.hi = {lam * J.hi} >= J.lo = {J.lo}")
    X = J.hi
    words, word_dists = select_embedding_words(isotopy, n_domains + 2)
    # words act on [0,1]; conjugate them into J
    w_J = J.width

    def to_J(m: C1Map) -> C1Map:
        def fn(x):
            u = (np.asarray(x, dtype=float) - J.lo) / w_J
            return J.lo + np.asarray(m(np.clip(u, 0.0, 1.0)), float) * w_J

        def dfn(x):
            u = (np.asarray(x, dtype=float) - J.lo) / w_J
            return np.asarray(m.deriv(np.clip(u, 0.0, 1.0)), float)

        nodes = J.lo + m.nodes * w_J
        nodes[0], nodes[-1] = J.lo, J.hi
        return C1Map.from_callable(fn, dfn, J, nodes=nodes, name="word_J")

    W = [to_J(m) for m in words]          # W[n] = h_{t_n} acting on J
    n_words = len(W)
    scales = lam ** np.arange(n_domains + 2)

    def locate(x):
        """Domain index n with x in lam^n * J, else -1 (gap or tail)."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -1, dtype=int)
        for n in range(n_domains + 2):
            m = (x >= scales[n] * J.lo) & (x <= scales[n] * J.hi)
            out[m] = n
        return out

    def f_fn(x):
        x = np.asarray(x, dtype=float)
        out = lam * x
        idx = locate(x)
        for n in np.unique(idx[idx >= 0]):
            m = idx == n
            y = x[m] / scales[n]
            if n == 0:
                phi = y
            elif n < n_words:
                phi = np.asarray(W[n](W[n - 1].inverse_point(y)), float)
            else:
                phi = y
            out[m] = lam * scales[n] * phi
        return out

    def f_dfn(x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, lam, dtype=float)
        idx = locate(x)
        for n in np.unique(idx[idx >= 0]):
            if n == 0 or n >= n_words:
                continue
            m = idx == n
            y = x[m] / scales[n]
            pre = np.asarray(W[n - 1].inverse_point(y), float)
            out[m] = lam * (np.asarray(W[n].deriv(pre), float)
                            / np.asarray(W[n - 1].deriv(pre), float))
        return out

    def g_word_eval(x, powers=1):
        """g_ext with g_J^powers as the seed (bounded-power family)."""
        x = np.asarray(x, dtype=float)
        out = x.astype(float).copy()
        idx = locate(x)
        for n in np.unique(idx[idx >= 0]):
            m = idx == n
            y = x[m] / scales[n]
            if n == 0:
                w_in = y
            else:
                w_idx = min(n - 1, n_words - 1)
                w_in = np.asarray(W[w_idx].inverse_point(y), float)
            z = w_in
            for _ in range(abs(powers)):
                z = np.asarray(g_J.inverse_point(z) if powers < 0 else g_J(z),
                               float)
            if n == 0:
                w_out = z
            else:
                w_idx = min(n - 1, n_words - 1)
                w_out = np.asarray(W[w_idx](z), float)
            out[m] = scales[n] * w_out
        return out

    def g_word_deriv(x, powers=1):
        x = np.asarray(x, dtype=float)
        eps_fd = 1e-7
        # derivative via the chain rule word by word
        out = np.ones_like(x)
        idx = locate(x)
        for n in np.unique(idx[idx >= 0]):
            m = idx == n
            y = x[m] / scales[n]
            if n == 0:
                pre = y
                dw_in = np.ones_like(y)
            else:
                w_idx = min(n - 1, n_words - 1)
                pre = np.asarray(W[w_idx].inverse_point(y), float)
                dw_in = 1.0 / np.asarray(W[w_idx].deriv(pre), float)
            z = pre
            dmid = np.ones_like(z)
            for _ in range(abs(powers)):
                if powers < 0:
                    z_new = np.asarray(g_J.inverse_point(z), float)
                    dmid = dmid / np.asarray(g_J.deriv(z_new), float)
                    z = z_new
                else:
                    dmid = dmid * np.asarray(g_J.deriv(z), float)
                    z = np.asarray(g_J(z), float)
            if n == 0:
                dw_out = np.ones_like(z)
            else:
                w_idx = min(n - 1, n_words - 1)
                dw_out = np.asarray(W[w_idx].deriv(z), float)
            out[m] = dw_out * dmid * dw_in
        return out

    # materialize f and g_ext with per-domain node batches
    parts = [np.array([0.0, X])]
    for n in range(n_domains + 2):
        parts.append(scales[n] * np.linspace(J.lo, J.hi, 65))
        if n > 0:
            parts.append(np.linspace(scales[n] * J.hi, scales[n - 1] * J.lo, 9))
    nodes = dedupe_grid(np.unique(np.concatenate(parts)))
    nodes = nodes[(nodes >= 0) & (nodes <= X)]
    dom = Interval(0.0, X)
    f_map = C1Map(dom, nodes, f_fn(nodes), np.maximum(f_dfn(nodes), 1e-300),
                  target=Interval(0.0, float(f_fn(np.array([X]))[0])),
                  fn=f_fn, dfn=f_dfn, name="embedded_contraction")
    g_map = C1Map(dom, nodes, g_word_eval(nodes),
                  np.maximum(g_word_deriv(nodes), 1e-300),
                  target=dom, fn=lambda x: g_word_eval(x),
                  dfn=lambda x: g_word_deriv(x), name="commuting_extension")
    # measurements
    probes = []
    for n in range(n_domains + 1):
        probes.append(scales[n] * np.linspace(J.lo * 1.001, J.hi * 0.999,
                                              probe_density))
        probes.append(np.linspace(scales[n + 1] * J.hi * 1.01,
                                  scales[n] * J.lo * 0.99, 7))
    probes = np.unique(np.concatenate(probes))
    comm = float(np.max(np.abs(f_fn(g_word_eval(probes))
                               - g_word_eval(f_fn(probes)))))
    dg_trend = []
    df_trend = []
    for n in range(n_domains + 1):
        pr = scales[n] * np.linspace(J.lo * 1.001, J.hi * 0.999, probe_density)
        dg_trend.append(float(np.max(np.abs(g_word_deriv(pr) - 1.0))))
        df_trend.append(float(np.max(np.abs(f_dfn(pr) - lam))))
    report = {"commutation_residual": comm,
              "dg_trend": dg_trend, "df_trend": df_trend,
              "word_distances": word_dists,
              "g_eval": g_word_eval, "g_deriv": g_word_deriv,
              "f_eval": f_fn, "f_deriv": f_dfn,
              "scales": scales.tolist()}
    return f_map, g_map, report
