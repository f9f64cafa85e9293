"""Conjugacy invariants of interior fixed-point-free maps.

For g coinciding with the base map f near both endpoints, the unitary
conjugacy is the unique conjugacy from f to g equal to the identity near
the repelling end; it is built fundamental domain by fundamental domain
as g^n o f^-n.  Its germ near the attracting end, propagated by the
dynamics of f, is the Mather invariant; translation numbers and delays
quantify how far that invariant is from trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import C1Map, Interval, dedupe_grid
from .errors import (
    CapError,
    CoincidenceZoneError,
    CommutationError,
    IndeterminateDelayError,
    TruncationError,
)

ORBIT_CAP = 400
COMMUTATION_TOL = 1e-7
GERM_NODES = 97


def direction_of(f: C1Map) -> int:
    """+1 if f > id on the interior (attracting end = hi), -1 if f < id."""
    dom = f.domain
    probes = dom.lo + dom.width * np.array([0.2, 0.5, 0.8])
    d = f(probes) - probes
    if np.all(d > 0):
        return 1
    if np.all(d < 0):
        return -1
    raise CoincidenceZoneError("map has interior fixed points; no direction")


@dataclass
class FundamentalDomain:
    """One fundamental domain [base, image] of a fixed-point-free map.

    Orientation is normalized so the stored pair satisfies base < image
    (as for f > id); `flipped` records that the underlying map descends.
    """

    base: float
    image: float
    map: C1Map
    flipped: bool = False

    def __post_init__(self):
        if not self.base < self.image:
            raise CoincidenceZoneError("need base < image after normalization")

    @property
    def interval(self) -> Interval:
        return Interval(self.base, self.image)

    @staticmethod
    def at(f: C1Map, x0: float) -> "FundamentalDomain":
        fx = float(f(x0))
        if fx > x0:
            return FundamentalDomain(x0, fx, f, flipped=False)
        if fx < x0:
            return FundamentalDomain(fx, x0, f, flipped=True)
        raise CoincidenceZoneError(f"x0 = {x0} is a fixed point")


class _Frame:
    """Direction-free view of the orbit structure of a fixed-point-free map."""

    def __init__(self, f: C1Map):
        self.f = f
        self.direction = direction_of(f)
        dom = f.domain
        if self.direction > 0:
            self.repelling, self.attracting = dom.lo, dom.hi
        else:
            self.repelling, self.attracting = dom.hi, dom.lo

    def step(self, x, k: int = 1):
        """f^k(x); positive k moves toward the attracting end."""
        return self.f.iterate(x, k)

    def toward_attracting(self, x, y) -> bool:
        """True if y is at least as far along the dynamics as x."""
        return (y >= x) if self.direction > 0 else (y <= x)

    def strictly_before(self, x, y) -> bool:
        return (x < y) if self.direction > 0 else (x > y)


def coincidence_zones(f: C1Map, g: C1Map, tol: float = 1e-9,
                      samples: int = 2048):
    """Largest zones near the ends where g agrees with f in C1.

    Returns (a_pt, b_pt) in the ascending convention: agreement on
    [lo, a_pt] and [b_pt, hi].  Raises if there is no agreement zone.
    """
    dom = f.domain
    grid = np.unique(np.concatenate([
        f.nodes, g.nodes, np.linspace(dom.lo, dom.hi, samples)]))
    diff = np.abs(f(grid) - g(grid)) + np.abs(f.deriv(grid) - g.deriv(grid))
    bad = np.where(diff > tol)[0]
    if bad.size == 0:
        inner = 0.25 * dom.width
        return dom.lo + inner, dom.hi - inner
    first, last = bad[0], bad[-1]
    if first == 0 or last == grid.size - 1:
        raise CoincidenceZoneError(
            "maps differ all the way to an endpoint; no coincidence zone")
    a_pt = grid[first - 1]
    b_pt = grid[last + 1]
    if a_pt <= dom.lo or b_pt >= dom.hi:
        raise CoincidenceZoneError("empty coincidence zone")
    return float(a_pt), float(b_pt)


def _h_orbit_eval(f: C1Map, g: C1Map, x0: float, x: float, frame: _Frame,
                  cap: int = ORBIT_CAP):
    """(h(x), Dh(x)) for h = g^n f^-n on the n-th fundamental domain of x0."""
    fx0 = float(f(x0))
    # locate n >= 0 with x in [f^n(x0), f^{n+1}(x0)) (direction-aware)
    if frame.strictly_before(x, x0):
        raise TruncationError("evaluation point below the base domain")
    n = 0
    lo_pt, hi_pt = x0, fx0
    while not (frame.toward_attracting(lo_pt, x) and frame.strictly_before(x, hi_pt)):
        lo_pt, hi_pt = hi_pt, float(f(hi_pt))
        n += 1
        if n > cap:
            raise TruncationError(
                f"point {x} needs more than {cap} fundamental domains")
    # walk back to the base domain, collecting the derivative chain
    y = x
    dlog = 0.0
    for _ in range(n):
        y = float(f.inverse_point(y))
        dlog -= np.log(float(f.deriv(y)))
    # forward with g
    val = y
    for _ in range(n):
        dlog += np.log(float(g.deriv(val)))
        val = float(g(val))
    return val, float(np.exp(dlog))


def unitary_conjugacy(f: C1Map, g: C1Map, x0: float | None = None,
                      eval_interval: Interval | None = None,
                      tol: float = 1e-9, n_nodes: int = 257,
                      cap: int = ORBIT_CAP) -> C1Map:
    """The conjugacy from f to g equal to the identity near the repelling end.

    Returns it sampled on a compact sub-interval that must stay away from
    the attracting end (the conjugacy need not extend differentiably
    there).
    """
    frame = _Frame(f)
    a_pt, b_pt = coincidence_zones(f, g, tol=tol)
    if frame.direction < 0:
        a_pt, b_pt = b_pt, a_pt  # a-zone is at the repelling end
    if x0 is None:
        x0 = float(f.inverse_point(f.inverse_point(a_pt)))
    fx0 = float(f(x0))
    if not frame.strictly_before(fx0, a_pt):
        raise CoincidenceZoneError(
            f"need f(x0) strictly inside the repelling coincidence zone; "
            f"f({x0}) = {fx0}, zone edge {a_pt}")
    if eval_interval is None:
        lo = min(x0, frame.step(x0, 6))
        hi = max(x0, frame.step(x0, 6))
        eval_interval = Interval(lo, hi)
    att = frame.attracting
    if abs(eval_interval.lo - att) < 1e-12 or abs(eval_interval.hi - att) < 1e-12:
        raise TruncationError(
            "requested interval reaches the attracting end; the unitary "
            "conjugacy need not extend differentiably there")
    def point_eval(x):
        if frame.strictly_before(x, x0) or x == x0:
            return x, 1.0
        return _h_orbit_eval(f, g, x0, float(x), frame, cap=cap)

    def fn(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([point_eval(float(v))[0] for v in xs])

    def dfn(x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        return np.array([point_eval(float(v))[1] for v in xs])

    nodes = np.linspace(eval_interval.lo, eval_interval.hi, n_nodes)
    return C1Map.from_callable(fn, dfn, eval_interval, nodes=nodes,
                               name="unitary_conjugacy")


@dataclass
class CommutingRep:
    """Homeomorphism commuting with a base map, stored as germ + shift.

    The germ lives on one fundamental domain near the attracting end;
    values anywhere follow by finitely many conjugations by the base map.
    """

    base_map: C1Map
    germ: C1Map
    shift: int
    germ_base: float
    flipped: bool = False
    meta: dict = field(default_factory=dict)

    def _frame(self) -> "_Frame":
        return _Frame(self.base_map)

    def eval_c1(self, x: float, cap: int = ORBIT_CAP):
        """(M(x), DM(x)) via germ propagation by the base dynamics."""
        f = self.base_map
        frame = self._frame()
        y0 = self.germ_base
        y1 = float(f(y0))
        lo, hi = (y0, y1) if frame.direction > 0 else (y1, y0)
        # push x into [lo, hi) with k steps of f (k may be negative)
        k = 0
        cur = float(x)
        dlog_in = 0.0
        while frame.strictly_before(cur, y0):
            dlog_in += np.log(float(f.deriv(cur)))
            cur = float(f(cur))
            k += 1
            if k > cap:
                raise CapError(f"germ propagation cap exceeded at x = {x}")
        while not frame.strictly_before(cur, y1):
            cur = float(f.inverse_point(cur))
            dlog_in -= np.log(float(f.deriv(cur)))
            k -= 1
            if k < -cap:
                raise CapError(f"germ propagation cap exceeded at x = {x}")
        gv = float(self.germ(cur))
        gd = float(self.germ.deriv(cur))
        # pull the germ value back with f^-k, tracking the derivative
        val = gv
        dlog_out = 0.0
        for _ in range(abs(k)):
            if k > 0:
                val = float(f.inverse_point(val))
                dlog_out -= np.log(float(f.deriv(val)))
            else:
                dlog_out += np.log(float(f.deriv(val)))
                val = float(f(val))
        return val, float(gd * np.exp(dlog_in + dlog_out))

    def __call__(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([self.eval_c1(float(v))[0] for v in xs])
        return out if np.ndim(x) else float(out[0])

    def deriv(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([self.eval_c1(float(v))[1] for v in xs])
        return out if np.ndim(x) else float(out[0])

    def commutation_residual(self, f: C1Map, g: C1Map, n_domains: int = 3,
                             samples: int = 21) -> float:
        """sup |propagated germ - directly recomputed conjugacy| over pushed domains.

        Non-tautological: the left side propagates the stored germ with f,
        the right side recomputes g^n f^-n from scratch on each domain.
        """
        frame = self._frame()
        a_pt, b_pt = coincidence_zones(f, g)
        if frame.direction < 0:
            a_pt, b_pt = b_pt, a_pt
        x0 = float(f.inverse_point(f.inverse_point(a_pt)))
        worst = 0.0
        y0 = self.germ_base
        for j in range(1, n_domains + 1):
            lo = frame.step(y0, j)
            hi = frame.step(y0, j + 1)
            pts = np.linspace(min(lo, hi), max(lo, hi), samples)[1:-1]
            for x in pts:
                mv, _ = self.eval_c1(float(x))
                hv, _ = _h_orbit_eval(f, g, x0, float(x), frame)
                worst = max(worst, abs(mv - hv))
        return worst

    def to_json(self):
        return {
            "germ": self.germ.to_json(),
            "shift": self.shift,
            "germ_base": self.germ_base,
            "flipped": self.flipped,
            "meta": self.meta,
        }


def mather_invariant(f: C1Map, g: C1Map, tol: float = 1e-9,
                     cap: int = ORBIT_CAP) -> CommutingRep:
    """The f-commuting homeomorphism agreeing with the unitary conjugacy
    near the attracting end, as a germ on one fundamental domain."""
    frame = _Frame(f)
    a_pt, b_pt = coincidence_zones(f, g, tol=tol)
    if frame.direction < 0:
        a_pt, b_pt = b_pt, a_pt
    x0 = float(f.inverse_point(f.inverse_point(a_pt)))
    # climb until both the point and its h-image are past the attracting
    # coincidence edge: there h already commutes with f
    y = float(f(x0))
    m = 0
    while True:
        hv, _ = _h_orbit_eval(f, g, x0, y, frame, cap=cap)
        if frame.toward_attracting(b_pt, y) and frame.toward_attracting(b_pt, hv):
            break
        y = float(f(y))
        m += 1
        if m > cap:
            raise CapError("no fundamental domain past the coincidence edge "
                           f"within {cap} steps", diagnostics={"b_pt": b_pt})
    y0 = y
    y1 = float(f(y0))
    if abs(y1 - y0) < 1e-11 * max(1.0, abs(y0)):
        raise CapError(
            "germ domain is float-degenerate near the attracting end; the "
            "coincidence zone reaches too deep (noisy inputs?)",
            diagnostics={"y0": y0, "width": y1 - y0, "b_pt": b_pt})
    lo, hi = (y0, y1) if frame.direction > 0 else (y1, y0)
    nodes = np.linspace(lo, hi, GERM_NODES)
    vals = np.empty_like(nodes)
    ders = np.empty_like(nodes)
    for i, x in enumerate(nodes):
        vals[i], ders[i] = _h_orbit_eval(f, g, x0, float(x), frame, cap=cap)
    if frame.direction > 0:
        germ = C1Map(Interval(lo, hi), nodes, vals, ders,
                     target=Interval(vals[0], vals[-1]), name="mather_germ")
    else:
        germ = C1Map(Interval(lo, hi), nodes, vals, ders,
                     target=Interval(vals[0], vals[-1]), name="mather_germ")
    # shift: how many domains the germ advances its own base point
    hv0 = float(germ(y0)) if frame.direction > 0 else float(germ(y1))
    base_val = hv0
    shift = 0
    probe = y0
    guard = 0
    while frame.toward_attracting(float(f(probe)), base_val):
        probe = float(f(probe))
        shift += 1
        guard += 1
        if guard > cap:
            raise CapError("shift computation exceeded the orbit cap")
    while frame.strictly_before(base_val, probe):
        probe = float(f.inverse_point(probe))
        shift -= 1
        guard += 1
        if guard > 2 * cap:
            raise CapError("shift computation exceeded the orbit cap")
    return CommutingRep(f, germ, shift, y0,
                        flipped=(frame.direction < 0),
                        meta={"a_pt": a_pt, "b_pt": b_pt, "x0": x0,
                              "germ_steps": m})


def translation_number(f: C1Map, h, n: int, base_points=None,
                       commutation_tol: float = 1e-5):
    """Asymptotic number of fundamental domains of f advanced per iterate of h.

    Returns (estimate, halfwidth) with estimate = m(n)/n from the counting
    inequality f^{m}(x) <= h^n(x) < f^{m+1}(x) and halfwidth = 1/n.  The
    iteration is carried in wrapped fundamental-domain coordinates so no
    orbit ever approaches the endpoints.
    """
    if n < 1:
        raise CommutationError("need n >= 1")
    frame = _Frame(f)
    if isinstance(h, CommutingRep):
        def h_eval(x):
            return h.eval_c1(x)[0]
        anchor = h.germ_base
    else:
        # h must commute with f (within tolerance) for tau to make sense
        dom = f.domain
        probe = dom.lo + dom.width * np.linspace(0.25, 0.75, 9)
        resid = np.max(np.abs(h(f(probe)) - f(h(probe))))
        if resid > commutation_tol:
            raise CommutationError(
                f"h does not commute with f: residual {resid:.3e} "
                f"above {commutation_tol:.1e}")

        def h_eval(x):
            return float(h(x))
        anchor = f.domain.lo + 0.45 * f.domain.width
    x_base = anchor
    x_next = float(f(x_base))
    if base_points is None:
        ts = [0.15, 0.45, 0.75]
        base_points = [x_base + t * (x_next - x_base) for t in ts]
    estimates = []
    for v0 in base_points:
        j = 0
        v = float(v0)
        for _ in range(n):
            v = h_eval(v)
            guard = 0
            while not frame.strictly_before(v, x_next):
                v = float(f.inverse_point(v))
                j += 1
                guard += 1
                if guard > ORBIT_CAP:
                    raise CapError("translation wrap exceeded orbit cap")
            while frame.strictly_before(v, x_base):
                v = float(f(v))
                j -= 1
                guard += 1
                if guard > 2 * ORBIT_CAP:
                    raise CapError("translation wrap exceeded orbit cap")
        m_n = j if frame.toward_attracting(v0, v) else j - 1
        estimates.append(m_n / n)
    est = float(np.mean(estimates))
    spread = float(np.max(estimates) - np.min(estimates))
    return est, 1.0 / n, {"spread": spread, "per_point": estimates}


def _tau_checkpoints(f: C1Map, h, checkpoints, base_offsets=(0.15, 0.45, 0.75)):
    """m(n)/n at each checkpoint n from one wrapped iteration pass."""
    frame = _Frame(f)
    if isinstance(h, CommutingRep):
        def h_eval(x):
            return h.eval_c1(x)[0]
        anchor = h.germ_base
    else:
        def h_eval(x):
            return float(h(x))
        anchor = f.domain.lo + 0.45 * f.domain.width
    x_base = anchor
    x_next = float(f(x_base))
    n_max = max(checkpoints)
    marks = set(checkpoints)
    out = {n: [] for n in checkpoints}
    for t in base_offsets:
        v0 = x_base + t * (x_next - x_base)
        v = float(v0)
        j = 0
        for it in range(1, n_max + 1):
            v = h_eval(v)
            guard = 0
            while not frame.strictly_before(v, x_next):
                v = float(f.inverse_point(v))
                j += 1
                guard += 1
                if guard > ORBIT_CAP:
                    raise CapError("translation wrap exceeded orbit cap")
            while frame.strictly_before(v, x_base):
                v = float(f(v))
                j -= 1
                guard += 1
                if guard > 2 * ORBIT_CAP:
                    raise CapError("translation wrap exceeded orbit cap")
            if it in marks:
                m_it = j if frame.toward_attracting(v0, v) else j - 1
                out[it].append(m_it / it)
    return {n: (float(np.mean(v)), 1.0 / n, v) for n, v in out.items()}


def delay(f: C1Map, g: C1Map, n_max: int = 2 ** 16, tol: float = 1e-9,
          rep: CommutingRep | None = None):
    """Integer part of |translation number of the Mather invariant of g|.

    One wrapped-iteration pass records m(n) at doubling checkpoints; the
    floor is accepted once stable across a doubling and at least a
    halfwidth away from the integers, or once the estimate pins an exact
    integer (the counting then sits at k*n or k*n - 1).  Returns
    (delay, report).
    """
    if rep is None:
        rep = mather_invariant(f, g, tol=tol)
    stage_top = 256
    trace = []
    while stage_top <= n_max:
        checkpoints = [64]
        while checkpoints[-1] < stage_top:
            checkpoints.append(checkpoints[-1] * 2)
        results = _tau_checkpoints(f, rep, checkpoints)
        trace = [{"n": n, "estimate": results[n][0], "halfwidth": results[n][1]}
                 for n in checkpoints]
        prev_floor = None
        prev_snap = None
        for n in checkpoints:
            est, hw, _ = results[n]
            mag = abs(est)
            fl = int(np.floor(mag + 1e-12))
            # the counting m(n) sits at k*n or k*n - 1 when tau is exactly
            # an integer; report that integer, not an unstable floor
            k_round = int(np.round(est))
            snap = abs(est - k_round) <= 1.5 / n
            if snap and prev_snap == k_round and n >= 256:
                return abs(k_round), {"n": n, "estimate": est, "halfwidth": hw,
                                      "trace": trace, "shift": rep.shift,
                                      "integer_snap": True}
            stable = (prev_floor == fl and (mag - fl) >= hw
                      and (fl + 1 - mag) >= hw)
            if stable and not snap:
                return fl, {"n": n, "estimate": est, "halfwidth": hw,
                            "trace": trace, "shift": rep.shift}
            prev_floor = fl
            prev_snap = k_round if snap else None
        stage_top *= 4
    raise IndeterminateDelayError(
        f"translation-number floor unstable at n_max = {n_max}; "
        f"trace tail {trace[-2:]}")
