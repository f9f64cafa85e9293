"""Map builders and the prefix-notation builder DSL.

Families are chosen to realize the standing hypotheses: interior
fixed-point-free maps with prescribed endpoint multipliers, parabolic
(tangent-to-identity) maps, flow time-t maps, prescribed sign patterns.
"""

from __future__ import annotations

import numpy as np

from .core import C1Map, Interval, UNIT, DEFAULT_NODE_COUNT, compose, geometric_grid, invert
from .errors import BuilderError


def identity(domain: Interval = UNIT, n: int = DEFAULT_NODE_COUNT) -> C1Map:
    return C1Map.identity(domain, n=n)


def mobius(lam: float, n: int = DEFAULT_NODE_COUNT) -> C1Map:
    """x -> lam*x / (1 + (lam-1)*x) on [0,1]; Df(0)=lam, Df(1)=1/lam.

    The family is the flow of the field x(1-x) d/dx at time log(lam), so
    its members commute with each other and compose by multiplying lam.
    """
    if lam <= 0:
        raise BuilderError(f"mobius parameter must be positive, got {lam}")
    a = lam - 1.0

    def fn(x):
        x = np.asarray(x, dtype=float)
        return lam * x / (1.0 + a * x)

    def dfn(x):
        x = np.asarray(x, dtype=float)
        return lam / (1.0 + a * x) ** 2

    def inv(y):
        y = np.asarray(y, dtype=float)
        return y / (lam - a * y)

    return C1Map.from_callable(fn, dfn, UNIT, target=UNIT, inverse_fn=inv,
                               n=n, name=f"mobius({lam:g})")


def parabolic(c: float, n: int = DEFAULT_NODE_COUNT) -> C1Map:
    """x -> x + c*x*(1-x); Df(0)=1+c, Df(1)=1-c; needs |c| < 1."""
    if abs(c) >= 1:
        raise BuilderError(f"parabolic parameter must satisfy |c| < 1, got {c}")

    def fn(x):
        x = np.asarray(x, dtype=float)
        return x + c * x * (1.0 - x)

    def dfn(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + c * (1.0 - 2.0 * x)

    def inv(y):
        y = np.asarray(y, dtype=float)
        if c == 0:
            return y
        disc = (1.0 + c) ** 2 - 4.0 * c * y
        return 2.0 * y / (1.0 + c + np.sqrt(np.maximum(disc, 0.0)))

    return C1Map.from_callable(fn, dfn, UNIT, target=UNIT, inverse_fn=inv,
                               n=n, name=f"parabolic({c:g})")


# -- vector fields and flows -------------------------------------------

_FIELDS = {}


def register_field(name: str, field, dfield):
    _FIELDS[name] = (field, dfield)


def _quadratic_field(c):
    return (lambda x: c * x * (1.0 - x),
            lambda x: c * (1.0 - 2.0 * np.asarray(x, float)))


def _cubic_field(c):
    # vanishes to second order at both ends: parabolic time-t maps
    return (lambda x: c * (x * (1.0 - x)) ** 2,
            lambda x: 2.0 * c * x * (1.0 - x) * (1.0 - 2.0 * np.asarray(x, float)))


def named_field(name: str, c: float):
    if name == "quadratic":
        return _quadratic_field(c)
    if name == "cubic":
        return _cubic_field(c)
    if name in _FIELDS:
        f, df = _FIELDS[name]
        return (lambda x: c * np.asarray(f(x), float),
                lambda x: c * np.asarray(df(x), float))
    raise BuilderError(f"unknown vector field {name!r}")


def flow(field, dfield, t: float, domain: Interval = UNIT,
         n: int = DEFAULT_NODE_COUNT, steps: int = 64) -> C1Map:
    """Time-t map of a C1 vector field vanishing at the domain endpoints.

    Fixed-step RK4 on the field and its variational equation, so values
    and derivatives are integrated jointly.
    """
    def advance(x0):
        x = np.array(x0, dtype=float, copy=True)
        v = np.ones_like(x)
        h = t / steps

        def rhs(xx, vv):
            return np.asarray(field(xx), float), np.asarray(dfield(xx), float) * vv

        for _ in range(steps):
            k1x, k1v = rhs(x, v)
            k2x, k2v = rhs(x + 0.5 * h * k1x, v + 0.5 * h * k1v)
            k3x, k3v = rhs(x + 0.5 * h * k2x, v + 0.5 * h * k2v)
            k4x, k4v = rhs(x + h * k3x, v + h * k3v)
            x = x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
            v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
            x = domain.clip(x)
        return x, v

    def fn(x):
        return advance(np.asarray(x, dtype=float))[0]

    def dfn(x):
        return advance(np.asarray(x, dtype=float))[1]

    out = C1Map.from_callable(fn, dfn, domain, target=domain,
                              n=n, name=f"flow(t={t:g})")
    out.values[0], out.values[-1] = domain.lo, domain.hi
    return out


def convex_blend(f: C1Map, g: C1Map, s: float) -> C1Map:
    """(1-s) f + s g; exact formula blend, monotone for monotone inputs."""
    if not (0.0 <= s <= 1.0):
        raise BuilderError(f"blend parameter must be in [0,1], got {s}")
    if abs(f.domain.lo - g.domain.lo) > 1e-12 or abs(f.domain.hi - g.domain.hi) > 1e-12:
        raise BuilderError("blend requires a common domain")
    nodes = np.unique(np.concatenate([f.nodes, g.nodes]))
    fn = dfn = None
    if f.has_formula and g.has_formula:
        ff, fdf = f._fn, f._dfn
        gf, gdf = g._fn, g._dfn
        fn = lambda x: (1.0 - s) * np.asarray(ff(x), float) + s * np.asarray(gf(x), float)
        dfn = lambda x: (1.0 - s) * np.asarray(fdf(x), float) + s * np.asarray(gdf(x), float)
    values = (1.0 - s) * f(nodes) + s * g(nodes)
    derivs = (1.0 - s) * f.deriv(nodes) + s * g.deriv(nodes)
    if np.any(derivs <= 0):
        raise BuilderError("blend produced a non-monotone map")
    tgt = Interval(min(f.target.lo, g.target.lo) if abs(f.target.lo - g.target.lo) > 0 else f.target.lo,
                   max(f.target.hi, g.target.hi)) if False else f.target
    return C1Map(f.domain, nodes, values, derivs, target=tgt, fn=fn, dfn=dfn,
                 name=f"blend({f.name},{g.name},{s:g})")


def _smooth_bump(center: float, halfwidth: float):
    """C1 bump w with support [center-h, center+h], w(center)=1, max|Dw| = 2/h.

    Quartic (1-u^2)^2 profile: w and Dw vanish at the support boundary.
    """
    h = halfwidth

    def w(x):
        u = (np.asarray(x, dtype=float) - center) / h
        out = np.where(np.abs(u) < 1.0, (1.0 - u ** 2) ** 2, 0.0)
        return out

    def dw(x):
        u = (np.asarray(x, dtype=float) - center) / h
        return np.where(np.abs(u) < 1.0, -4.0 * u * (1.0 - u ** 2) / h, 0.0)

    return w, dw


_BUMP_MAX_SLOPE = 3.0 / np.sqrt(3.0) * (4.0 / 3.0) / 2.0  # max of |4u(1-u^2)| on [0,1] is 16/(3*sqrt(3)) / ... computed numerically below


def _bump_slope_unit() -> float:
    u = np.linspace(-1, 1, 20001)
    return float(np.max(np.abs(-4.0 * u * (1.0 - u ** 2))))


_BUMP_SLOPE_UNIT = _bump_slope_unit()  # ~1.5396


def signed_bumps(breakpoints, signs, amplitude: float = 0.5,
                 n: int = DEFAULT_NODE_COUNT, domain: Interval = UNIT) -> C1Map:
    """id + one signed bump per consecutive breakpoint pair.

    Breakpoints become parabolic fixed points; on the i-th gap f-id has
    the prescribed sign.  Amplitudes scale with the gap width (and with
    `amplitude`) and are capped so the map stays a diffeomorphism.
    """
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
        raise BuilderError("breakpoints must be strictly increasing, >= 2 of them")
    if bp[0] < domain.lo - 1e-12 or bp[-1] > domain.hi + 1e-12:
        raise BuilderError("breakpoints must lie inside the domain")
    signs = list(signs)
    if len(signs) != bp.size - 1:
        raise BuilderError("need one sign per breakpoint gap")
    if not (0 < amplitude < 1):
        raise BuilderError("amplitude must be in (0,1)")
    bumps = []
    for i, s in enumerate(signs):
        s = int(s)
        if s not in (-1, 0, 1):
            raise BuilderError(f"signs must be -1, 0 or +1, got {s}")
        if s == 0:
            continue
        lo, hi = bp[i], bp[i + 1]
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        # cap keeps 1 + D(amp*w) > 0 with margin
        amp = s * min(amplitude * half * 0.5, 0.8 * half / _BUMP_SLOPE_UNIT)
        w, dw = _smooth_bump(center, half)
        bumps.append((amp, w, dw))

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = x.astype(float).copy()
        for amp, w, _ in bumps:
            out = out + amp * w(x)
        return out

    def dfn(x):
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for amp, _, dw in bumps:
            out = out + amp * dw(x)
        return out

    per_gap = [np.linspace(bp[i], bp[i + 1], 129) for i in range(bp.size - 1)
               if signs[i] != 0]
    nodes = np.unique(np.concatenate([geometric_grid(domain, n), bp] + per_gap))
    from .core import dedupe_grid
    return C1Map.from_callable(fn, dfn, domain, target=domain,
                               nodes=dedupe_grid(nodes), name="signed_bumps")


def perturb_interior(f: C1Map, size: float = 0.05, center: float = 0.5,
                     halfwidth: float = 0.3, mode: str = "compose") -> C1Map:
    """Endpoint-derivative-preserving interior perturbation of f.

    Builds psi = id + a*w with compactly supported w and `size` equal to
    the C1 norm of psi - id, then returns f o psi ("compose" mode) or
    f + a*w ("add" mode).  The support stays inside the open interval, so
    values and derivatives of f at the endpoints are untouched.
    """
    dom = f.domain
    if not (dom.lo < center - halfwidth and center + halfwidth < dom.hi):
        raise BuilderError("perturbation support must be interior")
    if size <= 0:
        raise BuilderError("size must be positive")
    w, dw = _smooth_bump(center, halfwidth)
    # C1 norm of a*w is |a| * (1 + slope_unit/halfwidth); solve for a
    a = size / (1.0 + _BUMP_SLOPE_UNIT / halfwidth)
    if abs(a) * _BUMP_SLOPE_UNIT / halfwidth >= 0.9:
        raise BuilderError("perturbation too large for monotonicity")

    def pfn(x):
        x = np.asarray(x, dtype=float)
        return x + a * w(x)

    def pdfn(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + a * dw(x)

    psi = C1Map.from_callable(pfn, pdfn, dom, target=dom,
                              nodes=np.unique(np.concatenate(
                                  [f.nodes,
                                   np.linspace(center - halfwidth, center + halfwidth, 129)])),
                              name=f"psi({size:g})")
    if mode == "compose":
        return compose(f, psi)
    if mode == "add":
        nodes = psi.nodes
        vals = f(nodes) + a * w(nodes)
        ders = f.deriv(nodes) + a * dw(nodes)
        if np.any(ders <= 0):
            raise BuilderError("additive perturbation broke monotonicity")
        fn = dfn = None
        if f.has_formula:
            ff, fdf = f._fn, f._dfn
            fn = lambda x: np.asarray(ff(x), float) + a * w(x)
            dfn = lambda x: np.asarray(fdf(x), float) + a * dw(x)
        return C1Map(dom, nodes, vals, ders, target=f.target, fn=fn, dfn=dfn,
                     name=f"{f.name}+bump")
    raise BuilderError(f"unknown perturbation mode {mode!r}")


def antisymmetric_orbit_perturbation(f: C1Map, size: float, anchor: float) -> C1Map:
    """f o psi where psi = id + a*(w0 - w1 o f-ish): two opposite bumps.

    The two bumps sit on consecutive fundamental domains of f with equal
    and opposite log-derivative mass, so the induced conjugacy invariants
    stay close to trivial while ||psi - id||_1 = size.
    """
    x0 = anchor
    x1 = float(f(x0))
    x2 = float(f(x1))
    h0 = 0.4 * (x1 - x0)
    h1 = 0.4 * (x2 - x1)
    c0 = 0.5 * (x0 + x1)
    c1 = 0.5 * (x1 + x2)
    w0, dw0 = _smooth_bump(c0, h0)
    w1, dw1 = _smooth_bump(c1, h1)
    slope = _BUMP_SLOPE_UNIT * (1.0 / h0 + 1.0 / h1)
    a = size / (1.0 + slope)

    def pfn(x):
        x = np.asarray(x, dtype=float)
        return x + a * (w0(x) * h0 / h0 - w1(x))

    def pdfn(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + a * (dw0(x) - dw1(x))

    dom = f.domain
    nodes = np.unique(np.concatenate([
        f.nodes, np.linspace(x0, x2, 257)]))
    psi = C1Map.from_callable(pfn, pdfn, dom, target=dom, nodes=nodes,
                              name="orbit-psi")
    return compose(f, psi)


# -- the prefix DSL -----------------------------------------------------


def _tokenize(text: str):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def _parse_tokens(tokens):
    if not tokens:
        raise BuilderError("unexpected end of builder expression")
    tok = tokens.pop(0)
    if tok == "(":
        expr = []
        while tokens and tokens[0] != ")":
            expr.append(_parse_tokens(tokens))
        if not tokens:
            raise BuilderError("missing ')' in builder expression")
        tokens.pop(0)
        return expr
    if tok == ")":
        raise BuilderError("unexpected ')'")
    try:
        return float(tok)
    except ValueError:
        return tok


def parse_builder(text: str):
    """Parse a prefix-notation builder expression into a nested list."""
    tokens = _tokenize(text)
    expr = _parse_tokens(tokens)
    if tokens:
        raise BuilderError(f"trailing tokens in builder expression: {tokens}")
    return expr


def from_builder(spec, n: int = DEFAULT_NODE_COUNT) -> C1Map:
    """Build a C1Map from a builder expression.

    Accepts either the text DSL, e.g. "(mobius 2)", "(blend (mobius 2)
    (parabolic 0.3) 0.5)", or the parsed nested-list form.
    """
    if isinstance(spec, str):
        spec = parse_builder(spec)
    if isinstance(spec, float):
        raise BuilderError(f"a bare number is not a builder: {spec}")
    if isinstance(spec, list):
        if not spec:
            raise BuilderError("empty builder expression")
        head, *args = spec
    else:
        head, args = spec, []
    if head == "identity" or head == "id":
        return identity(n=n)
    if head == "mobius":
        _need(args, 1, "mobius")
        return mobius(float(args[0]), n=n)
    if head == "parabolic":
        _need(args, 1, "parabolic")
        return parabolic(float(args[0]), n=n)
    if head == "flow":
        if len(args) == 3:
            name, c, t = args
            field, dfield = named_field(str(name), float(c))
            return flow(field, dfield, float(t), n=n)
        raise BuilderError("flow needs (flow <field-name> <strength> <time>)")
    if head in ("blend", "convex_blend"):
        _need(args, 3, "blend")
        return convex_blend(from_builder(args[0], n=n), from_builder(args[1], n=n),
                            float(args[2]))
    if head == "compose":
        _need(args, 2, "compose")
        return compose(from_builder(args[0], n=n), from_builder(args[1], n=n))
    if head == "invert":
        _need(args, 1, "invert")
        return invert(from_builder(args[0], n=n))
    if head == "signed_bumps":
        _need(args, 3, "signed_bumps")
        bps, sgns, amp = args
        return signed_bumps([float(b) for b in bps], [int(s) for s in sgns],
                            float(amp), n=n)
    if head in ("perturb", "perturb_interior"):
        if len(args) == 2:
            return perturb_interior(from_builder(args[0], n=n), float(args[1]))
        if len(args) == 4:
            return perturb_interior(from_builder(args[0], n=n), float(args[1]),
                                    center=float(args[2]), halfwidth=float(args[3]))
        raise BuilderError("perturb needs (perturb <map> <size> [center halfwidth])")
    raise BuilderError(f"unknown builder {head!r}")


def _need(args, count, name):
    if len(args) != count:
        raise BuilderError(f"{name} needs {count} argument(s), got {len(args)}")


def classeconj_interior_waves(n_waves: int = 8, amplitude: float = 0.4,
                              side: str = "zero") -> C1Map:
    """Alternating-wave map with fixed points at 1/k (or mirrored at 1-1/k).

    Sign of f-id is negative on (1/(2m), 1/(2m-1)) and positive on
    (1/(2m+1), 1/(2m)); with `side="both"` the same pattern is mirrored
    at 1 and a positive middle block is kept, giving a two-sided
    accumulation pattern.  Wave amplitudes decay with the gap width, so
    deep waves fall under any fixed observation threshold.
    """
    if side == "zero":
        bps = [1.0 / k for k in range(n_waves + 1, 0, -1)]
        signs = []
        for k in range(n_waves, 0, -1):
            # gap (1/(k+1), 1/k): positive if k even, negative if k odd
            signs.append(1 if k % 2 == 0 else -1)
        bps = [0.0] + bps if bps[0] > 0 else bps
        signs = [0] + signs
        return signed_bumps(bps, signs, amplitude)
    if side == "both":
        left = [1.0 / k for k in range(n_waves + 1, 2, -1)]
        right = [1.0 - 1.0 / k for k in range(3, n_waves + 2)]
        bps = [0.0] + left + right + [1.0]
        signs = [0]
        for k in range(n_waves, 2, -1):
            signs.append(1 if k % 2 == 0 else -1)
        signs.append(1)  # middle block (1/3, 2/3)
        for k in range(3, n_waves + 1):
            signs.append(-1 if k % 2 == 1 else 1)
        signs.append(0)
        return signed_bumps(bps, signs, amplitude)
    raise BuilderError(f"unknown side {side!r}")
