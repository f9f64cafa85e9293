"""Map representation and calculus: evaluation, composition, inversion, metric."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import diffeolab as dl
from diffeolab.builders import convex_blend, flow, named_field, signed_bumps
from diffeolab.core import renormalize_between, sample_grid
from diffeolab.errors import BuilderError, DomainError, InvarianceError


def test_eval_identity():
    f = dl.identity()
    v, d = dl.eval_c1(f, 0.3)
    assert v == pytest.approx(0.3, abs=1e-15)
    assert d == pytest.approx(1.0, abs=1e-15)


def test_eval_mobius_closed_form():
    # lam*x/(1+(lam-1)x) at x=0.5 gives 2/3, derivative lam/(1+(lam-1)x)^2 = 8/9
    f = dl.mobius(2)
    v, d = dl.eval_c1(f, 0.5)
    assert v == pytest.approx(2.0 / 3.0, abs=1e-14)
    assert d == pytest.approx(8.0 / 9.0, abs=1e-14)
    assert f.deriv(0.0) == pytest.approx(2.0)
    assert f.deriv(1.0) == pytest.approx(0.5)


def test_eval_node_collocation():
    f = dl.parabolic(0.3)
    for i in [0, 10, 100, -1]:
        x = f.nodes[i]
        v, d = dl.eval_c1(f, x)
        assert v == pytest.approx(f.values[i], abs=1e-15)
        assert d == pytest.approx(f.derivs[i], abs=1e-15)


def test_eval_outside_domain_raises():
    f = dl.identity()
    with pytest.raises(DomainError):
        f(1.5)


def test_compose_identity_node_exact():
    f = dl.mobius(2)
    c = dl.compose(f, dl.identity())
    x = c.nodes
    assert np.allclose(c(x), f(x), atol=1e-15)
    assert np.allclose(c.deriv(x), f.deriv(x), atol=1e-14)


def test_compose_mobius_group_law():
    c = dl.compose(dl.mobius(2), dl.mobius(3))
    assert dl.c1_distance(c, dl.mobius(6)) < 1e-10


def test_compose_with_inverse_is_identity():
    f = dl.parabolic(0.4)
    c = dl.compose(f, dl.invert(f))
    assert dl.c1_distance(c, dl.identity()) < 1e-9


def test_invert_identity():
    assert dl.c1_distance(dl.invert(dl.identity()), dl.identity()) < 1e-13


def test_invert_mobius_closed_form():
    assert dl.c1_distance(dl.invert(dl.mobius(2)), dl.mobius(0.5)) < 1e-12


def test_invert_involution():
    f = dl.parabolic(-0.5)
    assert dl.c1_distance(dl.invert(dl.invert(f)), f) < 2e-9


def test_inverse_point_roundtrip():
    f = signed_bumps([0.0, 0.5, 1.0], [1, -1], 0.4)
    xs = np.linspace(0.01, 0.99, 37)
    ys = f(xs)
    back = f.inverse_point(ys)
    assert np.max(np.abs(back - xs)) < 1e-11
    d_at = f.deriv(back)
    assert np.all(d_at > 0)


def test_conjugate_by_identity():
    f = dl.mobius(3)
    assert dl.c1_distance(dl.conjugate(f, dl.identity()), f) < 1e-12


def test_conjugate_identity_is_identity():
    h = dl.parabolic(0.6)
    assert dl.c1_distance(dl.conjugate(dl.identity(), h), dl.identity()) < 1e-9


def test_conjugate_commuting_mobius():
    # the one-parameter family commutes, so conjugation fixes its members
    c = dl.conjugate(dl.mobius(2), dl.mobius(3))
    assert dl.c1_distance(c, dl.mobius(2)) < 1e-9


def test_conjugacy_preserves_endpoint_derivatives():
    f = dl.mobius(2)
    h = dl.parabolic(0.5)
    c = dl.conjugate(f, h)
    assert c.deriv(0.0) == pytest.approx(2.0, abs=1e-6)
    assert c.deriv(1.0) == pytest.approx(0.5, abs=1e-6)


def test_conjugate_moves_fixed_points():
    f = signed_bumps([0.0, 0.5, 1.0], [1, -1], 0.4)
    h = dl.mobius(2)
    c = dl.conjugate(f, h)
    # fixed point 0.5 moves to h(0.5)=2/3 with the same derivative
    hx = 2.0 / 3.0
    assert float(c(hx)) == pytest.approx(hx, abs=1e-9)
    assert float(c.deriv(hx)) == pytest.approx(float(f.deriv(0.5)), abs=1e-6)


def test_c1_distance_self_zero():
    f = dl.mobius(2)
    assert dl.c1_distance(f, f) == 0.0


def test_c1_distance_parabolic_closed_form():
    # sup|c x(1-x)| = c/4 and sup|c(1-2x)| = c, total 1.25c
    c = 0.1
    d = dl.c1_distance(dl.identity(), dl.parabolic(c))
    assert d == pytest.approx(1.25 * c, rel=1e-6)


def test_c1_distance_symmetry():
    f, g = dl.mobius(2), dl.parabolic(0.3)
    assert dl.c1_distance(f, g) == pytest.approx(dl.c1_distance(g, f), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-0.8, 0.8), st.floats(0.3, 3.0))
def test_c1_distance_triangle_inequality(lam, c, lam2):
    f = dl.mobius(lam)
    g = dl.parabolic(c)
    h = dl.mobius(lam2)
    dfg = dl.c1_distance(f, g)
    dgh = dl.c1_distance(g, h)
    dfh = dl.c1_distance(f, h)
    assert dfh <= dfg + dgh + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-0.9, 0.9), st.floats(0.0, 1.0))
def test_monotonicity_of_builders(lam, c, s):
    f = convex_blend(dl.mobius(lam), dl.parabolic(c), s)
    grid = sample_grid(f)
    v = f(grid)
    assert np.all(np.diff(v) > 0)


def test_fixed_points_mobius():
    feats = dl.fixed_points(dl.mobius(2))
    pts = [ft for ft in feats if ft.kind == "point"]
    assert len(feats) == 2 and len(pts) == 2
    assert pts[0].location[0] == pytest.approx(0.0, abs=1e-9)
    assert pts[1].location[0] == pytest.approx(1.0, abs=1e-9)
    assert pts[0].right_sign == 1 and pts[1].left_sign == 1


def test_fixed_points_identity_plateau():
    feats = dl.fixed_points(dl.identity())
    assert len(feats) == 1
    assert feats[0].kind == "plateau"
    lo, hi = feats[0].location
    assert lo == pytest.approx(0.0) and hi == pytest.approx(1.0)


def test_fixed_points_two_bump():
    f = signed_bumps([0.0, 0.4, 1.0], [1, -1], 0.5)
    feats = dl.fixed_points(f)
    interior = [ft for ft in feats if ft.kind == "point"
                and 0.1 < ft.location[0] < 0.9]
    assert len(interior) == 1
    assert interior[0].location[0] == pytest.approx(0.4, abs=1e-6)
    assert interior[0].left_sign == 1 and interior[0].right_sign == -1


def test_builder_identity_cases():
    assert dl.c1_distance(dl.mobius(1), dl.identity()) < 1e-13
    f, g = dl.mobius(2), dl.parabolic(0.2)
    assert dl.c1_distance(convex_blend(f, g, 0.0), f) < 1e-13
    assert dl.c1_distance(convex_blend(f, g, 1.0), g) < 1e-13


def test_builder_errors():
    with pytest.raises(BuilderError):
        dl.mobius(-1)
    with pytest.raises(BuilderError):
        dl.parabolic(1.5)
    with pytest.raises(BuilderError):
        convex_blend(dl.mobius(2), dl.parabolic(0.2), 1.5)


def test_builder_dsl():
    f = dl.from_builder("(mobius 2)")
    assert dl.c1_distance(f, dl.mobius(2)) == 0.0
    g = dl.from_builder("(blend (mobius 2) (parabolic 0.3) 0.5)")
    assert dl.c1_distance(g, convex_blend(dl.mobius(2), dl.parabolic(0.3), 0.5)) < 1e-14
    h = dl.from_builder("(compose (mobius 2) (invert (mobius 2)))")
    assert dl.c1_distance(h, dl.identity()) < 1e-10
    with pytest.raises(BuilderError):
        dl.from_builder("(unknown 1)")
    with pytest.raises(BuilderError):
        dl.from_builder("(mobius 2")


def test_signed_bumps_classeconj_pattern():
    # truncated alternating pattern: fixed points at 1/k, k=1..4
    bps = [0.0, 0.25, 1.0 / 3.0, 0.5, 1.0]
    signs = [0, 1, -1, -1]
    f = signed_bumps(bps, signs, 0.4)
    for bp in bps[1:-1]:
        assert float(f(bp)) == pytest.approx(bp, abs=1e-12)
    assert float(f(0.29)) > 0.29
    assert float(f(0.4)) < 0.4
    assert float(f(0.7)) < 0.7
    assert float(f(0.1)) == pytest.approx(0.1, abs=1e-12)


def test_flow_time_additivity():
    field, dfield = named_field("quadratic", 1.0)
    f1 = flow(field, dfield, 0.3)
    f2 = flow(field, dfield, 0.6)
    c = dl.compose(f1, f1)
    assert dl.c1_distance(c, f2) < 1e-7


def test_flow_quadratic_matches_mobius():
    # the field x(1-x) integrates to the mobius family: time t -> mobius(e^t)
    field, dfield = named_field("quadratic", 1.0)
    f = flow(field, dfield, np.log(2.0))
    assert dl.c1_distance(f, dl.mobius(2)) < 1e-8


def test_affine_renormalize_identity():
    r = dl.affine_renormalize(dl.identity(), dl.Interval(0.2, 0.7))
    assert dl.c1_distance(r, dl.identity()) < 1e-12


def test_affine_renormalize_roundtrip_and_derivs():
    f = signed_bumps([0.0, 0.5, 1.0], [1, -1], 0.4)
    sub = dl.Interval(0.0, 0.5)
    r = dl.affine_renormalize(f, sub)
    # affine conjugacy preserves derivative values pointwise
    xs = np.linspace(0, 1, 101)
    assert np.max(np.abs(r.deriv(xs) - f.deriv(sub.lo + xs * sub.width))) < 1e-8
    sup_r = np.max(np.abs(r.deriv(xs) - 1.0))
    sup_f = np.max(np.abs(f.deriv(np.linspace(sub.lo, sub.hi, 101)) - 1.0))
    assert sup_r == pytest.approx(sup_f, abs=1e-8)


def test_affine_renormalize_invariance_error():
    with pytest.raises(InvarianceError):
        dl.affine_renormalize(dl.mobius(2), dl.Interval(0.2, 0.7))


def test_renormalize_between_charts():
    f = dl.mobius(0.5)
    sub = dl.Interval(0.25, 0.5)
    img = dl.Interval(float(f(0.25)), float(f(0.5)))
    r = renormalize_between(f, sub, img)
    assert float(r(0.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(r(1.0)) == pytest.approx(1.0, abs=1e-12)
    mid = float(r(0.5))
    expect = (float(f(0.375)) - img.lo) / img.width
    assert mid == pytest.approx(expect, abs=1e-10)


def test_serialization_roundtrip():
    f = signed_bumps([0.0, 0.3, 1.0], [1, -1], 0.3)
    blob = f.to_json_str()
    g = dl.C1Map.from_json(json.loads(json.dumps(json.loads(blob))))
    xs = np.linspace(0, 1, 57)
    assert np.max(np.abs(f(xs) - g(xs))) < 1e-9
    assert np.max(np.abs(f.deriv(xs) - g.deriv(xs))) < 5e-7


def test_flip_is_involution_and_conjugation():
    f = dl.mobius(2)
    ff = f.flip()
    assert dl.c1_distance(ff, dl.mobius(0.5)) < 1e-12
    assert dl.c1_distance(ff.flip(), f) < 1e-12


def test_orbit_and_iterate():
    f = dl.mobius(2)
    orb = f.orbit(0.1, 5)
    assert orb[0] == pytest.approx(0.1)
    assert np.all(np.diff(orb) > 0)
    assert f.iterate(0.1, 3) == pytest.approx(orb[3])
    assert f.iterate(orb[3], -3) == pytest.approx(0.1, abs=1e-11)


def test_interval_invariants():
    with pytest.raises(DomainError):
        dl.Interval(1.0, 0.0)
    with pytest.raises(DomainError):
        dl.Interval(0.0, np.inf)
