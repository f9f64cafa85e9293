"""Gluing lemmas: coincidence zones, margins, quantitative closeness."""

import numpy as np
import pytest

import diffeolab as dl
from diffeolab.builders import perturb_interior
from diffeolab.gluing import (
    DEFAULT_PROFILE,
    GlueReport,
    bump,
    coincides_on,
    glue_endpoints,
    glue_endpoints_path,
    glue_local,
    glue_partial,
    in_U,
    marg,
    restricted_c1_norm,
)
from diffeolab.errors import DomainError, MarginError, MatchingError


def test_bump_profile_flat_zones():
    assert float(bump(DEFAULT_PROFILE, 0.25)) == 1.0
    assert float(bump(DEFAULT_PROFILE, 0.0)) == 1.0
    assert float(bump(DEFAULT_PROFILE, 0.5)) == 1.0
    assert float(bump(DEFAULT_PROFILE, 1.0)) == 0.0
    assert float(bump(DEFAULT_PROFILE, 0.8)) == 0.0
    mid = float(bump(DEFAULT_PROFILE, 0.625))
    assert 0.0 < mid < 1.0


def test_bump_profile_monotone_and_slope():
    xs = np.linspace(0, 1, 2001)
    vals = bump(DEFAULT_PROFILE, xs)
    assert np.all(np.diff(vals) <= 1e-15)
    assert DEFAULT_PROFILE.m_phi > 1.0
    # quintic smoothstep over width 1/4 has max slope 1.875/0.25 = 7.5
    assert DEFAULT_PROFILE.m_phi == pytest.approx(7.5, rel=1e-3)


def test_marg_formula():
    # explicit m_phi as in the worked example: min(0.5, 1/8) = 0.125
    assert marg(1.0, m_phi=2.0) == pytest.approx(0.125)
    assert marg(1.0) == pytest.approx(min(0.5, 1.0 / (4 * DEFAULT_PROFILE.m_phi)))


def test_marg_below_half_eps_and_monotone():
    for eps in [0.01, 0.1, 1.0, 3.0]:
        assert marg(eps) < eps / 2
    assert marg(0.1) < marg(0.2) < marg(0.5)
    with pytest.raises(DomainError):
        marg(-1.0)


def test_in_U_cases():
    f = dl.mobius(2)
    assert in_U(f, f, 1e-9, 0.2, 0.8)
    g = perturb_interior(f, 0.05, center=0.5, halfwidth=0.2)
    # perturbation supported in [0.3, 0.7]: restriction zones untouched
    assert in_U(f, g, 1e-9, 0.25, 0.75)
    # a large bump leaking past a: restricted norm sees it
    h = perturb_interior(f, 0.3, center=0.3, halfwidth=0.25)
    assert not in_U(f, h, 0.01, 0.4, 0.9)


def test_glue_endpoints_equal_maps():
    g = dl.mobius(2)
    rep = glue_endpoints(g, g, 0.3, 0.7, 0.1)
    assert rep.achieved_distance == pytest.approx(0.0, abs=1e-14)
    for zone, src in rep.coincidence_zones:
        assert coincides_on(rep.result, g, zone)


def test_glue_endpoints_degenerate_a_ge_b():
    f = dl.mobius(2)
    g = perturb_interior(f, 1e-4)
    rep = glue_endpoints(f, g, 0.8, 0.4, 0.1)
    # per the degenerate branch the result is f itself
    assert rep.result is f
    assert rep.achieved_distance < 0.1


def test_glue_endpoints_perturbed_mobius():
    eps = 0.05
    f = dl.mobius(2)
    g = perturb_interior(f, 0.03, center=0.5, halfwidth=0.15)
    rep = glue_endpoints(f, g, 0.2, 0.8, eps)
    assert rep.achieved_distance < eps
    assert coincides_on(rep.result, f, dl.Interval(0.0, 0.1))
    assert coincides_on(rep.result, f, dl.Interval(0.9, 1.0))
    assert coincides_on(rep.result, g, dl.Interval(0.2, 0.8))
    # direct norm cross-check
    assert dl.c1_distance(rep.result, g) == pytest.approx(rep.achieved_distance)


def test_glue_endpoints_margin_error_carries_measurements():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.2, center=0.25, halfwidth=0.2)
    with pytest.raises(MarginError) as err:
        glue_endpoints(f, g, 0.4, 0.8, 1e-4)
    assert "norm_0_a" in err.value.measured


def test_glue_partial_equal_maps():
    g = dl.mobius(2)
    rep = glue_partial(g, g, 0.2, 0.7, 0.1)
    assert rep.achieved_distance == pytest.approx(0.0, abs=1e-14)


def test_glue_partial_small_shift():
    eps = 0.08
    g = dl.mobius(2)
    # f close to g on [a,1], differing by an interior-supported shift
    f = perturb_interior(g, 0.9 * marg(eps) * 0.5, center=0.75, halfwidth=0.12)
    a, b = 0.2, 0.8
    rep = glue_partial(f, g, a, b, eps)
    mid = 0.5 * (a + 1.0)
    assert coincides_on(rep.result, f, dl.Interval(mid, b))
    assert coincides_on(rep.result, g, dl.Interval(0.0, a))
    assert coincides_on(rep.result, g, dl.Interval(0.5 * (b + 1.0), 1.0))
    assert rep.achieved_distance < eps


def test_glue_partial_contract_violation():
    g = dl.mobius(2)
    with pytest.raises(MarginError):
        glue_partial(g, g, 0.5, 0.6, 0.1)  # b <= (a+1)/2


def test_glue_local_equal_maps():
    g = dl.parabolic(0.3)
    rep = glue_local(g, g, 0.5, 0.1, 0.1)
    assert rep.achieved_distance == pytest.approx(0.0, abs=1e-14)


def test_glue_local_second_order_bump():
    eps = 0.05
    g = dl.mobius(2)
    x0, eta = 0.5, 0.08
    # perturbation vanishing (to second order) at x0, supported inside the window
    f = perturb_interior(g, 0.9 * marg(eps) * 0.4, center=x0 + eta, halfwidth=0.5 * eta)
    assert abs(float(f(x0)) - float(g(x0))) < 1e-12
    rep = glue_local(f, g, x0, eta, eps)
    assert coincides_on(rep.result, f, dl.Interval(x0 - eta, x0 + eta))
    assert coincides_on(rep.result, g, dl.Interval(0.0, x0 - 2 * eta))
    assert coincides_on(rep.result, g, dl.Interval(x0 + 2 * eta, 1.0))
    assert rep.achieved_distance < eps


def test_glue_local_eta_too_large():
    g = dl.mobius(2)
    with pytest.raises(MarginError):
        glue_local(g, g, 0.2, 0.15, 0.1)  # eta >= x0/2


def test_glue_local_matching_error():
    g = dl.mobius(2)
    f = perturb_interior(g, 0.001, center=0.5, halfwidth=0.2)
    assert abs(float(f(0.5)) - float(g(0.5))) > 1e-9
    with pytest.raises(MatchingError):
        glue_local(f, g, 0.5, 0.05, 0.5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_glue_endpoints_randomized_instances(seed):
    rng = np.random.default_rng(seed)
    for _ in range(5):
        lam = float(rng.uniform(0.5, 3.0))
        f = dl.mobius(lam) if rng.random() < 0.5 else dl.parabolic(float(rng.uniform(-0.6, 0.6)))
        eps = float(rng.uniform(0.02, 0.3))
        a = float(rng.uniform(0.15, 0.4))
        b = float(rng.uniform(0.6, 0.85))
        size = 0.8 * eps * float(rng.uniform(0.1, 1.0))
        center = 0.5 * (a + b)
        half = 0.45 * (b - a)
        g = perturb_interior(f, size, center=center, halfwidth=half)
        assert in_U(f, g, 0.9 * marg(eps), a, b)
        rep = glue_endpoints(f, g, a, b, eps)
        assert rep.achieved_distance < eps
        assert coincides_on(rep.result, f, dl.Interval(0.0, a / 2))
        assert coincides_on(rep.result, g, dl.Interval(a, b))


def test_glue_path_continuity():
    f = dl.mobius(2)
    ts = np.linspace(0.0, 1.0, 6)
    path = [perturb_interior(f, 0.001 + 0.01 * t, center=0.5, halfwidth=0.2)
            for t in ts]
    eps = [0.1] * len(ts)
    reports, ratio = glue_endpoints_path(f, path, [0.25] * 6, [0.75] * 6, eps)
    assert all(r.achieved_distance < 0.1 for r in reports)
    assert np.isfinite(ratio) and ratio >= 0
    # consecutive outputs move proportionally to consecutive inputs
    assert ratio < 50.0


def test_report_serializable():
    g = dl.mobius(2)
    rep = glue_endpoints(g, g, 0.3, 0.7, 0.1)
    blob = rep.to_json()
    assert blob["achieved_distance"] == rep.achieved_distance
    assert isinstance(rep, GlueReport)


def test_restricted_norm_zero_for_equal():
    f = dl.mobius(2)
    assert restricted_c1_norm(f, f, dl.Interval(0.0, 0.5)) == 0.0
