"""Unitary conjugacies, Mather invariants, translation numbers, delays."""

import numpy as np
import pytest

import diffeolab as dl
from diffeolab.builders import perturb_interior
from diffeolab.conjugacy import (
    CommutingRep,
    FundamentalDomain,
    coincidence_zones,
    delay,
    direction_of,
    mather_invariant,
    translation_number,
    unitary_conjugacy,
)
from diffeolab.errors import (
    CoincidenceZoneError,
    CommutationError,
    TruncationError,
)


def interior_conjugator(support=(0.2, 0.8), size=0.2):
    """A diffeomorphism equal to the identity outside the given support."""
    lo, hi = support
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    return perturb_interior(dl.identity(), size, center=center, halfwidth=half)


def ramp_to_power(f, k, rise=(0.3, 0.6)):
    """Diffeo equal to id near 0 and to f^k near 1 (monotone rising blend)."""
    lo, hi = rise
    fk = dl.identity()
    for _ in range(k):
        fk = dl.compose(f, fk)

    def w(x):
        x = np.asarray(x, dtype=float)
        t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return t * t * (3.0 - 2.0 * t)

    def dw(x):
        x = np.asarray(x, dtype=float)
        t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        inside = (x > lo) & (x < hi)
        return np.where(inside, 6.0 * t * (1.0 - t) / (hi - lo), 0.0)

    def fn(x):
        x = np.asarray(x, dtype=float)
        return (1.0 - w(x)) * x + w(x) * np.asarray(fk(x), float)

    def dfn(x):
        x = np.asarray(x, dtype=float)
        return ((1.0 - w(x)) + w(x) * np.asarray(fk.deriv(x), float)
                + dw(x) * (np.asarray(fk(x), float) - x))

    nodes = np.unique(np.concatenate([fk.nodes, np.linspace(lo, hi, 201)]))
    return dl.C1Map.from_callable(fn, dfn, dl.UNIT, target=dl.UNIT, nodes=nodes,
                                  name=f"ramp_to_f^{k}")


def test_direction_of():
    assert direction_of(dl.mobius(2)) == 1
    assert direction_of(dl.mobius(0.5)) == -1
    with pytest.raises(CoincidenceZoneError):
        direction_of(dl.identity())


def test_fundamental_domain_normalization():
    f = dl.mobius(2)
    fd = FundamentalDomain.at(f, 0.3)
    assert fd.base == pytest.approx(0.3) and not fd.flipped
    g = dl.mobius(0.5)
    fd2 = FundamentalDomain.at(g, 0.3)
    assert fd2.flipped and fd2.base < fd2.image
    assert fd2.image == pytest.approx(0.3)


def test_coincidence_zones_detection():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.02, center=0.5, halfwidth=0.2)
    a_pt, b_pt = coincidence_zones(f, g)
    assert 0.25 <= a_pt <= 0.32
    assert 0.68 <= b_pt <= 0.75
    with pytest.raises(CoincidenceZoneError):
        coincidence_zones(dl.mobius(2), dl.mobius(3))


def test_unitary_conjugacy_of_equal_maps_is_identity():
    f = dl.mobius(2)
    h = unitary_conjugacy(f, f)
    xs = np.linspace(h.domain.lo, h.domain.hi, 101)
    assert np.max(np.abs(h(xs) - xs)) < 1e-12
    assert np.max(np.abs(h.deriv(xs) - 1.0)) < 1e-12


def test_unitary_conjugacy_recovers_conjugator():
    # g = phi f phi^-1 with phi = id near both ends: h_g must equal phi
    f = dl.mobius(2)
    phi = interior_conjugator(support=(0.25, 0.75), size=0.1)
    g = dl.conjugate(f, phi, exact=True)
    h = unitary_conjugacy(f, g, eval_interval=dl.Interval(0.05, 0.9))
    xs = np.linspace(0.05, 0.9, 121)
    assert np.max(np.abs(h(xs) - phi(xs))) < 1e-6


def test_unitary_conjugacy_commutation_residual():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.05, center=0.5, halfwidth=0.2)
    h = unitary_conjugacy(f, g, eval_interval=dl.Interval(0.05, 0.85))
    xs = np.linspace(0.06, float(f.inverse_point(0.85)) - 0.01, 81)
    resid = np.max(np.abs(h(f(xs)) - g(h(xs))))
    assert resid < 1e-8


def test_unitary_conjugacy_base_point_uniqueness():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.05, center=0.55, halfwidth=0.15)
    a_pt, _ = coincidence_zones(f, g)
    x0a = float(f.inverse_point(f.inverse_point(a_pt)))
    x0b = float(f.inverse_point(x0a))  # deeper base point, still admissible
    ha = unitary_conjugacy(f, g, x0=x0a, eval_interval=dl.Interval(0.3, 0.8))
    hb = unitary_conjugacy(f, g, x0=x0b, eval_interval=dl.Interval(0.3, 0.8))
    xs = np.linspace(0.3, 0.8, 101)
    assert np.max(np.abs(ha(xs) - hb(xs))) < 1e-9


def test_unitary_conjugacy_truncation_error():
    f = dl.mobius(2)
    with pytest.raises(TruncationError):
        unitary_conjugacy(f, f, eval_interval=dl.Interval(0.5, 1.0))


def test_mather_invariant_of_equal_maps():
    f = dl.mobius(2)
    rep = mather_invariant(f, f)
    assert rep.shift == 0
    xs = np.linspace(0.2, 0.9, 41)
    vals = rep(xs)
    assert np.max(np.abs(vals - xs)) < 1e-10


def test_mather_invariant_commutation_residual():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.05, center=0.5, halfwidth=0.2)
    rep = mather_invariant(f, g)
    resid = rep.commutation_residual(f, g, n_domains=3)
    assert resid < 1e-6


def test_mather_monotone_in_upward_perturbation():
    f = dl.mobius(2)
    g = perturb_interior(f, 0.03, center=0.5, halfwidth=0.22)
    g2 = perturb_interior(g, 0.04, center=0.5, halfwidth=0.25, mode="add")
    # g2 >= g with a strict gap on a wide middle interval
    xs = np.linspace(0.05, 0.95, 101)
    assert np.all(g2(xs) >= g(xs) - 1e-15)
    strict = (xs > 0.3) & (xs < 0.7)
    assert np.all(g2(xs[strict]) > g(xs[strict]))
    m1 = mather_invariant(f, g)
    m2 = mather_invariant(f, g2)
    pts = np.linspace(0.15, 0.9, 100)
    v1 = m1(pts)
    v2 = m2(pts)
    assert np.all(v2 > v1)


def test_translation_number_identity_is_zero():
    f = dl.mobius(2)
    est, hw, info = translation_number(f, dl.identity(), 64)
    assert est == 0.0
    assert hw == pytest.approx(1.0 / 64)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_translation_number_of_power(k):
    f = dl.mobius(2)
    h = dl.identity()
    for _ in range(k):
        h = dl.compose(f, h)
    n = 256
    est, hw, info = translation_number(f, h, n)
    assert abs(est - k) <= hw + 1e-12
    assert info["spread"] < 2.0 / n + 1e-12


def test_translation_number_flow_time():
    # f is the time-log(2) map of x(1-x); mobius(2^s) is its time-s map
    f = dl.mobius(2)
    s = 0.3
    h = dl.mobius(2.0 ** s)
    n = 512
    est, hw, _ = translation_number(f, h, n)
    assert abs(est - s) <= hw + 1e-9


def test_translation_number_shift_invariance():
    f = dl.mobius(2)
    h = dl.mobius(2.0 ** 0.4)
    n = 128
    est1, _, _ = translation_number(f, h, n)
    est2, _, _ = translation_number(f, dl.compose(f, h), n)
    assert est2 == pytest.approx(est1 + 1.0, abs=1e-12)


def test_translation_number_rejects_noncommuting():
    f = dl.mobius(2)
    h = dl.parabolic(0.5)
    with pytest.raises(CommutationError):
        translation_number(f, h, 32)


def test_delay_of_equal_maps_is_zero():
    f = dl.mobius(2)
    d, report = delay(f, f)
    assert d == 0
    assert "n" in report


@pytest.mark.parametrize("k", [1, 2])
def test_delay_of_constructed_power(k):
    # conjugating f by a ramp equal to f^k near 1 forces the invariant f^k
    f = dl.mobius(2)
    h0 = ramp_to_power(f, k)
    g = dl.conjugate(f, h0, exact=True)
    d, report = delay(f, g)
    assert d == k
    assert report["n"] >= 64


def test_mather_of_constructed_power_matches():
    f = dl.mobius(2)
    h0 = ramp_to_power(f, 1)
    g = dl.conjugate(f, h0, exact=True)
    rep = mather_invariant(f, g)
    xs = np.linspace(0.3, 0.85, 31)
    assert np.max(np.abs(rep(xs) - f(xs))) < 1e-6


def test_commuting_rep_serialization():
    f = dl.mobius(2)
    rep = mather_invariant(f, f)
    blob = rep.to_json()
    assert blob["shift"] == 0
    assert "germ" in blob
