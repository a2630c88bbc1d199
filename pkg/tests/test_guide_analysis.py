import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import trace_sector
from trackbilliard import guide_analysis as ga
from trackbilliard.tangent import sample_e1

PI = math.pi


def G(r, a=PI):
    return ga.NormalizedGuide(r, a)


def test_delta_examples():
    assert ga.delta(PI / 4, G(0.5)) == pytest.approx(PI / 4)
    assert ga.delta(PI / 2, G(0.37)) == pytest.approx(0.0, abs=1e-15)
    assert ga.delta(PI / 3, G(0.5)) == pytest.approx(PI / 3)


def test_delta_continuous_at_band_edges():
    g = G(0.6)
    bb = g.beta_bar
    for edge in (bb, PI - bb):
        lo, hi = ga.delta(edge - 1e-10, g), ga.delta(edge + 1e-10, g)
        # continuity of the half advance modulo the backward branch
        assert abs(math.remainder(hi - lo, PI)) < 1e-4


def test_delta_prime_examples():
    for r in (0.2, 0.4, 0.7, 0.95):
        assert ga.delta_prime(PI / 2, G(r)) == pytest.approx(1 - 1 / r, abs=1e-12)
    assert ga.delta_prime(PI / 2, G(0.4)) == pytest.approx(-1.5, abs=1e-12)
    assert ga.delta_prime(0.1, G(0.4)) == 1.0
    assert ga.delta_second(0.1, G(0.4)) == 0.0


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(1000):
        r = rng.uniform(0.1, 0.95)
        g = G(r)
        th = rng.uniform(0.01, PI - 0.01)
        bb = g.beta_bar
        if min(abs(th - bb), abs(th - PI + bb)) < 1e-3:
            continue
        fd1 = (ga.delta(th + h, g) - ga.delta(th - h, g)) / (2 * h)
        fd2 = (ga.delta_prime(th + h, g) - ga.delta_prime(th - h, g)) / (2 * h)
        d1, d2 = ga.delta_prime(th, g), ga.delta_second(th, g)
        assert abs(fd1 - d1) <= 1e-6 * max(1.0, abs(d1))
        assert abs(fd2 - d2) <= 1e-6 * max(1.0, abs(d2))


def test_delta_second_positive_on_lower_middle_band():
    g = G(0.55)
    for th in np.linspace(g.beta_bar + 1e-6, PI / 2 - 1e-6, 200):
        assert ga.delta_second(th, g) > 0


def test_singular_near_grazing_angles():
    g = G(0.5)
    with pytest.raises(ga.Singular):
        ga.delta_prime(g.beta_bar + 1e-13, g)
    with pytest.raises(ga.Singular):
        ga.delta_second(PI - g.beta_bar, g)


def test_advance_example():
    res = ga.advance(ga.GuideEntryState(0.1, PI / 4), G(0.5))
    assert res.n1 == 1 and res.inner_hits == 0
    assert res.exit_psi == pytest.approx(0.1 + PI / 2)
    assert res.exit_psi == pytest.approx(1.6708, abs=1e-4)
    assert res.theta == PI / 4


def test_advance_rejects_zero_advance():
    with pytest.raises(ga.NonpositiveAdvance):
        ga.advance(ga.GuideEntryState(0.1, PI / 2), G(0.5))


def sample_entries(rng, g, n):
    """Entering outer-circle states: the previous collision lies outside the sector."""
    out = []
    while len(out) < n:
        th = rng.uniform(0.01, PI - 0.01)
        if min(abs(th - g.beta_bar), abs(th - PI + g.beta_bar), abs(th - PI / 2)) < 1e-6:
            continue
        step = ga.signed_advance(th, g)
        back = abs(step) / 2 if ga.in_middle_band(th, g) else abs(step)
        u = rng.uniform(0, min(back, g.alpha))
        psi = u if step > 0 else g.alpha - u
        # skip states whose landing points are within 1e-8 of an edge (ambiguous exits)
        ks = np.arange(0, int(g.alpha / abs(step)) + 3)
        pts = psi + np.concatenate([ks * step, (ks + 0.5) * step])
        if np.min(np.minimum(np.abs(pts), np.abs(pts - g.alpha))) < 1e-8:
            continue
        out.append(ga.GuideEntryState(psi, th))
    return out


@pytest.mark.parametrize("r", [0.3, 0.6])
@pytest.mark.parametrize("a", [PI / 2, 3 * PI / 2])
def test_advance_matches_brute_force(r, a):
    g = G(r, a)
    for s in sample_entries(np.random.default_rng(4), g, 200):
        A, O = ga.advance(s, g), trace_sector(r, a, s.psi, s.theta)
        assert A.n1 == O["n1"]
        assert A.inner_hits == O["inner"]
        assert A.exit_on_inner == O["exit_on_inner"]
        assert abs(A.exit_psi - O["exit_psi"]) < 1e-9
        if not O["exit_on_inner"]:
            assert abs(O["theta_out"] - s.theta) < 1e-9


def test_chi_examples():
    g = G(0.4, PI)
    s = ga.GuideEntryState(0.05, 0.2)
    assert ga.chi(s, g) == pytest.approx(2 * ga.advance(s, g).n1)
    th = PI / 2 - 0.05
    g = G(0.4, 0.2)
    s = ga.GuideEntryState(0.01, th)
    assert ga.advance(s, g).n1 == 1
    assert ga.chi(s, g) == pytest.approx(2 * ga.delta_prime(th, g))
    # closed form: delta = theta - arccos(cos(theta)/r) in the middle band
    c = math.cos(th) / 0.4
    dp = 1 - (math.sin(th) / 0.4) / math.sqrt(1 - c * c)
    assert ga.chi(s, g) == pytest.approx(2 * dp, abs=1e-12)
    assert ga.chi(s, g) == pytest.approx(-3.0332, abs=1e-4)


def test_omega_examples():
    g = G(0.5, PI)
    s = ga.GuideEntryState(0.0, PI / 4)
    assert ga.advance(s, g).n1 == 2  # hits at pi/2 and pi
    s = ga.GuideEntryState(0.3, PI / 4)
    assert ga.advance(s, g).n1 == 1
    assert ga.omega(s, g) == pytest.approx(PI / 2)
    g = G(0.5, 0.3)
    assert ga.omega(ga.GuideEntryState(0.1, PI / 4), g) == pytest.approx(0.3)


def _c_oracle(r, alpha):
    """compute_c rebuilt from the closed-form half advance with a plain bisection."""
    d = lambda t: t - math.acos(math.cos(t) / r)
    dp = lambda t: 1 - (math.sin(t) / r) / math.sqrt(1 - (math.cos(t) / r) ** 2)
    lo, hi = math.acos(r) + 1e-15, PI / 2
    for _ in range(200):
        m = 0.5 * (lo + hi)
        lo, hi = (m, hi) if dp(m) < -1.5 else (lo, m)
    th = 0.5 * (lo + hi)
    return min(3.0, 2 * (alpha - 2 * abs(d(th))) / (PI - 2 * th))


def test_compute_c_examples():
    for r, a in [(1.75 / 2.25, PI), (0.6, PI), (0.9, 1.5 * PI), (0.7, 1.2 * PI)]:
        c = ga.compute_c(G(r, a))
        assert c > 2
        assert c == pytest.approx(_c_oracle(r, a), abs=1e-9)
    r = 0.7
    cs = [ga.compute_c(G(r, a)) for a in np.linspace(PI, 1.9 * PI, 10)]
    assert all(b >= a - 1e-12 for a, b in zip(cs, cs[1:]))
    with pytest.raises(ValueError):
        ga.compute_c(G(0.7, PI / 2))


def test_theta_hat_is_the_level_crossing():
    g = G(0.8)
    th = ga.theta_hat(g)
    assert g.beta_bar < th < PI / 2
    assert ga.delta_prime(th, g) == pytest.approx(-1.5, abs=1e-6)


def test_tau_bound_decreasing_in_c():
    zs = np.linspace(2.01, 50, 200)
    vals = [ga.tau_bound_from_c(z) for z in zs]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert ga.tau_bound_from_c(3.0) == 3.0


def test_transfer_map_closed_forms_on_e1():
    rng = np.random.default_rng(5)
    for g in (G(0.4, PI / 2), G(0.7, PI), G(0.3, 1.5 * PI)):
        for s in sample_e1(g, rng, 200):
            tm = ga.transfer_map(s, g)
            chi = ga.chi(s, g)
            sn = math.sin(s.theta)
            assert tm.det < 0
            other = sn / (1 + 2 / chi)
            hi, lo = (sn, other) if not ga.in_middle_band(s.theta, g) else (other, sn)
            # the map is composed bounce by bounce, so round-off grows with n1
            tol = 1e-9 * ga.advance(s, g).n1
            assert tm.tau1 == pytest.approx(hi, rel=tol, abs=tol)
            assert tm.tau2 == pytest.approx(lo, rel=tol, abs=tol)
            for f in (tm.tau1, tm.tau2):
                assert abs(tm(f) - f) <= 1e-9 * max(1.0, abs(f))


def test_transfer_map_example_arithmetic():
    assert math.sin(PI / 2 - 0.05) / (1 - 2 / 3) == pytest.approx(2.996, abs=1e-3)


def test_passage_matrix_e1_identity():
    rng = np.random.default_rng(6)
    for g in (G(0.4, PI / 2), G(0.75, PI)):
        for s in sample_e1(g, rng, 300):
            m00, m01, m10, m11 = ga.passage_matrix(s, g)[:4]
            n1 = ga.advance(s, g).n1
            target = 2 * n1 * ga.delta_prime(s.theta, g)
            tol = 1e-9 * n1
            assert abs(m00 - 1) < tol and abs(m10) < tol and abs(m11 - 1) < tol
            assert abs(m01 - target) <= tol * max(1.0, abs(target))


def test_focal_length_small_grid_respects_bound():
    g = G(0.4, PI / 2)
    fl = ga.focal_length(g, n_theta=200, n_psi=200)
    assert fl.bound == pytest.approx(3.0)
    assert fl.numeric <= fl.bound + 1e-9
    assert fl.numeric_e1 <= fl.numeric and fl.failures == 0


def test_neither_type_has_no_bound():
    with pytest.raises(ValueError):
        ga.c_tilde(G(0.9, PI / 2))


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.05, 0.95), th=st.floats(0.01, math.pi - 0.01))
def test_signed_advance_is_twice_delta_mod_2pi(r, th):
    g = G(r)
    assert abs(math.remainder(ga.signed_advance(th, g) - 2 * ga.delta(th, g), 2 * PI)) < 1e-12
