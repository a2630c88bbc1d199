import math

import numpy as np
import pytest

from conftest import ring
from trackbilliard import _kernel as K
from trackbilliard import dynamics as dyn
from trackbilliard import guide_analysis as ga
from trackbilliard import tangent as tg
from trackbilliard.track_model import build_track

PI = math.pi


@pytest.fixture(scope="module")
def geo():
    return build_track(ring(2, 0.25, 6))


def _straight_s(geo):
    """Arclength on loop 0 of the middle of the first straight wall."""
    for i in geo.loop_walls(0):
        w = geo.walls[i]
        if not w.is_arc:
            return w.s_offset + 0.5 * w.length
    raise AssertionError


def test_state_invariants(geo):
    rng = dyn.make_rng(11)
    for _ in range(500):
        x = dyn.sample_mu(geo, rng, "any")
        w = geo.walls[x.wall]
        assert math.hypot(*np.subtract(w.point_at(x.s - w.s_offset), x.q)) < 1e-9
        t, n = w.tangent_at(x.q), w.normal_at(x.q)
        assert x.v[0] * t[0] + x.v[1] * t[1] == pytest.approx(math.cos(x.theta), abs=1e-9)
        assert x.v[0] * n[0] + x.v[1] * n[1] >= 0


def test_perpendicular_bounce_in_straight_guide(geo):
    x = dyn.state_from(geo, 0, _straight_s(geo), PI / 2)
    tr = dyn.orbit(x, geo, 6)
    assert tr.termination == "completed"
    assert tr.flights[1:] == pytest.approx([0.5] * 6, abs=1e-12)
    assert tr.states[2].q == pytest.approx(x.q, abs=1e-12)
    assert tr.states[1].loop != x.loop
    assert abs(tr.vstars[0]) < 1e-12


def test_outer_hits_advance_by_twice_delta(geo):
    g = ga.NormalizedGuide(1.75 / 2.25, PI)
    R1 = 2.25
    for th in (0.1, 0.3, 0.5):
        x = dyn.state_from(geo, 0, 0.1, th)
        y, _ = dyn.step(x, geo)
        assert y.guide == x.guide and y.loop == 0
        assert (y.s - x.s) / R1 == pytest.approx(2 * ga.delta(th, g), abs=1e-10)
        assert y.theta == pytest.approx(th, abs=1e-10)


def test_kernel_matches_python_step(geo):
    W = K.pack_walls(geo)
    rng = dyn.make_rng(12)
    for _ in range(2000):
        x = dyn.sample_mu(geo, rng, "any")
        try:
            y, t = dyn.step(x, geo)
        except dyn.StepError:
            continue
        st, w, qx, qy, vx, vy, th, s, tk, _ = K.step(W, x.wall, x.q[0], x.q[1], x.v[0], x.v[1])
        assert st == K.OK and w == y.wall
        assert (qx, qy) == pytest.approx(y.q, abs=1e-12)
        assert (vx, vy) == pytest.approx(y.v, abs=1e-12)
        assert th == pytest.approx(y.theta, abs=1e-10)
        assert s == pytest.approx(y.s, abs=1e-9)
        assert tk == pytest.approx(t, abs=1e-12)


def test_time_reversal_identity(geo):
    rng = dyn.make_rng(13)
    checked = 0
    while checked < 10_000:
        x = dyn.sample_mu(geo, rng, "any")
        try:
            y, _ = dyn.step(x, geo)
            z, _ = dyn.step(dyn.reverse(y, geo), geo)
        except dyn.StepError:
            continue
        back = dyn.reverse(z, geo)
        assert back.wall == x.wall
        assert abs(back.s - x.s) < 1e-8
        assert abs(back.theta - x.theta) < 1e-8
        checked += 1


def test_classify():
    mk = lambda th: dyn.CollisionState(0, 0.0, th, (0.0, 0.0), (1.0, 0.0), 0, 0)
    assert dyn.classify(mk(3 * PI / 4)) == "L"
    assert dyn.classify(mk(PI / 4)) == "R"
    assert dyn.classify(mk(PI / 2)) == "N"
    assert dyn.classify(mk(PI / 2 + 1e-13)) == "N"
    assert dyn.classify(mk(PI / 2 + 1e-11)) == "L"


def test_v_star_examples(geo):
    s = _straight_s(geo)
    along = dyn.state_from(geo, 0, s, 1e-3)
    assert abs(dyn.v_star(along, geo)) == pytest.approx(math.cos(1e-3), abs=1e-12)
    across = dyn.state_from(geo, 0, s, PI / 2)
    assert abs(dyn.v_star(across, geo)) < 1e-12
    # loop 0 runs with the centerline, so R states move forward
    assert dyn.v_star(along, geo) > 0


def test_tangential_departure_is_singular(geo):
    x = dyn.state_from(geo, 0, 1.0, 1e-12)
    with pytest.raises(dyn.Singular):
        dyn.step(x, geo)


def test_first_return_straight_flight_exceeds_straight_length(stadium_spec):
    geo = build_track(stadium_spec)
    tb = dyn.pack(geo)
    for w, qx, qy, vx, vy in tg.entering_samples(geo, 200, 5):
        x = dyn.state_from_cartesian(geo, w, (qx, qy), (vx, vy))
        fr = dyn.first_return_to_E(x, geo)
        assert fr.y.guide != x.guide
        assert fr.straight_flight >= 7.0
        assert fr.trace.termination == "returned"
    assert tb.W.shape[0] == len(geo.walls)


def test_first_return_counts_match_guide_passage(stadium_spec):
    geo = build_track(stadium_spec)
    g = ga.NormalizedGuide(0.85 / 1.15, PI)
    for w, qx, qy, vx, vy in tg.entering_samples(geo, 100, 6):
        x = dyn.state_from_cartesian(geo, w, (qx, qy), (vx, vy))
        fr = dyn.first_return_to_E(x, geo)
        if x.loop != 0:
            continue
        # polar angle of the entry point measured from the start of the arc
        piece = geo.centerline[x.guide]
        u, _ = piece.foot(x.q)
        psi = u / piece.radius
        res = ga._passage(g.r, g.alpha, False, psi, x.theta, 1_000_000)
        assert res[13] == 0
        assert fr.n == res[8] + res[9]


def test_near_normal_entry_still_returns(stadium_spec):
    geo = build_track(stadium_spec)
    x = dyn.state_from(geo, 0, 0.5, PI / 2 - 1e-3)
    tr = dyn.orbit(x, geo, 5)
    # find the first entering collision along the orbit and run the return map from it
    for prev, cur in zip(tr.states, tr.states[1:]):
        if dyn.is_entering(prev, cur, geo):
            break
    else:
        cur = x
    fr = dyn.first_return_to_E(cur, geo)
    assert fr.straight_flight > 0


def test_sample_mu_directions(geo):
    rng = dyn.make_rng(0)
    for direction, ok in (("R", lambda c: c > 0), ("L", lambda c: c < 0)):
        xs = [dyn.sample_mu(geo, rng, direction) for _ in range(500)]
        assert all(ok(math.cos(x.theta)) for x in xs)
    cs = np.array([math.cos(dyn.sample_mu(geo, rng, "any").theta) for _ in range(4000)])
    # cos(theta) is uniform on (-1, 1)
    assert abs(cs.mean()) < 0.05 and abs(np.mean(cs ** 2) - 1 / 3) < 0.03
    with pytest.raises(ValueError):
        dyn.sample_mu(geo, rng, "up")


def test_rng_is_deterministic(geo):
    a = dyn.sample_mu(geo, dyn.make_rng(42))
    b = dyn.sample_mu(geo, dyn.make_rng(42))
    assert a == b


def test_csv_export(geo):
    x = dyn.sample_mu(geo, dyn.make_rng(3))
    rows, reason, drift = dyn.fast_orbit(x, dyn.pack(geo), 50)
    text = dyn.orbit_csv(rows, reason)
    lines = text.splitlines()
    assert lines[0] == dyn.CSV_HEADER
    assert lines[-1] == "# termination=completed collisions=50"
    assert len(lines) == 53
    first = lines[1].split(",")
    assert float(first[4]) == x.q[0] and float(first[5]) == x.q[1]
    assert "np." not in text
    assert drift < 1e-12
    rows2, _, _ = dyn.fast_orbit(x, dyn.pack(geo), 50)
    assert dyn.orbit_csv(rows2, reason) == text


def test_fast_orbit_matches_python_orbit(geo):
    x = dyn.sample_mu(geo, dyn.make_rng(8))
    rows, reason, _ = dyn.fast_orbit(x, dyn.pack(geo), 100)
    tr = dyn.orbit(x, geo, 100)
    assert reason == tr.termination == "completed"
    for r, st, t, vs in zip(rows, tr.states, tr.flights, tr.vstars):
        assert int(r[0]) == st.wall
        assert r[3] == pytest.approx(st.q[0], abs=1e-9) and r[4] == pytest.approx(st.q[1], abs=1e-9)
        assert r[6] == pytest.approx(vs, abs=1e-9)


def test_unidirectionality_short_run(h_geo):
    tb = dyn.pack(h_geo)
    rng = dyn.make_rng(21)
    for _ in range(10):
        x = dyn.sample_mu(h_geo, rng, "any")
        bad, n, st, _, drift = K.unidirectional_run(tb.W, tb.P, x.wall, x.q[0], x.q[1], x.v[0], x.v[1], 20_000)
        assert st == K.OK and n == 20_000 and bad == 0
        assert drift < 1e-12


def test_empirical_cos_theta_is_uniform(h_geo):
    """Diagnostic form of invariance of the measure: along one long orbit
    cos(theta) is uniform on (0, 1) within 3 sigma per bin."""
    x = dyn.sample_mu(h_geo, dyn.make_rng(4))
    rows, reason, _ = dyn.fast_orbit(x, dyn.pack(h_geo), 200_000)
    assert reason == "completed"
    c = np.cos(rows[:, 2])
    counts, _ = np.histogram(c, bins=10, range=(0, 1))
    n = counts.sum()
    # correlations inflate the variance; allow a generous multiple of the binomial sigma
    sigma = math.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - 0.1 * n) < 3 * sigma * 10)
