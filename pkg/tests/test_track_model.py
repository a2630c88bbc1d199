import math

import pytest

from trackbilliard.geom_core import ArcWall
from trackbilliard.track_model import (GuideSpec, TrackError, TrackSpec, UnclassifiedGuide, annulus, build_track,
                                       check_condition_H, classify_guide, guide_reports, loops_are_simple)
from trackbilliard.trackfile import parse_track

PI = math.pi


def ring(R, eps, l, turn="left"):
    return TrackSpec((GuideSpec.arc(R, PI, turn), GuideSpec.straight(l), GuideSpec.arc(R, PI, turn),
                      GuideSpec.straight(l)), eps)


def peanut(eps=0.4):
    b = PI / 4
    return TrackSpec((GuideSpec.arc(2, PI + b), GuideSpec.straight(3), GuideSpec.arc(1, 2 * b, "right"),
                      GuideSpec.straight(3), GuideSpec.arc(2, PI + b), GuideSpec.straight(6 * math.sqrt(2))), eps)


def test_stadium_ring_loop_lengths():
    geo = build_track(ring(2, 0.25, 6))
    assert geo.loop_lengths[0] == pytest.approx(2 * PI * 2.25 + 12, abs=1e-9)
    assert geo.loop_lengths[1] == pytest.approx(2 * PI * 1.75 + 12, abs=1e-9)
    for loop in (0, 1):
        total = sum(geo.walls[i].length for i in geo.loop_walls(loop))
        assert total == pytest.approx(geo.loop_lengths[loop], abs=1e-9)


def test_atlas_has_no_gaps():
    geo = build_track(peanut())
    for loop in (0, 1):
        ws = geo.loop_walls(loop)
        for a, b in zip(ws, ws[1:]):
            wa, wb = geo.walls[a], geo.walls[b]
            assert wa.s_offset + wa.length == pytest.approx(wb.s_offset, abs=1e-12)
            # consecutive walls meet
            pa, pb = wa.point_at(wa.length), wb.point_at(0.0)
            assert math.hypot(pa[0] - pb[0], pa[1] - pb[1]) < 1e-9


def test_curvature_bookkeeping():
    geo = build_track(ring(2, 0.25, 6))
    for w in geo.walls:
        if isinstance(w.shape, ArcWall):
            k = 1 / 2.25 if w.shape.side == "outer" else -1 / 1.75
            assert w.curvature == pytest.approx(k)
        else:
            assert w.curvature == 0.0


def test_arcs_concentric_with_width_2eps():
    geo = build_track(peanut())
    arcs = {}
    for w in geo.walls:
        if isinstance(w.shape, ArcWall):
            arcs.setdefault(w.guide, []).append(w.shape)
    for pair in arcs.values():
        a, b = pair
        assert math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) < 1e-10
        assert abs(a.radius - b.radius) == pytest.approx(0.8, abs=1e-12)


def test_wall_points_on_walls_and_normals_inward():
    geo = build_track(peanut())
    for w in geo.walls:
        for u in (0.1 * w.length, 0.5 * w.length, 0.9 * w.length):
            p = w.point_at(u)
            assert w.local_s(p) == pytest.approx(u, abs=1e-9)
            n = w.normal_at(p)
            # a small step along the normal stays inside the tube
            q = (p[0] + 1e-3 * n[0], p[1] + 1e-3 * n[1])
            piece = geo.centerline[w.guide]
            foot, _ = piece.foot(q)
            c = piece.point(foot)
            assert math.hypot(q[0] - c[0], q[1] - c[1]) < geo.halfwidth


@pytest.mark.parametrize("spec", [ring(2, 0.25, 6), ring(1, 0.4, 7, "right"), peanut()])
def test_loops_simple_and_disjoint(spec):
    assert loops_are_simple(build_track(spec))


def test_single_full_arc_is_adjacency_failure():
    with pytest.raises(TrackError) as e:
        build_track(TrackSpec((GuideSpec.arc(1, 2 * PI),), 0.2))
    assert e.value.kind == "ADJACENCY_FAIL"


def test_half_turn_does_not_close():
    with pytest.raises(TrackError) as e:
        build_track(TrackSpec((GuideSpec.arc(1, PI), GuideSpec.straight(2)), 0.2))
    assert e.value.kind == "CLOSURE_FAIL"


def test_self_intersection_detected():
    # widening the peanut makes its waist overlap the long straight
    with pytest.raises(TrackError) as e:
        build_track(peanut(0.7))
    assert e.value.kind == "SELF_INTERSECT"


def test_radius_must_exceed_halfwidth():
    with pytest.raises(TrackError):
        build_track(ring(0.2, 0.25, 5))


def test_classify_examples():
    rep = classify_guide(GuideSpec.arc(2, PI), 0.25)
    assert rep.r == pytest.approx(1.75 / 2.25)
    assert rep.beta_bar == pytest.approx(0.6797, abs=1e-4)
    assert rep.kind == "A"
    rep = classify_guide(GuideSpec.arc(1, PI / 2), 0.4)
    assert rep.r == pytest.approx(0.6 / 1.4)
    assert rep.kind == "B"
    assert rep.c_tilde == pytest.approx(2 * (1 / rep.r - 1))
    assert rep.c_tilde == pytest.approx(2.6667, abs=1e-4)
    # r = 0.9 from R = 0.95, eps = 0.05
    assert classify_guide(GuideSpec.arc(0.95, PI / 2), 0.05).kind == "neither"


def _type_b_track(l):
    # r = 0.4 with outer radius 1: R = 0.7, eps = 0.3; alpha < pi so only type B
    a = PI / 2
    g = [GuideSpec.arc(0.7, a), GuideSpec.straight(l)] * 4
    return TrackSpec(tuple(g), 0.3)


def test_condition_H_margins():
    spec = _type_b_track(7)
    reps = guide_reports(spec)
    assert all(r.kind == "B" for r in reps)
    assert all(r.tau_bound == pytest.approx(3.0) for r in reps)
    res = check_condition_H(spec, reps)
    assert res.satisfied
    assert res.min_margin == pytest.approx(1.0)
    res = check_condition_H(_type_b_track(5), guide_reports(_type_b_track(5)))
    assert not res.satisfied and res.min_margin == pytest.approx(-1.0)


def test_condition_H_strict_at_equality():
    spec = _type_b_track(7)
    reps = guide_reports(spec)
    for r in reps:
        r.tau_bound = 3.5
    assert not check_condition_H(spec, reps).satisfied


def test_condition_H_refuses_unclassified():
    spec = TrackSpec((GuideSpec.arc(0.95, PI), GuideSpec.straight(4), GuideSpec.arc(0.95, PI),
                      GuideSpec.straight(4)), 0.05)
    reps = guide_reports(spec)
    reps[0].kind = "neither"
    with pytest.raises(UnclassifiedGuide):
        check_condition_H(spec, reps)


def test_spec_round_trip_is_bit_identical():
    spec = peanut()
    again = parse_track(spec.to_text())
    assert again == spec
    g1, g2 = build_track(spec), build_track(again)
    assert g1.loop_lengths == g2.loop_lengths
    assert [w.shape for w in g1.walls] == [w.shape for w in g2.walls]


def test_annulus_constructor():
    geo = annulus(1.0, 0.5)
    assert geo.loop_lengths == pytest.approx((2 * PI, PI))
    with pytest.raises(ValueError):
        annulus(0.5, 1.0)
