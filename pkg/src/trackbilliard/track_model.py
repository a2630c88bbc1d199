"""Track construction: guides -> walls, boundary atlas, centerline, Condition H."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

from shapely.geometry import LinearRing, Polygon

from . import guide_analysis as ga
from .geom_core import TWO_PI, ArcWall, SegmentWall, Vec

CLOSE_TOL = 1e-9


class TrackError(ValueError):
    """Invalid track; ``kind`` is one of CLOSURE_FAIL, ADJACENCY_FAIL,
    SELF_INTERSECT, GUIDE_FAIL."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class UnclassifiedGuide(ValueError):
    """A circular guide is neither of type A nor of type B."""


@dataclass(frozen=True)
class GuideSpec:
    kind: str  # "circular" | "straight"
    radius: float = 0.0
    angle: float = 0.0
    turn: str = "left"
    roll: float = 0.0  # degrees, 3-D only
    length: float = 0.0

    def __post_init__(self):
        if self.kind == "circular":
            if not self.radius > 0:
                raise ValueError("circular guide needs radius > 0")
            if not 0 < self.angle <= TWO_PI:
                raise ValueError("circular guide angle must lie in (0, 2*pi)")
            if self.turn not in ("left", "right"):
                raise ValueError("turn must be 'left' or 'right'")
        elif self.kind == "straight":
            if not self.length > 0:
                raise ValueError("straight guide needs length > 0")
        else:
            raise ValueError(f"unknown guide kind {self.kind!r}")

    @property
    def is_circular(self) -> bool:
        return self.kind == "circular"

    @classmethod
    def arc(cls, radius: float, angle: float, turn: str = "left", roll: float = 0.0) -> "GuideSpec":
        return cls("circular", radius=radius, angle=angle, turn=turn, roll=roll)

    @classmethod
    def straight(cls, length: float) -> "GuideSpec":
        return cls("straight", length=length)


@dataclass(frozen=True)
class TrackSpec:
    guides: Tuple[GuideSpec, ...]
    halfwidth: float = 0.0
    dim: int = 2
    section: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "guides", tuple(self.guides))
        if self.dim == 2 and not self.halfwidth > 0:
            raise ValueError("2-D track needs halfwidth > 0")
        if self.dim == 3:
            if self.section is None or min(self.section) <= 0:
                raise ValueError("3-D track needs a positive section a x b")
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")

    def to_text(self) -> str:
        from .trackfile import format_track

        return format_track(self)


@dataclass(frozen=True)
class Wall:
    """A boundary wall together with its place in the boundary atlas.

    ``orient`` is +1 when the loop runs along the arc counterclockwise (or from
    ``a`` to ``b`` for segments), -1 otherwise.  ``sigma`` is +1 when the
    domain lies to the left of the oriented wall tangent.
    """

    shape: Union[ArcWall, SegmentWall]
    loop: int
    guide: int
    s_offset: float
    length: float
    orient: int
    sigma: int

    @property
    def is_arc(self) -> bool:
        return isinstance(self.shape, ArcWall)

    @property
    def curvature(self) -> float:
        return self.shape.curvature

    def point_at(self, u: float) -> Vec:
        """Point at local arclength ``u`` measured along the loop orientation."""
        sh = self.shape
        if self.is_arc:
            if self.orient > 0:
                psi = sh.start + u / sh.radius
            else:
                psi = sh.start + sh.span - u / sh.radius
            return (sh.center[0] + sh.radius * math.cos(psi), sh.center[1] + sh.radius * math.sin(psi))
        f = u / self.length
        return (sh.a[0] + f * (sh.b[0] - sh.a[0]), sh.a[1] + f * (sh.b[1] - sh.a[1]))

    def local_s(self, p: Vec) -> float:
        sh = self.shape
        if self.is_arc:
            psi = math.atan2(p[1] - sh.center[1], p[0] - sh.center[0])
            rel = (psi - sh.start) % TWO_PI
            if rel > sh.span + 0.5 * (TWO_PI - sh.span):
                rel -= TWO_PI
            u = rel * sh.radius
            return u if self.orient > 0 else self.length - u
        ex, ey = sh.b[0] - sh.a[0], sh.b[1] - sh.a[1]
        return ((p[0] - sh.a[0]) * ex + (p[1] - sh.a[1]) * ey) / self.length

    def tangent_at(self, p: Vec) -> Vec:
        sh = self.shape
        if self.is_arc:
            psi = math.atan2(p[1] - sh.center[1], p[0] - sh.center[0])
            return (-self.orient * math.sin(psi), self.orient * math.cos(psi))
        return ((sh.b[0] - sh.a[0]) / self.length, (sh.b[1] - sh.a[1]) / self.length)

    def normal_at(self, p: Vec) -> Vec:
        if self.is_arc:
            return self.shape.normal_at(p)
        return self.shape.normal


@dataclass(frozen=True)
class CenterPiece:
    """One guide's share of the centerline."""

    kind: str
    start: Vec
    heading: float
    length: float
    sigma0: float  # centerline arclength at the guide start
    center: Vec = (0.0, 0.0)
    radius: float = 0.0
    turn: int = 1  # +1 left, -1 right
    psi0: float = 0.0  # polar angle of the start point about the center

    def point(self, u: float) -> Vec:
        if self.kind == "straight":
            return (self.start[0] + u * math.cos(self.heading), self.start[1] + u * math.sin(self.heading))
        psi = self.psi0 + self.turn * u / self.radius
        return (self.center[0] + self.radius * math.cos(psi), self.center[1] + self.radius * math.sin(psi))

    def tangent(self, u: float) -> Vec:
        h = self.heading + (self.turn * u / self.radius if self.kind == "circular" else 0.0)
        return (math.cos(h), math.sin(h))

    def foot(self, p: Vec) -> Tuple[float, Vec]:
        """Local centerline arclength of the transverse section through ``p``
        and the oriented tangent there."""
        if self.kind == "straight":
            c, s = math.cos(self.heading), math.sin(self.heading)
            u = (p[0] - self.start[0]) * c + (p[1] - self.start[1]) * s
            return u, (c, s)
        psi = math.atan2(p[1] - self.center[1], p[0] - self.center[0])
        half = 0.5 * self.length / self.radius
        rel = (self.turn * (psi - self.psi0) - half + math.pi) % TWO_PI - math.pi + half
        u = rel * self.radius
        return u, self.tangent(u)


@dataclass(frozen=True)
class TrackGeometry:
    spec: Optional[TrackSpec]
    walls: Tuple[Wall, ...]
    loop_lengths: Tuple[float, ...]
    centerline: Tuple[CenterPiece, ...]
    halfwidth: float
    guide_kinds: Tuple[str, ...]
    outer_loop: int = 0

    @property
    def total_boundary(self) -> float:
        return sum(self.loop_lengths)

    @property
    def centerline_length(self) -> float:
        return sum(p.length for p in self.centerline)

    def loop_walls(self, loop: int) -> List[int]:
        ws = [i for i, w in enumerate(self.walls) if w.loop == loop]
        return sorted(ws, key=lambda i: self.walls[i].s_offset)

    def locate(self, loop: int, s: float) -> Tuple[int, float]:
        """Wall index and local arclength of global arclength ``s`` on ``loop``."""
        s = s % self.loop_lengths[loop]
        for i in self.loop_walls(loop):
            w = self.walls[i]
            if s < w.s_offset + w.length:
                return i, s - w.s_offset
        i = self.loop_walls(loop)[-1]
        return i, self.walls[i].length

    def interfaces(self) -> List[Tuple[Vec, Vec]]:
        """Transverse sections between consecutive guides as (point on the
        centerline, oriented tangent)."""
        return [(p.start, (math.cos(p.heading), math.sin(p.heading))) for p in self.centerline]

    def bounding_box(self) -> Tuple[float, float, float, float]:
        xs, ys = [], []
        for w in self.walls:
            n = 64 if w.is_arc else 1
            for k in range(n + 1):
                x, y = w.point_at(w.length * k / n)
                xs.append(x)
                ys.append(y)
        return min(xs), min(ys), max(xs), max(ys)

    def loop_polyline(self, loop: int, per_arc: int = 96) -> List[Vec]:
        pts: List[Vec] = []
        for i in self.loop_walls(loop):
            w = self.walls[i]
            n = max(4, int(per_arc * w.shape.span / math.pi)) if w.is_arc else 1
            for k in range(n):
                pts.append(w.point_at(w.length * k / n))
        return pts


def _check_adjacency(guides: Sequence[GuideSpec]) -> None:
    n = len(guides)
    for i in range(n):
        if guides[i].is_circular and guides[(i + 1) % n].is_circular:
            raise TrackError("ADJACENCY_FAIL", f"circular guides {i} and {(i + 1) % n} are adjacent")


def build_track(spec: TrackSpec) -> TrackGeometry:
    if spec.dim != 2:
        raise ValueError("build_track handles planar tracks; use track3d.build_track3d")
    guides = spec.guides
    if not guides:
        raise TrackError("GUIDE_FAIL", "empty guide list")
    _check_adjacency(guides)
    eps = spec.halfwidth
    for i, g in enumerate(guides):
        if g.is_circular:
            if g.angle >= TWO_PI:
                raise TrackError("GUIDE_FAIL", f"guide {i}: central angle must be < 2*pi")
            if not g.radius > eps:
                raise TrackError("GUIDE_FAIL", f"guide {i}: radius must exceed the halfwidth")

    p: Vec = (0.0, 0.0)
    h = 0.0
    turning = 0.0
    sigma = 0.0
    pieces: List[CenterPiece] = []
    raw: List[Tuple[int, int, Union[ArcWall, SegmentWall], float, int, int]] = []
    for gi, g in enumerate(guides):
        d = (math.cos(h), math.sin(h))
        nl = (-d[1], d[0])
        if g.kind == "straight":
            l = g.length
            ra = (p[0] - eps * nl[0], p[1] - eps * nl[1])
            la = (p[0] + eps * nl[0], p[1] + eps * nl[1])
            right = SegmentWall(ra, (ra[0] + l * d[0], ra[1] + l * d[1]), nl)
            left = SegmentWall(la, (la[0] + l * d[0], la[1] + l * d[1]), (-nl[0], -nl[1]))
            raw.append((gi, 0, right, l, 1, 1))
            raw.append((gi, 1, left, l, 1, -1))
            pieces.append(CenterPiece("straight", p, h, l, sigma))
            p = (p[0] + l * d[0], p[1] + l * d[1])
            sigma += l
        else:
            tau = 1 if g.turn == "left" else -1
            R, a = g.radius, g.angle
            c = (p[0] + tau * R * nl[0], p[1] + tau * R * nl[1])
            psi0 = math.atan2(p[1] - c[1], p[0] - c[0])
            start = psi0 if tau > 0 else psi0 - a
            # right-hand wall is away from the center on a left turn
            r_right = R + eps if tau > 0 else R - eps
            r_left = R - eps if tau > 0 else R + eps
            right = ArcWall(c, r_right, start, a, "outer" if tau > 0 else "inner")
            left = ArcWall(c, r_left, start, a, "inner" if tau > 0 else "outer")
            # domain on the left of an oriented arc iff the normal points to
            # the left of the travel direction
            raw.append((gi, 0, right, r_right * a, tau, 1))
            raw.append((gi, 1, left, r_left * a, tau, -1))
            pieces.append(CenterPiece("circular", p, h, R * a, sigma, c, R, tau, psi0))
            h += tau * a
            turning += tau * a
            p = (c[0] + R * math.cos(psi0 + tau * a), c[1] + R * math.sin(psi0 + tau * a))
            sigma += R * a

    heading_err = abs(math.remainder(h, TWO_PI))
    if math.hypot(*p) > CLOSE_TOL or heading_err > CLOSE_TOL:
        raise TrackError("CLOSURE_FAIL", f"centerline misses its start by {math.hypot(*p):.3g} "
                         f"(heading error {heading_err:.3g})")
    if abs(abs(turning) - TWO_PI) > CLOSE_TOL:
        raise TrackError("CLOSURE_FAIL", f"total turning {turning!r} is not +-2*pi")

    offsets = [0.0, 0.0]
    walls = []
    for gi, loop, shape, length, orient, sig in raw:
        walls.append(Wall(shape, loop, gi, offsets[loop], length, orient, sig))
        offsets[loop] += length
    geo = TrackGeometry(spec, tuple(walls), (offsets[0], offsets[1]), tuple(pieces), eps,
                        tuple(g.kind for g in guides), 0 if turning > 0 else 1)
    _check_self_intersection(geo)
    return geo


def guide_polygon(piece: CenterPiece, eps: float, per_arc: int = 128) -> Polygon:
    if piece.kind == "straight":
        d = (math.cos(piece.heading), math.sin(piece.heading))
        nl = (-d[1], d[0])
        s, l = piece.start, piece.length
        pts = [(s[0] - eps * nl[0], s[1] - eps * nl[1]),
               (s[0] - eps * nl[0] + l * d[0], s[1] - eps * nl[1] + l * d[1]),
               (s[0] + eps * nl[0] + l * d[0], s[1] + eps * nl[1] + l * d[1]),
               (s[0] + eps * nl[0], s[1] + eps * nl[1])]
        return Polygon(pts)
    angle = piece.length / piece.radius
    n = max(8, int(per_arc * angle / math.pi))
    outer, inner = [], []
    for k in range(n + 1):
        psi = piece.psi0 + piece.turn * angle * k / n
        c, s = math.cos(psi), math.sin(psi)
        outer.append((piece.center[0] + (piece.radius + eps) * c, piece.center[1] + (piece.radius + eps) * s))
        inner.append((piece.center[0] + (piece.radius - eps) * c, piece.center[1] + (piece.radius - eps) * s))
    return Polygon(outer + inner[::-1])


def _check_self_intersection(geo: TrackGeometry) -> None:
    polys = [guide_polygon(p, geo.halfwidth) for p in geo.centerline]
    n = len(polys)
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if adjacent:
                inter = polys[i].intersection(polys[j]).area
                if inter > 1e-9 * min(polys[i].area, polys[j].area):
                    raise TrackError("SELF_INTERSECT", f"guides {i} and {j} overlap")
            elif polys[i].buffer(-1e-9).intersects(polys[j].buffer(-1e-9)):
                raise TrackError("SELF_INTERSECT", f"guides {i} and {j} intersect")


def loops_are_simple(geo: TrackGeometry) -> bool:
    rings = [LinearRing(geo.loop_polyline(k)) for k in (0, 1)]
    return all(r.is_simple for r in rings) and not rings[0].intersects(rings[1])


def annulus(outer: float, inner: float) -> TrackGeometry:
    """Full annulus between concentric circles: the integrable baseline.

    Not a track (it has no straight guide); both circles are oriented
    counterclockwise, matching the orientation of its circular centerline.
    """
    if not outer > inner > 0:
        raise ValueError("need outer > inner > 0")
    R = 0.5 * (outer + inner)
    eps = 0.5 * (outer - inner)
    w0 = Wall(ArcWall((0.0, 0.0), outer, 0.0, TWO_PI, "outer"), 0, 0, 0.0, TWO_PI * outer, 1, 1)
    w1 = Wall(ArcWall((0.0, 0.0), inner, 0.0, TWO_PI, "inner"), 1, 0, 0.0, TWO_PI * inner, 1, -1)
    piece = CenterPiece("circular", (R, 0.0), 0.5 * math.pi, TWO_PI * R, 0.0, (0.0, 0.0), R, 1, 0.0)
    return TrackGeometry(None, (w0, w1), (TWO_PI * outer, TWO_PI * inner), (piece,), eps, ("circular",))


def rectangle(width: float, height: float) -> TrackGeometry:
    """Rectangular billiard table (test harness geometry, not a track).

    Its boundary is a single counterclockwise loop; every wall belongs to a
    single pseudo-guide aligned with +x.
    """
    a, b = width, height
    corners = [(0.0, 0.0), (a, 0.0), (a, b), (0.0, b)]
    normals = [(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)]
    walls, off = [], 0.0
    for k in range(4):
        p, q = corners[k], corners[(k + 1) % 4]
        seg = SegmentWall(p, q, normals[k])
        walls.append(Wall(seg, 0, 0, off, seg.length, 1, 1))
        off += seg.length
    piece = CenterPiece("straight", (0.0, 0.5 * b), 0.0, a, 0.0)
    return TrackGeometry(None, tuple(walls), (off, 0.0), (piece,), 0.5 * b, ("straight",))


@dataclass
class GuideReport:
    guide: int
    radius: float
    angle: float
    halfwidth: float
    r: float
    beta_bar: float
    kind: str  # "A", "B", "AB" or "neither"
    c_tilde: Optional[float]
    tau_bound: Optional[float] = None  # length units (scaled by the outer radius)
    tau_numeric: Optional[float] = None
    tau_numeric_e1: Optional[float] = None
    tau_numeric_rest: Optional[float] = None

    @property
    def outer_radius(self) -> float:
        return self.radius + self.halfwidth

    @property
    def certified(self) -> bool:
        return self.kind != "neither"

    def normalized(self) -> ga.NormalizedGuide:
        return ga.NormalizedGuide(self.r, self.angle)


def classify_guide(guide: GuideSpec, eps: float, index: int = 0) -> GuideReport:
    if not guide.is_circular:
        raise ValueError("classify_guide needs a circular guide")
    r1, r2 = guide.radius + eps, guide.radius - eps
    r = r2 / r1
    is_a = guide.angle >= math.pi
    is_b = r < 0.5
    kind = "AB" if is_a and is_b else "A" if is_a else "B" if is_b else "neither"
    c = ga.c_tilde(ga.NormalizedGuide(r, guide.angle)) if kind != "neither" else None
    bound = r1 * ga.tau_bound_from_c(c) if c is not None else None
    return GuideReport(index, guide.radius, guide.angle, eps, r, math.acos(r), kind, c, bound)


def guide_reports(spec: TrackSpec, numeric: bool = False, **grid) -> List[GuideReport]:
    """Reports for all circular guides; ``numeric`` also fills the focal
    length grid estimates (costly)."""
    eps = spec.halfwidth
    out = []
    for i, g in enumerate(spec.guides):
        if g.is_circular:
            rep = classify_guide(g, eps, i)
            if numeric and rep.certified:
                fl = ga.focal_length(rep.normalized(), **grid)
                rep.tau_numeric = fl.numeric * rep.outer_radius
                rep.tau_numeric_e1 = fl.numeric_e1 * rep.outer_radius
                rep.tau_numeric_rest = fl.numeric_rest * rep.outer_radius
            out.append(rep)
    return out


@dataclass
class GapMargin:
    straights: Tuple[int, ...]
    length: float
    guide_before: int
    guide_after: int
    tau_before: float
    tau_after: float

    @property
    def margin(self) -> float:
        return self.length - (self.tau_before + self.tau_after)


@dataclass
class ConditionHResult:
    satisfied: bool
    margins: List[GapMargin] = field(default_factory=list)
    source: str = "bound"

    @property
    def min_margin(self) -> float:
        return min(m.margin for m in self.margins)


def straight_gaps(guides: Sequence[GuideSpec]) -> List[Tuple[int, Tuple[int, ...], float, int]]:
    """(circular guide, straights after it, their total length, next circular guide)."""
    n = len(guides)
    circ = [i for i, g in enumerate(guides) if g.is_circular]
    gaps = []
    for k, i in enumerate(circ):
        j = circ[(k + 1) % len(circ)]
        idx, total, m = [], 0.0, (i + 1) % n
        while m != j:
            idx.append(m)
            total += guides[m].length
            m = (m + 1) % n
        gaps.append((i, tuple(idx), total, j))
    return gaps


def check_condition_H(spec: TrackSpec, reports: Sequence[GuideReport], source: str = "bound") -> ConditionHResult:
    """Straight-guide lengths against the sum of neighbouring focal lengths.

    ``source`` selects the analytic bound or the numeric grid estimate.
    """
    by_index = {rep.guide: rep for rep in reports}
    for rep in reports:
        if not rep.certified:
            raise UnclassifiedGuide(f"guide {rep.guide} is neither of type A nor B")
    margins = []
    for i, idx, total, j in straight_gaps(spec.guides):
        ti = by_index[i].tau_bound if source == "bound" else by_index[i].tau_numeric
        tj = by_index[j].tau_bound if source == "bound" else by_index[j].tau_numeric
        if ti is None or tj is None:
            raise ValueError(f"no {source} focal length for guides {i}/{j}")
        margins.append(GapMargin(idx, total, i, j, ti, tj))
    return ConditionHResult(all(m.margin > 0 for m in margins), margins, source)
