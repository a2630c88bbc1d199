"""Planar geometric kernel: rays against circular arcs and line segments.

All quantities are plain floats; points and vectors are ``(x, y)`` tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

Vec = Tuple[float, float]

T_MIN = 1e-10
GRAZE_TOL = 1e-12
ENDPOINT_TOL = 1e-12
TWO_PI = 2.0 * math.pi


class GeometryError(Exception):
    """Base class for degenerate geometric events."""


class Grazing(GeometryError):
    """Ray is tangent to a circle within tolerance at a point of the arc."""

    def __init__(self, t: float, point: Vec):
        super().__init__(f"grazing hit at t={t!r}")
        self.t = t
        self.point = point


class Endpoint(GeometryError):
    """Ray hits a segment within tolerance of one of its endpoints."""

    def __init__(self, t: float, point: Vec):
        super().__init__(f"segment endpoint hit at t={t!r}")
        self.t = t
        self.point = point


class Hit(NamedTuple):
    t: float
    point: Vec
    normal: Vec


@dataclass(frozen=True)
class Ray:
    origin: Vec
    direction: Vec

    def __post_init__(self):
        dx, dy = self.direction
        if abs(math.hypot(dx, dy) - 1.0) > 1e-12:
            raise ValueError("ray direction must be a unit vector")

    def at(self, t: float) -> Vec:
        return (self.origin[0] + t * self.direction[0],
                self.origin[1] + t * self.direction[1])


@dataclass(frozen=True)
class ArcWall:
    """Circular arc covering polar angles ``[start, start + span]`` (counterclockwise).

    ``side`` is ``"outer"`` when the billiard domain lies inside the circle
    (focusing wall) and ``"inner"`` when it lies outside (dispersing wall).
    """

    center: Vec
    radius: float
    start: float
    span: float
    side: str = "outer"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("arc radius must be positive")
        if not 0 < self.span <= TWO_PI:
            raise ValueError("arc span must lie in (0, 2*pi]")
        if self.side not in ("outer", "inner"):
            raise ValueError("side must be 'outer' or 'inner'")

    def contains_angle(self, psi: float, tol: float = 1e-12) -> bool:
        if self.span >= TWO_PI:
            return True
        rel = (psi - self.start) % TWO_PI
        return rel <= self.span + tol or rel >= TWO_PI - tol

    def normal_at(self, p: Vec) -> Vec:
        ux = (p[0] - self.center[0]) / self.radius
        uy = (p[1] - self.center[1]) / self.radius
        if self.side == "outer":
            return (-ux, -uy)
        return (ux, uy)

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius if self.side == "outer" else -1.0 / self.radius


@dataclass(frozen=True)
class SegmentWall:
    a: Vec
    b: Vec
    normal: Vec

    def __post_init__(self):
        ex, ey = self.b[0] - self.a[0], self.b[1] - self.a[1]
        length = math.hypot(ex, ey)
        if length == 0:
            raise ValueError("segment endpoints must be distinct")
        if abs(math.hypot(*self.normal) - 1.0) > 1e-12:
            raise ValueError("segment normal must be a unit vector")
        if abs(ex * self.normal[0] + ey * self.normal[1]) > 1e-12 * length:
            raise ValueError("segment normal must be perpendicular to the segment")

    @property
    def length(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    curvature = 0.0


def solve_unit_quadratic(b: float, c: float) -> Optional[Tuple[float, float, float]]:
    """Roots of ``t**2 + 2*b*t + c = 0`` as ``(t_lo, t_hi, disc)``, or None.

    Uses the cancellation-free pairing ``q = -(b + sign(b) sqrt(disc))``,
    ``t1 = q``, ``t2 = c / q``.
    """
    disc = b * b - c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    q = -(b + math.copysign(sq, b))
    if q == 0.0:
        return (0.0, 0.0, disc)
    t1, t2 = q, c / q
    if t1 > t2:
        t1, t2 = t2, t1
    return (t1, t2, disc)


def intersect_ray_arc(ray: Ray, wall: ArcWall, t_min: float = T_MIN) -> Optional[Hit]:
    """First intersection of ``ray`` with ``wall`` beyond ``t_min``.

    Raises :class:`Grazing` when the supporting line passes within
    ``GRAZE_TOL`` of tangency at a point of the arc ahead of the ray.
    """
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    ox = ray.origin[0] - wall.center[0]
    oy = ray.origin[1] - wall.center[1]
    dx, dy = ray.direction
    b = ox * dx + oy * dy
    c = ox * ox + oy * oy - wall.radius * wall.radius
    roots = solve_unit_quadratic(b, c)
    if roots is None:
        return None
    t1, t2, disc = roots
    # distance from the tangent line, r - d, written without cancellation
    gap = disc / (wall.radius + math.sqrt(max(wall.radius * wall.radius - disc, 0.0)))
    if gap <= GRAZE_TOL:
        tm = -b
        if t2 > t_min:
            p = ray.at(tm)
            if wall.contains_angle(math.atan2(p[1] - wall.center[1], p[0] - wall.center[0])):
                raise Grazing(tm, p)
    for t in (t1, t2):
        if t > t_min:
            p = ray.at(t)
            psi = math.atan2(p[1] - wall.center[1], p[0] - wall.center[0])
            if wall.contains_angle(psi):
                return Hit(t, p, wall.normal_at(p))
    return None


def intersect_ray_segment(ray: Ray, wall: SegmentWall, t_min: float = T_MIN) -> Optional[Hit]:
    """First intersection of ``ray`` with the open segment beyond ``t_min``.

    Raises :class:`Endpoint` for hits within ``ENDPOINT_TOL`` of an endpoint.
    """
    if t_min < 0:
        raise ValueError("t_min must be non-negative")
    ex, ey = wall.b[0] - wall.a[0], wall.b[1] - wall.a[1]
    dx, dy = ray.direction
    denom = dx * ey - dy * ex
    length = math.hypot(ex, ey)
    if abs(denom) <= 1e-15 * length:
        return None
    wx, wy = wall.a[0] - ray.origin[0], wall.a[1] - ray.origin[1]
    t = (wx * ey - wy * ex) / denom
    if not t > t_min:
        return None
    u = (wx * dy - wy * dx) / denom  # fraction along the segment
    along = u * length
    if along < -ENDPOINT_TOL or along > length + ENDPOINT_TOL:
        return None
    p = ray.at(t)
    if along <= ENDPOINT_TOL or along >= length - ENDPOINT_TOL:
        raise Endpoint(t, p)
    return Hit(t, p, wall.normal)


def reflect(v: Vec, n: Vec) -> Vec:
    """Specular reflection ``v - 2<v,n> n``."""
    d = v[0] * n[0] + v[1] * n[1]
    return (v[0] - 2.0 * d * n[0], v[1] - 2.0 * d * n[1])


def normalize(v: Vec) -> Vec:
    h = math.hypot(v[0], v[1])
    return (v[0] / h, v[1] / h)


def dot(a: Vec, b: Vec) -> float:
    return a[0] * b[0] + a[1] * b[1]


def rotate(v: Vec, angle: float) -> Vec:
    c, s = math.cos(angle), math.sin(angle)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])
