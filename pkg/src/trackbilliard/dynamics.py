"""The billiard map on a planar table: collision states, orbits, v*, the
L/R/N split and first returns to entering collisions.

``step`` is the plain-Python reference built on ``geom_core``; long orbits go
through the compiled routines in ``_kernel`` and are tested against it.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import _kernel as K
from .geom_core import (T_MIN, ArcWall, Endpoint, Grazing, Ray, Vec, intersect_ray_arc,
                        intersect_ray_segment, reflect)
from .track_model import TrackGeometry

STEP_LIMIT = 1_000_000
N_BAND = 1e-12


class StepError(RuntimeError):
    reason = "error"


class Singular(StepError):
    reason = "singular"


class EndpointHit(StepError):
    reason = "endpoint"


class NoHit(StepError):
    reason = "no-hit"


class StepLimit(StepError):
    reason = "step-limit"


@dataclass(frozen=True)
class CollisionState:
    wall: int
    s: float
    theta: float
    q: Vec
    v: Vec
    guide: int
    loop: int


def _frame(geo: TrackGeometry, wall: int, q: Vec):
    w = geo.walls[wall]
    return w.tangent_at(q), w.normal_at(q)


def state_from_cartesian(geo: TrackGeometry, wall: int, q: Vec, v: Vec) -> CollisionState:
    w = geo.walls[wall]
    t, n = _frame(geo, wall, q)
    theta = math.atan2(v[0] * n[0] + v[1] * n[1], v[0] * t[0] + v[1] * t[1])
    return CollisionState(wall, w.s_offset + w.local_s(q), theta, q, v, w.guide, w.loop)


def state_from(geo: TrackGeometry, loop: int, s: float, theta: float) -> CollisionState:
    """Post-collision state at global arclength ``s`` on ``loop``."""
    wall, u = geo.locate(loop, s)
    w = geo.walls[wall]
    q = w.point_at(u)
    t, n = _frame(geo, wall, q)
    v = (math.cos(theta) * t[0] + math.sin(theta) * n[0], math.cos(theta) * t[1] + math.sin(theta) * n[1])
    return CollisionState(wall, w.s_offset + u, theta, q, v, w.guide, loop)


def _next_hit(geo: TrackGeometry, ray: Ray):
    best = None  # (t, wall, hit or exception)
    for i, w in enumerate(geo.walls):
        try:
            if isinstance(w.shape, ArcWall):
                hit = intersect_ray_arc(ray, w.shape, T_MIN)
            else:
                hit = intersect_ray_segment(ray, w.shape, T_MIN)
        except (Grazing, Endpoint) as exc:
            if best is None or exc.t < best[0]:
                best = (exc.t, i, exc)
            continue
        if hit is not None and (best is None or hit.t < best[0]):
            best = (hit.t, i, hit)
    return best


def step(x: CollisionState, geo: TrackGeometry) -> Tuple[CollisionState, float]:
    """Next collision and the flight time to it."""
    if math.sin(x.theta) < K.SIN_MIN:
        raise Singular("tangential departure")
    found = _next_hit(geo, Ray(x.q, x.v))
    if found is None:
        raise NoHit(f"no wall ahead of {x.q!r} along {x.v!r}")
    t, wall, hit = found
    if isinstance(hit, Grazing):
        raise Singular(f"grazing hit on wall {wall}")
    if isinstance(hit, Endpoint):
        raise EndpointHit(f"segment endpoint of wall {wall}")
    v1 = reflect(x.v, hit.normal)
    h = math.hypot(*v1)
    v1 = (v1[0] / h, v1[1] / h)
    y = state_from_cartesian(geo, wall, hit.point, v1)
    if math.sin(y.theta) < K.SIN_MIN:
        raise Singular("tangential collision")
    # the recomputed (s, theta) must reproduce the Cartesian point
    back = geo.walls[wall].point_at(y.s - geo.walls[wall].s_offset)
    if math.hypot(back[0] - hit.point[0], back[1] - hit.point[1]) > 1e-9:
        raise NoHit(f"arclength atlas inconsistent on wall {wall}")
    return y, t


def reverse(x: CollisionState, geo: TrackGeometry) -> CollisionState:
    """Time reversal J: (s, theta) -> (s, pi - theta), i.e. the post-collision
    velocity becomes minus the incoming one."""
    t, n = _frame(geo, x.wall, x.q)
    c, sn = math.cos(x.theta), math.sin(x.theta)
    v = (-c * t[0] + sn * n[0], -c * t[1] + sn * n[1])
    return CollisionState(x.wall, x.s, math.pi - x.theta, x.q, v, x.guide, x.loop)


def v_star(x: CollisionState, geo: TrackGeometry) -> float:
    _, tang = geo.centerline[x.guide].foot(x.q)
    return x.v[0] * tang[0] + x.v[1] * tang[1]


def classify(x: CollisionState) -> str:
    if abs(x.theta - 0.5 * math.pi) <= N_BAND:
        return "N"
    return "L" if x.theta > 0.5 * math.pi else "R"


def is_entering(prev: CollisionState, x: CollisionState, geo: TrackGeometry) -> bool:
    """``x`` is the first collision inside a circular guide after crossing
    into it from another guide."""
    return geo.guide_kinds[x.guide] == "circular" and x.guide != prev.guide


@dataclass
class OrbitTrace:
    states: List[CollisionState] = field(default_factory=list)
    flights: List[float] = field(default_factory=list)  # flight before each state; 0 for the first
    vstars: List[float] = field(default_factory=list)
    termination: str = "completed"


def orbit(x: CollisionState, geo: TrackGeometry, nsteps: int) -> OrbitTrace:
    tr = OrbitTrace([x], [0.0], [v_star(x, geo)])
    for _ in range(nsteps):
        try:
            x, t = step(x, geo)
        except StepError as exc:
            tr.termination = exc.reason
            return tr
        tr.states.append(x)
        tr.flights.append(t)
        tr.vstars.append(v_star(x, geo))
    return tr


@dataclass
class FirstReturn:
    y: CollisionState
    exit_state: CollisionState
    n: int  # collisions inside the guide after the entering one
    straight_flight: float  # path length from the guide exit to y
    trace: OrbitTrace


def first_return_to_E(x: CollisionState, geo: TrackGeometry, max_steps: int = STEP_LIMIT) -> FirstReturn:
    if geo.guide_kinds[x.guide] != "circular":
        raise ValueError("x must lie in a circular guide")
    tr = OrbitTrace([x], [0.0], [v_star(x, geo)])
    cur, exit_state, n, flight = x, None, 0, 0.0
    for _ in range(max_steps):
        nxt, t = step(cur, geo)
        tr.states.append(nxt)
        tr.flights.append(t)
        tr.vstars.append(v_star(nxt, geo))
        if exit_state is None:
            if nxt.guide == x.guide:
                n += 1
            else:
                exit_state = cur
        if exit_state is not None:
            flight += t
            if is_entering(cur, nxt, geo):
                tr.termination = "returned"
                return FirstReturn(nxt, exit_state, n, flight, tr)
        cur = nxt
    raise StepLimit(f"no entering collision within {max_steps} steps")


# --- sampling and bulk orbits ------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(seed))


def sample_mu(geo: TrackGeometry, rng: np.random.Generator, direction: str = "R") -> CollisionState:
    """Draw from the invariant measure restricted to R (cos theta > 0), L
    (cos theta < 0) or the whole collision space ("any").

    The density is proportional to sin(theta) ds dtheta, i.e. s is uniform
    over the boundary and cos(theta) is uniform.
    """
    total = geo.total_boundary
    while True:
        u = rng.random() * total
        loop = 0 if u < geo.loop_lengths[0] else 1
        s = u if loop == 0 else u - geo.loop_lengths[0]
        c = rng.random()
        if direction == "R":
            pass
        elif direction == "L":
            c = -c
        elif direction == "any":
            c = 2.0 * c - 1.0
        else:
            raise ValueError("direction must be 'R', 'L' or 'any'")
        theta = math.acos(c)
        if math.sin(theta) < 1e-8 or abs(c) < 1e-12:
            continue
        return state_from(geo, loop, s, theta)


@dataclass
class PackedTable:
    geo: TrackGeometry
    W: np.ndarray
    P: np.ndarray


def pack(geo: TrackGeometry) -> PackedTable:
    return PackedTable(geo, K.pack_walls(geo), K.pack_pieces(geo))


def fast_orbit(x: CollisionState, table: PackedTable, nsteps: int):
    """Compiled orbit: (rows, termination reason, max speed drift)."""
    rows, n, st, drift = K.orbit(table.W, table.P, x.wall, x.q[0], x.q[1], x.v[0], x.v[1], nsteps)
    reason = "completed" if st == K.OK else K.STATUS_NAMES[st]
    return rows[:n], reason, drift


CSV_HEADER = "step,wall,s,theta,x,y,t_flight,vstar"


def orbit_csv(rows: np.ndarray, reason: str) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for k, r in enumerate(rows):
        buf.write(f"{k},{int(r[0])}," + ",".join(repr(float(c)) for c in r[1:7]) + "\n")
    buf.write(f"# termination={reason} collisions={len(rows) - 1}\n")
    return buf.getvalue()
