"""Three-dimensional tracks with a rectangular section.

The section rectangle ``a x b`` is carried along the centerline by a
parallel-transported frame ``(T, E1, E2)``; ``a`` is measured along ``E1``.
A circular guide bends towards ``N = +-(cos(roll) E1 + sin(roll) E2)``
(sign + for ``turn=left``), so with all rolls zero and the start frame
``(x, y, z)`` the track is the planar track of the same guide list.  Rolls
must be multiples of 90 degrees so that every curved piece is the product of
a planar circular guide and an interval.

Lyapunov exponents are computed from finite-difference Jacobians of the map
between transversal sections through the midpoints of consecutive free
flights, in coordinates ``(dq_perp, dv_perp)`` orthogonal to the velocity.
That map is conjugate to the collision map, so the exponents agree.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from . import dynamics as dyn
from .geom_core import T_MIN
from .track_model import (CLOSE_TOL, GuideReport, GuideSpec, TrackError, TrackSpec, UnclassifiedGuide,
                          _check_adjacency, classify_guide, straight_gaps)

TWO_PI = 2.0 * math.pi
EDGE_TOL = 1e-12
FD_STEP = 1e-7
QR_EVERY = 10

# status codes (shared meaning with the planar kernel)
OK, GRAZING, EDGE, NO_HIT, TANGENTIAL, STEP_LIMIT, FD_MISMATCH = range(7)
STATUS_NAMES = ("ok", "grazing", "endpoint", "no-hit", "singular", "step-limit", "fd-mismatch")

PLANE, CYL, STRIP = 0, 1, 2
# row layout: type, P(3), N(3), U(3), V(3), a0..a3, guide, circular
C_TYPE, C_P, C_N, C_U, C_V = 0, 1, 4, 7, 10
C_A0, C_A1, C_A2, C_A3, C_GUIDE, C_CIRC = 13, 14, 15, 16, 17, 18
NCOL = 19


def _rot(v: np.ndarray, axis: np.ndarray, ang: float) -> np.ndarray:
    """Rodrigues rotation of ``v`` about the unit ``axis``."""
    c, s = math.cos(ang), math.sin(ang)
    return v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1.0 - c)


def _roll_quarter(roll: float) -> Optional[int]:
    q = roll / 90.0
    k = round(q)
    return k % 4 if abs(q - k) <= 1e-9 else None


def twisted_pairs(spec: TrackSpec) -> List[Tuple[int, int]]:
    """Consecutive circular guides whose bending planes are orthogonal.

    Rolls are measured in the transported section frame, so the bending
    planes of guides i and j are orthogonal iff their rolls differ by 90
    degrees modulo 180.
    """
    circ = [i for i, g in enumerate(spec.guides) if g.is_circular]
    out = []
    if len(circ) < 2:
        return out
    for k, i in enumerate(circ):
        j = circ[(k + 1) % len(circ)]
        d = (spec.guides[j].roll - spec.guides[i].roll) % 180.0
        if abs(d - 90.0) <= 1e-9:
            out.append((i, j))
    return out


def factor_halfwidth(spec: TrackSpec, guide: GuideSpec) -> Tuple[float, float]:
    """(in-plane half-width, axial half-width) of a curved piece."""
    k = _roll_quarter(guide.roll)
    if k is None:
        raise TrackError("GUIDE_FAIL", f"roll {guide.roll!r} is not a multiple of 90 degrees")
    a, b = spec.section
    return (0.5 * a, 0.5 * b) if k % 2 == 0 else (0.5 * b, 0.5 * a)


@dataclass(frozen=True)
class Piece3D:
    kind: str
    start: np.ndarray
    T: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    length: float
    sigma0: float
    N: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0
    angle: float = 0.0
    roll_frame: float = 0.0


@dataclass
class Track3DGeometry:
    spec: TrackSpec
    rows: np.ndarray
    pieces: List[Piece3D]
    pieces_arr: np.ndarray
    wall_names: List[str]

    @property
    def n_walls(self) -> int:
        return self.rows.shape[0]


def build_track3d(spec: TrackSpec) -> Track3DGeometry:
    if spec.dim != 3:
        raise ValueError("build_track3d needs a 3-D spec")
    guides = spec.guides
    if not guides:
        raise TrackError("GUIDE_FAIL", "empty guide list")
    _check_adjacency(guides)
    a, b = spec.section
    p = np.zeros(3)
    T = np.array([1.0, 0.0, 0.0])
    E1 = np.array([0.0, 1.0, 0.0])
    E2 = np.array([0.0, 0.0, 1.0])
    rows, names, pieces = [], [], []
    sigma = 0.0
    for gi, g in enumerate(guides):
        circ = 1.0 if g.is_circular else 0.0
        if g.kind == "straight":
            l = g.length
            for name, n, e, off, w in (("right", E1, E2, -0.5 * a, 0.5 * b), ("left", -E1, E2, 0.5 * a, 0.5 * b),
                                       ("bottom", E2, E1, -0.5 * b, 0.5 * a), ("top", -E2, E1, 0.5 * b, 0.5 * a)):
                base = E1 if name in ("right", "left") else E2
                row = np.zeros(NCOL)
                row[C_TYPE] = PLANE
                row[C_P:C_P + 3] = p + off * base
                row[C_N:C_N + 3] = n
                row[C_U:C_U + 3] = T
                row[C_V:C_V + 3] = e
                row[C_A0] = l
                row[C_A1] = w
                row[C_GUIDE] = gi
                row[C_CIRC] = circ
                rows.append(row)
                names.append(f"g{gi}:{name}")
            pieces.append(Piece3D("straight", p.copy(), T.copy(), E1.copy(), E2.copy(), l, sigma))
            p = p + l * T
            sigma += l
            continue
        k = _roll_quarter(g.roll)
        if k is None:
            raise TrackError("GUIDE_FAIL", f"guide {gi}: roll {g.roll!r} is not a multiple of 90 degrees")
        h, w = factor_halfwidth(spec, g)
        R, alpha = g.radius, g.angle
        if not R > h:
            raise TrackError("GUIDE_FAIL", f"guide {gi}: radius must exceed the in-plane half-width")
        if alpha >= TWO_PI:
            raise TrackError("GUIDE_FAIL", f"guide {gi}: central angle must be < 2*pi")
        tau = 1.0 if g.turn == "left" else -1.0
        rr = math.radians(90.0 * k)
        N = tau * (round(math.cos(rr)) * E1 + round(math.sin(rr)) * E2)
        B = np.cross(T, N)
        c = p + R * N
        ea, eb = -N, T
        for name, rad, side in (("outer", R + h, 1.0), ("inner", R - h, -1.0)):
            row = np.zeros(NCOL)
            row[C_TYPE] = CYL
            row[C_P:C_P + 3] = c
            row[C_N:C_N + 3] = B
            row[C_U:C_U + 3] = ea
            row[C_V:C_V + 3] = eb
            row[C_A0] = rad
            row[C_A1] = alpha
            row[C_A2] = w
            row[C_A3] = side
            row[C_GUIDE] = gi
            row[C_CIRC] = 1.0
            rows.append(row)
            names.append(f"g{gi}:{name}")
        for name, sgn in (("side-", -1.0), ("side+", 1.0)):
            row = np.zeros(NCOL)
            row[C_TYPE] = STRIP
            row[C_P:C_P + 3] = c + sgn * w * B
            row[C_N:C_N + 3] = -sgn * B
            row[C_U:C_U + 3] = ea
            row[C_V:C_V + 3] = eb
            row[C_A0] = R - h
            row[C_A1] = alpha
            row[C_A2] = R + h
            row[C_GUIDE] = gi
            row[C_CIRC] = 1.0
            rows.append(row)
            names.append(f"g{gi}:{name}")
        pieces.append(Piece3D("circular", p.copy(), T.copy(), E1.copy(), E2.copy(), R * alpha, sigma,
                              N.copy(), B.copy(), c.copy(), R, alpha, 90.0 * k))
        p = c + R * (-math.cos(alpha) * N + math.sin(alpha) * T)
        T, E1, E2 = _rot(T, B, alpha), _rot(E1, B, alpha), _rot(E2, B, alpha)
        sigma += R * alpha
    err_p = float(np.linalg.norm(p))
    err_f = max(float(np.linalg.norm(T - [1, 0, 0])), float(np.linalg.norm(E1 - [0, 1, 0])),
                float(np.linalg.norm(E2 - [0, 0, 1])))
    if err_p > CLOSE_TOL or err_f > CLOSE_TOL:
        raise TrackError("CLOSURE_FAIL", f"centerline misses its start by {err_p:.3g} (frame error {err_f:.3g})")
    P = np.zeros((len(pieces), 20))
    for i, pc in enumerate(pieces):
        P[i, 0] = 0.0 if pc.kind == "straight" else 1.0
        P[i, 1:4] = pc.start
        P[i, 4:7] = pc.T
        if pc.kind == "circular":
            P[i, 7:10] = pc.N
            P[i, 10:13] = pc.center
            P[i, 13] = pc.radius
            P[i, 14] = pc.angle
        P[i, 15] = pc.sigma0
        P[i, 16] = pc.roll_frame
    return Track3DGeometry(spec, np.asarray(rows), pieces, P, names)


def planar_embedding(spec2d: TrackSpec, axial: float) -> TrackSpec:
    """The untwisted 3-D track over a planar track: section (2 eps) x axial."""
    guides = tuple(GuideSpec.arc(g.radius, g.angle, g.turn, 0.0) if g.is_circular else g for g in spec2d.guides)
    return TrackSpec(guides, 0.0, 3, (2.0 * spec2d.halfwidth, axial))


# --- Condition H~ -------------------------------------------------------------


def factor_reports(spec: TrackSpec) -> List[GuideReport]:
    """Planar-factor reports of all curved pieces, scaled to their outer radius."""
    out = []
    for i, g in enumerate(spec.guides):
        if g.is_circular:
            h, _ = factor_halfwidth(spec, g)
            out.append(classify_guide(g, h, i))
    return out


@dataclass
class ConditionH3Result:
    satisfied: bool
    reasons: List[str]
    margins: List[float]
    twisted: List[Tuple[int, int]]


def check_condition_H3(spec: TrackSpec, reports: Sequence[GuideReport], source: str = "bound") -> ConditionH3Result:
    by = {r.guide: r for r in reports}
    for r in reports:
        if not r.certified:
            raise UnclassifiedGuide(f"guide {r.guide}: planar factor is neither of type A nor B")
    reasons, margins = [], []
    for i, idx, total, j in straight_gaps(spec.guides):
        ti = by[i].tau_bound if source == "bound" else by[i].tau_numeric
        tj = by[j].tau_bound if source == "bound" else by[j].tau_numeric
        m = total - (ti + tj)
        margins.append(m)
        if not m > 0:
            reasons.append(f"straights {list(idx)} between guides {i} and {j} too short (margin {m:.6g})")
    tw = twisted_pairs(spec)
    if not tw:
        reasons.append("no twisted guide")
    return ConditionH3Result(not reasons, reasons, margins, tw)


# --- compiled tracer ---------------------------------------------------------


@njit(cache=True)
def _dot(R, c, x, y, z):
    return R[c] * x + R[c + 1] * y + R[c + 2] * z


@njit(cache=True)
def _in_span(psi, span):
    return psi <= span + EDGE_TOL or psi >= TWO_PI - EDGE_TOL


@njit(cache=True)
def _hit_wall(R, qx, qy, qz, vx, vy, vz, tmin):
    """(status, t) of the first hit of the ray with one wall row."""
    typ = R[C_TYPE]
    if typ == PLANE or typ == STRIP:
        vn = _dot(R, C_N, vx, vy, vz)
        if vn >= -1e-15:
            return NO_HIT, np.inf
        dx = R[C_P] - qx
        dy = R[C_P + 1] - qy
        dz = R[C_P + 2] - qz
        t = _dot(R, C_N, dx, dy, dz) / vn
        if not t > tmin:
            return NO_HIT, np.inf
        hx = qx + t * vx - R[C_P]
        hy = qy + t * vy - R[C_P + 1]
        hz = qz + t * vz - R[C_P + 2]
        if typ == PLANE:
            u = _dot(R, C_U, hx, hy, hz)
            e = _dot(R, C_V, hx, hy, hz)
            l = R[C_A0]
            w = R[C_A1]
            if u < -EDGE_TOL or u > l + EDGE_TOL or abs(e) > w + EDGE_TOL:
                return NO_HIT, np.inf
            if abs(e) >= w - EDGE_TOL:
                return EDGE, t
            return OK, t
        cu = _dot(R, C_U, hx, hy, hz)
        cv = _dot(R, C_V, hx, hy, hz)
        rho = math.hypot(cu, cv)
        if rho < R[C_A0] - EDGE_TOL or rho > R[C_A2] + EDGE_TOL:
            return NO_HIT, np.inf
        if not _in_span(math.atan2(cv, cu) % TWO_PI, R[C_A1]):
            return NO_HIT, np.inf
        if rho <= R[C_A0] + EDGE_TOL or rho >= R[C_A2] - EDGE_TOL:
            return EDGE, t
        return OK, t
    # cylinder
    dx = qx - R[C_P]
    dy = qy - R[C_P + 1]
    dz = qz - R[C_P + 2]
    db = _dot(R, C_N, dx, dy, dz)
    vb = _dot(R, C_N, vx, vy, vz)
    px = dx - db * R[C_N]
    py = dy - db * R[C_N + 1]
    pz = dz - db * R[C_N + 2]
    wx = vx - vb * R[C_N]
    wy = vy - vb * R[C_N + 1]
    wz = vz - vb * R[C_N + 2]
    aa = wx * wx + wy * wy + wz * wz
    if aa < 1e-24:
        return NO_HIT, np.inf
    rad = R[C_A0]
    bb = px * wx + py * wy + pz * wz
    cc = px * px + py * py + pz * pz - rad * rad
    disc = bb * bb - aa * cc
    if disc < 0.0:
        return NO_HIT, np.inf
    sq = math.sqrt(disc)
    qq = -(bb + math.copysign(sq, bb))
    if qq == 0.0:
        t1 = 0.0
        t2 = 0.0
    else:
        t1 = qq / aa
        t2 = cc / qq
        if t1 > t2:
            t1, t2 = t2, t1
    d2 = disc / aa
    gap = d2 / (rad + math.sqrt(max(rad * rad - d2, 0.0)))
    for k in range(3):
        if k == 0:
            if not (gap <= 1e-12 and t2 > tmin):
                continue
            t = -bb / aa
        elif k == 1:
            t = t1
        else:
            t = t2
        if not t > tmin:
            continue
        hx = dx + t * vx
        hy = dy + t * vy
        hz = dz + t * vz
        ax = _dot(R, C_N, hx, hy, hz)
        cu = _dot(R, C_U, hx, hy, hz)
        cv = _dot(R, C_V, hx, hy, hz)
        if abs(ax) > R[C_A2] + EDGE_TOL or not _in_span(math.atan2(cv, cu) % TWO_PI, R[C_A1]):
            continue
        if k == 0:
            return GRAZING, t
        if abs(ax) >= R[C_A2] - EDGE_TOL:
            return EDGE, t
        return OK, t
    return NO_HIT, np.inf


@njit(cache=True)
def _normal(R, x, y, z):
    if R[C_TYPE] != CYL:
        return R[C_N], R[C_N + 1], R[C_N + 2]
    dx = x - R[C_P]
    dy = y - R[C_P + 1]
    dz = z - R[C_P + 2]
    db = _dot(R, C_N, dx, dy, dz)
    px = dx - db * R[C_N]
    py = dy - db * R[C_N + 1]
    pz = dz - db * R[C_N + 2]
    h = math.sqrt(px * px + py * py + pz * pz)
    s = -R[C_A3] / h
    return s * px, s * py, s * pz


@njit(cache=True)
def step3(W, x, y, z, vx, vy, vz):
    """(status, wall, x1, y1, z1, vx1, vy1, vz1, t)."""
    best = np.inf
    bw = -1
    bst = NO_HIT
    for i in range(W.shape[0]):
        st, t = _hit_wall(W[i], x, y, z, vx, vy, vz, T_MIN)
        if st != NO_HIT and t < best:
            best = t
            bw = i
            bst = st
    if bst != OK:
        return bst, bw, x, y, z, vx, vy, vz, best
    qx = x + best * vx
    qy = y + best * vy
    qz = z + best * vz
    nx, ny, nz = _normal(W[bw], qx, qy, qz)
    dv = vx * nx + vy * ny + vz * nz
    ux = vx - 2.0 * dv * nx
    uy = vy - 2.0 * dv * ny
    uz = vz - 2.0 * dv * nz
    h = math.sqrt(ux * ux + uy * uy + uz * uz)
    ux /= h
    uy /= h
    uz /= h
    if ux * nx + uy * ny + uz * nz < 1e-10:
        return TANGENTIAL, bw, qx, qy, qz, ux, uy, uz, best
    return OK, bw, qx, qy, qz, ux, uy, uz, best


@njit(cache=True)
def _foot(P, g, x, y, z):
    """(centerline arclength at the foot, tangent there)."""
    sx = P[g, 1]
    sy = P[g, 2]
    sz = P[g, 3]
    tx = P[g, 4]
    ty = P[g, 5]
    tz = P[g, 6]
    if P[g, 0] == 0.0:
        u = (x - sx) * tx + (y - sy) * ty + (z - sz) * tz
        return P[g, 15] + u, tx, ty, tz
    nx = P[g, 7]
    ny = P[g, 8]
    nz = P[g, 9]
    dx = x - P[g, 10]
    dy = y - P[g, 11]
    dz = z - P[g, 12]
    psi = math.atan2(dx * tx + dy * ty + dz * tz, -(dx * nx + dy * ny + dz * nz))
    half = 0.5 * P[g, 14]
    psi = (psi - half + math.pi) % TWO_PI - math.pi + half
    c = math.cos(psi)
    s = math.sin(psi)
    return P[g, 15] + P[g, 13] * psi, c * tx + s * nx, c * ty + s * ny, c * tz + s * nz


@njit(cache=True)
def v_star3(W, P, w, x, y, z, vx, vy, vz):
    g = int(W[w, C_GUIDE])
    _, tx, ty, tz = _foot(P, g, x, y, z)
    return vx * tx + vy * ty + vz * tz


@njit(cache=True)
def _put(row, w, sc, vs, x, y, t, z, vz, roll):
    row[0] = w
    row[1] = sc
    row[2] = math.acos(max(-1.0, min(1.0, vs)))
    row[3] = x
    row[4] = y
    row[5] = t
    row[6] = vs
    row[7] = z
    row[8] = vz
    row[9] = roll


@njit(cache=True)
def orbit3(W, P, w, x, y, z, vx, vy, vz, nsteps):
    """Rows (wall, s_center, theta_center, x, y, t, vstar, z, vz, roll_frame)."""
    out = np.empty((nsteps + 1, 10))
    g = int(W[w, C_GUIDE])
    sc, tx, ty, tz = _foot(P, g, x, y, z)
    vs = vx * tx + vy * ty + vz * tz
    _put(out[0], w, sc, vs, x, y, 0.0, z, vz, P[g, 16])
    for k in range(nsteps):
        st, w, x, y, z, vx, vy, vz, t = step3(W, x, y, z, vx, vy, vz)
        if st != OK:
            return out, k + 1, st
        g = int(W[w, C_GUIDE])
        sc, tx, ty, tz = _foot(P, g, x, y, z)
        vs = vx * tx + vy * ty + vz * tz
        _put(out[k + 1], w, sc, vs, x, y, t, z, vz, P[g, 16])
    return out, nsteps + 1, OK


@njit(cache=True)
def unidirectional3(W, P, w, x, y, z, vx, vy, vz, nsteps):
    sign0 = 1.0 if v_star3(W, P, w, x, y, z, vx, vy, vz) > 0 else -1.0
    bad = 0
    for k in range(nsteps):
        st, w, x, y, z, vx, vy, vz, t = step3(W, x, y, z, vx, vy, vz)
        if st != OK:
            return bad, k, st
        if v_star3(W, P, w, x, y, z, vx, vy, vz) * sign0 <= 0.0:
            bad += 1
    return bad, nsteps, OK


@njit(cache=True)
def _perp_basis(vx, vy, vz):
    # first basis vector from the coordinate axis least aligned with v
    ax, ay, az = abs(vx), abs(vy), abs(vz)
    if ax <= ay and ax <= az:
        cx, cy, cz = 1.0, 0.0, 0.0
    elif ay <= az:
        cx, cy, cz = 0.0, 1.0, 0.0
    else:
        cx, cy, cz = 0.0, 0.0, 1.0
    d = cx * vx + cy * vy + cz * vz
    e1x = cx - d * vx
    e1y = cy - d * vy
    e1z = cz - d * vz
    h = math.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x /= h
    e1y /= h
    e1z /= h
    e2x = vy * e1z - vz * e1y
    e2y = vz * e1x - vx * e1z
    e2z = vx * e1y - vy * e1x
    return e1x, e1y, e1z, e2x, e2y, e2z


@njit(cache=True)
def _section_image(W, mx, my, mz, vx, vy, vz, w_expect, m1x, m1y, m1z, v1x, v1y, v1z, e, xi):
    """Image of the section point ``m + dq`` with velocity ``v + dv`` on the
    next section (through ``m1``, normal ``v1``) in the basis ``e`` there."""
    b = _perp_basis(vx, vy, vz)
    px = mx + xi[0] * b[0] + xi[1] * b[3]
    py = my + xi[0] * b[1] + xi[1] * b[4]
    pz = mz + xi[0] * b[2] + xi[1] * b[5]
    ux = vx + xi[2] * b[0] + xi[3] * b[3]
    uy = vy + xi[2] * b[1] + xi[3] * b[4]
    uz = vz + xi[2] * b[2] + xi[3] * b[5]
    h = math.sqrt(ux * ux + uy * uy + uz * uz)
    ux /= h
    uy /= h
    uz /= h
    st, w, qx, qy, qz, wx, wy, wz, t = step3(W, px, py, pz, ux, uy, uz)
    res = np.zeros(4)
    if st != OK or w != w_expect:
        return False, res
    den = wx * v1x + wy * v1y + wz * v1z
    s = ((m1x - qx) * v1x + (m1y - qy) * v1y + (m1z - qz) * v1z) / den
    dx = qx + s * wx - m1x
    dy = qy + s * wy - m1y
    dz = qz + s * wz - m1z
    ddx = wx - v1x
    ddy = wy - v1y
    ddz = wz - v1z
    res[0] = dx * e[0] + dy * e[1] + dz * e[2]
    res[1] = dx * e[3] + dy * e[4] + dz * e[5]
    res[2] = ddx * e[0] + ddy * e[1] + ddz * e[2]
    res[3] = ddx * e[3] + ddy * e[4] + ddz * e[5]
    return True, res


@njit(cache=True)
def _mgs(Q):
    """In-place modified Gram-Schmidt (applied twice); returns log diag R."""
    n = Q.shape[1]
    logs = np.zeros(n)
    for rep in range(2):
        for j in range(n):
            for i in range(j):
                d = 0.0
                for k in range(Q.shape[0]):
                    d += Q[k, i] * Q[k, j]
                for k in range(Q.shape[0]):
                    Q[k, j] -= d * Q[k, i]
            nrm = 0.0
            for k in range(Q.shape[0]):
                nrm += Q[k, j] * Q[k, j]
            nrm = math.sqrt(nrm)
            logs[j] += math.log(nrm)
            for k in range(Q.shape[0]):
                Q[k, j] /= nrm
    return logs


@njit(cache=True)
def lyapunov3_run(W, w, x, y, z, vx, vy, vz, nsteps, every, h):
    """Four exponents via finite-difference Jacobians and periodic QR.

    Returns (running estimates every ``every`` steps as an (m, 4) array,
    steps done, status, number of steps that needed a smaller FD step)."""
    nrec = nsteps // every
    series = np.zeros((nrec, 4))
    Q = np.eye(4)
    tot = np.zeros(4)
    comp = np.zeros(4)
    # base orbit with one flight of look-ahead
    st, w1, x1, y1, z1, vx1, vy1, vz1, t1 = step3(W, x, y, z, vx, vy, vz)
    if st != OK:
        return series[:0], 0, st, 0
    mx = x + 0.5 * t1 * vx
    my = y + 0.5 * t1 * vy
    mz = z + 0.5 * t1 * vz
    cvx, cvy, cvz = vx, vy, vz
    j = 0
    retries = 0
    xi = np.zeros(4)
    J = np.zeros((4, 4))
    for k in range(nsteps):
        st, w2, x2, y2, z2, vx2, vy2, vz2, t2 = step3(W, x1, y1, z1, vx1, vy1, vz1)
        if st != OK:
            return series[:j], k, st, retries
        m1x = x1 + 0.5 * t2 * vx1
        m1y = y1 + 0.5 * t2 * vy1
        m1z = z1 + 0.5 * t2 * vz1
        e = _perp_basis(vx1, vy1, vz1)
        hh = h
        good = False
        for attempt in range(3):
            good = True
            for c in range(4):
                xi[:] = 0.0
                xi[c] = hh
                okp, rp = _section_image(W, mx, my, mz, cvx, cvy, cvz, w1, m1x, m1y, m1z, vx1, vy1, vz1, e, xi)
                xi[c] = -hh
                okm, rm = _section_image(W, mx, my, mz, cvx, cvy, cvz, w1, m1x, m1y, m1z, vx1, vy1, vz1, e, xi)
                if not (okp and okm):
                    good = False
                    break
                for r in range(4):
                    J[r, c] = (rp[r] - rm[r]) / (2.0 * hh)
            if good:
                break
            hh *= 0.01
            retries += 1
        if not good:
            return series[:j], k, FD_MISMATCH, retries
        Q = J @ Q
        if (k + 1) % QR_EVERY == 0:
            logs = _mgs(Q)
            for i in range(4):
                yv = logs[i] - comp[i]
                tv = tot[i] + yv
                comp[i] = (tv - tot[i]) - yv
                tot[i] = tv
        if (k + 1) % every == 0 and j < nrec:
            series[j] = tot / (((k + 1) // QR_EVERY) * QR_EVERY)
            j += 1
        mx, my, mz = m1x, m1y, m1z
        cvx, cvy, cvz = vx1, vy1, vz1
        w1, x1, y1, z1, vx1, vy1, vz1 = w2, x2, y2, z2, vx2, vy2, vz2
    return series, nsteps, OK, retries


# --- Python front end ---------------------------------------------------------


@dataclass(frozen=True)
class Collision3D:
    wall: int
    q: Tuple[float, float, float]
    v: Tuple[float, float, float]
    s_center: float  # centerline arclength of the foot point
    theta_center: float  # angle between v and the centerline tangent at the foot
    vstar: float


def collision3d(geo: Track3DGeometry, wall: int, q, v) -> Collision3D:
    g = int(geo.rows[wall, C_GUIDE])
    sc, tx, ty, tz = _foot(geo.pieces_arr, g, q[0], q[1], q[2])
    vs = v[0] * tx + v[1] * ty + v[2] * tz
    return Collision3D(wall, tuple(q), tuple(v), sc, math.acos(max(-1.0, min(1.0, vs))), vs)


def sample_state3d(geo: Track3DGeometry, rng: np.random.Generator, direction: str = "R") -> Collision3D:
    """Uniform point on the wall surface with a cosine-weighted outgoing
    direction (the invariant measure of the 3-D collision map), restricted
    to positive (R) or negative (L) v*."""
    rows = geo.rows
    areas = np.array([_wall_area(r) for r in rows])
    cum = np.cumsum(areas) / areas.sum()
    while True:
        i = int(np.searchsorted(cum, rng.random()))
        q = _wall_point(rows[i], rng)
        n = np.array(_normal(rows[i], *q))
        # cosine-weighted hemisphere
        u1, u2 = rng.random(), rng.random()
        r, phi = math.sqrt(u1), TWO_PI * u2
        e = np.array(_perp_basis(*n))
        v = r * math.cos(phi) * e[:3] + r * math.sin(phi) * e[3:] + math.sqrt(max(0.0, 1.0 - u1)) * n
        v /= np.linalg.norm(v)
        if v @ n < 1e-6:
            continue
        st = collision3d(geo, i, q, v)
        if (direction == "R" and st.vstar > 1e-9) or (direction == "L" and st.vstar < -1e-9) or direction == "any":
            return st


def _wall_area(r: np.ndarray) -> float:
    if r[C_TYPE] == PLANE:
        return r[C_A0] * 2.0 * r[C_A1]
    if r[C_TYPE] == CYL:
        return r[C_A0] * r[C_A1] * 2.0 * r[C_A2]
    return 0.5 * r[C_A1] * (r[C_A2] ** 2 - r[C_A0] ** 2)


def _wall_point(r: np.ndarray, rng: np.random.Generator) -> Tuple[float, float, float]:
    P, N, U, V = r[C_P:C_P + 3], r[C_N:C_N + 3], r[C_U:C_U + 3], r[C_V:C_V + 3]
    if r[C_TYPE] == PLANE:
        q = P + rng.uniform(0.0, r[C_A0]) * U + rng.uniform(-r[C_A1], r[C_A1]) * V
    elif r[C_TYPE] == CYL:
        psi = rng.uniform(0.0, r[C_A1])
        q = P + r[C_A0] * (math.cos(psi) * U + math.sin(psi) * V) + rng.uniform(-r[C_A2], r[C_A2]) * N
    else:
        psi = rng.uniform(0.0, r[C_A1])
        rho = math.sqrt(rng.uniform(r[C_A0] ** 2, r[C_A2] ** 2))
        q = P + rho * (math.cos(psi) * U + math.sin(psi) * V)
    return tuple(float(c) for c in q)


def lift_planar_state(geo3: Track3DGeometry, geo2, x: dyn.CollisionState) -> Tuple[int, tuple, tuple]:
    """3-D wall, point and velocity of an in-plane copy of a planar state."""
    q = (x.q[0], x.q[1], 0.0)
    best, bi = math.inf, -1
    for i, r in enumerate(geo3.rows):
        if r[C_TYPE] == STRIP or int(r[C_GUIDE]) != x.guide:
            continue
        if r[C_TYPE] == PLANE and abs(r[C_N + 2]) > 0.5:
            continue
        if r[C_TYPE] == CYL:
            d = math.hypot(q[0] - r[C_P], q[1] - r[C_P + 1])
            dist = abs(d - r[C_A0])
        else:
            dist = abs((q[0] - r[C_P]) * r[C_N] + (q[1] - r[C_P + 1]) * r[C_N + 1])
        if dist < best:
            best, bi = dist, i
    return bi, q, (x.v[0], x.v[1], 0.0)


@dataclass
class Lyapunov3Result:
    seeds: List[int]
    final: np.ndarray  # (n_seeds, 4), sorted descending
    series: List[np.ndarray]
    steps_done: List[int]
    terminations: List[str]
    fd_retries: List[int]

    @property
    def pairing(self) -> np.ndarray:
        """max_i |lambda_i + lambda_{5-i}| per seed."""
        f = self.final
        return np.maximum(np.abs(f[:, 0] + f[:, 3]), np.abs(f[:, 1] + f[:, 2]))


def lyapunov_spectrum3d(geo: Track3DGeometry, seeds: Sequence[int], steps: int = 1_000_000, every: int = 1000,
                        h: float = FD_STEP, direction: str = "R") -> Lyapunov3Result:
    finals, series, done, why, retr = [], [], [], [], []
    for seed in seeds:
        x = sample_state3d(geo, dyn.make_rng(seed), direction)
        s, n, st, rt = lyapunov3_run(geo.rows, x.wall, *x.q, *x.v, steps, every, h)
        s = np.asarray(s)
        series.append(s)
        done.append(int(n))
        why.append("completed" if st == OK else STATUS_NAMES[st])
        retr.append(int(rt))
        finals.append(np.sort(s[-1])[::-1] if len(s) else np.full(4, np.nan))
    return Lyapunov3Result(list(seeds), np.asarray(finals), series, done, why, retr)


CSV_HEADER3 = "step,wall,s,theta,x,y,t_flight,vstar,z,vz,roll_frame"


def orbit3_csv(rows: np.ndarray, reason: str) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER3 + "\n")
    for k, r in enumerate(rows):
        buf.write(f"{k},{int(r[0])}," + ",".join(repr(float(c)) for c in r[1:10]) + "\n")
    buf.write(f"# termination={reason} collisions={len(rows) - 1}\n")
    return buf.getvalue()


def fast_orbit3(geo: Track3DGeometry, x: Collision3D, nsteps: int):
    rows, n, st = orbit3(geo.rows, geo.pieces_arr, x.wall, *x.q, *x.v, nsteps)
    return rows[:n], ("completed" if st == OK else STATUS_NAMES[st])


def centerline_points(geo: Track3DGeometry, per_arc: int = 96) -> np.ndarray:
    """Points along the closed 3-D centerline (first point not repeated)."""
    pts = []
    for pc in geo.pieces:
        if pc.kind == "straight":
            pts.append(pc.start)
            continue
        n = max(4, int(per_arc * pc.angle / math.pi))
        for k in range(n):
            psi = pc.angle * k / n
            pts.append(pc.center + pc.radius * (-math.cos(psi) * pc.N + math.sin(psi) * pc.T))
    return np.asarray(pts)
