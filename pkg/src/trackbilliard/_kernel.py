"""Compiled inner loops for planar tables.

Walls are packed into a float array with one row per wall (see
``pack_walls``) and the centerline into one row per guide (``pack_pieces``).
Every routine reports a status code instead of raising:

    0 ok, 1 grazing, 2 segment endpoint, 3 no hit, 4 tangential collision,
    5 step limit
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .geom_core import ENDPOINT_TOL, GRAZE_TOL, T_MIN

TWO_PI = 2.0 * math.pi
SIN_MIN = 1e-10

OK, GRAZING, ENDPOINT, NO_HIT, TANGENTIAL, STEP_LIMIT = range(6)
STATUS_NAMES = ("ok", "grazing", "endpoint", "no-hit", "singular", "step-limit")

# wall row layout
W_TYPE, W_X0, W_Y0, W_R_X1, W_START_Y1, W_SPAN_NX, W_SIDE_NY = range(7)
W_LOOP, W_SOFF, W_LEN, W_ORIENT, W_SIGMA, W_GUIDE, W_KAPPA, W_CIRC = range(7, 15)
W_COLS = 15

# centerline row layout
P_KIND, P_X, P_Y, P_HEAD, P_LEN, P_CX, P_CY, P_R, P_TURN, P_PSI0 = range(10)
P_COLS = 10


def pack_walls(geo) -> np.ndarray:
    W = np.zeros((len(geo.walls), W_COLS))
    for i, w in enumerate(geo.walls):
        sh = w.shape
        if w.is_arc:
            W[i, :7] = (1.0, sh.center[0], sh.center[1], sh.radius, sh.start, sh.span,
                        1.0 if sh.side == "outer" else -1.0)
        else:
            W[i, :7] = (0.0, sh.a[0], sh.a[1], sh.b[0], sh.b[1], sh.normal[0], sh.normal[1])
        W[i, 7:] = (w.loop, w.s_offset, w.length, w.orient, w.sigma, w.guide, w.curvature,
                    1.0 if geo.guide_kinds[w.guide] == "circular" else 0.0)
    return W


def pack_pieces(geo) -> np.ndarray:
    P = np.zeros((len(geo.centerline), P_COLS))
    for i, p in enumerate(geo.centerline):
        P[i] = (0.0 if p.kind == "straight" else 1.0, p.start[0], p.start[1], p.heading, p.length,
                p.center[0], p.center[1], p.radius, p.turn, p.psi0)
    return P


@njit(cache=True)
def _arc_contains(cx, cy, start, span, px, py):
    if span >= TWO_PI:
        return True
    rel = (math.atan2(py - cy, px - cx) - start) % TWO_PI
    return rel <= span + 1e-12 or rel >= TWO_PI - 1e-12


@njit(cache=True)
def next_hit(W, x, y, vx, vy, tmin):
    """First wall hit along the ray: (status, wall, t)."""
    best = np.inf
    bw = -1
    st = NO_HIT
    for i in range(W.shape[0]):
        if W[i, W_TYPE] == 1.0:
            cx = W[i, W_X0]
            cy = W[i, W_Y0]
            rad = W[i, W_R_X1]
            start = W[i, W_START_Y1]
            span = W[i, W_SPAN_NX]
            ox = x - cx
            oy = y - cy
            b = ox * vx + oy * vy
            c = ox * ox + oy * oy - rad * rad
            disc = b * b - c
            if disc < 0.0:
                continue
            sq = math.sqrt(disc)
            q = -(b + math.copysign(sq, b))
            if q == 0.0:
                t1 = 0.0
                t2 = 0.0
            else:
                t1 = q
                t2 = c / q
                if t1 > t2:
                    t1, t2 = t2, t1
            gap = disc / (rad + math.sqrt(max(rad * rad - disc, 0.0)))
            if gap <= GRAZE_TOL and t2 > tmin:
                tm = -b
                if _arc_contains(cx, cy, start, span, x + tm * vx, y + tm * vy):
                    if tm < best:
                        best = tm
                        bw = i
                        st = GRAZING
                    continue
            for k in range(2):
                t = t1 if k == 0 else t2
                if t > tmin:
                    if _arc_contains(cx, cy, start, span, x + t * vx, y + t * vy):
                        if t < best:
                            best = t
                            bw = i
                            st = OK
                        break
        else:
            ax = W[i, W_X0]
            ay = W[i, W_Y0]
            ex = W[i, W_R_X1] - ax
            ey = W[i, W_START_Y1] - ay
            length = W[i, W_LEN]
            denom = vx * ey - vy * ex
            if abs(denom) <= 1e-15 * length:
                continue
            wx = ax - x
            wy = ay - y
            t = (wx * ey - wy * ex) / denom
            if not t > tmin or t >= best:
                continue
            along = (wx * vy - wy * vx) / denom * length
            if along < -ENDPOINT_TOL or along > length + ENDPOINT_TOL:
                continue
            best = t
            bw = i
            if along <= ENDPOINT_TOL or along >= length - ENDPOINT_TOL:
                st = ENDPOINT
            else:
                st = OK
    return st, bw, best


@njit(cache=True)
def wall_frame(W, i, qx, qy):
    """(tx, ty, nx, ny, s) at a point of wall ``i``: oriented loop tangent,
    inward normal and global arclength."""
    if W[i, W_TYPE] == 1.0:
        cx = W[i, W_X0]
        cy = W[i, W_Y0]
        rad = W[i, W_R_X1]
        ux = qx - cx
        uy = qy - cy
        h = math.hypot(ux, uy)
        ux /= h
        uy /= h
        side = W[i, W_SIDE_NY]
        orient = W[i, W_ORIENT]
        nx = -side * ux
        ny = -side * uy
        tx = -orient * uy
        ty = orient * ux
        span = W[i, W_SPAN_NX]
        rel = (math.atan2(uy, ux) - W[i, W_START_Y1]) % TWO_PI
        if span < TWO_PI and rel > span + 0.5 * (TWO_PI - span):
            rel -= TWO_PI
        u = rel * rad
        if orient < 0:
            u = W[i, W_LEN] - u
    else:
        ax = W[i, W_X0]
        ay = W[i, W_Y0]
        length = W[i, W_LEN]
        tx = (W[i, W_R_X1] - ax) / length
        ty = (W[i, W_START_Y1] - ay) / length
        nx = W[i, W_SPAN_NX]
        ny = W[i, W_SIDE_NY]
        u = (qx - ax) * tx + (qy - ay) * ty
    return tx, ty, nx, ny, W[i, W_SOFF] + u


@njit(cache=True)
def v_star(P, g, qx, qy, vx, vy):
    """Velocity component along the centerline tangent at the foot of the
    transverse section through ``q`` in guide ``g``."""
    if P[g, P_KIND] == 0.0:
        h = P[g, P_HEAD]
        return vx * math.cos(h) + vy * math.sin(h)
    turn = P[g, P_TURN]
    rad = P[g, P_R]
    psi = math.atan2(qy - P[g, P_CY], qx - P[g, P_CX])
    half = 0.5 * P[g, P_LEN] / rad
    rel = (turn * (psi - P[g, P_PSI0]) - half + math.pi) % TWO_PI - math.pi + half
    h = P[g, P_HEAD] + turn * rel
    return vx * math.cos(h) + vy * math.sin(h)


@njit(cache=True)
def collide(W, i, qx, qy, vx, vy):
    """Reflect at wall ``i``: (vx1, vy1, theta, s, norm_drift)."""
    tx, ty, nx, ny, s = wall_frame(W, i, qx, qy)
    dv = vx * nx + vy * ny
    wx = vx - 2.0 * dv * nx
    wy = vy - 2.0 * dv * ny
    nrm = math.hypot(wx, wy)
    drift = abs(nrm - 1.0)
    wx /= nrm
    wy /= nrm
    th = math.atan2(wx * nx + wy * ny, wx * tx + wy * ty)
    return wx, wy, th, s, drift


@njit(cache=True)
def tangent_matrix(k0, sin0, sig0, k1, sin1, sig1, t):
    """Differential of the collision map in (s, theta) coordinates."""
    e = sig0 * sig1
    a = e * (t * k0 - sin0) / sin1
    b = e * t / sin1
    c = k1 * a - e * k0
    d = k1 * b - e
    return a, b, c, d


@njit(cache=True)
def step(W, w, x, y, vx, vy):
    """One collision: (status, wall, x1, y1, vx1, vy1, theta1, s1, t, drift)."""
    st, w1, t = next_hit(W, x, y, vx, vy, T_MIN)
    if st != OK:
        return st, w1, x, y, vx, vy, 0.0, 0.0, t, 0.0
    qx = x + t * vx
    qy = y + t * vy
    wx, wy, th, s, drift = collide(W, w1, qx, qy, vx, vy)
    if math.sin(th) < SIN_MIN:
        return TANGENTIAL, w1, qx, qy, wx, wy, th, s, t, drift
    return OK, w1, qx, qy, wx, wy, th, s, t, drift


@njit(cache=True)
def _row(r, w, s, th, x, y, t, vs):
    r[0] = w
    r[1] = s
    r[2] = th
    r[3] = x
    r[4] = y
    r[5] = t
    r[6] = vs


@njit(cache=True)
def orbit(W, P, w, x, y, vx, vy, nsteps):
    """Orbit table: rows (wall, s, theta, x, y, t_flight, vstar), the count of
    valid rows, a status code and the largest speed drift."""
    out = np.empty((nsteps + 1, 7))
    tx, ty, nx, ny, s = wall_frame(W, w, x, y)
    th = math.atan2(vx * nx + vy * ny, vx * tx + vy * ty)
    g = int(W[w, W_GUIDE])
    _row(out[0], w, s, th, x, y, 0.0, v_star(P, g, x, y, vx, vy))
    drift_max = 0.0
    for k in range(nsteps):
        st, w, x, y, vx, vy, th, s, t, drift = step(W, w, x, y, vx, vy)
        if st != OK:
            return out, k + 1, st, drift_max
        drift_max = max(drift_max, drift)
        g = int(W[w, W_GUIDE])
        _row(out[k + 1], w, s, th, x, y, t, v_star(P, g, x, y, vx, vy))
    return out, nsteps + 1, OK, drift_max


@njit(cache=True)
def unidirectional_run(W, P, w, x, y, vx, vy, nsteps):
    """(violations, steps done, status, initial sign, max drift).

    A violation is a collision where v* has the opposite sign to the first
    collision's v*."""
    g = int(W[w, W_GUIDE])
    sign0 = 1.0 if v_star(P, g, x, y, vx, vy) > 0 else -1.0
    bad = 0
    drift_max = 0.0
    for k in range(nsteps):
        st, w, x, y, vx, vy, th, s, t, drift = step(W, w, x, y, vx, vy)
        if st != OK:
            return bad, k, st, sign0, drift_max
        drift_max = max(drift_max, drift)
        g = int(W[w, W_GUIDE])
        if v_star(P, g, x, y, vx, vy) * sign0 <= 0.0:
            bad += 1
    return bad, nsteps, OK, sign0, drift_max


@njit(cache=True)
def _kahan(total, comp, value):
    yv = value - comp
    tv = total + yv
    comp = (tv - total) - yv
    return tv, comp


@njit(cache=True)
def lyapunov_run(W, w, x, y, vx, vy, ds, dth, nsteps, every):
    """Top exponent by tangent transport with per-step renormalization.

    Returns (running estimates at multiples of ``every``, steps done, status).
    The logarithms are accumulated with compensated summation.
    """
    nrec = nsteps // every
    series = np.empty(nrec)
    tx, ty, nx, ny, s = wall_frame(W, w, x, y)
    th = math.atan2(vx * nx + vy * ny, vx * tx + vy * ty)
    k0 = W[w, W_KAPPA]
    sg0 = W[w, W_SIGMA]
    nrm = math.hypot(ds, dth)
    ds /= nrm
    dth /= nrm
    total = 0.0
    comp = 0.0
    j = 0
    for k in range(nsteps):
        st, w1, x, y, vx, vy, th1, s, t, drift = step(W, w, x, y, vx, vy)
        if st != OK:
            return series[:j], k, st
        k1 = W[w1, W_KAPPA]
        sg1 = W[w1, W_SIGMA]
        a, b, c, d = tangent_matrix(k0, math.sin(th), sg0, k1, math.sin(th1), sg1, t)
        ds, dth = a * ds + b * dth, c * ds + d * dth
        nrm = math.hypot(ds, dth)
        ds /= nrm
        dth /= nrm
        total, comp = _kahan(total, comp, math.log(nrm))
        w, th, k0, sg0 = w1, th1, k1, sg1
        if (k + 1) % every == 0 and j < nrec:
            series[j] = total / (k + 1)
            j += 1
    return series, nsteps, OK


@njit(cache=True)
def _fminus(sin_th, kap, ds, dth):
    den = kap * ds - dth
    if den == 0.0:
        return np.inf
    return sin_th * ds / den


@njit(cache=True)
def _fplus(sin_th, kap, ds, dth):
    den = kap * ds + dth
    if den == 0.0:
        return np.inf
    return sin_th * ds / den


@njit(cache=True)
def advance_to_entry(W, w, x, y, vx, vy, max_steps):
    """Iterate until an entering collision of a circular guide.

    Returns (status, wall, x, y, vx, vy, theta, steps)."""
    th = 0.0
    for k in range(max_steps):
        g_prev = W[w, W_GUIDE]
        st, w1, x, y, vx, vy, th, s, t, drift = step(W, w, x, y, vx, vy)
        if st != OK:
            return st, w1, x, y, vx, vy, th, k
        w = w1
        if W[w, W_CIRC] == 1.0 and W[w, W_GUIDE] != g_prev:
            return OK, w, x, y, vx, vy, th, k + 1
    return STEP_LIMIT, w, x, y, vx, vy, th, max_steps


@njit(cache=True)
def cone_return(W, tau, w, x, y, vx, vy, max_steps):
    """Transport the cone at an entering collision to the next entering one.

    ``tau`` holds the focal length per guide.  Returns an array

        [status, steps, wall_y, f_minus(y) for the lower edge, the upper edge
         and an interior vector, tau(y), f_plus at the guide exit for the
         three vectors, tau1, tau2, straight flight, x_y, y_y, vx_y, vy_y,
         n(x)]
    """
    out = np.full(20, np.nan)
    tx, ty, nx, ny, s = wall_frame(W, w, x, y)
    th = math.atan2(vx * nx + vy * ny, vx * tx + vy * ty)
    g0 = W[w, W_GUIDE]
    k0 = W[w, W_KAPPA]
    sg0 = W[w, W_SIGMA]
    sin0 = math.sin(th)
    tt = tau[int(g0)]
    # slopes kappa - sin/f for f = tau, inf, 2 tau
    vs = np.empty((3, 2))
    vs[0, 0] = 1.0
    vs[0, 1] = k0 - sin0 / tt
    vs[1, 0] = 1.0
    vs[1, 1] = k0
    vs[2, 0] = 1.0
    vs[2, 1] = k0 - sin0 / (2.0 * tt)
    m00, m01, m10, m11 = 1.0, 0.0, 0.0, 1.0
    kin = k0
    sin_in = sin0
    inside = True
    flight = 0.0
    n_in = 0
    for k in range(max_steps):
        st, w1, x1, y1, vx1, vy1, th1, s1, t, drift = step(W, w, x, y, vx, vy)
        if st != OK:
            out[0] = st
            out[1] = k
            return out
        k1 = W[w1, W_KAPPA]
        sg1 = W[w1, W_SIGMA]
        g1 = W[w1, W_GUIDE]
        if inside and g1 != g0:
            # the previous collision was the guide exit
            inside = False
            for j in range(3):
                out[7 + j] = _fplus(math.sin(th), k0, vs[j, 0], vs[j, 1])
            p = m00 + m01 * kin
            q = m10 + m11 * kin
            sex = math.sin(th)
            a_ = sex * p
            b_ = -sex * m01 * sin_in
            c_ = k0 * p + q
            d_ = -(k0 * m01 + m11) * sin_in
            B = d_ - a_
            disc = B * B + 4.0 * b_ * c_
            if disc >= 0.0 and c_ != 0.0:
                sq = math.sqrt(disc)
                qq = -0.5 * (B + math.copysign(sq, B))
                f1 = qq / c_
                f2 = -b_ / qq if qq != 0.0 else 0.0
                out[10] = max(f1, f2)
                out[11] = min(f1, f2)
            out[19] = n_in
        a, b, c, d = tangent_matrix(k0, math.sin(th), sg0, k1, math.sin(th1), sg1, t)
        for j in range(3):
            u0 = vs[j, 0]
            u1 = vs[j, 1]
            vs[j, 0] = a * u0 + b * u1
            vs[j, 1] = c * u0 + d * u1
            h = math.hypot(vs[j, 0], vs[j, 1])
            vs[j, 0] /= h
            vs[j, 1] /= h
        if inside:
            m00, m01, m10, m11 = (a * m00 + b * m10, a * m01 + b * m11,
                                  c * m00 + d * m10, c * m01 + d * m11)
            n_in += 1
        else:
            flight += t
        entering = W[w1, W_CIRC] == 1.0 and g1 != W[w, W_GUIDE]
        w, x, y, vx, vy, th, k0, sg0 = w1, x1, y1, vx1, vy1, th1, k1, sg1
        if entering and not (g1 == g0 and inside):
            ty_ = tau[int(g1)]
            for j in range(3):
                out[3 + j] = _fminus(math.sin(th), k0, vs[j, 0], vs[j, 1])
            out[0] = OK
            out[1] = k + 1
            out[2] = w
            out[6] = ty_
            out[12] = flight
            out[13] = x
            out[14] = y
            out[15] = vx
            out[16] = vy
            return out
    out[0] = STEP_LIMIT
    out[1] = max_steps
    return out
