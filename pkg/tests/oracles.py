"""Independent reference computations used by the tests.

Nothing here imports the package's geometry or guide code: the tracers are
written directly from the definitions (reflection in circles, crossings of
radial lines) so agreement with the package is a genuine cross-check.
"""

import math

import numpy as np


def circle_bisect(p, d, center, radius, t_lo, t_hi, iters=200):
    """Root of |p + t d - center| - radius on [t_lo, t_hi] by bisection."""
    f = lambda t: math.hypot(p[0] + t * d[0] - center[0], p[1] + t * d[1] - center[1]) - radius
    a, b = t_lo, t_hi
    fa = f(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _first_circle(p, d, rad, tmin):
    """Smallest t > tmin with |p + t d| = rad, by scanning then bisection."""
    b = p[0] * d[0] + p[1] * d[1]
    c = p[0] ** 2 + p[1] ** 2 - rad * rad
    disc = b * b - c
    if disc < 0:
        return math.inf
    # bracket the roots with the midpoint of the chord, then refine by bisection
    tm = -b
    half = math.sqrt(disc)
    # the near root lies in the first bracket; the far one is only needed
    # when the near one is behind the start point
    for lo, hi in ((tm - 2 * half - 1.0, tm), (tm, tm + 2 * half + 1.0)):
        f_lo = math.hypot(p[0] + lo * d[0], p[1] + lo * d[1]) - rad
        f_hi = math.hypot(p[0] + hi * d[0], p[1] + hi * d[1]) - rad
        if f_lo * f_hi > 0:
            continue
        t = circle_bisect(p, d, (0.0, 0.0), rad, lo, hi, iters=80)
        # polish with one Newton step on |q|^2 - rad^2
        q = (p[0] + t * d[0], p[1] + t * d[1])
        g = q[0] ** 2 + q[1] ** 2 - rad * rad
        dg = 2 * (q[0] * d[0] + q[1] * d[1])
        if dg != 0:
            t -= g / dg
        if t > tmin:
            return t
    return math.inf


def _radial(p, d, ang, r, tmin):
    e = (math.cos(ang), math.sin(ang))
    det = d[0] * (-e[1]) - d[1] * (-e[0])
    if abs(det) < 1e-15:
        return math.inf
    # p + t d = u e
    t = ((-p[0]) * (-e[1]) - (-p[1]) * (-e[0])) / det
    u = (d[0] * (-p[1]) - d[1] * (-p[0])) / det
    if t > tmin and r <= u <= 1.0:
        return t
    return math.inf


def trace_sector(r, alpha, psi, theta, max_hits=100000, tmin=1e-9, record=False):
    """Brute-force billiard in the annular sector r < |q| < 1, 0 < arg q < alpha,
    started from the outer circle at polar angle ``psi`` with angle ``theta``
    to the counterclockwise tangent.  The radial edges are transparent: the
    trace stops when the particle crosses one.

    Returns dict(n1, inner, exit_psi, exit_on_inner, inner_exit_psi, theta_out).
    With ``record`` the dict also holds ``hits``: one tuple per collision
    (wall, theta, flight, handedness) where wall is 0 for the outer circle,
    theta is the outgoing angle to the counterclockwise tangent and
    handedness is the sign of tangent x inward normal.  The entry collision
    comes first with flight 0.
    """
    p = (math.cos(psi), math.sin(psi))
    tang = (-math.sin(psi), math.cos(psi))
    nrm = (-math.cos(psi), -math.sin(psi))
    d = (math.cos(theta) * tang[0] + math.sin(theta) * nrm[0], math.cos(theta) * tang[1] + math.sin(theta) * nrm[1])
    n1 = inner = 0
    last_outer = psi
    last_wall = 0
    last_inner_psi = None
    th_out = theta
    hits = [(0, theta, 0.0, 1.0)]
    for _ in range(max_hits):
        to = _first_circle(p, d, 1.0, tmin)
        ti = _first_circle(p, d, r, tmin)
        tf = min(_radial(p, d, 0.0, r, tmin), _radial(p, d, alpha, r, tmin))
        if tf < min(to, ti):
            out = dict(n1=n1, inner=inner, exit_psi=last_outer, exit_on_inner=last_wall == 1,
                       inner_exit_psi=last_inner_psi if last_wall == 1 else None, theta_out=th_out)
            if record:
                out["hits"] = hits
            return out
        if to <= ti:
            t, wall = to, 0
        else:
            t, wall = ti, 1
        q = (p[0] + t * d[0], p[1] + t * d[1])
        rho = math.hypot(*q)
        u = (q[0] / rho, q[1] / rho)
        n = (-u[0], -u[1]) if wall == 0 else u
        dv = d[0] * n[0] + d[1] * n[1]
        d = (d[0] - 2 * dv * n[0], d[1] - 2 * dv * n[1])
        tg = (-u[1], u[0])
        th_out = math.atan2(d[0] * n[0] + d[1] * n[1], d[0] * tg[0] + d[1] * tg[1])
        hits.append((wall, th_out, t, math.copysign(1.0, tg[0] * n[1] - tg[1] * n[0])))
        ang = math.atan2(q[1], q[0]) % (2 * math.pi)
        if ang > alpha + 1e-9:
            ang -= 2 * math.pi
        if wall == 0:
            n1 += 1
            last_outer = ang
        else:
            inner += 1
            last_inner_psi = ang
        last_wall = wall
        p = q
    raise RuntimeError("too many hits")


def central_jacobian(f, x, h):
    """Central-difference Jacobian of f: R^n -> R^m at x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.column_stack(cols)
