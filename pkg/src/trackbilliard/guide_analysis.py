"""Closed-form analysis of one circular guide, normalized to outer radius 1.

The guide is the annular sector ``r < |q| < 1``, ``0 <= arg q <= alpha``.
Both circles are oriented counterclockwise and ``theta`` is measured from
that orientation, so a particle with ``theta < pi/2`` advances in angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numba import njit

HALF_PI = 0.5 * math.pi
SINGULAR_TOL = 1e-12


class Singular(ValueError):
    """Angle too close to the grazing values beta_bar or pi - beta_bar."""


class NonpositiveAdvance(ValueError):
    """delta(theta) vanishes: the chord map does not advance."""


class Degenerate(ValueError):
    """Transfer map without two real fixed points."""


class BoundViolation(AssertionError):
    """Numeric focal length exceeds the analytic bound."""


@dataclass(frozen=True)
class NormalizedGuide:
    r: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("inner radius must lie in (0, 1)")
        if not 0 < self.alpha < 2 * math.pi:
            raise ValueError("central angle must lie in (0, 2*pi)")

    @property
    def beta_bar(self) -> float:
        return math.acos(self.r)

    @property
    def is_type_a(self) -> bool:
        return self.alpha >= math.pi

    @property
    def is_type_b(self) -> bool:
        return self.r < 0.5


@dataclass(frozen=True)
class GuideEntryState:
    """First guide collision: polar position ``psi`` in [0, alpha] and angle
    ``theta`` to the counterclockwise tangent of the circle it lies on."""

    psi: float
    theta: float
    on_inner: bool = False


def in_middle_band(theta: float, guide: NormalizedGuide) -> bool:
    bb = guide.beta_bar
    return bb <= theta <= math.pi - bb


def delta(theta: float, guide: NormalizedGuide) -> float:
    """Half the central angle between consecutive outer-circle collisions."""
    if in_middle_band(theta, guide):
        return theta - math.acos(max(-1.0, min(1.0, math.cos(theta) / guide.r)))
    return theta


def signed_advance(theta: float, guide: NormalizedGuide) -> float:
    """Actual (signed) polar advance between consecutive outer collisions.

    Equals ``2*delta`` except beyond ``pi - beta_bar`` where the chord runs
    backwards and ``2*delta`` is only correct modulo ``2*pi``.
    """
    if theta > math.pi - guide.beta_bar:
        return 2.0 * theta - 2.0 * math.pi
    return 2.0 * delta(theta, guide)


def _check_singular(theta: float, guide: NormalizedGuide) -> None:
    bb = guide.beta_bar
    if abs(theta - bb) < SINGULAR_TOL or abs(theta - (math.pi - bb)) < SINGULAR_TOL:
        raise Singular(f"theta={theta!r} is within {SINGULAR_TOL} of a grazing angle")


def delta_prime(theta: float, guide: NormalizedGuide) -> float:
    _check_singular(theta, guide)
    if not in_middle_band(theta, guide):
        return 1.0
    return 1.0 - math.sin(theta) / math.sqrt(guide.r ** 2 - math.cos(theta) ** 2)


def delta_second(theta: float, guide: NormalizedGuide) -> float:
    _check_singular(theta, guide)
    if not in_middle_band(theta, guide):
        return 0.0
    r2 = guide.r ** 2
    return math.cos(theta) * (1.0 - r2) / (r2 - math.cos(theta) ** 2) ** 1.5


@dataclass(frozen=True)
class AdvanceResult:
    exit_psi: float  # last outer-circle collision
    theta: float
    n1: int
    inner_hits: int
    exit_on_inner: bool  # last guide collision is on the inner circle
    inner_exit_psi: Optional[float] = None

    @property
    def n(self) -> int:
        return self.n1 + self.inner_hits


def advance(state: GuideEntryState, guide: NormalizedGuide) -> AdvanceResult:
    """Iterate the chord map from an outer-circle collision until the next
    outer collision would leave the sector."""
    if state.on_inner:
        raise ValueError("advance starts from an outer-circle collision")
    theta, alpha = state.theta, guide.alpha
    step = signed_advance(theta, guide)
    if abs(step) <= 2e-12:
        raise NonpositiveAdvance(f"delta({theta!r}) = 0")
    psi, n1 = state.psi, 0
    while 0.0 <= psi + step <= alpha:
        psi += step
        n1 += 1
    middle = in_middle_band(theta, guide)
    inner = n1 if middle else 0
    tail = psi + 0.5 * step
    exit_on_inner = middle and 0.0 <= tail <= alpha
    if exit_on_inner:
        inner += 1
    return AdvanceResult(psi, theta, n1, inner, exit_on_inner, tail if exit_on_inner else None)


def _reduced(theta: float) -> float:
    return theta if theta <= HALF_PI else math.pi - theta


def chi(state: GuideEntryState, guide: NormalizedGuide) -> float:
    n1 = advance(state, guide).n1
    return 2.0 * n1 * delta_prime(state.theta, guide)


def omega(state: GuideEntryState, guide: NormalizedGuide) -> float:
    n1 = advance(state, guide).n1
    return guide.alpha - 2.0 * n1 * abs(delta(_reduced(state.theta), guide))


def theta_hat(guide: NormalizedGuide, level: float = -1.5, tol: float = 1e-12) -> float:
    """Angle in (beta_bar, pi/2] where delta' first reaches ``level``.

    Returns pi/2 when delta' stays below ``level`` on the whole band, which
    happens for r <= 1/(1 - level).
    """
    lo, hi = guide.beta_bar, HALF_PI
    if 1.0 - 1.0 / guide.r <= level:
        return HALF_PI
    f = lambda t: 1.0 - math.sin(t) / math.sqrt(guide.r ** 2 - math.cos(t) ** 2) - level
    lo += 1e-15
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def compute_c(guide: NormalizedGuide) -> float:
    """Constant c > 2 with chi <= -c on middle-band entering states (type A)."""
    if not guide.is_type_a:
        raise ValueError("compute_c needs a guide with alpha >= pi")
    th = theta_hat(guide)
    if th >= HALF_PI:
        return 3.0
    c = min(3.0, 2.0 * (guide.alpha - 2.0 * delta(th, guide)) / (math.pi - 2.0 * th))
    assert c > 2.0, c
    return c


def c_tilde(guide: NormalizedGuide) -> float:
    cands = []
    if guide.is_type_a:
        cands.append(compute_c(guide))
    if guide.is_type_b:
        cands.append(2.0 * (1.0 / guide.r - 1.0))
    if not cands:
        raise ValueError("guide is neither of type A nor of type B")
    return max(cands)


def tau_bound_from_c(c: float) -> float:
    return c / (c - 2.0)


# --- Cartesian passage through the normalized guide -----------------------

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _circle_hit(px, py, dx, dy, rad, alpha, tmin):
    b = px * dx + py * dy
    c = px * px + py * py - rad * rad
    disc = b * b - c
    if disc < 0.0:
        return np.inf
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
    for k in range(2):
        t = t1 if k == 0 else t2
        if t > tmin:
            ang = math.atan2(py + t * dy, px + t * dx) % TWO_PI
            if ang <= alpha + 1e-12 or ang >= TWO_PI - 1e-12:
                return t
    return np.inf


@njit(cache=True)
def _radial_hit(px, py, dx, dy, ang, r, tmin):
    # segment from r*e(ang) to e(ang)
    ex = math.cos(ang)
    ey = math.sin(ang)
    denom = dx * ey - dy * ex
    if abs(denom) < 1e-15:
        return np.inf
    wx = -px
    wy = -py
    t = (wx * ey - wy * ex) / denom
    u = (wx * dy - wy * dx) / denom
    if t > tmin and r - 1e-12 <= u <= 1.0 + 1e-12:
        return t
    return np.inf


@njit(cache=True)
def _first_event(px, py, dx, dy, r, alpha, tmin):
    """(kind, t): kind 0 outer circle, 1 inner circle, 2 interface."""
    to = _circle_hit(px, py, dx, dy, 1.0, alpha, tmin)
    ti = _circle_hit(px, py, dx, dy, r, alpha, tmin)
    tf = min(_radial_hit(px, py, dx, dy, 0.0, r, tmin), _radial_hit(px, py, dx, dy, alpha, r, tmin))
    if tf < to and tf < ti:
        return 2, tf
    if to <= ti:
        return 0, to
    return 1, ti


@njit(cache=True)
def _passage(r, alpha, on_inner, psi, theta, max_steps):
    """Trace one guide passage and compose the tangent maps.

    Returns (M00, M01, M10, M11, kappa0, kappa1, sin0, sin1, n_outer, n_inner,
    exit_wall, exit_psi, exit_theta, status) where status is 0 on success,
    1 if the state is not entering, 2 on a step-limit, 3 on grazing.
    """
    rad = r if on_inner else 1.0
    px = rad * math.cos(psi)
    py = rad * math.sin(psi)
    tx = -math.sin(psi)
    ty = math.cos(psi)
    if on_inner:
        nx, ny = math.cos(psi), math.sin(psi)
        kap, sig = -1.0 / r, -1.0
    else:
        nx, ny = -math.cos(psi), -math.sin(psi)
        kap, sig = 1.0, 1.0
    vx = math.cos(theta) * tx + math.sin(theta) * nx
    vy = math.cos(theta) * ty + math.sin(theta) * ny
    # entering: traced backwards the incoming ray leaves through an interface
    bx = -(math.cos(theta) * tx - math.sin(theta) * nx)
    by = -(math.cos(theta) * ty - math.sin(theta) * ny)
    kind, _ = _first_event(px, py, bx, by, r, alpha, 1e-10)
    if kind != 2:
        return 1.0, 0.0, 0.0, 1.0, kap, kap, 0.0, 0.0, 0, 0, 0, psi, theta, 1
    m00, m01, m10, m11 = 1.0, 0.0, 0.0, 1.0
    kap0 = kap
    s_entry = math.sin(theta)
    th = theta
    n_out = 0
    n_in = 0
    wall = 1 if on_inner else 0
    for _ in range(max_steps):
        kind, t = _first_event(px, py, vx, vy, r, alpha, 1e-10)
        if kind == 2:
            return (m00, m01, m10, m11, kap0, kap, s_entry, math.sin(th), n_out, n_in,
                    wall, math.atan2(py, px) % TWO_PI, th, 0)
        qx = px + t * vx
        qy = py + t * vy
        if kind == 0:
            rho = math.hypot(qx, qy)
            ux, uy = qx / rho, qy / rho
            n1x, n1y = -ux, -uy
            kap1, sig1 = 1.0, 1.0
        else:
            rho = math.hypot(qx, qy)
            ux, uy = qx / rho, qy / rho
            n1x, n1y = ux, uy
            kap1, sig1 = -1.0 / r, -1.0
        t1x, t1y = -uy, ux
        dv = vx * n1x + vy * n1y
        if dv > -1e-13:
            return (m00, m01, m10, m11, kap0, kap, s_entry, math.sin(th), n_out, n_in,
                    wall, psi, th, 3)
        wx = vx - 2.0 * dv * n1x
        wy = vy - 2.0 * dv * n1y
        th1 = math.atan2(wx * n1x + wy * n1y, wx * t1x + wy * t1y)
        s0 = math.sin(th)
        s1 = math.sin(th1)
        e = sig * sig1
        a = e * (t * kap - s0) / s1
        b = e * t / s1
        c = kap1 * a - e * kap
        d = kap1 * b - e
        m00, m01, m10, m11 = (a * m00 + b * m10, a * m01 + b * m11,
                              c * m00 + d * m10, c * m01 + d * m11)
        px, py, vx, vy = qx, qy, wx, wy
        th, kap, sig = th1, kap1, sig1
        wall = kind
        if kind == 0:
            n_out += 1
        else:
            n_in += 1
    return (m00, m01, m10, m11, kap0, kap, s_entry, math.sin(th), n_out, n_in,
            wall, math.atan2(py, px) % TWO_PI, th, 2)


@njit(cache=True)
def _mobius(m00, m01, m10, m11, k0, k1, s0, s1):
    """Coefficients of f_minus(entry) -> f_plus(exit)."""
    p = m00 + m01 * k0
    q = m10 + m11 * k0
    a = s1 * p
    b = -s1 * m01 * s0
    c = k1 * p + q
    d = -(k1 * m01 + m11) * s0
    return a, b, c, d


@njit(cache=True)
def _fixed_points(a, b, c, d):
    """Roots of c f^2 + (d - a) f - b = 0 as (tau1, tau2, disc)."""
    B = d - a
    disc = B * B + 4.0 * b * c
    if disc < 0.0:
        return np.nan, np.nan, disc
    if c == 0.0:
        if B == 0.0:
            return np.inf, np.inf, disc
        return np.inf, b / B, disc
    sq = math.sqrt(disc)
    qq = -0.5 * (B + math.copysign(sq, B))
    f1 = qq / c
    f2 = -b / qq if qq != 0.0 else 0.0
    if f1 >= f2:
        return f1, f2, disc
    return f2, f1, disc


@dataclass(frozen=True)
class TransferMap:
    """Fractional linear map ``f -> (a f + b) / (c f + d)`` on focusing times."""

    a: float
    b: float
    c: float
    d: float
    tau1: float
    tau2: float
    matrix: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 1.0)
    n: int = 0
    exit_on_inner: bool = False

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def __call__(self, f: float) -> float:
        if math.isinf(f):
            return self.a / self.c if self.c != 0 else math.inf
        den = self.c * f + self.d
        if den == 0:
            return math.inf
        return (self.a * f + self.b) / den


def passage_matrix(state: GuideEntryState, guide: NormalizedGuide, max_steps: int = 1_000_000):
    """Composite tangent map of a guide passage together with its bookkeeping."""
    out = _passage(guide.r, guide.alpha, state.on_inner, state.psi, state.theta, max_steps)
    status = out[13]
    if status == 1:
        raise ValueError("state is not an entering collision")
    if status == 2:
        raise RuntimeError("step limit inside the guide")
    if status == 3:
        raise Singular("grazing collision inside the guide")
    return out


def transfer_map(state: GuideEntryState, guide: NormalizedGuide) -> TransferMap:
    m00, m01, m10, m11, k0, k1, s0, s1, n_out, n_in, wall, _, _, _ = passage_matrix(state, guide)
    a, b, c, d = _mobius(m00, m01, m10, m11, k0, k1, s0, s1)
    t1, t2, disc = _fixed_points(a, b, c, d)
    if disc < 0:
        raise Degenerate(f"transfer map has no real fixed points (disc={disc!r})")
    return TransferMap(a, b, c, d, t1, t2, (m00, m01, m10, m11), int(n_out + n_in), wall == 1)


def _theta_nodes(n: int, beta_bar: float) -> np.ndarray:
    h = HALF_PI / n
    base = (np.arange(n) + 0.5) * h
    k = int(beta_bar / h)
    cells = np.arange(max(k - 5, 0), min(k + 6, n))
    fine = (cells[:, None] * h + (np.arange(10) + 0.5)[None, :] * (h / 10)).ravel()
    return np.unique(np.concatenate([base, fine]))


@njit(cache=True)
def _grid_sup(r, alpha, thetas, n_psi, max_steps):
    bb = math.acos(r)
    best_e1 = 0.0
    best_rest = 0.0
    worst = 0
    for i in range(thetas.size):
        th = thetas[i]
        if abs(th - bb) < 1e-12:
            continue
        middle = th > bb
        if middle:
            dl = th - math.acos(min(1.0, math.cos(th) / r))
            span = dl
        else:
            span = 2.0 * th
        span = min(span, alpha)
        for inner in range(2 if middle else 1):
            if inner == 1:
                ang = math.acos(min(1.0, math.cos(th) / r))
                if ang < 1e-12:
                    continue
            else:
                ang = th
            for j in range(n_psi):
                psi = (j + 0.5) / n_psi * span
                res = _passage(r, alpha, inner == 1, psi, ang, max_steps)
                if res[13] != 0:
                    if res[13] != 1:
                        worst += 1
                    continue
                a, b, c, d = _mobius(res[0], res[1], res[2], res[3], res[4], res[5], res[6], res[7])
                t1, t2, disc = _fixed_points(a, b, c, d)
                if disc < 0.0:
                    worst += 1
                    continue
                if inner == 0 and res[10] == 0:
                    if t1 > best_e1:
                        best_e1 = t1
                elif t1 > best_rest:
                    best_rest = t1
    return best_e1, best_rest, worst


@dataclass(frozen=True)
class FocalLength:
    numeric: float
    bound: float
    numeric_e1: float
    numeric_rest: float
    failures: int


def focal_length(guide: NormalizedGuide, n_theta: int = 2000, n_psi: int = 2000,
                 max_steps: int = 1_000_000) -> FocalLength:
    """Numeric supremum of tau1 over a grid of entering collisions, with the
    analytic bound.  States moving clockwise are mirror images of the sampled
    counterclockwise ones and give the same values."""
    bound = tau_bound_from_c(c_tilde(guide))
    thetas = _theta_nodes(n_theta, guide.beta_bar)
    e1, rest, fails = _grid_sup(guide.r, guide.alpha, thetas, n_psi, max_steps)
    numeric = max(e1, rest)
    if numeric > bound + 1e-9:
        raise BoundViolation(f"focal length {numeric!r} exceeds bound {bound!r}")
    return FocalLength(numeric, bound, e1, rest, int(fails))
