"""Tangent dynamics: focusing times, the differential of the collision map,
cone fields, cone-invariance certificates and Lyapunov exponents.

Tangent vectors are ``(ds, dtheta)`` in the collision coordinates of
``dynamics``; the slope is ``m = dtheta/ds``.  With curvature ``kappa``
(positive on focusing arcs) the focusing times are

    f+ = sin(theta) / (kappa + m),   f- = sin(theta) / (kappa - m),

so a free flight of length t sends f+ at one collision to f- = t - f+ at the
next one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernel as K
from . import dynamics as dyn
from . import guide_analysis as ga
from .track_model import GuideReport, TrackGeometry


@dataclass(frozen=True)
class TangentVector:
    base: dyn.CollisionState
    ds: float
    dtheta: float

    def __post_init__(self):
        if self.ds == 0 and self.dtheta == 0:
            raise ValueError("tangent vector must be nonzero")

    @property
    def slope(self) -> float:
        return self.dtheta / self.ds if self.ds != 0 else math.inf


def _projective_div(num: float, ds: float, den: float) -> float:
    if den == 0:
        return math.inf
    return num * ds / den


def focusing_times_raw(theta: float, kappa: float, ds: float, dtheta: float) -> Tuple[float, float]:
    """(f+, f-) for the tangent vector (ds, dtheta); infinite when the
    beam is parallel."""
    sn = math.sin(theta)
    return (_projective_div(sn, ds, kappa * ds + dtheta), _projective_div(sn, ds, kappa * ds - dtheta))


def focusing_times(u: TangentVector, geo: TrackGeometry) -> Tuple[float, float]:
    kappa = geo.walls[u.base.wall].curvature
    return focusing_times_raw(u.base.theta, kappa, u.ds, u.dtheta)


def mirror_residual(theta: float, kappa: float, m: float) -> float:
    """|1/f+ + 1/f- - 2 kappa/sin(theta)| computed from the definitions."""
    fp, fm = focusing_times_raw(theta, kappa, 1.0, m)
    inv = (0.0 if math.isinf(fp) else 1.0 / fp) + (0.0 if math.isinf(fm) else 1.0 / fm)
    return abs(inv - 2.0 * kappa / math.sin(theta))


def tangent_matrix(x: dyn.CollisionState, y: dyn.CollisionState, t: float, geo: TrackGeometry) -> np.ndarray:
    """Differential of the collision map at ``x`` (``y`` = T x, ``t`` the flight)."""
    w0, w1 = geo.walls[x.wall], geo.walls[y.wall]
    a, b, c, d = K.tangent_matrix(w0.curvature, math.sin(x.theta), w0.sigma,
                                  w1.curvature, math.sin(y.theta), w1.sigma, t)
    return np.array([[a, b], [c, d]])


def tangent_step(u: TangentVector, geo: TrackGeometry) -> Tuple[TangentVector, float]:
    y, t = dyn.step(u.base, geo)
    M = tangent_matrix(u.base, y, t, geo)
    ds, dth = M @ np.array([u.ds, u.dtheta])
    return TangentVector(y, float(ds), float(dth)), t


def reverse_tangent(u: TangentVector, geo: TrackGeometry) -> TangentVector:
    """Tangent action of the reversal J: (ds, dtheta) -> (ds, -dtheta)."""
    return TangentVector(dyn.reverse(u.base, geo), u.ds, -u.dtheta)


# --- cones -----------------------------------------------------------------


@dataclass(frozen=True)
class Cone:
    """Slopes between ``m_lo`` and ``m_hi`` (not wrapping through infinity)."""

    base: dyn.CollisionState
    m_lo: float
    m_hi: float

    def __post_init__(self):
        if not self.m_lo < self.m_hi:
            raise ValueError("cone must be a nondegenerate slope interval")

    def contains(self, m: float) -> bool:
        return self.m_lo <= m <= self.m_hi


def cone_at(x: dyn.CollisionState, tau: float, geo: TrackGeometry) -> Cone:
    """Vectors with backward focusing time at least ``tau``."""
    if not tau > 0:
        raise ValueError("focal length must be positive")
    kappa = geo.walls[x.wall].curvature
    return Cone(x, kappa - math.sin(x.theta) / tau, kappa)


def focal_lengths_by_guide(geo: TrackGeometry, reports: Sequence[GuideReport], source: str = "bound") -> np.ndarray:
    tau = np.full(len(geo.guide_kinds), np.nan)
    for rep in reports:
        val = rep.tau_bound if source == "bound" else rep.tau_numeric
        if val is None:
            raise ValueError(f"guide {rep.guide} has no {source} focal length")
        tau[rep.guide] = val
    return tau


@dataclass
class CertificateReport:
    samples: int
    completed: int
    margins: np.ndarray  # per completed sample, min over the test vectors of f-(image) - tau(y)
    terminated: Dict[str, int]
    lemma_checked: int
    lemma_violations: int
    min_straight_flight: float
    worst_state: Optional[Tuple[int, float, float, float, float]] = None

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.margins.size else math.nan

    @property
    def certified(self) -> bool:
        return self.margins.size > 0 and self.min_margin > 0


class MarginFail(AssertionError):
    pass


def entering_samples(geo: TrackGeometry, n: int, seed: int, direction: str = "R",
                     max_steps: int = dyn.STEP_LIMIT) -> List[Tuple[int, float, float, float, float]]:
    """Entering collisions reached from independent draws of the invariant
    measure, as (wall, x, y, vx, vy)."""
    tb = dyn.pack(geo)
    rng = dyn.make_rng(seed)
    out = []
    while len(out) < n:
        x = dyn.sample_mu(geo, rng, direction)
        st, w, qx, qy, vx, vy, _, _ = K.advance_to_entry(tb.W, x.wall, x.q[0], x.q[1], x.v[0], x.v[1], max_steps)
        if st == K.OK:
            out.append((w, qx, qy, vx, vy))
    return out


def verify_strict_invariance(geo: TrackGeometry, tau: np.ndarray, n: int = 10_000, seed: int = 0,
                             direction: str = "R", raise_on_fail: bool = False,
                             max_steps: int = dyn.STEP_LIMIT) -> CertificateReport:
    """Push the cone at sampled entering collisions to the next entering
    collision and measure how far inside the target cone the image lies.

    The margin of one sample is min(f- - tau(y)) over the two cone edges and
    one interior vector; a negative f- means the image left the cone through
    the flat edge.  Alongside, the fixed points tau1 >= tau2 of the guide
    passage are checked to bracket the exit forward focusing times.
    """
    tb = dyn.pack(geo)
    starts = entering_samples(geo, n, seed, direction, max_steps)
    margins, term = [], {}
    lem_n = lem_bad = 0
    min_flight = math.inf
    worst = None
    for w, qx, qy, vx, vy in starts:
        out = K.cone_return(tb.W, tau, w, qx, qy, vx, vy, max_steps)
        st = int(out[0])
        if st != K.OK:
            name = K.STATUS_NAMES[st]
            term[name] = term.get(name, 0) + 1
            continue
        # a negative f- means the image crossed the flat edge of the cone
        m = float(np.min(out[3:6] - out[6]))
        if not margins or m < min(margins):
            worst = (w, qx, qy, vx, vy)
        margins.append(m)
        min_flight = min(min_flight, out[12])
        tau1, tau2 = out[10], out[11]
        if np.isfinite(tau1):
            tx = tau[int(tb.W[w, K.W_GUIDE])]
            # both edges have f- >= tau(x) >= tau1: their exit f+ lies in (tau2, tau1)
            if tx > tau1:
                for fp in out[7:9]:
                    lem_n += 1
                    if not (tau2 < fp < tau1):
                        lem_bad += 1
    rep = CertificateReport(n, len(margins), np.asarray(margins), term, lem_n, lem_bad, min_flight, worst)
    if raise_on_fail and not rep.certified:
        raise MarginFail(f"cone margin {rep.min_margin!r} at state {rep.worst_state!r}")
    return rep


@dataclass
class CanonicalConeReport:
    samples: int
    invariant: int  # image of the quadrant cone stays in the quadrant cone
    outer_band: int
    outer_band_fplus_ok: int  # f+ of the cone lies in [0, sin theta]
    middle_band: int
    middle_slope_ok: int  # -1/2 < m(D dtheta) < 0
    twist_sign_ok: int  # sign of the ds-component of the image of dtheta equals sign of delta'


def verify_canonical_cone(guide: ga.NormalizedGuide, n: int = 10_000, seed: int = 0) -> CanonicalConeReport:
    """Check the quadrant cone field on sampled E1 states of one guide."""
    rng = dyn.make_rng(seed)
    states = sample_e1(guide, rng, n)
    inv = ob = ob_ok = mb = mb_ok = tw = 0
    for st in states:
        m00, m01, m10, m11 = ga.passage_matrix(st, guide)[:4]
        dp = ga.delta_prime(st.theta, guide)
        img = (m01, m11)  # image of d/dtheta
        outer = not ga.in_middle_band(st.theta, guide)
        if np.sign(img[0]) == np.sign(dp) or img[0] == 0:
            tw += 1
        # quadrant cone: ab >= 0 in the outer band, ab <= 0 in the middle band
        edges = [(m00, m10), img]
        sgn = 1.0 if outer else -1.0
        if all(sgn * a * b >= -1e-9 * (a * a + b * b) for a, b in edges):
            inv += 1
        if outer:
            ob += 1
            fps = [focusing_times_raw(st.theta, 1.0, a, b)[0] for a, b in edges]
            if all(-1e-12 <= f <= math.sin(st.theta) + 1e-12 for f in fps):
                ob_ok += 1
        else:
            mb += 1
            slope = img[1] / img[0] if img[0] != 0 else math.inf
            if -0.5 < slope < 0:
                mb_ok += 1
    return CanonicalConeReport(len(states), inv, ob, ob_ok, mb, mb_ok, tw)


def sample_e1(guide: ga.NormalizedGuide, rng: np.random.Generator, n: int,
              band: str = "any", require_n1: bool = True) -> List[ga.GuideEntryState]:
    """Entering outer-circle collisions whose last guide collision is on the
    outer circle (and with n1 > 0 if requested).  ``band`` restricts theta to
    the outer band ("outer"), the middle band ("middle") or neither."""
    out = []
    bb = guide.beta_bar
    while len(out) < n:
        if band == "outer":
            th = rng.uniform(0.0, bb)
        elif band == "middle":
            th = rng.uniform(bb, 0.5 * math.pi)
        else:
            th = rng.uniform(0.0, 0.5 * math.pi)
        if abs(th - bb) < 1e-9 or th < 1e-6 or 0.5 * math.pi - th < 1e-6:
            continue
        span = min(2.0 * th if th < bb else abs(ga.delta(th, guide)), guide.alpha)
        psi = rng.uniform(0.0, span)
        mirrored = rng.random() < 0.5
        st = ga.GuideEntryState(guide.alpha - psi, math.pi - th) if mirrored else ga.GuideEntryState(psi, th)
        res = ga._passage(guide.r, guide.alpha, False, st.psi, st.theta, 1_000_000)
        if res[13] != 0 or res[10] != 0:
            continue
        if require_n1 and res[8] == 0:
            continue
        out.append(st)
    return out


# --- Lyapunov exponents -----------------------------------------------------


@dataclass
class LyapunovResult:
    seeds: List[int]
    final: np.ndarray  # top exponent per seed
    series: List[np.ndarray]  # running estimates every ``every`` collisions
    steps_done: List[int]
    terminations: List[str]
    every: int

    @property
    def spread(self) -> float:
        return float(self.final.std(ddof=1)) if self.final.size > 1 else 0.0

    def plateau(self, decade: int = 10) -> np.ndarray:
        """Relative change of each running estimate over the last decade of steps."""
        out = []
        for s in self.series:
            if s.size < decade:
                out.append(math.nan)
                continue
            a, b = s[s.size // decade - 1], s[-1]
            out.append(abs(b - a) / abs(b) if b != 0 else math.inf)
        return np.asarray(out)


def lyapunov(geo: TrackGeometry, seeds: Sequence[int], steps: int = 1_000_000, every: int = 1000,
             direction: str = "R") -> LyapunovResult:
    """Top Lyapunov exponent of the collision map for each seed.

    Initial conditions are drawn from the invariant measure; the tangent
    vector starts along d/dtheta (a generic direction).
    """
    if steps < every:
        raise ValueError("need at least one reporting interval")
    tb = dyn.pack(geo)
    finals, series, done, why = [], [], [], []
    for seed in seeds:
        x = dyn.sample_mu(geo, dyn.make_rng(seed), direction)
        s, n, st = K.lyapunov_run(tb.W, x.wall, x.q[0], x.q[1], x.v[0], x.v[1], 0.3, 1.0, steps, every)
        series.append(np.asarray(s))
        done.append(int(n))
        why.append("completed" if st == K.OK else K.STATUS_NAMES[st])
        finals.append(s[-1] if len(s) else math.nan)
    return LyapunovResult(list(seeds), np.asarray(finals), series, done, why, every)
