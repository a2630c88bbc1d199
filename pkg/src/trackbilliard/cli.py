"""Command-line front end.

Exit codes: 0 when every gate passes, 1 when a track is invalid or a gate
fails, 2 for parse and I/O errors.  All outputs are written atomically and
depend only on the input bytes, the flags and the seeds.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
import tempfile
from typing import List, Optional, Sequence

import numpy as np

from . import dynamics as dyn
from . import tangent as tg
from . import track3d as t3
from .track_model import (TrackError, UnclassifiedGuide, annulus, build_track, check_condition_H,
                          guide_reports)
from .trackfile import TrackFileError, format_track, load_track

ZERO_GATE = 5e-3  # |lambda| below this counts as zero


class GateFailure(Exception):
    pass


def atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _num(x) -> str:
    """Shortest round-trip decimal of a float."""
    return repr(float(x))


def _fmt(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.6g}"


# --- SVG --------------------------------------------------------------------------


def _viewbox(xs: np.ndarray, ys: np.ndarray):
    x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    px, py = 0.05 * (x1 - x0 or 1.0), 0.05 * (y1 - y0 or 1.0)
    # y is flipped so that the picture has the usual orientation
    return x0 - px, -y1 - py, (x1 - x0) + 2 * px, (y1 - y0) + 2 * py


def render_svg(loops: Sequence[np.ndarray], trajectory: np.ndarray) -> str:
    """Boundary loops (closed paths) and a trajectory polyline, SVG 1.1."""
    allx = np.concatenate([l[:, 0] for l in loops])
    ally = np.concatenate([l[:, 1] for l in loops])
    vx, vy, vw, vh = _viewbox(allx, ally)
    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
              f'viewBox="{vx:.6f} {vy:.6f} {vw:.6f} {vh:.6f}">\n')
    sw = 0.002 * max(vw, vh)
    for k, l in enumerate(loops):
        d = " ".join(f"{'M' if i == 0 else 'L'}{p[0]:.6f},{-p[1]:.6f}" for i, p in enumerate(l)) + " Z"
        out.write(f'<path id="loop{k}" d="{d}" fill="none" stroke="black" stroke-width="{2 * sw:.6f}"/>\n')
    if len(trajectory):
        pts = " ".join(f"{p[0]:.6f},{-p[1]:.6f}" for p in trajectory)
        out.write(f'<polyline id="trajectory" points="{pts}" fill="none" stroke="#c0392b" '
                  f'stroke-width="{sw:.6f}"/>\n')
    out.write("</svg>\n")
    return out.getvalue()


# --- commands ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec = load_track(args.file)
    print(format_track(spec), end="")
    if spec.dim == 3:
        t3.build_track3d(spec)
        reps = t3.factor_reports(spec)
        _print_reports(reps)
        res = t3.check_condition_H3(spec, reps)
        for k, m in enumerate(res.margins):
            print(f"straight gap {k}: margin {m:.6g}")
        print(f"twisted pairs: {res.twisted}")
        if res.satisfied:
            print("condition H~: satisfied")
            return 0
        for r in res.reasons:
            print(f"condition H~: violated: {r}")
        return 1
    build_track(spec)
    reps = guide_reports(spec, numeric=args.numeric, n_theta=args.grid, n_psi=args.grid)
    _print_reports(reps)
    ok = False
    for source in ("bound", "numeric") if args.numeric else ("bound",):
        res = check_condition_H(spec, reps, source)
        for g in res.margins:
            print(f"{source}: straights {list(g.straights)} between guides {g.guide_before} and {g.guide_after}: "
                  f"length {g.length:.6g} margin {g.margin:.6g}")
        ok = ok or res.satisfied
    print(f"condition H: {'satisfied' if ok else 'violated'}")
    return 0 if ok else 1


def _print_reports(reps) -> None:
    for r in reps:
        print(f"guide {r.guide}: type {r.kind} r={r.r:.6g} beta_bar={r.beta_bar:.6g} c~={_fmt(r.c_tilde)} "
              f"tau_bound={_fmt(r.tau_bound)} tau_numeric={_fmt(r.tau_numeric)}")
    for r in reps:
        if not r.certified:
            raise UnclassifiedGuide(f"guide {r.guide} is neither of type A nor B")


def cmd_simulate(args) -> int:
    spec = load_track(args.file)
    rng = dyn.make_rng(args.seed)
    if spec.dim == 3:
        geo3 = t3.build_track3d(spec)
        x = t3.sample_state3d(geo3, rng, args.direction)
        rows, reason = t3.fast_orbit3(geo3, x, args.steps)
        _emit(args.out, t3.orbit3_csv(rows, reason))
        if args.svg:
            c = t3.centerline_points(geo3)
            atomic_write(args.svg, render_svg([c[:, :2]], rows[:, 3:5]))
        vs = rows[:, 6]
    else:
        geo = build_track(spec)
        x = dyn.sample_mu(geo, rng, args.direction)
        rows, reason, _ = dyn.fast_orbit(x, dyn.pack(geo), args.steps)
        _emit(args.out, dyn.orbit_csv(rows, reason))
        if args.svg:
            loops = [np.asarray(geo.loop_polyline(k)) for k in range(len(geo.loop_lengths))]
            atomic_write(args.svg, render_svg(loops, rows[:, 3:5]))
        vs = rows[:, 6]
    if not (np.all(vs > 0) or np.all(vs < 0)):
        print("sign(v*) changed along the orbit", file=sys.stderr)
        return 1
    return 0


def cmd_lyapunov(args) -> int:
    seeds = list(range(args.seed, args.seed + args.seeds))
    buf = io.StringIO()
    if args.annulus is not None:
        geo = annulus(*args.annulus)
        res = tg.lyapunov(geo, seeds, args.steps, args.every, "any")
        _lyap2_table(buf, res)
        ok = bool(np.all(np.abs(res.final) < ZERO_GATE))
        print(f"annulus: max |lambda1| = {np.max(np.abs(res.final)):.6g} (gate {ZERO_GATE:g})")
    else:
        spec = load_track(args.file)
        thresh = 10.0 * args.baseline
        if spec.dim == 3:
            geo3 = t3.build_track3d(spec)
            res3 = t3.lyapunov_spectrum3d(geo3, seeds, args.steps, args.every)
            buf.write("seed,lambda1,lambda2,lambda3,lambda4,pairing,steps,termination\n")
            for k, s in enumerate(seeds):
                f = res3.final[k]
                buf.write(f"{s},{_num(f[0])},{_num(f[1])},{_num(f[2])},{_num(f[3])},{_num(res3.pairing[k])},"
                          f"{res3.steps_done[k]},{res3.terminations[k]}\n")
            ok = bool(np.all(np.abs(res3.final) > thresh)) and all(t == "completed" for t in res3.terminations)
            print(f"min |lambda_i| = {np.min(np.abs(res3.final)):.6g} (gate > {thresh:g})")
        else:
            geo = build_track(spec)
            res = tg.lyapunov(geo, seeds, args.steps, args.every, args.direction)
            _lyap2_table(buf, res)
            ok = bool(np.all(res.final > thresh)) and all(t == "completed" for t in res.terminations)
            print(f"min lambda1 = {np.min(res.final):.6g} (gate > {thresh:g})")
    _emit(args.out, buf.getvalue())
    return 0 if ok else 1


def _lyap2_table(buf, res) -> None:
    buf.write("seed,lambda1,plateau,steps,termination\n")
    plat = res.plateau()
    for k, s in enumerate(res.seeds):
        buf.write(f"{s},{_num(res.final[k])},{_num(plat[k])},{res.steps_done[k]},{res.terminations[k]}\n")


def cmd_cones(args) -> int:
    spec = load_track(args.file)
    if spec.dim != 2:
        raise GateFailure("cone certification is implemented for planar tracks only")
    geo = build_track(spec)
    reps = guide_reports(spec, numeric=args.tau == "numeric")
    cond = check_condition_H(spec, reps, args.tau)
    tau = tg.focal_lengths_by_guide(geo, reps, args.tau)
    rep = tg.verify_strict_invariance(geo, tau, args.samples, args.seed)
    buf = io.StringIO()
    buf.write("sample,margin\n")
    for k, m in enumerate(rep.margins):
        buf.write(f"{k},{_num(m)}\n")
    buf.write(f"# samples={rep.samples} completed={rep.completed} min_margin={_num(rep.min_margin)} "
              f"lemma_checked={rep.lemma_checked} lemma_violations={rep.lemma_violations}\n")
    _emit(args.out, buf.getvalue())
    print(f"condition H ({args.tau}): {'satisfied' if cond.satisfied else 'violated'}; "
          f"min cone margin {rep.min_margin:.6g}")
    if not rep.certified:
        print(f"worst state: {rep.worst_state!r}")
    return 0 if rep.certified and rep.lemma_violations == 0 else 1


def cmd_poincare(args) -> int:
    spec = load_track(args.file)
    rng = dyn.make_rng(args.seed)
    buf = io.StringIO()
    if spec.dim == 3:
        geo3 = t3.build_track3d(spec)
        rows, reason = t3.fast_orbit3(geo3, t3.sample_state3d(geo3, rng, args.direction), args.steps)
        buf.write("step,wall,s,cos_theta\n")
    else:
        geo = build_track(spec)
        rows, reason, _ = dyn.fast_orbit(dyn.sample_mu(geo, rng, args.direction), dyn.pack(geo), args.steps)
        buf.write("step,wall,s,cos_theta\n")
    for k, r in enumerate(rows):
        buf.write(f"{k},{int(r[0])},{_num(r[1])},{_num(math.cos(r[2]))}\n")
    buf.write(f"# termination={reason} collisions={len(rows) - 1}\n")
    _emit(args.out, buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackbilliard", description="Billiards in planar and 3-D tracks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a track file and its hyperbolicity condition")
    v.add_argument("file")
    v.add_argument("--numeric", action="store_true", help="also estimate focal lengths on a grid")
    v.add_argument("--grid", type=int, default=400, help="grid size per axis for --numeric")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="iterate one orbit and write it as CSV")
    s.add_argument("file")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--out", default="-")
    s.add_argument("--svg")
    s.add_argument("--direction", choices=("R", "L"), default="R")
    s.set_defaults(func=cmd_simulate)

    l = sub.add_parser("lyapunov", help="Lyapunov exponents over a seed ensemble")
    l.add_argument("file", nargs="?")
    l.add_argument("--annulus", nargs=2, type=float, metavar=("OUTER", "INNER"),
                   help="use a full annulus instead of a track file")
    l.add_argument("--seeds", type=int, default=20)
    l.add_argument("--seed", type=int, default=1, help="first seed")
    l.add_argument("--steps", type=int, default=1_000_000)
    l.add_argument("--every", type=int, default=1000)
    l.add_argument("--baseline", type=float, default=ZERO_GATE,
                   help="integrable baseline; tracks pass if every exponent exceeds 10x this")
    l.add_argument("--direction", choices=("R", "L"), default="R")
    l.add_argument("--out", default="-")
    l.set_defaults(func=cmd_lyapunov)

    c = sub.add_parser("cones", help="certify strict cone invariance on sampled entering collisions")
    c.add_argument("file")
    c.add_argument("--samples", type=int, default=10_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tau", choices=("bound", "numeric"), default="bound")
    c.add_argument("--out", default="-")
    c.set_defaults(func=cmd_cones)

    q = sub.add_parser("poincare", help="(s, cos theta) pairs along one orbit")
    q.add_argument("file")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--steps", type=int, default=10_000)
    q.add_argument("--direction", choices=("R", "L"), default="R")
    q.add_argument("--out", default="-")
    q.set_defaults(func=cmd_poincare)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "lyapunov" and (args.file is None) == (args.annulus is None):
        parser.error("lyapunov needs either a track file or --annulus")
    if getattr(args, "steps", 1) < 0:
        parser.error("--steps must be non-negative")
    try:
        return args.func(args)
    except (TrackFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrackError, UnclassifiedGuide, GateFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
