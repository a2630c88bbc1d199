"""Line-oriented track file format (version 1).

Example::

    version 1
    dim 2
    halfwidth 0.25
    guide arc radius=2 angle=3.141592653589793 turn=left
    guide straight length=6

3-D files replace ``halfwidth`` by ``section <a> <b>`` and may give arcs a
``roll=<deg>`` key.  Floats are written with ``repr`` so a file produced by
:func:`format_track` parses back to bit-identical values.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional

from .track_model import GuideSpec, TrackSpec

FORMAT_VERSION = 1


class TrackFileError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _float(text: str, lineno: int, what: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise TrackFileError(lineno, f"{what}: cannot parse {text!r} as a number") from None
    if not math.isfinite(x):
        raise TrackFileError(lineno, f"{what}: value must be finite")
    return x


def _keyvals(tokens: List[str], lineno: int, allowed: Dict[str, bool]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for tok in tokens:
        if "=" not in tok:
            raise TrackFileError(lineno, f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        if k not in allowed:
            raise TrackFileError(lineno, f"unknown key {k!r}")
        if k in out:
            raise TrackFileError(lineno, f"duplicate key {k!r}")
        out[k] = v
    missing = [k for k, req in allowed.items() if req and k not in out]
    if missing:
        raise TrackFileError(lineno, f"missing key(s): {', '.join(missing)}")
    return out


def parse_track(text: str) -> TrackSpec:
    version: Optional[int] = None
    dim: Optional[int] = None
    halfwidth: Optional[float] = None
    section = None
    guides: List[GuideSpec] = []
    last = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last = lineno
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head, rest = tokens[0], tokens[1:]
        if version is None and head != "version":
            raise TrackFileError(lineno, "the first directive must be 'version'")
        if head == "version":
            if version is not None:
                raise TrackFileError(lineno, "duplicate 'version'")
            if rest != [str(FORMAT_VERSION)]:
                raise TrackFileError(lineno, f"unsupported version {' '.join(rest)!r}")
            version = FORMAT_VERSION
        elif head == "dim":
            if dim is not None:
                raise TrackFileError(lineno, "duplicate 'dim'")
            if rest not in (["2"], ["3"]):
                raise TrackFileError(lineno, "dim must be 2 or 3")
            dim = int(rest[0])
        elif head == "halfwidth":
            if len(rest) != 1:
                raise TrackFileError(lineno, "halfwidth takes one value")
            halfwidth = _float(rest[0], lineno, "halfwidth")
        elif head == "section":
            if len(rest) != 2:
                raise TrackFileError(lineno, "section takes two values")
            section = (_float(rest[0], lineno, "section"), _float(rest[1], lineno, "section"))
        elif head == "guide":
            if not rest:
                raise TrackFileError(lineno, "guide needs a kind")
            kind = rest[0]
            try:
                if kind == "arc":
                    kv = _keyvals(rest[1:], lineno, {"radius": True, "angle": True, "turn": True, "roll": False})
                    roll = _float(kv["roll"], lineno, "roll") if "roll" in kv else 0.0
                    guides.append(GuideSpec.arc(_float(kv["radius"], lineno, "radius"),
                                                _float(kv["angle"], lineno, "angle"), kv["turn"], roll))
                elif kind == "straight":
                    kv = _keyvals(rest[1:], lineno, {"length": True})
                    guides.append(GuideSpec.straight(_float(kv["length"], lineno, "length")))
                else:
                    raise TrackFileError(lineno, f"unknown guide kind {kind!r}")
            except TrackFileError:
                raise
            except ValueError as exc:
                raise TrackFileError(lineno, str(exc)) from None
        else:
            raise TrackFileError(lineno, f"unknown directive {head!r}")
    if version is None:
        raise TrackFileError(last, "missing 'version'")
    if dim is None:
        raise TrackFileError(last, "missing 'dim'")
    if dim == 2:
        if halfwidth is None or section is not None:
            raise TrackFileError(last, "a 2-D track needs 'halfwidth' and no 'section'")
        if any(g.roll != 0 for g in guides):
            raise TrackFileError(last, "roll is only meaningful for 3-D tracks")
    else:
        if section is None or halfwidth is not None:
            raise TrackFileError(last, "a 3-D track needs 'section' and no 'halfwidth'")
    if not guides:
        raise TrackFileError(last, "no guides")
    try:
        return TrackSpec(tuple(guides), halfwidth or 0.0, dim, section)
    except ValueError as exc:
        raise TrackFileError(last, str(exc)) from None


def format_track(spec: TrackSpec) -> str:
    """Canonical text: version, dim, width, then guides in cyclic order."""
    lines = [f"version {FORMAT_VERSION}", f"dim {spec.dim}"]
    if spec.dim == 2:
        lines.append(f"halfwidth {spec.halfwidth!r}")
    else:
        lines.append(f"section {spec.section[0]!r} {spec.section[1]!r}")
    for g in spec.guides:
        if g.is_circular:
            line = f"guide arc radius={g.radius!r} angle={g.angle!r} turn={g.turn}"
            if spec.dim == 3:
                line += f" roll={g.roll!r}"
        else:
            line = f"guide straight length={g.length!r}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def load_track(path) -> TrackSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_track(fh.read())
