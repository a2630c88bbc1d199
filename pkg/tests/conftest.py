import math
from pathlib import Path

import pytest

from trackbilliard.track_model import GuideSpec, TrackSpec, build_track
from trackbilliard.trackfile import load_track

TRACKS = Path(__file__).resolve().parent.parent / "tracks"


def ring(R, eps, l, turn="left"):
    a = GuideSpec.arc(R, math.pi, turn)
    return TrackSpec((a, GuideSpec.straight(l), a, GuideSpec.straight(l)), eps)


def track_path(name):
    return TRACKS / f"{name}.track"


def load(name):
    return load_track(track_path(name))


@pytest.fixture(scope="session")
def h_spec():
    return load("h_track")


@pytest.fixture(scope="session")
def h_geo(h_spec):
    return build_track(h_spec)


@pytest.fixture(scope="session")
def short_spec():
    return load("short_ring")


@pytest.fixture(scope="session")
def stadium_spec():
    return load("stadium_ring")


# --- acceptance summary --------------------------------------------------------

ACCEPTANCE = {}  # criterion number -> list of (part, ok, detail)
N_CRITERIA = 11


def record(criterion, part, ok, detail):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        parts = ACCEPTANCE.get(k)
        if not parts:
            terminalreporter.write_line(f"criterion {k:2d}: FAIL  (did not run to completion)")
            continue
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{p[0]}: {p[2]}" for p in parts)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
