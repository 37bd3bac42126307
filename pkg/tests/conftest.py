import math
import sys

import numpy as np
import pytest

from driftblend.blending import Frame
from driftblend.geometry import LandmarkSet
from driftblend.pipeline import Clip
from driftblend.seeding import make_rng


def make_face_landmarks(width: int, height: int, dx: float = 0.0, dy: float = 0.0) -> LandmarkSet:
    """Deterministic, plausible 68-point layout centered in the frame.

    Proportions follow the usual iBUG regions: jaw 0-16, brows 17-26,
    nose 27-35, eyes 36-47, mouth 48-67. Every region spans an area, so
    convex hulls are well defined.
    """
    cx, cy = width / 2.0 + dx, height / 2.0 + dy
    fw, fh = width * 0.32, height * 0.40  # face half-extents
    pts = np.zeros((68, 2))

    # Jaw: lower half ellipse arc from left to right.
    for i in range(17):
        a = math.pi * (1.0 - i / 16.0)  # pi .. 0
        pts[i] = (cx + fw * math.cos(a), cy + fh * 0.15 + fh * 0.85 * math.sin(a) * 0.9)
    # Brows: two arcs with curvature.
    for i in range(5):
        t = i / 4.0
        arch = math.sin(math.pi * t) * fh * 0.06
        pts[17 + i] = (cx - fw * 0.70 + t * fw * 0.52, cy - fh * 0.42 - arch)
        pts[22 + i] = (cx + fw * 0.18 + t * fw * 0.52, cy - fh * 0.42 - arch)
    # Nose bridge and nostril line.
    for i in range(4):
        pts[27 + i] = (cx + (i % 2) * 0.4, cy - fh * 0.28 + i * fh * 0.14)
    for i in range(5):
        pts[31 + i] = (cx + (i - 2) * fw * 0.10, cy + fh * 0.20 + abs(i - 2) * -fh * 0.03)
    # Eyes: two hexagons.
    for k, ex in enumerate((cx - fw * 0.42, cx + fw * 0.42)):
        ey = cy - fh * 0.22
        rx, ry = fw * 0.18, fh * 0.08
        for i in range(6):
            a = math.pi / 6 + i * math.pi / 3
            pts[36 + 6 * k + i] = (ex + rx * math.cos(a), ey + ry * math.sin(a))
    # Mouth: outer ring of 12 and inner ring of 8.
    my = cy + fh * 0.52
    for i in range(12):
        a = i * 2 * math.pi / 12
        pts[48 + i] = (cx + fw * 0.30 * math.cos(a), my + fh * 0.12 * math.sin(a))
    for i in range(8):
        a = i * 2 * math.pi / 8
        pts[60 + i] = (cx + fw * 0.18 * math.cos(a), my + fh * 0.06 * math.sin(a))
    return LandmarkSet(pts)


def make_face_frame(width: int, height: int, seed: int) -> Frame:
    """Deterministic textured frame so warps and blends leave visible traces."""
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    base = 110 + 50 * np.sin(xx / 7.3) * np.cos(yy / 9.1) + 30 * np.sin((xx + yy) / 13.7)
    img = np.stack([base, base * 0.9 + 12, base * 0.8 + 25], axis=-1)
    img += rng.normal(0.0, 8.0, size=img.shape)
    return Frame(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def make_fixture_clip(n_frames: int = 8, size: int = 128) -> Clip:
    frames = [make_face_frame(size, size, seed=1000 + i) for i in range(n_frames)]
    landmarks = [
        make_face_landmarks(size, size, dx=0.25 * i, dy=0.1 * i) for i in range(n_frames)
    ]
    return Clip(
        frames=tuple(frames),
        landmarks=tuple(landmarks),
        source_indices=tuple(range(n_frames)),
    )


@pytest.fixture(scope="session")
def fixture_clip() -> Clip:
    return make_fixture_clip()


@pytest.fixture(scope="session")
def fixture_landmarks() -> LandmarkSet:
    return make_face_landmarks(128, 128)


@pytest.fixture(scope="session")
def fixture_frame() -> Frame:
    return make_face_frame(128, 128, seed=7)


def pytest_terminal_summary(terminalreporter):
    """One visible line per acceptance criterion, capture notwithstanding."""
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title in sorted(results):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
