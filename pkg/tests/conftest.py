from pathlib import Path

import numpy as np
import pytest

from emofuse.skeleton_io import default_layout, make_stream

DATA = Path(__file__).resolve().parents[1] / "src" / "emofuse" / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def hand_layout():
    return default_layout("hand")


def canonical_csv(layout, coords, timestamps, frames=None):
    """Hand-written canonical CSV, independent of the serializer under test."""
    frames = range(len(timestamps)) if frames is None else frames
    lines = [",".join(layout.header())]
    for f, t, c in zip(frames, timestamps, coords):
        lines.append(",".join([str(f), repr(float(t))] + [repr(float(v)) for v in np.ravel(c)]))
    return "\n".join(lines) + "\n"


def random_stream(rng, layout, n_frames=100, rate=20.0):
    coords = rng.normal(0, 0.5, (n_frames, layout.expected_count, 3))
    return make_stream(layout, coords, rate)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
