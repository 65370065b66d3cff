import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from statfusion.imageio import ImageRgb  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def constant_image(rgb, h=4, w=4):
    return ImageRgb(np.broadcast_to(np.asarray(rgb, dtype=np.uint8), (h, w, 3)))


def channel_image(values, shape=(2, 2)):
    """Image whose three channels all hold ``values``."""
    arr = np.asarray(values, dtype=np.uint8).reshape(shape)
    return ImageRgb(np.repeat(arr[:, :, None], 3, axis=2))


# acceptance criterion outcomes, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
