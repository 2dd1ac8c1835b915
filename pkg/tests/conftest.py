import sys

import numpy as np
import pytest

from pvdeblur.blurlab import gen_texture


def texture(seed, height, width=None, sigma=1.0):
    return gen_texture(seed, width or height, height, sigma)


def quantized_texture(seed, height, width=None, sigma=1.0):
    """Texture whose samples sit exactly on 8-bit levels."""
    return np.rint(texture(seed, height, width, sigma) * 255.0) / 255.0


def crop_shift(canvas, top, left, height, width, dx=0, dy=0):
    """Crop of ``canvas`` whose pixel (x, y) shows canvas(left+x+dx, top+y+dy)."""
    return canvas[top + dy:top + dy + height, left + dx:left + dx + width]


def translate(frame, dx, dy, fill=0.0):
    """Move content by (dx, dy): out(x + dx, y + dy) = frame(x, y)."""
    out = np.full_like(frame, fill)
    h, w = frame.shape[:2]
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        frame[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)]
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
