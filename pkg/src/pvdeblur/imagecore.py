"""Frame, flow and mask conventions shared by every other module.

Frames are plain numpy arrays of float64 samples in [0, 1]: ``(H, W)`` for
grayscale, ``(H, W, 3)`` for RGB.  A flow field is an ``(H, W, 2)`` array
holding ``(u, v)`` per pixel; the match of pixel ``(x, y)`` of the target is
``(x + u, y + v)`` in the reference.  Masks are ``(H, W)`` boolean arrays,
True where a sample is valid.

Pixel centres sit on integer coordinates, 0-based, ``x`` along columns.
"""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class DimensionError(ValueError):
    """Two inputs that must share a shape do not."""


class ParameterError(ValueError):
    """A parameter lies outside its documented domain."""


class DegenerateInputError(ValueError):
    """The input leaves nothing to compute on (e.g. an empty valid set)."""


def as_frame(data) -> np.ndarray:
    """Coerce ``data`` to a float64 frame, squeezing a single channel axis."""
    frame = np.asarray(data, dtype=np.float64)
    if frame.ndim == 3 and frame.shape[2] == 1:
        frame = frame[:, :, 0]
    if frame.ndim not in (2, 3) or (frame.ndim == 3 and frame.shape[2] != 3):
        raise ParameterError(f"frame must be (H, W) or (H, W, 3), got {frame.shape}")
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise ParameterError("frame is empty")
    if not np.all(np.isfinite(frame)):
        raise ParameterError("frame contains non-finite samples")
    return frame


def as_flow(data) -> np.ndarray:
    flow = np.asarray(data, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ParameterError(f"flow must be (H, W, 2), got {flow.shape}")
    if not np.all(np.isfinite(flow)):
        raise ParameterError("flow contains non-finite values")
    return flow


def channels(frame: np.ndarray) -> int:
    return 1 if frame.ndim == 2 else frame.shape[2]


def check_same_size(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise DimensionError(f"{what} differ in size: {a.shape[:2]} vs {b.shape[:2]}")


def to_grayscale(frame) -> np.ndarray:
    """Convert to a single-channel frame with BT.601 luma weights.

    Grayscale input is returned unchanged.
    """
    frame = as_frame(frame)
    if frame.ndim == 2:
        return frame
    gray = frame @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0)


def sample_bilinear(frame, x, y) -> np.ndarray:
    """Bilinearly sample ``frame`` at sub-pixel coordinates ``(x, y)``.

    Coordinates are clamped to ``[0, W-1] x [0, H-1]`` first.  ``x`` and ``y``
    may be scalars or arrays of any matching shape; the result has that shape,
    with a trailing channel axis for colour frames.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)

    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if frame.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    top = frame[y0, x0] * (1.0 - fx) + frame[y0, x1] * fx
    bottom = frame[y1, x0] * (1.0 - fx) + frame[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def in_bounds(x, y, width: int, height: int) -> np.ndarray:
    """True where ``(x, y)`` lies inside ``[0, W-1] x [0, H-1]``."""
    return (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(xs, ys)`` float coordinate grids of shape ``(H, W)``."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return xs, ys


def quantize8(values) -> np.ndarray:
    """Round [0, 1] samples to integer 8-bit levels."""
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.int16)
