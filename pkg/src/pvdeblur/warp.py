"""Backward warping and masked mean squared error."""

from __future__ import annotations

import numpy as np

from .imagecore import (
    DegenerateInputError,
    DimensionError,
    as_flow,
    as_frame,
    check_same_size,
    in_bounds,
    pixel_grid,
    sample_bilinear,
)


def backward_warp(reference, flow) -> tuple[np.ndarray, np.ndarray]:
    """Resample ``reference`` at ``p + flow(p)`` for every target pixel ``p``.

    Returns the warped frame and a validity mask that is False wherever the
    sample position fell outside the reference (the value there is clamped).
    """
    reference = as_frame(reference)
    flow = as_flow(flow)
    check_same_size(reference, flow, "reference and flow")
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    sx = xs + flow[:, :, 0]
    sy = ys + flow[:, :, 1]
    return sample_bilinear(reference, sx, sy), in_bounds(sx, sy, w, h)


def masked_mse(a, b, mask=None) -> float:
    """Mean squared error over the pixels where ``mask`` is True.

    All channels of a valid pixel count.  ``mask=None`` means every pixel.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frames differ in shape: {a.shape} vs {b.shape}")
    diff2 = (a - b) ** 2
    if mask is None:
        return float(diff2.mean())
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} does not match {a.shape[:2]}")
    if not mask.any():
        raise DegenerateInputError("mask has no valid pixels")
    return float(diff2[mask].mean())


def warp_mse(reference, flow, target, use_mask: bool = True) -> float:
    """MSE between ``target`` and ``reference`` warped by ``flow``."""
    warped, mask = backward_warp(reference, flow)
    return masked_mse(warped, as_frame(target), mask if use_mask else None)
