"""Pixel volumes: k*k matching candidates per pixel from neighbouring flows.

For target pixel ``p`` and window offset ``d = (dx, dy)`` the candidate is the
reference sampled at ``p + W(p + d)``: the neighbour ``q = p + d`` is matched
to ``q + W(q)``, and stepping back by ``d`` from that match gives a candidate
for ``p``.  Where the flow is locally consistent many candidates coincide,
which is what majority voting exploits.

Slices are stored in ``(dy, dx)`` raster order, so slice ``k*k // 2`` is the
zero offset, i.e. the ordinary backward warp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .imagecore import (
    DegenerateInputError,
    DimensionError,
    ParameterError,
    as_flow,
    as_frame,
    check_same_size,
    in_bounds,
    pixel_grid,
    quantize8,
    sample_bilinear,
)


@dataclass(frozen=True)
class PixelVolume:
    """Candidate stack of shape ``(k*k, H, W)`` (or ``(k*k, H, W, C)``)."""

    slices: np.ndarray
    valid: np.ndarray
    k: int

    def __post_init__(self):
        _check_k(self.k)
        if self.slices.shape[0] != self.k * self.k:
            raise ParameterError(
                f"expected {self.k * self.k} slices, got {self.slices.shape[0]}"
            )
        if self.valid.shape != self.slices.shape[:3]:
            raise DimensionError(
                f"validity shape {self.valid.shape} does not match {self.slices.shape[:3]}"
            )

    @property
    def height(self) -> int:
        return self.slices.shape[1]

    @property
    def width(self) -> int:
        return self.slices.shape[2]

    @property
    def offsets(self) -> np.ndarray:
        return window_offsets(self.k)

    @property
    def center_index(self) -> int:
        return (self.k * self.k) // 2


class Regions(NamedTuple):
    correct: float
    wrong: float
    none: float


@dataclass
class PvStats:
    """Majority statistics of a pixel volume against a ground-truth frame.

    ``accuracy[c]`` is the fraction of majority pixels whose majority value is
    within ``c`` 8-bit levels of the ground truth; ``regions[c]`` splits all
    pixels into correct-majority / wrong-majority / no-majority at that ``c``.
    """

    majority_fraction: float
    accuracy: dict[int, float] = field(default_factory=dict)
    regions: dict[int, Regions] = field(default_factory=dict)


def _check_k(k) -> None:
    if not isinstance(k, (int, np.integer)) or k < 1 or k % 2 == 0:
        raise ParameterError(f"window size k must be a positive odd integer, got {k!r}")


def window_offsets(k: int) -> np.ndarray:
    """``(k*k, 2)`` array of ``(dx, dy)`` offsets in ``(dy, dx)`` raster order."""
    _check_k(k)
    r = k // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return np.stack([dx.ravel(), dy.ravel()], axis=1)


def _chebyshev(k: int) -> np.ndarray:
    return np.abs(window_offsets(k)).max(axis=1)


def build_pixel_volume(reference, flow, k: int = 5) -> PixelVolume:
    """Build the pixel volume of ``reference`` under ``flow``.

    A candidate is invalid when its neighbour lies outside the image (the
    flow lookup is clamped) or when its sample position does.
    """
    _check_k(k)
    reference = as_frame(reference)
    flow = as_flow(flow)
    check_same_size(reference, flow, "reference and flow")
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    xi = xs.astype(np.intp)
    yi = ys.astype(np.intp)

    slices, valid = [], []
    for dx, dy in window_offsets(k):
        qx = xi + dx
        qy = yi + dy
        q_inside = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        qf = flow[np.clip(qy, 0, h - 1), np.clip(qx, 0, w - 1)]
        sx = xs + qf[:, :, 0]
        sy = ys + qf[:, :, 1]
        slices.append(sample_bilinear(reference, sx, sy))
        valid.append(q_inside & in_bounds(sx, sy, w, h))
    return PixelVolume(np.stack(slices), np.stack(valid), int(k))


def build_naive_pixel_volume(reference, flow, k: int = 5) -> PixelVolume:
    """Candidates from the k*k window around each pixel's own match."""
    _check_k(k)
    reference = as_frame(reference)
    flow = as_flow(flow)
    check_same_size(reference, flow, "reference and flow")
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(h, w)
    mx = xs + flow[:, :, 0]
    my = ys + flow[:, :, 1]

    slices, valid = [], []
    for dx, dy in window_offsets(k):
        sx = mx + dx
        sy = my + dy
        slices.append(sample_bilinear(reference, sx, sy))
        valid.append(in_bounds(sx, sy, w, h))
    return PixelVolume(np.stack(slices), np.stack(valid), int(k))


def center_slice(pv: PixelVolume) -> np.ndarray:
    return pv.slices[pv.center_index].copy()


def _per_channel(pv: PixelVolume, fn, *extra):
    """Apply a grayscale reduction channel by channel on a colour volume."""
    outs = []
    for c in range(pv.slices.shape[3]):
        sub = PixelVolume(pv.slices[..., c], pv.valid, pv.k)
        outs.append(fn(sub, *(e[..., c] for e in extra)))
    return outs


def majority_warp(pv: PixelVolume) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel mode of the 8-bit quantised valid candidates.

    Returns ``(frame, has_majority)``.  ``has_majority`` is True where the mode
    is shared by more than half of all ``k*k`` candidates.  Ties between modes
    go to the value held by the candidate closest to the window centre
    (Chebyshev distance), then to the smaller value.  Pixels without a valid
    candidate keep their centre-slice value and report no majority.

    Colour volumes are voted channel by channel; the flag is then the logical
    AND over channels.
    """
    if pv.slices.ndim == 4:
        parts = _per_channel(pv, majority_warp)
        frame = np.stack([p[0] for p in parts], axis=-1)
        flag = np.logical_and.reduce([p[1] for p in parts])
        return frame, flag

    n = pv.k * pv.k
    levels = quantize8(pv.slices)
    valid = pv.valid
    cheb = _chebyshev(pv.k)

    counts = np.zeros(levels.shape, dtype=np.int32)
    nearest = np.full(levels.shape, pv.k, dtype=np.int32)
    for j in range(n):
        same = (levels == levels[j]) & valid[j]
        counts += same
        np.minimum(nearest, np.where(same, cheb[j], pv.k), out=nearest)

    # Lexicographic key: count desc, centre distance asc, value asc.
    span = 256 * (pv.k // 2 + 2)
    score = counts.astype(np.int64) * span - nearest.astype(np.int64) * 256 - levels
    score = np.where(valid, score, np.iinfo(np.int64).min)
    best = np.argmax(score, axis=0)

    best_level = np.take_along_axis(levels, best[None], axis=0)[0]
    best_count = np.take_along_axis(counts, best[None], axis=0)[0]
    any_valid = valid.any(axis=0)

    frame = np.where(any_valid, best_level / 255.0, pv.slices[pv.center_index])
    has_majority = any_valid & (2 * best_count > n)
    return frame, has_majority


def ideal_warp(pv: PixelVolume, gt) -> np.ndarray:
    """Per pixel, the candidate closest to the ground truth.

    The centre candidate always takes part, even when flagged invalid, so the
    result is never worse than the plain warp at any pixel.  Ties go to the
    candidate nearest the window centre, then to the smaller value.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pv.slices.shape[1:]:
        raise DimensionError(
            f"ground truth shape {gt.shape} does not match volume {pv.slices.shape[1:]}"
        )
    if pv.slices.ndim == 4:
        return np.stack(_per_channel(pv, ideal_warp, gt), axis=-1)

    eligible = pv.valid.copy()
    eligible[pv.center_index] = True
    err = np.abs(pv.slices - gt[None])
    cheb = _chebyshev(pv.k)[:, None, None]
    # lexsort keys: last is primary.
    order = np.lexsort(
        (
            pv.slices.reshape(pv.k * pv.k, -1),
            np.broadcast_to(cheb, pv.slices.shape).reshape(pv.k * pv.k, -1),
            np.where(eligible, err, np.inf).reshape(pv.k * pv.k, -1),
        ),
        axis=0,
    )
    best = order[0].reshape(pv.height, pv.width)
    return np.take_along_axis(pv.slices, best[None], axis=0)[0]


def pv_statistics(pv: PixelVolume, gt, tolerances=(0, 2), mask=None) -> PvStats:
    """Majority fraction and majority accuracy at each tolerance ``c``.

    Tolerances are in 8-bit levels; ground truth is quantised the same way
    as the candidates before comparing.  ``mask`` restricts every fraction to
    a subset of pixels (default: all of them).
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pv.slices.shape[1:]:
        raise DimensionError(
            f"ground truth shape {gt.shape} does not match volume {pv.slices.shape[1:]}"
        )
    frame, has_majority = majority_warp(pv)
    gap = np.abs(quantize8(frame).astype(np.int32) - quantize8(gt))
    if gap.ndim == 3:
        gap = gap.max(axis=-1)

    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != has_majority.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match {has_majority.shape}")
        if not mask.any():
            raise DegenerateInputError("statistics mask selects no pixels")
        has_majority = has_majority[mask]
        gap = gap[mask]
    total = has_majority.size
    n_major = int(has_majority.sum())
    stats = PvStats(majority_fraction=n_major / total)
    for c in sorted(set(int(c) for c in tolerances)):
        if c < 0:
            raise ParameterError(f"tolerance must be non-negative, got {c}")
        n_correct = int((has_majority & (gap <= c)).sum())
        stats.accuracy[c] = n_correct / n_major if n_major else 0.0
        stats.regions[c] = Regions(
            correct=n_correct / total,
            wrong=(n_major - n_correct) / total,
            none=(total - n_major) / total,
        )
    return stats
