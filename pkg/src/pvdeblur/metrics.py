"""PSNR, SSIM, translation-aligned variants and flow endpoint error."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .imagecore import (
    DegenerateInputError,
    DimensionError,
    ParameterError,
    as_flow,
    to_grayscale,
)

PSNR_CAP = 99.0
MIN_OVERLAP = 16
DEFAULT_RADIUS = 10

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11x11 window
_K1, _K2 = 0.01, 0.03


@dataclass
class MetricReport:
    frame_index: int
    psnr: float
    ssim: float
    aligned_psnr: float
    aligned_ssim: float
    dx: int = 0
    dy: int = 0
    epe: float = float("nan")


REPORT_HEADER = [f.name for f in fields(MetricReport)]


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr_from_mse(mse: float) -> float:
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def psnr(a, b) -> float:
    """PSNR in dB on the [0, 1] scale, all channels jointly, capped at 99."""
    a, b = _same_shape(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def masked_psnr(a, b, mask) -> float:
    a, b = _same_shape(a, b)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DegenerateInputError("mask has no valid pixels")
    return psnr_from_mse(float(np.mean((a - b)[mask] ** 2)))


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM (Gaussian 11x11 window, sigma 1.5) on grayscale versions."""
    a, b = _same_shape(a, b)
    a = to_grayscale(a)
    b = to_grayscale(b)
    if min(a.shape) < 2 * _SSIM_RADIUS + 1:
        raise ParameterError("SSIM needs images of at least 11x11")

    def blur(img):
        return ndimage.gaussian_filter(img, _SSIM_SIGMA, mode="reflect", truncate=_SSIM_RADIUS / _SSIM_SIGMA)

    c1 = (_K1 * 1.0) ** 2
    c2 = (_K2 * 1.0) ** 2
    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM, averaged away from the 5-px border the window overhangs."""
    r = _SSIM_RADIUS
    value = float(ssim_map(a, b)[r:-r, r:-r].mean())
    return min(1.0, max(-1.0, value))


_METRICS = {"psnr": psnr, "ssim": ssim}


def _overlap(a, b, dx: int, dy: int):
    """Crops of ``a`` and ``b`` where ``a(x, y)`` faces ``b(x + dx, y + dy)``."""
    h, w = a.shape[:2]
    ax0, ax1 = max(0, -dx), min(w, w - dx)
    ay0, ay1 = max(0, -dy), min(h, h - dy)
    return a[ay0:ay1, ax0:ax1], b[ay0 + dy:ay1 + dy, ax0 + dx:ax1 + dx]


def offsets_by_preference(radius: int) -> list[tuple[int, int]]:
    """Integer offsets in the search square, smallest ``|d|`` first, then
    lexicographic."""
    r = range(-radius, radius + 1)
    return sorted(((dx, dy) for dx in r for dy in r), key=lambda d: (d[0] ** 2 + d[1] ** 2, d))


def aligned_metric(a, b, radius: int = DEFAULT_RADIUS, which: str = "psnr") -> tuple[float, tuple[int, int]]:
    """Best score over global integer translations within ``radius``.

    The score at offset ``(dx, dy)`` compares ``a(x, y)`` with
    ``b(x + dx, y + dy)`` on the overlap; offsets with an overlap smaller
    than 16x16 are skipped.  Returns ``(score, (dx, dy))``.
    """
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    if which not in _METRICS:
        raise ParameterError(f"unknown metric {which!r}")
    a, b = _same_shape(a, b)
    metric = _METRICS[which]
    best, best_offset = -math.inf, None
    for dx, dy in offsets_by_preference(radius):
        ca, cb = _overlap(a, b, dx, dy)
        if min(ca.shape[:2]) < MIN_OVERLAP:
            continue
        score = metric(ca, cb)
        if score > best:
            best, best_offset = score, (dx, dy)
    if best_offset is None:
        raise DegenerateInputError("no offset leaves a 16x16 overlap")
    return best, best_offset


def endpoint_error(flow, gt, mask=None) -> float:
    """Mean Euclidean distance between flow vectors over valid pixels."""
    flow = as_flow(flow)
    gt = as_flow(gt)
    if flow.shape != gt.shape:
        raise DimensionError(f"flows differ in shape: {flow.shape} vs {gt.shape}")
    err = np.hypot(flow[..., 0] - gt[..., 0], flow[..., 1] - gt[..., 1])
    if mask is None:
        return float(err.mean())
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DegenerateInputError("mask has no valid pixels")
    return float(err[mask].mean())


def interior_mask(height: int, width: int, fraction: float = 0.8) -> np.ndarray:
    """Centred box covering ``fraction`` of each side."""
    mask = np.zeros((height, width), dtype=bool)
    by = int(round(height * (1 - fraction) / 2))
    bx = int(round(width * (1 - fraction) / 2))
    mask[by:height - by, bx:width - bx] = True
    return mask


def frame_report(index: int, estimate, sharp, radius: int = DEFAULT_RADIUS,
                 flow=None, gt_flow=None) -> MetricReport:
    """Plain and aligned quality of ``estimate`` against ``sharp``.

    Alignment is found once by PSNR and the aligned SSIM is taken at that
    same offset.
    """
    aligned_psnr, (dx, dy) = aligned_metric(estimate, sharp, radius, "psnr")
    ca, cb = _overlap(*_same_shape(estimate, sharp), dx, dy)
    epe = float("nan")
    if flow is not None and gt_flow is not None:
        epe = endpoint_error(flow, gt_flow)
    return MetricReport(
        frame_index=index,
        psnr=psnr(estimate, sharp),
        ssim=ssim(estimate, sharp),
        aligned_psnr=aligned_psnr,
        aligned_ssim=ssim(ca, cb),
        dx=dx,
        dy=dy,
        epe=epe,
    )


def write_reports(dest, reports) -> None:
    """Write reports as CSV to a path or an open text stream."""
    if hasattr(dest, "write"):
        _write_rows(dest, reports)
        return
    with open(dest, "w", newline="") as fh:
        _write_rows(fh, reports)


def _write_rows(fh, reports) -> None:
    writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        row = asdict(rep)
        for key in ("psnr", "ssim", "aligned_psnr", "aligned_ssim", "epe"):
            row[key] = f"{row[key]:.6f}"
        writer.writerow(row)


def read_reports(path) -> list[MetricReport]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append(MetricReport(
            frame_index=int(row["frame_index"]),
            psnr=float(row["psnr"]),
            ssim=float(row["ssim"]),
            aligned_psnr=float(row["aligned_psnr"]),
            aligned_ssim=float(row["aligned_ssim"]),
            dx=int(row["dx"]),
            dy=int(row["dy"]),
            epe=float(row["epe"]),
        ))
    return out
