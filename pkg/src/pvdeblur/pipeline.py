"""Recurrent deblurring harness with pluggable flow and deblurring stages.

At every step ``t`` the harness estimates flow from the current blurry frame
to the previous blurry frame, builds a pixel volume from the *previous
estimate* with that flow, and hands the three blurry frames plus the volume
to the deblurrer.  The first frame has no predecessor, so the blurry frame
stands in for both the previous estimate and the previous input; the last
frame likewise stands in for its missing successor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .imagecore import ParameterError, as_frame, channels, check_same_size, to_grayscale
from .metrics import DEFAULT_RADIUS, MetricReport, frame_report
from .pixelvolume import PixelVolume, _check_k, build_pixel_volume, majority_warp
from .tvl1flow import FlowParams, estimate_flow

logger = logging.getLogger(__name__)

Deblurrer = Callable[[np.ndarray, np.ndarray, np.ndarray, PixelVolume], np.ndarray]


def passthrough(prev_b, cur_b, next_b, pv) -> np.ndarray:
    return cur_b


def aggregate_deblur(prev_b, cur_b, next_b, pv: PixelVolume, sigma_c: float = 0.08) -> np.ndarray:
    """Consensus-weighted mean of the volume's candidates and the current pixel.

    Each valid candidate ``c`` is weighted by ``exp(-(c - m)^2 / 2 sigma_c^2)``
    where ``m`` is the majority-warp value; the current blurry pixel gets the
    same kind of weight.  Pixels without valid candidates keep the blurry
    value.  ``prev_b`` and ``next_b`` are accepted for interface parity and
    not used.  Colour frames need a colour volume and are treated per channel.
    """
    if not sigma_c > 0:
        raise ParameterError("sigma_c must be > 0")
    cur = as_frame(cur_b)
    for other in (prev_b, next_b):
        check_same_size(cur, as_frame(other), "blurry frames")
    if pv.slices.shape[1:] != cur.shape:
        raise ParameterError(
            f"volume shape {pv.slices.shape[1:]} does not match frame {cur.shape}"
        )
    m, _ = majority_warp(pv)
    inv = 1.0 / (2.0 * sigma_c * sigma_c)
    valid = pv.valid if cur.ndim == 2 else pv.valid[..., None]
    w = np.where(valid, np.exp(-((pv.slices - m[None]) ** 2) * inv), 0.0)
    w0 = np.exp(-((cur - m) ** 2) * inv)
    out = ((w * pv.slices).sum(axis=0) + w0 * cur) / (w.sum(axis=0) + w0)

    any_valid = pv.valid.any(axis=0)
    if cur.ndim == 3:
        any_valid = any_valid[..., None]
    return np.clip(np.where(any_valid, out, cur), 0.0, 1.0)


@dataclass
class PipelineConfig:
    k: int = 5
    flow_params: FlowParams = field(default_factory=FlowParams)
    deblurrer: str = "aggregate"  # passthrough | aggregate | external
    sigma_c: float = 0.08
    external: Deblurrer | None = None
    color_volume: bool | None = None  # None: colour only for colour aggregation
    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        _check_k(self.k)
        if not self.sigma_c > 0:
            raise ParameterError("sigma_c must be > 0")
        if self.deblurrer not in ("passthrough", "aggregate", "external"):
            raise ParameterError(f"unknown deblurrer {self.deblurrer!r}")
        if self.deblurrer == "external" and self.external is None:
            raise ParameterError("external deblurrer selected but none given")

    def resolve(self) -> Deblurrer:
        if self.deblurrer == "passthrough":
            return passthrough
        if self.deblurrer == "external":
            return self.external
        sigma_c = self.sigma_c
        return lambda p, c, n, pv: aggregate_deblur(p, c, n, pv, sigma_c)


@dataclass
class SequenceResult:
    estimates: list[np.ndarray]
    flows: list[np.ndarray]
    reports: list[MetricReport]


def deblur_sequence(blurry, config: PipelineConfig | None = None, sharp=None, gt_flows=None) -> SequenceResult:
    """Run the recurrence over ``blurry`` frames.

    With ``sharp`` frames supplied, a MetricReport is produced for every
    frame; ``gt_flows[t - 1]`` (flow from frame t to t-1), when given, adds the
    endpoint error of the estimated flow.
    """
    config = config or PipelineConfig()
    blurry = [as_frame(f) for f in blurry]
    if not blurry:
        raise ParameterError("cannot deblur an empty sequence")
    for f in blurry[1:]:
        check_same_size(blurry[0], f, "sequence frames")
    deblur = config.resolve()
    color = config.color_volume
    if color is None:
        color = config.deblurrer == "aggregate" and channels(blurry[0]) == 3

    n = len(blurry)
    estimates, flows, reports = [], [], []
    for t in range(n):
        cur = blurry[t]
        prev_b = blurry[t - 1] if t > 0 else cur
        next_b = blurry[t + 1] if t + 1 < n else cur
        prev_est = estimates[t - 1] if t > 0 else cur

        if t == 0:
            flow = np.zeros(cur.shape[:2] + (2,))
        else:
            flow = estimate_flow(to_grayscale(cur), to_grayscale(prev_b), config.flow_params)
        source = prev_est if color else to_grayscale(prev_est)
        pv = build_pixel_volume(source, flow, config.k)
        est = np.clip(as_frame(deblur(prev_b, cur, next_b, pv)), 0.0, 1.0)
        if est.shape != cur.shape:
            raise ParameterError(f"deblurrer returned shape {est.shape}, expected {cur.shape}")
        estimates.append(est)
        flows.append(flow)

        if sharp is not None:
            gt = gt_flows[t - 1] if (gt_flows is not None and t > 0) else None
            reports.append(frame_report(t, est, sharp[t], config.radius,
                                        flow if gt is not None else None, gt))
            logger.debug("frame %d: aligned PSNR %.3f", t, reports[-1].aligned_psnr)
    return SequenceResult(estimates, flows, reports)


def stabilization_curve(report_sets) -> list[tuple[int, float, int]]:
    """Mean aligned PSNR per time step across sequences.

    ``report_sets`` is one list of MetricReport per sequence.  Returns rows
    ``(frame_index, mean_aligned_psnr, n_sequences)``; sequences of unequal
    length contribute only to the steps they cover.
    """
    report_sets = [list(r) for r in report_sets]
    if not report_sets or not any(report_sets):
        raise ParameterError("need at least one report")
    longest = max(len(r) for r in report_sets)
    rows = []
    for t in range(longest):
        values = [r[t].aligned_psnr for r in report_sets if t < len(r)]
        rows.append((t, float(np.mean(values)), len(values)))
    return rows
