"""Synthetic sharp/blurred sequences with exact ground-truth flow, the
blur-invariant and blur-variant warping losses, and a grid-search calibration
of flow parameters under the blur-invariant objective.

A scene is a large random texture (the canvas) viewed by a camera that moves
along a parametric path.  Frame ``t`` is exposed over ``[t - 1/2, t + 1/2]``;
its blurred version averages ``substeps`` renders evenly spread over that
interval (end points included), its sharp version is the render at ``t``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .imagecore import ParameterError, as_frame, check_same_size, pixel_grid, sample_bilinear
from .tvl1flow import FlowParams, estimate_flow
from .warp import backward_warp, masked_mse

FOUR_PAIRS = (("s", "s"), ("b", "b"), ("b", "s"), ("s", "b"))


@dataclass(frozen=True)
class SceneSpec:
    """Camera path and texture of one synthetic scene.

    ``velocity`` is the camera translation in px per frame, ``rotation`` the
    in-plane rotation about the frame centre in degrees per frame.  With
    ``jitter > 0`` every frame's velocity is perturbed by seeded Gaussian
    noise of that standard deviation, so blur varies from frame to frame.
    """

    seed: int = 0
    width: int = 96
    height: int = 96
    sigma_tex: float = 1.0
    frames: int = 8
    substeps: int = 9
    velocity: tuple[float, float] = (2.0, 0.0)
    rotation: float = 0.0
    jitter: float = 0.0
    k: int = 5
    margin: int | None = None

    def __post_init__(self):
        if self.substeps < 1:
            raise ParameterError("substeps must be >= 1")
        if self.width < 32 or self.height < 32:
            raise ParameterError("scene dimensions must be >= 32")
        if self.frames < 1:
            raise ParameterError("frames must be >= 1")
        if self.sigma_tex < 0:
            raise ParameterError("sigma_tex must be >= 0")
        if self.jitter < 0:
            raise ParameterError("jitter must be >= 0")


@dataclass
class Sequence:
    sharp: list[np.ndarray]
    blurred: list[np.ndarray]
    flows: list[np.ndarray]  # flows[i] maps frame i+1 onto frame i
    canvas: np.ndarray = field(repr=False)
    margin: int = 0


def gen_texture(seed: int, width: int, height: int, sigma_tex: float) -> np.ndarray:
    """Seeded band-limited noise rescaled to [0.05, 0.95]."""
    if sigma_tex < 0:
        raise ParameterError("sigma_tex must be >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.random((height, width))
    if sigma_tex > 0:
        noise = ndimage.gaussian_filter(noise, sigma_tex, mode="reflect")
    lo, hi = noise.min(), noise.max()
    if hi - lo < 1e-12:
        return np.full((height, width), 0.5)
    return 0.05 + 0.9 * (noise - lo) / (hi - lo)


class CameraPath:
    """Piecewise-constant-velocity camera path, one velocity per exposure."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        rng = np.random.default_rng([spec.seed, 1])
        base = np.asarray(spec.velocity, dtype=np.float64)
        noise = rng.standard_normal((spec.frames, 2)) * spec.jitter
        self.velocities = base[None, :] + noise
        # positions at exposure boundaries t - 1/2 for t = 0..frames
        self.knots = np.vstack([np.zeros(2), np.cumsum(self.velocities, axis=0)])
        self.center = np.array([(spec.width - 1) / 2.0, (spec.height - 1) / 2.0])

    def translation(self, tau: float) -> np.ndarray:
        s = tau + 0.5
        t = int(min(max(math.floor(s), 0), self.spec.frames - 1))
        return self.knots[t] + (s - t) * self.velocities[t]

    def angle(self, tau: float) -> float:
        return math.radians(self.spec.rotation * tau)

    def sample_points(self, tau: float, xs, ys):
        """Canvas-relative coordinates seen by frame pixels ``(xs, ys)`` at ``tau``."""
        a = self.angle(tau)
        ca, sa = math.cos(a), math.sin(a)
        dx = xs - self.center[0]
        dy = ys - self.center[1]
        tx, ty = self.translation(tau)
        return (ca * dx - sa * dy + self.center[0] + tx,
                sa * dx + ca * dy + self.center[1] + ty)

    def flow(self, t: int) -> np.ndarray:
        """Exact backward flow from sharp frame ``t`` to sharp frame ``t - 1``."""
        xs, ys = pixel_grid(self.spec.height, self.spec.width)
        cx, cy = self.sample_points(t, xs, ys)
        a = -self.angle(t - 1)
        ca, sa = math.cos(a), math.sin(a)
        tx, ty = self.translation(t - 1)
        dx = cx - tx - self.center[0]
        dy = cy - ty - self.center[1]
        px = ca * dx - sa * dy + self.center[0]
        py = sa * dx + ca * dy + self.center[1]
        return np.stack([px - xs, py - ys], axis=-1)


def exposure_times(t: int, substeps: int) -> np.ndarray:
    if substeps == 1:
        return np.array([float(t)])
    return t - 0.5 + np.arange(substeps) / (substeps - 1)


def required_margin(spec: SceneSpec, path: CameraPath | None = None) -> int:
    """Largest excursion of any frame corner over all exposures, plus k + 4."""
    path = path or CameraPath(spec)
    xs = np.array([0.0, spec.width - 1, 0.0, spec.width - 1])
    ys = np.array([0.0, 0.0, spec.height - 1, spec.height - 1])
    worst = 0.0
    for t in range(spec.frames):
        for tau in list(exposure_times(t, spec.substeps)) + [float(t)]:
            cx, cy = path.sample_points(tau, xs, ys)
            worst = max(worst, np.abs(cx - xs).max(), np.abs(cy - ys).max())
    return int(math.ceil(worst)) + spec.k + 4


def render_sequence(spec: SceneSpec) -> Sequence:
    """Render sharp frames, blurred frames and ground-truth flows for ``spec``."""
    path = CameraPath(spec)
    needed = required_margin(spec, path)
    margin = needed if spec.margin is None else spec.margin
    if margin < needed:
        raise ParameterError(f"camera path needs a canvas margin of {needed} px, got {margin}")

    canvas = gen_texture(spec.seed, spec.width + 2 * margin, spec.height + 2 * margin, spec.sigma_tex)
    xs, ys = pixel_grid(spec.height, spec.width)

    def render(tau):
        cx, cy = path.sample_points(tau, xs, ys)
        return sample_bilinear(canvas, cx + margin, cy + margin)

    sharp, blurred = [], []
    for t in range(spec.frames):
        subs = [render(tau) for tau in exposure_times(t, spec.substeps)]
        if spec.substeps % 2 == 1:
            sharp.append(subs[spec.substeps // 2])
        else:
            sharp.append(render(float(t)))
        blurred.append(synth_blur_average(subs))
    flows = [path.flow(t) for t in range(1, spec.frames)]
    return Sequence(sharp, blurred, flows, canvas, margin)


def synth_blur_average(substeps) -> np.ndarray:
    """Per-sample mean of equally sized frames."""
    if len(substeps) == 0:
        raise ParameterError("need at least one frame to average")
    frames = [as_frame(f) for f in substeps]
    for f in frames[1:]:
        if f.shape != frames[0].shape:
            raise ParameterError("frames to average must share a shape")
    return np.mean(frames, axis=0)


@dataclass
class PairSample:
    """Sharp and blurred versions of one consecutive frame pair."""

    prev_sharp: np.ndarray
    prev_blur: np.ndarray
    cur_sharp: np.ndarray
    cur_blur: np.ndarray
    flow: np.ndarray  # exact sharp-to-sharp backward flow

    def frames(self, alpha: str, beta: str) -> tuple[np.ndarray, np.ndarray]:
        prev = self.prev_sharp if alpha == "s" else self.prev_blur
        cur = self.cur_sharp if beta == "s" else self.cur_blur
        return prev, cur


def make_pairs(seq: Sequence) -> list[PairSample]:
    return [
        PairSample(seq.sharp[t - 1], seq.blurred[t - 1], seq.sharp[t], seq.blurred[t], seq.flows[t - 1])
        for t in range(1, len(seq.sharp))
    ]


def bim_loss(flow, prev_sharp, cur_sharp) -> float:
    """Warp the sharp previous frame by ``flow`` and compare with the sharp
    current frame, over in-bounds pixels.  Whatever pair the flow came from,
    the comparison is always on the sharp pair."""
    check_same_size(as_frame(prev_sharp), as_frame(cur_sharp), "sharp frames")
    warped, mask = backward_warp(prev_sharp, flow)
    return masked_mse(warped, as_frame(cur_sharp), mask)


def blur_variant_loss(flow, prev, cur) -> float:
    """The same warping MSE evaluated on the pair frames themselves."""
    check_same_size(as_frame(prev), as_frame(cur), "pair frames")
    warped, mask = backward_warp(prev, flow)
    return masked_mse(warped, as_frame(cur), mask)


@dataclass
class CalibrationRow:
    index: int
    params: FlowParams
    mean_loss: float
    pair_losses: dict[tuple[str, str], float]


def _evaluate_cell(index, params, pairs, pair_types) -> CalibrationRow:
    per_type = {}
    for alpha, beta in pair_types:
        losses = []
        for sample in pairs:
            prev, cur = sample.frames(alpha, beta)
            flow = estimate_flow(cur, prev, params)
            losses.append(bim_loss(flow, sample.prev_sharp, sample.cur_sharp))
        per_type[(alpha, beta)] = float(np.mean(losses))
    return CalibrationRow(index, params, float(np.mean(list(per_type.values()))), per_type)


def calibrate_blur_invariant(pairs, grid, pair_types=FOUR_PAIRS, workers: int = 1):
    """Pick the flow parameters with the lowest mean blur-invariant loss.

    Every cell of ``grid`` estimates flow on every requested (alpha, beta)
    pair type of every sample; losses are averaged over samples and pair
    types.  Returns ``(best_params, rows)`` with rows in grid order; ties go
    to the earliest cell.
    """
    pairs = list(pairs)
    grid = list(grid)
    if not pairs or not grid:
        raise ParameterError("calibration needs at least one pair and one grid cell")
    jobs = [(i, p, pairs, tuple(pair_types)) for i, p in enumerate(grid)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: _evaluate_cell(*job), jobs))
    else:
        rows = [_evaluate_cell(*job) for job in jobs]
    best = min(rows, key=lambda r: (r.mean_loss, r.index))
    return best.params, rows


def lambda_grid(values, base: FlowParams | None = None) -> list[FlowParams]:
    """Grid cells that differ from ``base`` only in data weight."""
    base = base or FlowParams()
    return [replace(base, data_weight=float(v)) for v in values]
