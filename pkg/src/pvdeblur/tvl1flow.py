"""Coarse-to-fine TV-L1 optical flow (primal-dual, Jacobi updates).

The solver minimises, per pyramid level,

    E(u) = sum_p lambda * |I1(p + u(p)) - I0(p)| + |grad u1(p)| + |grad u2(p)|

with intensities on the 8-bit scale, so the usual ``lambda = 0.15`` default
applies.  Each warp linearises the data term around the current flow and runs
a fixed number of thresholding / dual projection steps.  A warp step that
would raise the true (non-linearised) energy is rejected and the level ends,
so the recorded energy never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import (
    DimensionError,
    ParameterError,
    as_frame,
    in_bounds,
    pixel_grid,
    sample_bilinear,
)

_GRAD_EPS = 1e-10
_MIN_LEVEL_SIZE = 8
_AUTO_LEVEL_SIZE = 16


@dataclass(frozen=True)
class FlowParams:
    data_weight: float = 0.15
    tightness: float = 0.3
    tau: float = 0.25
    warps: int = 5
    inner_iterations: int = 30
    pyramid_levels: int | None = None  # None: coarsest side >= 16 px
    zoom: float = 0.5
    median_radius: int = 1

    def __post_init__(self):
        if not self.data_weight > 0:
            raise ParameterError("data_weight must be > 0")
        if not self.tightness > 0:
            raise ParameterError("tightness must be > 0")
        if not 0 < self.tau <= 0.25:
            raise ParameterError("tau must lie in (0, 0.25]")
        if self.warps < 1 or self.inner_iterations < 1:
            raise ParameterError("warps and inner_iterations must be >= 1")
        if self.pyramid_levels is not None and self.pyramid_levels < 1:
            raise ParameterError("pyramid_levels must be >= 1")
        if not 0 < self.zoom < 1:
            raise ParameterError("zoom must lie in (0, 1)")
        if self.median_radius not in (0, 1, 2):
            raise ParameterError("median_radius must be 0, 1 or 2")


def _level_size(n: int, zoom: float) -> int:
    return int(n * zoom + 0.5)


def auto_levels(height: int, width: int, zoom: float, min_size: int = _AUTO_LEVEL_SIZE) -> int:
    levels = 1
    h, w = height, width
    while True:
        h, w = _level_size(h, zoom), _level_size(w, zoom)
        if min(h, w) < min_size:
            return levels
        levels += 1


def _zoom_out(image: np.ndarray, zoom: float) -> np.ndarray:
    h, w = image.shape[:2]
    sigma = 0.6 * math.sqrt(1.0 / (zoom * zoom) - 1.0)
    blurred = ndimage.gaussian_filter(image, sigma, mode="nearest")
    xs, ys = pixel_grid(_level_size(h, zoom), _level_size(w, zoom))
    return sample_bilinear(blurred, xs / zoom, ys / zoom)


def gaussian_pyramid(frame, levels: int, zoom: float = 0.5) -> list[np.ndarray]:
    """Blur-and-resample pyramid, finest level first.

    Levels whose smaller side would drop below 8 px are not built.
    """
    frame = as_frame(frame)
    if levels < 1:
        raise ParameterError("levels must be >= 1")
    if not 0 < zoom < 1:
        raise ParameterError("zoom must lie in (0, 1)")
    if min(frame.shape[:2]) < _MIN_LEVEL_SIZE:
        raise ParameterError(f"frame must be at least {_MIN_LEVEL_SIZE}x{_MIN_LEVEL_SIZE}")
    pyramid = [frame]
    for _ in range(levels - 1):
        h, w = pyramid[-1].shape[:2]
        if min(_level_size(h, zoom), _level_size(w, zoom)) < _MIN_LEVEL_SIZE:
            break
        pyramid.append(_zoom_out(pyramid[-1], zoom))
    return pyramid


def _forward_gradient(u):
    ux = np.zeros_like(u)
    uy = np.zeros_like(u)
    ux[:, :-1] = u[:, 1:] - u[:, :-1]
    uy[:-1, :] = u[1:, :] - u[:-1, :]
    return ux, uy


def _divergence(px, py):
    # Negative adjoint of _forward_gradient.
    div = np.zeros_like(px)
    div[:, 0] = px[:, 0]
    div[:, 1:-1] = px[:, 1:-1] - px[:, :-2]
    div[:, -1] = -px[:, -2]
    div[0, :] += py[0, :]
    div[1:-1, :] += py[1:-1, :] - py[:-2, :]
    div[-1, :] += -py[-2, :]
    return div


def _warp_level(image, u):
    h, w = image.shape
    xs, ys = pixel_grid(h, w)
    sx = xs + u[0]
    sy = ys + u[1]
    return sample_bilinear(image, sx, sy), in_bounds(sx, sy, w, h)


def tvl1_energy(u: np.ndarray, i0: np.ndarray, i1: np.ndarray, data_weight: float) -> float:
    """TV-L1 energy of flow ``u`` (shape ``(2, H, W)``) on one level.

    ``i0``/``i1`` are the target and reference on the 8-bit intensity scale;
    pixels whose match leaves the reference contribute no data term.
    """
    warped, valid = _warp_level(i1, u)
    data = np.abs(warped - i0)[valid].sum()
    tv = 0.0
    for comp in u:
        gx, gy = _forward_gradient(comp)
        tv += np.sqrt(gx * gx + gy * gy).sum()
    return float(data_weight * data + tv)


def _solve_level(i0, i1, u, params: FlowParams, energies: list | None):
    lt = params.data_weight * params.tightness
    theta = params.tightness
    step = params.tau / theta
    p = np.zeros((2, 2) + i0.shape)  # dual variable per flow component

    energy = tvl1_energy(u, i0, i1, params.data_weight)
    if energies is not None:
        energies.append(energy)

    for _ in range(params.warps):
        i1w, valid = _warp_level(i1, u)
        gy, gx = np.gradient(i1w)
        gx = np.where(valid, gx, 0.0)
        gy = np.where(valid, gy, 0.0)
        grad2 = gx * gx + gy * gy
        rho_c = np.where(valid, i1w - i0 - gx * u[0] - gy * u[1], 0.0)
        safe = np.where(grad2 > _GRAD_EPS, grad2, 1.0)

        candidate = u.copy()
        p_next = p.copy()
        for _ in range(params.inner_iterations):
            rho = rho_c + gx * candidate[0] + gy * candidate[1]
            low = rho < -lt * grad2
            high = rho > lt * grad2
            shift = np.where(low, -lt, np.where(high, lt, rho / safe))
            shift = np.where(grad2 > _GRAD_EPS, shift, 0.0)
            v = candidate - shift * np.stack([gx, gy])
            for c in range(2):
                candidate[c] = v[c] + theta * _divergence(p_next[c, 0], p_next[c, 1])
                ux, uy = _forward_gradient(candidate[c])
                norm = 1.0 + step * np.sqrt(ux * ux + uy * uy)
                p_next[c, 0] = (p_next[c, 0] + step * ux) / norm
                p_next[c, 1] = (p_next[c, 1] + step * uy) / norm

        new_energy = tvl1_energy(candidate, i0, i1, params.data_weight)
        if new_energy > energy:
            break
        u, p, energy = candidate, p_next, new_energy
        if energies is not None:
            energies.append(energy)
    return u


def _upsample_flow(u: np.ndarray, shape: tuple[int, int], zoom: float) -> np.ndarray:
    xs, ys = pixel_grid(*shape)
    return np.stack([sample_bilinear(c, xs * zoom, ys * zoom) / zoom for c in u])


def estimate_flow(target, reference, params: FlowParams | None = None, trace: list | None = None) -> np.ndarray:
    """Estimate the backward flow with ``reference(x + u, y + v) ~ target(x, y)``.

    Both frames must be grayscale and of equal size.  The result is an
    ``(H, W, 2)`` array at target resolution.  When ``trace`` is a list, one
    list of per-warp energies is appended to it for every pyramid level,
    coarsest first.
    """
    params = params or FlowParams()
    target = as_frame(target)
    reference = as_frame(reference)
    if target.ndim != 2 or reference.ndim != 2:
        raise ParameterError("estimate_flow expects grayscale frames")
    if target.shape != reference.shape:
        raise DimensionError(f"frames differ in size: {target.shape} vs {reference.shape}")

    h, w = target.shape
    levels = params.pyramid_levels or auto_levels(h, w, params.zoom)
    pyr0 = gaussian_pyramid(target, levels, params.zoom)
    pyr1 = gaussian_pyramid(reference, levels, params.zoom)

    u = None
    for i0, i1 in zip(reversed(pyr0), reversed(pyr1)):
        if u is None:
            u = np.zeros((2,) + i0.shape)
        else:
            u = _upsample_flow(u, i0.shape, params.zoom)
        energies = [] if trace is not None else None
        u = _solve_level(i0 * 255.0, i1 * 255.0, u, params, energies)
        if trace is not None:
            trace.append(energies)
        if params.median_radius:
            size = 2 * params.median_radius + 1
            u = np.stack([ndimage.median_filter(c, size=size, mode="nearest") for c in u])
    return np.ascontiguousarray(np.moveaxis(u, 0, -1))
