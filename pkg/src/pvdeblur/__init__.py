"""Pixel-volume motion compensation for recurrent video deblurring."""

from .imagecore import (
    DegenerateInputError,
    DimensionError,
    ParameterError,
    sample_bilinear,
    to_grayscale,
)
from .metrics import MetricReport, aligned_metric, endpoint_error, psnr, ssim
from .pipeline import PipelineConfig, aggregate_deblur, deblur_sequence, stabilization_curve
from .pixelvolume import (
    PixelVolume,
    PvStats,
    build_naive_pixel_volume,
    build_pixel_volume,
    center_slice,
    ideal_warp,
    majority_warp,
    pv_statistics,
)
from .tvl1flow import FlowParams, estimate_flow, gaussian_pyramid
from .warp import backward_warp, masked_mse

__version__ = "0.1.0"
