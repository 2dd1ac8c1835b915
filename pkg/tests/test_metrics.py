import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from conftest import crop_shift, texture
from pvdeblur.imagecore import DegenerateInputError, DimensionError, ParameterError
from pvdeblur.metrics import (
    aligned_metric,
    endpoint_error,
    frame_report,
    interior_mask,
    masked_psnr,
    offsets_by_preference,
    psnr,
    read_reports,
    ssim,
    write_reports,
)


def test_psnr_cap(rng):
    f = rng.random((8, 8))
    assert psnr(f, f) == 99.0


def test_psnr_closed_form():
    value = psnr(np.zeros((8, 8)), np.full((8, 8), 10 / 255))
    assert value == pytest.approx(20 * math.log10(255 / 10), abs=1e-9)
    assert value == pytest.approx(28.1308036, abs=1e-6)


def test_psnr_max_error():
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_masked_psnr_uses_mask_only():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 1.0)
    b[0, 0] = 0.1
    m = np.zeros((4, 4), dtype=bool)
    m[0, 0] = True
    assert masked_psnr(a, b, m) == pytest.approx(20.0)
    with pytest.raises(DegenerateInputError):
        masked_psnr(a, b, np.zeros((4, 4), dtype=bool))


def test_ssim_identity():
    f = texture(0, 40)
    assert ssim(f, f) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    a = texture(seed, 48)
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_of_inverted_noise_is_not_positive():
    noise = np.random.default_rng(11).random((64, 64))
    assert ssim(noise, 1.0 - noise) <= 1e-6


def test_ssim_constant_offset_is_luminance_term():
    a = np.full((20, 20), 0.4)
    b = np.full((20, 20), 0.5)
    c1 = 0.01 ** 2
    expect = (2 * 0.4 * 0.5 + c1) / (0.4 ** 2 + 0.5 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expect, abs=1e-9)


def test_ssim_colour_uses_luma(rng):
    a = rng.random((16, 16, 3))
    b = rng.random((16, 16, 3))
    gray = lambda f: f @ np.array([0.299, 0.587, 0.114])
    assert ssim(a, b) == pytest.approx(ssim(gray(a), gray(b)))


def test_ssim_rejects_small():
    with pytest.raises(ParameterError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**20), noise=st.floats(0, 1))
def test_symmetry_and_bounds(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    b = np.clip(a + noise * rng.normal(size=a.shape), 0, 1)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_offsets_preference_order():
    offs = offsets_by_preference(1)
    assert offs[0] == (0, 0)
    assert offs[1:5] == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert len(offs) == 9


def test_aligned_self_is_cap_at_origin():
    f = texture(1, 40)
    assert aligned_metric(f, f, 4) == (99.0, (0, 0))


def test_aligned_recovers_planted_translation():
    canvas = texture(3, 80)
    a = crop_shift(canvas, 10, 10, 48, 48)
    b = crop_shift(canvas, 10, 10, 48, 48, dx=-3, dy=2)  # a(x, y) = b(x + 3, y - 2)
    score, off = aligned_metric(a, b, 5)
    assert off == (3, -2)
    assert score == 99.0
    score_s, off_s = aligned_metric(a, b, 5, which="ssim")
    assert off_s == (3, -2)
    assert score_s == pytest.approx(1.0)


def test_radius_zero_is_plain_metric(rng):
    a, b = rng.random((20, 20)), rng.random((20, 20))
    assert aligned_metric(a, b, 0)[0] == psnr(a, b)
    assert aligned_metric(a, b, 0, "ssim")[0] == ssim(a, b)


def test_aligned_monotone_in_radius():
    a = texture(2, 40)
    b = np.roll(texture(2, 40), 2, axis=1) * 0.9 + 0.05
    scores = [aligned_metric(a, b, r)[0] for r in range(4)]
    assert scores == sorted(scores)


def test_aligned_all_offsets_skipped():
    with pytest.raises(DegenerateInputError):
        aligned_metric(np.zeros((12, 12)), np.zeros((12, 12)), 1)


def test_aligned_bad_args():
    with pytest.raises(ParameterError):
        aligned_metric(np.zeros((20, 20)), np.zeros((20, 20)), -1)
    with pytest.raises(ParameterError):
        aligned_metric(np.zeros((20, 20)), np.zeros((20, 20)), 1, "mae")


def test_epe_cases():
    gt = np.random.default_rng(0).normal(size=(6, 8, 2))
    assert endpoint_error(gt, gt) == 0.0
    assert endpoint_error(gt + np.array([1.0, 0.0]), gt) == pytest.approx(1.0)
    off = gt.copy()
    off[:3, :, 1] += 2.0
    assert endpoint_error(off, gt) == pytest.approx(1.0)
    with pytest.raises(DegenerateInputError):
        endpoint_error(gt, gt, np.zeros((6, 8), dtype=bool))
    with pytest.raises(DimensionError):
        endpoint_error(gt, gt[:5])


def test_interior_mask_fraction():
    m = interior_mask(100, 50)
    assert m.sum() == 80 * 40
    assert m[10, 5] and not m[9, 5]


def test_report_roundtrip(tmp_path):
    a = texture(5, 32)
    rep = frame_report(3, a, a, radius=2)
    assert (rep.frame_index, rep.psnr, rep.aligned_psnr, rep.dx, rep.dy) == (3, 99.0, 99.0, 0, 0)
    assert rep.ssim == pytest.approx(1.0) and rep.aligned_ssim == pytest.approx(1.0)
    assert math.isnan(rep.epe)
    path = tmp_path / "m.csv"
    write_reports(path, [rep, rep])
    back = read_reports(path)
    assert len(back) == 2
    assert back[0].frame_index == 3 and back[0].psnr == 99.0
    buf = io.StringIO()
    write_reports(buf, [rep])
    assert buf.getvalue() == "".join(path.read_text().splitlines(keepends=True)[:2])
