import numpy as np
import pytest

from conftest import quantized_texture
from pvdeblur.blurlab import SceneSpec, render_sequence
from pvdeblur.imagecore import ParameterError
from pvdeblur.metrics import MetricReport
from pvdeblur.pipeline import (
    PipelineConfig,
    aggregate_deblur,
    deblur_sequence,
    stabilization_curve,
)
from pvdeblur.pixelvolume import PixelVolume, build_pixel_volume
from pvdeblur.tvl1flow import FlowParams

FAST = FlowParams(warps=2, inner_iterations=10)


def _single_pixel_volume(values, valid=None):
    values = np.asarray(values, dtype=np.float64)
    k = int(round(len(values) ** 0.5))
    valid = np.ones(len(values), dtype=bool) if valid is None else np.asarray(valid)
    return PixelVolume(values.reshape(-1, 1, 1), valid.reshape(-1, 1, 1), k)


def _agg(values, cur, sigma_c, valid=None):
    cur = np.full((1, 1), cur)
    return aggregate_deblur(cur, cur, cur, _single_pixel_volume(values, valid), sigma_c)[0, 0]


def test_equal_values_stay():
    assert _agg([0.3] * 9, 0.3, 0.08) == pytest.approx(0.3)


def test_large_sigma_is_plain_mean():
    vals = np.linspace(0.2, 0.4, 9)
    assert _agg(vals, 0.5, 10.0) == pytest.approx((vals.sum() + 0.5) / 10, abs=1e-4)


def test_single_outlier_suppressed():
    vals = [0.5] * 24 + [1.0]
    out = _agg(vals, 0.5, 0.05)
    # direct weights: consensus 1, outlier exp(-0.25 / 0.005)
    w_out = np.exp(-(0.5 ** 2) / (2 * 0.05 ** 2))
    expect = (24 * 0.5 + 0.5 + w_out * 1.0) / (25 + w_out)
    assert out == pytest.approx(expect, abs=1e-12)
    assert abs(out - 0.5) < 1e-3


def test_current_pixel_weight_follows_consensus():
    vals = [100 / 255] * 9
    out = _agg(vals, 140 / 255, 0.08)
    w0 = np.exp(-((40 / 255) ** 2) / (2 * 0.08 ** 2))
    assert out == pytest.approx((9 * 100 / 255 + w0 * 140 / 255) / (9 + w0))


def test_no_valid_candidates_keeps_blurry():
    assert _agg([0.9] * 9, 0.2, 0.08, valid=[False] * 9) == 0.2


def test_output_is_convex_combination(rng):
    ref = rng.random((10, 10))
    cur = rng.random((10, 10))
    pv = build_pixel_volume(ref, rng.normal(0, 2, (10, 10, 2)), 3)
    out = aggregate_deblur(cur, cur, cur, pv)
    pool = np.where(pv.valid, pv.slices, np.nan)
    lo = np.fmin(np.nanmin(np.where(pv.valid.any(0), pool, cur), axis=0), cur)
    hi = np.fmax(np.nanmax(np.where(pv.valid.any(0), pool, cur), axis=0), cur)
    assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


def test_static_zero_flow_returns_truth():
    f = quantized_texture(2, 20)
    pv = build_pixel_volume(f, np.zeros((20, 20, 2)), 5)
    np.testing.assert_allclose(aggregate_deblur(f, f, f, pv), f, atol=1e-12)


def test_aggregate_colour(rng):
    f = rng.random((8, 8, 3))
    pv = build_pixel_volume(f, np.zeros((8, 8, 2)), 3)
    np.testing.assert_allclose(aggregate_deblur(f, f, f, pv), f, atol=1e-12)


def test_aggregate_rejects_bad_sigma(rng):
    f = rng.random((5, 5))
    pv = build_pixel_volume(f, np.zeros((5, 5, 2)), 3)
    with pytest.raises(ParameterError):
        aggregate_deblur(f, f, f, pv, 0.0)


def _scene(frames=4, size=40):
    return render_sequence(SceneSpec(seed=1, frames=frames, substeps=5, velocity=(1.5, 0.5),
                                     width=size, height=size, sigma_tex=1.5))


def test_passthrough_returns_inputs():
    seq = _scene()
    res = deblur_sequence(seq.blurred, PipelineConfig(deblurrer="passthrough", flow_params=FAST))
    for est, b in zip(res.estimates, seq.blurred):
        np.testing.assert_array_equal(est, b)
    np.testing.assert_array_equal(res.flows[0], 0.0)


def test_single_frame_sequence():
    seq = _scene(frames=1)
    res = deblur_sequence(seq.blurred, PipelineConfig(flow_params=FAST), sharp=seq.sharp)
    assert len(res.estimates) == 1 and len(res.reports) == 1
    # zero flow over itself: every candidate and the current pixel agree
    np.testing.assert_allclose(res.estimates[0], seq.blurred[0], atol=1e-12)


def test_external_deblurrer_sees_three_frames_and_volume():
    seq = _scene(frames=3)
    calls = []

    def spy(prev_b, cur_b, next_b, pv):
        calls.append((prev_b, cur_b, next_b, pv.k))
        return cur_b

    deblur_sequence(seq.blurred, PipelineConfig(deblurrer="external", external=spy, k=3, flow_params=FAST))
    assert len(calls) == 3
    assert calls[0][0] is calls[0][1]  # previous of frame 0 is itself
    np.testing.assert_array_equal(calls[1][0], seq.blurred[0])
    np.testing.assert_array_equal(calls[1][2], seq.blurred[2])
    assert calls[2][2] is calls[2][1]
    assert all(c[3] == 3 for c in calls)


def test_causality():
    seq = _scene(frames=4)
    cfg = PipelineConfig(flow_params=FAST)
    a = deblur_sequence(seq.blurred, cfg)
    changed = list(seq.blurred)
    changed[3] = np.clip(changed[3] + 0.2, 0, 1)
    b = deblur_sequence(changed, cfg)
    for t in (0, 1):
        np.testing.assert_array_equal(a.estimates[t], b.estimates[t])


def test_reports_per_frame_with_epe():
    seq = _scene(frames=3)
    res = deblur_sequence(seq.blurred, PipelineConfig(flow_params=FAST, radius=3),
                          sharp=seq.sharp, gt_flows=seq.flows)
    assert [r.frame_index for r in res.reports] == [0, 1, 2]
    assert np.isnan(res.reports[0].epe)
    assert res.reports[1].epe < 1.0


def test_config_validation():
    with pytest.raises(ParameterError):
        PipelineConfig(k=4)
    with pytest.raises(ParameterError):
        PipelineConfig(deblurrer="magic")
    with pytest.raises(ParameterError):
        PipelineConfig(deblurrer="external")
    with pytest.raises(ParameterError):
        deblur_sequence([])


def test_external_wrong_shape_rejected():
    seq = _scene(frames=1)
    cfg = PipelineConfig(deblurrer="external", external=lambda p, c, n, pv: c[:-1])
    with pytest.raises(ParameterError):
        deblur_sequence(seq.blurred, cfg)


def _reports(values):
    return [MetricReport(i, v, 0.0, v, 0.0) for i, v in enumerate(values)]


def test_stabilization_single_and_duplicate():
    one = _reports([20.0, 25.0, 26.0])
    assert stabilization_curve([one]) == [(0, 20.0, 1), (1, 25.0, 1), (2, 26.0, 1)]
    assert [r[1] for r in stabilization_curve([one, one])] == [20.0, 25.0, 26.0]


def test_stabilization_uneven_lengths():
    rows = stabilization_curve([_reports([10.0, 20.0]), _reports([30.0])])
    assert rows == [(0, 20.0, 2), (1, 20.0, 1)]
    with pytest.raises(ParameterError):
        stabilization_curve([])
