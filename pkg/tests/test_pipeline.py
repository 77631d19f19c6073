import io
import math
import warnings

import numpy as np
import pytest

from rssreflect.core import LinkGeometry
from rssreflect.detector import DetectorConfig, threshold_for_pf
from rssreflect.energy import ChannelSet
from rssreflect.pipeline import (
    NO_LABEL,
    BaselineProfile,
    CalibrationResult,
    RssRecord,
    RssTrace,
    StreamingFir,
    assemble_sweeps,
    calibrate_sigma,
    compute_residuals,
    design_lowpass,
    estimate_baseline,
    evaluate_trace,
    fir_lowpass,
    grid_points,
    load_taps,
    read_trace,
    synth_grid_trace,
    synth_vacant_trace,
    trace_to_text,
    write_trace,
)

CH = ChannelSet.uniform()


def sweep_trace(values, period=0.032, labels=None):
    """Trace from a (sweeps, C) matrix of RSS values."""
    values = np.asarray(values, dtype=float)
    n, c = values.shape
    t = (np.arange(n)[:, None] * period + np.arange(c)[None, :] * period / c).ravel()
    ch = np.tile(np.arange(c), n)
    lab = None if labels is None else np.repeat(labels, c)
    return RssTrace(t, ch, values.ravel(), lab)


# --- I/O ------------------------------------------------------------------


def test_round_trip_text():
    tr = synth_vacant_trace(CH, 0.2, duration_s=1.0, seed=3)
    back = read_trace(io.StringIO(trace_to_text(tr)))
    np.testing.assert_allclose(back.timestamp, tr.timestamp, atol=1e-6)
    np.testing.assert_array_equal(back.channel, tr.channel)
    np.testing.assert_allclose(back.rss, tr.rss, atol=1e-6)
    np.testing.assert_array_equal(back.label, tr.label)


def test_round_trip_file(tmp_path):
    tr = RssTrace.from_records([RssRecord(0.0, 0, -40.0, 3), RssRecord(0.002, 1, -41.5)])
    path = tmp_path / "t.csv"
    write_trace(tr, path)
    back = read_trace(path)
    assert list(back.records()) == list(tr.records())


def test_whitespace_delimited_without_header_or_labels():
    text = "0.0 0 -40.5\n0.002\t1\t-41.25\n\n"
    tr = read_trace(io.StringIO(text))
    assert len(tr) == 2
    assert tr.rss[1] == -41.25
    assert np.all(tr.label == NO_LABEL)


def test_comma_with_header_and_labels():
    text = "# timestamp_s, channel_index, rss_dbm, label\n0.0, 0, -40.5, 7\n"
    tr = read_trace(io.StringIO(text))
    assert tr.label[0] == 7


@pytest.mark.parametrize("bad", ["0.0,0\n", "0.0,zero,-40\n", "0.0,0,-40,1,2\n"])
def test_malformed_lines_rejected(bad):
    with pytest.raises(ValueError, match="line 1"):
        read_trace(io.StringIO(bad))


def test_trace_validation():
    with pytest.raises(ValueError):
        RssTrace([0.0], [0, 1], [1.0])
    with pytest.raises(ValueError):
        RssTrace([0.0], [-1], [1.0])


# --- baseline -------------------------------------------------------------


def test_constant_trace_baseline():
    tr = sweep_trace(np.full((10, 16), -50.0))
    b = estimate_baseline(tr, CH)
    assert b.mean == (-50.0,) * 16 and b.std == (0.0,) * 16 and b.samples == 10


def test_baseline_recovers_los_power():
    rng = np.random.default_rng(4)
    los = -40.0 - np.arange(16)
    vals = los + 0.2 * rng.standard_normal((1000, 16))
    b = estimate_baseline(sweep_trace(vals), 16)
    assert np.all(np.abs(np.array(b.mean) - los) < 4 * 0.2 / math.sqrt(1000))
    np.testing.assert_allclose(b.std, 0.2, rtol=0.1)


def test_single_sample_baseline():
    b = estimate_baseline(sweep_trace(np.arange(16.0)[None, :]), 16)
    assert b.mean == tuple(np.arange(16.0)) and b.std == (0.0,) * 16 and b.samples == 1


def test_empty_channel_named_in_error():
    vals = np.full((5, 16), -50.0)
    tr = sweep_trace(vals)
    keep = tr.channel != 9
    tr = RssTrace(tr.timestamp[keep], tr.channel[keep], tr.rss[keep])
    with pytest.raises(ValueError, match="channel 9"):
        estimate_baseline(tr, 16)


def test_baseline_json_round_trip():
    b = BaselineProfile((-40.0, -41.0), (0.1, 0.2), (10, 12))
    assert BaselineProfile.from_json(b.to_json()) == b
    assert b.samples == 10


def test_subtraction_idempotence():
    tr = synth_vacant_trace(CH, 0.3, duration_s=20.0, seed=8)
    b = estimate_baseline(tr, CH)
    corrected = RssTrace(tr.timestamp, tr.channel, tr.rss - np.asarray(b.mean)[tr.channel])
    b2 = estimate_baseline(corrected, CH)
    np.testing.assert_allclose(b2.mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(b2.std, b.std, rtol=1e-12)


# --- FIR ------------------------------------------------------------------


def test_default_taps_design():
    h = design_lowpass()
    assert h.size == 65
    assert h.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(h, h[::-1], atol=1e-16)


def _steady_gain(h, f, fs=1 / 0.032):
    n = np.arange(4000)
    x = np.sin(2 * np.pi * f / fs * n)
    y = fir_lowpass(x, h)[h.size :]
    return np.max(np.abs(y)) / 1.0


def test_default_filter_attenuates_ten_hertz_by_forty_db():
    h = design_lowpass()
    g10 = _steady_gain(h, 10.0)
    assert 20 * math.log10(g10) < -40.0
    # Analytic frequency response agrees with the time-domain measurement.
    w = 2 * np.pi * 10.0 * 0.032
    resp = abs(np.sum(h * np.exp(-1j * w * np.arange(h.size))))
    assert resp == pytest.approx(g10, rel=0.05, abs=1e-6)
    assert _steady_gain(h, 0.1) == pytest.approx(1.0, abs=0.01)


def test_impulse_and_constant_response():
    h = np.array([0.2, 0.5, 0.3])
    x = np.zeros(6)
    x[0] = 1.0
    np.testing.assert_allclose(fir_lowpass(x, h), [0.2, 0.5, 0.3, 0, 0, 0])
    y = fir_lowpass(np.full(20, 4.0), h)
    np.testing.assert_allclose(y[2:], 4.0)


def test_streaming_matches_batch_and_columns_independent():
    rng = np.random.default_rng(0)
    h = design_lowpass(17, 2.0)
    x = rng.standard_normal((200, 3))
    batch = fir_lowpass(x, h)
    s = StreamingFir(h)
    np.testing.assert_allclose([s.push(v) for v in x[:, 1]], batch[:, 1], atol=1e-13)
    x2 = x.copy()
    x2[:, 0] += 100.0
    np.testing.assert_allclose(fir_lowpass(x2, h)[:, 1:], batch[:, 1:])


def test_load_taps(tmp_path):
    p = tmp_path / "taps.txt"
    p.write_text("# taps\n0.25, 0.5\n0.25\n")
    np.testing.assert_allclose(load_taps(p), [0.25, 0.5, 0.25])
    (tmp_path / "empty.txt").write_text("# nothing\n")
    with pytest.raises(ValueError):
        load_taps(tmp_path / "empty.txt")


def test_design_validation():
    with pytest.raises(ValueError):
        design_lowpass(cutoff_hz=20.0)
    with pytest.raises(ValueError):
        fir_lowpass([1.0], [])


# --- sweep assembly -------------------------------------------------------


def test_sweeps_reorder_duplicates_and_gaps():
    recs = [
        RssRecord(0.010, 1, -2.0),
        RssRecord(0.000, 0, -1.0),
        RssRecord(0.020, 1, -3.0),  # duplicate channel 1: latest wins
        RssRecord(0.040, 0, -5.0),  # second window lacks channel 1
        RssRecord(0.070, 0, -6.0),
        RssRecord(0.080, 1, -7.0),
    ]
    sw = assemble_sweeps(RssTrace.from_records(recs), 2)
    assert sw.values.shape == (3, 2)
    np.testing.assert_array_equal(sw.values[0], [-1.0, -3.0])
    assert np.isnan(sw.values[1, 1])
    np.testing.assert_array_equal(sw.complete(), [True, False, True])


def test_skipped_windows_counted():
    vals = np.zeros((10, 4))
    tr = sweep_trace(vals)
    drop = (tr.channel == 2) & (tr.timestamp > 0.1) & (tr.timestamp < 0.2)
    tr = RssTrace(tr.timestamp[~drop], tr.channel[~drop], tr.rss[~drop])
    b = BaselineProfile((0.0,) * 4, (0.0,) * 4, (1,) * 4)
    ev = evaluate_trace(tr, b, DetectorConfig(4, 1.0))
    assert ev.skipped == int(drop.sum())
    assert ev.decisions == ev.windows - ev.skipped
    # A subset that avoids the gappy channel loses no windows.
    ev2 = evaluate_trace(tr, b, DetectorConfig(2, 1.0), channel_indices=[0, 3])
    assert ev2.skipped == 0 and ev2.decisions == 10


def test_mixed_label_window_is_unlabelled():
    recs = [RssRecord(0.0, 0, 0.0, 1), RssRecord(0.01, 1, 0.0, 2), RssRecord(0.04, 0, 0.0, 2), RssRecord(0.05, 1, 0.0, 2)]
    sw = assemble_sweeps(RssTrace.from_records(recs), 2)
    np.testing.assert_array_equal(sw.label, [NO_LABEL, 2])


# --- calibration ----------------------------------------------------------


def test_gaussian_residuals_need_no_inflation():
    r = np.random.default_rng(2).normal(0, 0.15, 16 * 200000)
    cal = calibrate_sigma(r, 16, 6e-6)
    assert cal.sigma == pytest.approx(0.15, rel=0.01)
    assert cal.sigma_hat / cal.sigma == pytest.approx(1.0, abs=0.05)
    assert cal.windows == 200000 and cal.allowed_exceedances == 1


def test_skewed_residuals_inflate_sigma():
    rng = np.random.default_rng(3)
    r = rng.normal(0, 0.13, 16 * 20000)
    hit = rng.random(r.size) < 0.02
    r[hit] += rng.exponential(0.6, hit.sum())
    r -= r.mean()
    cal = calibrate_sigma(r, 16, 6e-6)
    assert cal.sigma_hat > cal.sigma
    e = (r.reshape(-1, 16) ** 2).sum(axis=1)
    x = threshold_for_pf(16, cal.sigma_hat, 6e-6)
    assert np.sum(e > x) <= cal.allowed_exceedances
    # The smallest such value: slightly less and too many windows exceed.
    x_less = threshold_for_pf(16, cal.sigma_hat * (1 - 1e-9), 6e-6)
    assert np.sum(e > x_less) > cal.allowed_exceedances


def test_calibration_warnings_and_errors():
    with pytest.warns(UserWarning):
        calibrate_sigma(np.random.default_rng(0).normal(size=16 * 50), 16, 6e-6)
    with pytest.raises(ValueError):
        calibrate_sigma(np.ones(15), 16, 6e-6)
    with pytest.raises(ValueError):
        calibrate_sigma(np.ones((4, 3)), 16, 6e-6)


def test_calibration_json_round_trip():
    c = CalibrationResult(0.13, 0.16, 16, 6e-6, 3750, 0)
    assert CalibrationResult.from_json(c.to_json()) == c


# --- evaluation -----------------------------------------------------------


def test_vacant_false_alarm_rate():
    sigma = 0.3
    tr = synth_vacant_trace(CH, sigma, duration_s=100000 * 0.032, seed=21)
    b = BaselineProfile(tuple(np.full(16, 0.0) + (-45.0 - 0.25 * np.arange(16) + 1.5 * np.sin(np.arange(16)))), (sigma,) * 16, (1,) * 16)
    pf = 1e-3
    ev = evaluate_trace(tr, b, DetectorConfig(16, sigma, pf))
    assert ev.decisions == 100000
    std = math.sqrt(pf * (1 - pf) / ev.decisions)
    assert abs(ev.detection_ratio - pf) < 3 * std


def test_noise_free_occupied_trace_always_detected():
    geom = LinkGeometry.from_distance(3.0)
    pts = [(1.5, 1.0), (0.5, 1.5)]
    tr = synth_grid_trace(geom, pts, 0.35, CH, sigma=0.0, dwell_s=3.2)
    b = estimate_baseline(synth_vacant_trace(CH, 0.0, duration_s=1.0), CH)
    ev = evaluate_trace(tr, b, DetectorConfig(16, 0.15, 6e-6))
    assert set(ev.per_label) == {1, 2}
    assert all(s.ratio == 1.0 and s.decisions == 100 for s in ev.per_label.values())


def test_filtered_evaluation_discards_transient_per_segment():
    geom = LinkGeometry.from_distance(3.0)
    tr = synth_grid_trace(geom, grid_points(3.0)[:2], 0.35, CH, 0.15, dwell_s=6.4, seed=1)
    b = estimate_baseline(synth_vacant_trace(CH, 0.15, duration_s=30, seed=2), CH)
    ev = evaluate_trace(tr, b, DetectorConfig(16, 0.15), taps=design_lowpass())
    assert ev.transient == 2 * 64
    assert ev.decisions == 2 * 200 - 2 * 64
    res = compute_residuals(tr, b, taps=design_lowpass())
    assert res.values.shape == (ev.decisions, 16)


def test_channel_count_mismatch():
    b = BaselineProfile((0.0,) * 16, (0.1,) * 16, (5,) * 16)
    tr = sweep_trace(np.zeros((3, 16)))
    with pytest.raises(ValueError):
        evaluate_trace(tr, b, DetectorConfig(4, 1.0))
    with pytest.raises(ValueError):
        compute_residuals(tr, b, [0, 16])


def test_grid_points_layout():
    pts = grid_points(3.0)
    assert pts.shape == (25, 2)
    assert pts[:, 0].min() == pytest.approx(0.5) and pts[:, 0].max() == pytest.approx(2.5)
    assert np.allclose(np.diff(np.unique(pts[:, 1])), 0.5)


def test_synthetic_traces_deterministic():
    a = synth_vacant_trace(CH, 0.2, duration_s=2.0, seed=5)
    b = synth_vacant_trace(CH, 0.2, duration_s=2.0, seed=5)
    np.testing.assert_array_equal(a.rss, b.rss)
