import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazeband import features
from gazeband.errors import DegenerateChannel, InvalidOrder, InvalidWindow, RecordingTooShort
from gazeband.features import Band, NormStats, VelocitySegment

from conftest import make_rec


def lstsq_oracle(window, order):
    """Slope of the least-squares polynomial fit, solved via the normal equations."""
    m = window // 2
    k = np.arange(-m, m + 1, dtype=np.float64)
    A = np.vander(k, order + 1, increasing=True)
    # the slope at k=0 is row 1 of (A^T A)^-1 A^T
    return np.linalg.solve(A.T @ A, A.T)[1]


def seg(vh, vv=None, window_index=0):
    vh = np.asarray(vh, dtype=float)
    vv = np.zeros_like(vh) if vv is None else np.asarray(vv, dtype=float)
    return VelocitySegment(vh, vv, "001", 1, 1, "TEX", window_index)


def test_sg_closed_form():
    w = features.savgol_derivative_coeffs(7, 2, 1.0)
    np.testing.assert_allclose(w, np.arange(-3, 4) / 28.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(w, lstsq_oracle(7, 2), rtol=0, atol=1e-12)
    np.testing.assert_allclose(features.savgol_derivative_coeffs(7, 2, 1000.0),
                               np.arange(-3, 4) / 28.0 * 1000, rtol=1e-12)


@pytest.mark.parametrize("window,order", [(5, 2), (9, 3), (11, 4), (7, 1)])
def test_sg_other_orders_match_oracle(window, order):
    np.testing.assert_allclose(features.savgol_derivative_coeffs(window, order),
                               lstsq_oracle(window, order), rtol=0, atol=1e-12)


def test_sg_errors():
    with pytest.raises(InvalidWindow):
        features.savgol_derivative_coeffs(6, 2)
    with pytest.raises(InvalidOrder):
        features.savgol_derivative_coeffs(7, 7)
    with pytest.raises(InvalidOrder):
        features.savgol_derivative_coeffs(7, 0)


def test_quadratic_derivative_exact():
    t = np.arange(200, dtype=float)
    d = features.differentiate_channel(t ** 2, 7, 2, 1.0)
    np.testing.assert_allclose(d[3:-3], 2 * t[3:-3], rtol=0, atol=1e-9)
    # any quadratic, at a non-unit rate
    x = 0.3 * t ** 2 - 4 * t + 2
    d = features.differentiate_channel(x, 7, 2, 250.0)
    np.testing.assert_allclose(d[3:-3], (0.6 * t[3:-3] - 4) * 250.0, rtol=1e-12, atol=1e-9)


def test_constant_and_ramp():
    vh, vv = features.differentiate(make_rec(np.full(100, 2.0), np.arange(100, dtype=float)))
    np.testing.assert_allclose(vh, 0.0, atol=1e-12)
    np.testing.assert_allclose(vv[3:-3], 1000.0, rtol=1e-12)


def test_nan_window_propagation():
    x = np.arange(50, dtype=float)
    x[20] = np.nan
    d = features.differentiate_channel(x, 7, 2, 1.0)
    assert np.isnan(d[17:24]).all()
    assert not np.isnan(d[:17]).any() and not np.isnan(d[24:]).any()


def test_differentiate_too_short():
    with pytest.raises(RecordingTooShort):
        features.differentiate_channel(np.zeros(6))


@pytest.mark.parametrize("n,count", [(63000, 12), (4999, 0), (5000, 1), (10001, 2)])
def test_segment_counts(n, count):
    x = np.arange(n, dtype=float)
    segs = features.segment(x, x, "001", 1, 1, "TEX")
    assert len(segs) == count
    assert all(len(s.vh) == 5000 for s in segs)
    if count:
        assert segs[-1].vh[-1] == count * 5000 - 1
        assert [s.window_index for s in segs] == list(range(count))


def test_clamp():
    s = features.clamp_velocity(seg([1500.0, -1500.0, 999.9, np.nan]))
    np.testing.assert_array_equal(s.vh, [1000.0, -1000.0, 999.9, np.nan])


def test_finalize():
    np.testing.assert_array_equal(features.finalize(seg([np.nan, 1.0])).vh, [0.0, 1.0])
    assert not features.finalize(seg([np.nan] * 4)).vh.any()
    s = seg([1.0, 2.0])
    np.testing.assert_array_equal(features.finalize(s).vh, s.vh)


def test_norm_stats_values():
    a = seg([1.0, 3.0, np.nan], [0.0, 2.0, 4.0])
    b = seg([5.0, 7.0, 9.0], [6.0, 8.0, 10.0])
    st_ = features.fit_norm_stats([a, b])
    pooled_h = np.array([1, 3, 5, 7, 9.0])
    assert st_.mean_h == pytest.approx(pooled_h.mean(), abs=1e-12)
    assert st_.std_h == pytest.approx(pooled_h.std(), abs=1e-12)
    assert st_.mean_v == pytest.approx(5.0)
    assert NormStats.from_dict(st_.to_dict()) == st_
    n = features.apply_norm(b, st_)
    np.testing.assert_allclose(n.vh, (b.vh - st_.mean_h) / st_.std_h)


def test_degenerate_channel():
    with pytest.raises(DegenerateChannel):
        features.fit_norm_stats([seg([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])])
    with pytest.raises(DegenerateChannel):
        features.fit_norm_stats([seg([np.nan, np.nan], [1.0, 2.0])])


def test_held_out_stats_semantics():
    rng = np.random.Generator(np.random.PCG64(0))
    train = [seg(rng.normal(0, 1, 50), rng.normal(0, 1, 50))]
    test = [seg(rng.normal(5, 2, 50), rng.normal(5, 2, 50))]
    st_ = features.fit_norm_stats(train)
    out = features.normalize_segments(test, st_)
    assert abs(out[0].vh.mean()) > 1.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_stats_ignore_test_segments(seed):
    # leakage check: stats depend only on the segments passed in
    rng = np.random.Generator(np.random.PCG64(seed))
    train = [seg(rng.normal(0, 1, 40), rng.normal(0, 1, 40)) for _ in range(3)]
    before = features.fit_norm_stats(train)
    test = [seg(rng.normal(0, 1, 40), rng.normal(0, 1, 40))]
    features.normalize_segments(test, before)
    test[0].vh[:] = 1e6
    assert features.fit_norm_stats(train) == before


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.05))
@settings(max_examples=15, deadline=None)
def test_composed_chain_equals_steps(seed, nan_frac):
    rng = np.random.Generator(np.random.PCG64(seed))
    n = int(rng.integers(5000, 16000))
    h = np.cumsum(rng.standard_normal(n)) * 0.05
    v = np.cumsum(rng.standard_normal(n)) * 0.05
    h[rng.random(n) < nan_frac] = np.nan
    rec = make_rec(h, v)
    stats = NormStats(0.1, -0.2, 30.0, 40.0)
    composed = features.preprocess(rec, Band.SIGNAL, stats)
    vh, vv = features.differentiate(rec)
    manual = features.segment(vh, vv, rec.subject_id, 1, 1, "TEX", Band.SIGNAL)
    manual = [features.clamp_velocity(s) for s in manual]
    manual = [features.apply_norm(s, stats) for s in manual]
    manual = [features.finalize(s) for s in manual]
    assert len(composed) == len(manual) == n // 5000
    for a, b in zip(composed, manual):
        assert a.vh.tobytes() == b.vh.tobytes() and a.vv.tobytes() == b.vv.tobytes()
        assert np.isfinite(a.vh).all() and np.isfinite(a.vv).all()
        assert len(a.vh) == 5000 and a.band == Band.SIGNAL


def test_recording_segments_clamped(synth_rec):
    segs = features.recording_segments(synth_rec, Band.UNFILTERED)
    assert len(segs) == len(synth_rec) // 5000
    for s in segs:
        ok = ~np.isnan(s.vh)
        assert np.all(np.abs(s.vh[ok]) <= 1000.0)


def test_stack_segments():
    x = features.stack_segments([seg(np.ones(5000), np.zeros(5000))] * 3)
    assert x.shape == (3, 2, 5000) and x.dtype == np.float32
    assert features.stack_segments([]).shape == (0, 2, 5000)
