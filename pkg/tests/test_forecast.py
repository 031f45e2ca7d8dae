import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coldstart_mpc.forecast import (
    ForecastConfig,
    ForecastError,
    HarmonicSet,
    InsufficientDataError,
    TrendCoefficients,
    clip_forecast,
    extract_harmonics,
    extrapolate,
    fit_trend,
    forecast,
    persistence_forecast,
    predict,
)


def naive_dft(x):
    # direct O(n^2) transform, independent of numpy.fft
    n = len(x)
    t = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * j * t / n)) for j in range(n // 2 + 1)])


class TestTrend:
    def test_constant(self):
        tr, _ = fit_trend([5, 5, 5, 5])
        assert (tr.a, tr.b, tr.c) == pytest.approx((0, 0, 5), abs=1e-12)

    def test_line(self):
        tr, _ = fit_trend([0, 1, 2, 3])
        assert (tr.a, tr.b, tr.c) == pytest.approx((0, 1, 0), abs=1e-12)

    def test_parabola(self):
        tr, resid = fit_trend([0, 1, 4, 9, 16])
        assert (tr.a, tr.b, tr.c) == pytest.approx((1, 0, 0), abs=1e-12)
        np.testing.assert_allclose(resid, 0, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            fit_trend([1, 2])

    def test_matches_polyfit(self):
        rng = np.random.default_rng(0)
        y = rng.normal(10, 3, 200)
        tr, _ = fit_trend(y)
        a, b, c = np.polyfit(np.arange(200), y, 2)
        assert (tr.a, tr.b, tr.c) == pytest.approx((a, b, c), rel=1e-8, abs=1e-10)

    @settings(max_examples=50, deadline=None)
    @given(
        y=arrays(float, st.integers(3, 120), elements=st.floats(0, 500)),
        shift=st.floats(-100, 100),
    )
    def test_shift_covariance(self, y, shift):
        t0, _ = fit_trend(y)
        t1, _ = fit_trend(y + shift)
        assert t1.a == pytest.approx(t0.a, abs=1e-9)
        assert t1.b == pytest.approx(t0.b, abs=1e-9)
        assert t1.c == pytest.approx(t0.c + shift, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(
        abc=st.tuples(st.floats(-2, 2), st.floats(-20, 20), st.floats(-50, 50)),
        n=st.integers(3, 200),
    )
    def test_exact_on_quadratics(self, abc, n):
        a, b, c = abc
        t = np.arange(n, dtype=float)
        tr, resid = fit_trend(a * t * t + b * t + c)
        scale = 1 + abs(a) * n * n + abs(b) * n + abs(c)
        assert np.max(np.abs(resid)) <= 1e-9 * scale


class TestHarmonics:
    def test_single_cosine(self):
        t = np.arange(32)
        hs = extract_harmonics(3 * np.cos(2 * np.pi * t / 8), 1)
        (h,) = hs.components
        assert h.amplitude == pytest.approx(3, abs=1e-6)
        assert h.frequency == pytest.approx(1 / 8)
        assert h.phase == pytest.approx(0, abs=1e-6)

    def test_zero_signal(self):
        hs = extract_harmonics(np.zeros(16), 1)
        assert hs.k == 1 and hs.components[0].amplitude == 0

    def test_two_tones_ordered(self):
        t = np.arange(64)
        x = 2 * np.cos(2 * np.pi * 3 * t / 64 + 0.4) + 5 * np.cos(2 * np.pi * 7 * t / 64 - 1.0)
        a, b = extract_harmonics(x, 2).components
        assert (a.amplitude, a.frequency, a.phase) == pytest.approx((5, 7 / 64, -1.0), abs=1e-9)
        assert (b.amplitude, b.frequency, b.phase) == pytest.approx((2, 3 / 64, 0.4), abs=1e-9)

    def test_against_naive_dft(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=50)
        X = naive_dft(x)
        hs = extract_harmonics(x, 5)
        for h in hs.components:
            j = round(h.frequency * 50)
            assert h.amplitude == pytest.approx(2 * abs(X[j]) / 50, rel=1e-9)
            assert h.phase == pytest.approx(np.angle(X[j]), abs=1e-9)
        amps = [h.amplitude for h in hs.components]
        assert amps == sorted(amps, reverse=True)

    def test_tie_lower_frequency_first(self):
        t = np.arange(40)
        x = np.cos(2 * np.pi * 5 * t / 40) + np.cos(2 * np.pi * 2 * t / 40)
        a, b = extract_harmonics(x, 2).components
        assert a.frequency < b.frequency

    def test_k_out_of_range(self):
        with pytest.raises(ForecastError):
            extract_harmonics(np.ones(10), 6)
        with pytest.raises(ForecastError):
            extract_harmonics(np.ones(10), 0)

    @settings(max_examples=50, deadline=None)
    @given(y=arrays(float, st.integers(4, 100), elements=st.floats(0, 300)))
    def test_full_reconstruction(self, y):
        n = y.size
        trend, resid = fit_trend(y)
        hs = extract_harmonics(resid, n // 2)
        t = np.arange(n)
        recon = trend(t) + hs(t)
        np.testing.assert_allclose(recon, y, atol=1e-6)


class TestExtrapolate:
    def test_constant(self):
        out = extrapolate(TrendCoefficients(0, 0, 7), HarmonicSet(), 10, 3)
        np.testing.assert_allclose(out, [7, 7, 7])

    def test_line(self):
        out = extrapolate(TrendCoefficients(0, 1, 0), HarmonicSet(), 10, 2)
        np.testing.assert_allclose(out, [10, 11])

    def test_cosine_continuation(self):
        t = np.arange(64)
        x = 4 * np.cos(2 * np.pi * t / 16 + 0.3)
        out = extrapolate(TrendCoefficients(0, 0, 0), extract_harmonics(x, 1), 64, 8)
        tf = np.arange(64, 72)
        np.testing.assert_allclose(out, 4 * np.cos(2 * np.pi * tf / 16 + 0.3), atol=1e-6)

    def test_bad_h(self):
        with pytest.raises(ForecastError):
            extrapolate(TrendCoefficients(0, 0, 0), HarmonicSet(), 3, 0)


class TestClip:
    def test_lower(self):
        assert clip_forecast([-3], 10, 2, 3).clipped.tolist() == [0]

    def test_cap(self):
        res = clip_forecast([100], 10, 2, 3)
        assert res.cap == 16 and res.clipped.tolist() == [16]

    def test_inside(self):
        assert clip_forecast([12], 10, 2, 3).clipped.tolist() == [12]

    def test_negative_sigma(self):
        with pytest.raises(ForecastError):
            clip_forecast([1], 1, -1, 3)

    @settings(max_examples=100, deadline=None)
    @given(
        raw=st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=30),
        mu=st.floats(0, 500),
        sigma=st.floats(0, 100),
        g=st.floats(0, 5),
    )
    def test_bounds_and_idempotence(self, raw, mu, sigma, g):
        res = clip_forecast(raw, mu, sigma, g)
        assert np.all(res.clipped >= 0)
        assert np.all(res.clipped <= res.cap + 1e-12)
        np.testing.assert_array_equal(clip_forecast(res.clipped, mu, sigma, g).clipped, res.clipped)
        np.testing.assert_array_equal(res.clipped, np.minimum(np.maximum(0, np.asarray(raw)), res.cap))


class TestForecast:
    def test_constant_history(self):
        res = forecast([4.0] * 64, k=5, H=5)
        np.testing.assert_allclose(res.clipped, 4, atol=1e-9)

    def test_periodic_square_wave(self):
        period = 32
        t = np.arange(8 * period)
        sig = np.where(t % period < 8, 40.0, 5.0)
        res = forecast(sig, k=10, H=period, stats_window=period * 2)
        tf = np.arange(t.size, t.size + period)
        actual = np.where(tf % period < 8, 40.0, 5.0)
        rel = np.sqrt(np.mean((res.clipped - actual) ** 2)) / actual.mean()
        assert rel < 0.25

    def test_spike_capped(self):
        hist = np.full(100, 10.0)
        hist[70] = 1000
        res = forecast(hist, k=10, H=20, stats_window=60)
        mu, sigma = hist[-60:].mean(), hist[-60:].std()
        assert np.all(res.clipped <= mu + 3 * sigma + 1e-9)

    def test_insufficient(self):
        with pytest.raises(InsufficientDataError):
            forecast([1.0] * 10, k=10, H=5)

    def test_predict_falls_back_on_short_history(self):
        res = predict([3.0, 4.0], 5, ForecastConfig())
        np.testing.assert_allclose(res.raw, 4.0)

    def test_predict_uses_window(self):
        cfg = ForecastConfig(harmonics=2, history_window=20)
        hist = np.concatenate([np.full(500, 100.0), np.full(20, 2.0)])
        res = predict(hist, 3, cfg)
        np.testing.assert_allclose(res.clipped, 2.0, atol=1e-9)

    def test_persistence(self):
        res = persistence_forecast([1, 2, 7], 3)
        np.testing.assert_allclose(res.raw, 7)
        assert persistence_forecast([], 2).clipped.tolist() == [0, 0]

    def test_config_validation(self):
        with pytest.raises(ForecastError):
            ForecastConfig(harmonics=0).validate()
        with pytest.raises(ForecastError):
            ForecastConfig(method="arima").validate()
