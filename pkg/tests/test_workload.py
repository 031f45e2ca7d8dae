import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldstart_mpc.workload import (
    ArrivalTrace,
    RateSeries,
    SyntheticParams,
    TraceParseError,
    TraceValidationError,
    bin_arrivals,
    dump_trace,
    generate_synthetic,
    load_trace,
    periodic_trace,
    rolling_stats,
    sinusoid_trace,
    steady_trace,
)

# sha256 of the seed-42 default trace; pins the PRNG (PCG64) and the generator
GOLDEN_SEED42 = "e2c3c1f6739e3eef33d9a0c97906f9574914d4373f520ab276cff1d6408f4adb"
GOLDEN_SEED42_LEN = 4713


class TestLoadTrace:
    def test_interarrivals_cumsum(self):
        tr = load_trace("1.0\n2.0\n0.5\n", format="interarrivals")
        np.testing.assert_allclose(tr.arrivals, [1.0, 3.0, 3.5])

    def test_timestamps_shifted_to_origin(self):
        tr = load_trace("5.0\n6.0\n", format="timestamps")
        np.testing.assert_allclose(tr.arrivals, [0.0, 1.0])

    def test_header_selects_format(self):
        tr = load_trace("timestamp_s\n# comment\n7\n9\n")
        np.testing.assert_allclose(tr.arrivals, [0.0, 2.0])
        tr = load_trace("interarrival_s\n2\n2\n")
        np.testing.assert_allclose(tr.arrivals, [2.0, 4.0])

    def test_parse_error_names_line(self):
        with pytest.raises(TraceParseError) as exc:
            load_trace("1.0\n2.0\nabc\n")
        assert "3" in str(exc.value)

    def test_negative_rejected(self):
        with pytest.raises(TraceValidationError):
            load_trace("1.0\n-2.0\n")

    def test_empty_stream(self):
        tr = load_trace("")
        assert len(tr) == 0

    def test_dump_round_trip(self):
        tr = generate_synthetic(SyntheticParams(total_duration=200, seed=3))
        for fmt in ("timestamps", "interarrivals"):
            buf = io.StringIO()
            dump_trace(tr, buf, fmt)
            back = load_trace(buf.getvalue())
            shift = tr.arrivals[0] if fmt == "timestamps" else 0.0
            np.testing.assert_allclose(back.arrivals, tr.arrivals - shift, atol=1e-9)


class TestArrivalTrace:
    def test_unsorted_rejected(self):
        with pytest.raises(TraceValidationError):
            ArrivalTrace(np.array([1.0, 0.5]), 2.0)

    def test_beyond_duration_rejected(self):
        with pytest.raises(TraceValidationError):
            ArrivalTrace(np.array([3.0]), 2.0)

    def test_empty_with_duration(self):
        tr = ArrivalTrace(np.zeros(0), 5.0)
        assert len(tr) == 0 and tr.duration == 5.0

    def test_immutable(self):
        tr = ArrivalTrace(np.array([0.0, 1.0]), 2.0)
        with pytest.raises(ValueError):
            tr.arrivals[0] = 5.0


class TestSynthetic:
    def test_degenerate_ranges_hand_unrolled(self):
        p = SyntheticParams((2, 2), (10, 10), (5, 5), total_duration=24, seed=0)
        tr = generate_synthetic(p)
        expect = np.concatenate([np.arange(10) / 5, 12 + np.arange(10) / 5])
        np.testing.assert_allclose(tr.arrivals, expect)

    def test_golden_digest(self):
        tr = generate_synthetic(SyntheticParams(seed=42))
        assert len(tr) == GOLDEN_SEED42_LEN
        assert tr.digest() == GOLDEN_SEED42

    def test_same_seed_identical(self):
        a = generate_synthetic(SyntheticParams(seed=42))
        b = generate_synthetic(SyntheticParams(seed=42))
        assert a.arrivals.tobytes() == b.arrivals.tobytes()

    def test_bad_duration(self):
        with pytest.raises(TraceValidationError):
            generate_synthetic(SyntheticParams(total_duration=0))

    def test_bad_range(self):
        with pytest.raises(TraceValidationError):
            generate_synthetic(SyntheticParams(rate_range=(10, 5)))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**63 - 1))
    def test_gaps_within_rate_range(self, seed):
        p = SyntheticParams(total_duration=900, seed=seed)
        tr = generate_synthetic(p)
        gaps = np.diff(tr.arrivals)
        inside = gaps[gaps < p.idle_range[0]]
        assert np.all(inside >= 1 / p.rate_range[1] - 1e-9)
        assert np.all(inside <= 1 / p.rate_range[0] + 1e-9)
        # idle gaps are at least the minimum idle phase
        between = gaps[gaps >= p.idle_range[0]]
        assert np.all(between <= p.idle_range[1] + p.burst_duration_range[1])

    def test_steady_and_periodic(self):
        tr = steady_trace(900, 3600)
        np.testing.assert_allclose(tr.arrivals, [0, 900, 1800, 2700])
        pt = periodic_trace(60, 2, 10, 120)
        assert len(pt) == 40


class TestBinning:
    def test_direct_counting(self):
        tr = ArrivalTrace(np.array([0.1, 0.2, 1.5]), 1.5)
        np.testing.assert_array_equal(bin_arrivals(tr, 1.0).counts, [2, 1])

    def test_empty_trace_zeros(self):
        tr = ArrivalTrace(np.zeros(0), 3.0)
        np.testing.assert_array_equal(bin_arrivals(tr, 1.0).counts, [0, 0, 0])

    def test_half_open(self):
        tr = ArrivalTrace(np.array([1.0]), 2.0)
        np.testing.assert_array_equal(bin_arrivals(tr, 1.0).counts, [0, 1])

    def test_bad_dt(self):
        with pytest.raises(TraceValidationError):
            bin_arrivals(ArrivalTrace(np.zeros(0), 1.0), 0.0)

    @settings(max_examples=50, deadline=None)
    @given(
        ts=st.lists(st.floats(0, 500, allow_nan=False), max_size=200),
        dt=st.floats(0.05, 30),
    )
    def test_round_trip_count(self, ts, dt):
        arr = np.sort(np.asarray(ts, dtype=float))
        tr = ArrivalTrace(arr, 500.0)
        assert bin_arrivals(tr, dt).counts.sum() == len(tr)


class TestRollingStats:
    def test_constant(self):
        assert rolling_stats([4, 4, 4, 4], 4) == (4.0, 0.0)

    def test_two_point(self):
        assert rolling_stats([2, 4], 2) == (3.0, 1.0)

    def test_last_five(self):
        mu, sigma = rolling_stats(RateSeries(np.arange(1, 11), 1.0), 5)
        assert mu == pytest.approx(8.0)
        assert sigma == pytest.approx(math.sqrt(2))

    def test_empty(self):
        with pytest.raises(TraceValidationError):
            rolling_stats([], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=100))
def test_interarrival_diff_identity(gaps):
    tr = load_trace("\n".join(repr(g) for g in gaps), format="interarrivals")
    np.testing.assert_allclose(np.diff(tr.arrivals, prepend=0.0), gaps, atol=1e-9)


class TestSinusoid:
    def test_constant_when_flat(self):
        tr = sinusoid_trace(60, 2.0, 10.0, amplitude=0.0)
        np.testing.assert_allclose(tr.arrivals, np.arange(0.25, 10.0, 0.5), atol=1e-6)

    def test_count_matches_integrated_rate(self):
        # whole periods integrate to rate * duration
        tr = sinusoid_trace(60, 10.0, 600.0)
        assert len(tr.arrivals) == 6000

    def test_bins_follow_intensity(self):
        counts = bin_arrivals(sinusoid_trace(100, 10.0, 200.0), 1.0).counts
        t = np.arange(200) + 0.5
        expect = 10 * (1 + 0.5 * np.sin(2 * np.pi * t / 100))
        assert np.max(np.abs(counts - expect)) <= 1.0 + 1e-9

    @pytest.mark.parametrize("kw", [dict(period=0), dict(rate=-1), dict(amplitude=1.5)])
    def test_invalid(self, kw):
        args = dict(period=60, rate=1.0, total_duration=10.0, amplitude=0.5) | kw
        with pytest.raises(TraceValidationError):
            sinusoid_trace(**args)
