"""Arrival traces: loading, synthetic bursty generation and binning.

Traces are plain sequences of arrival timestamps in seconds. The synthetic
generator draws from ``numpy.random.Generator(PCG64(seed))``; that choice is
part of the compatibility contract because golden traces pin its output.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np


class TraceError(ValueError):
    """Base class for trace loading and validation failures."""


class TraceParseError(TraceError):
    def __init__(self, line: int, text: str):
        super().__init__(f"line {line}: cannot parse {text!r} as a number")
        self.line = line


class TraceValidationError(TraceError):
    pass


FORMATS = ("timestamps", "interarrivals")
_HEADERS = {"timestamp_s": "timestamps", "interarrival_s": "interarrivals"}


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ArrivalTrace:
    arrivals: np.ndarray
    duration: float

    def __post_init__(self):
        arr = _readonly(self.arrivals)
        if arr.ndim != 1:
            raise TraceValidationError("arrivals must be one-dimensional")
        if arr.size:
            if not np.all(np.isfinite(arr)):
                raise TraceValidationError("arrivals must be finite")
            if arr[0] < 0 or np.any(np.diff(arr) < 0):
                raise TraceValidationError("arrivals must be sorted and non-negative")
            if arr[-1] > self.duration:
                raise TraceValidationError(
                    f"last arrival {arr[-1]} exceeds duration {self.duration}"
                )
        if self.duration < 0:
            raise TraceValidationError("duration must be non-negative")
        object.__setattr__(self, "arrivals", arr)
        object.__setattr__(self, "duration", float(self.duration))

    def __len__(self) -> int:
        return int(self.arrivals.size)

    def digest(self) -> str:
        """SHA-256 over the float64 bytes of arrivals and duration."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.arrivals, dtype="<f8").tobytes())
        h.update(np.float64(self.duration).astype("<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticParams:
    """Ranges for the bursty generator. Every range is ``(min, max)``."""

    burst_duration_range: tuple[float, float] = (1.0, 5.0)
    idle_range: tuple[float, float] = (50.0, 800.0)
    rate_range: tuple[float, float] = (5.0, 300.0)
    total_duration: float = 3600.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("burst_duration_range", "idle_range", "rate_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise TraceValidationError(f"{name} must satisfy 0 < min <= max, got {(lo, hi)}")
        if self.total_duration <= 0:
            raise TraceValidationError("total_duration must be positive")


@dataclass(frozen=True)
class RateSeries:
    counts: np.ndarray
    interval: float

    def __post_init__(self):
        counts = _readonly(self.counts, dtype=np.int64)
        if counts.size and counts.min() < 0:
            raise TraceValidationError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return int(self.counts.size)


def _parse_lines(lines: Iterable[str]) -> tuple[str | None, list[float]]:
    fmt = None
    values: list[float] = []
    seen_data = False
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if not seen_data and fmt is None and text in _HEADERS:
            fmt = _HEADERS[text]
            continue
        try:
            value = float(text)
        except ValueError:
            raise TraceParseError(lineno, text) from None
        if not math.isfinite(value):
            raise TraceValidationError(f"line {lineno}: value {text!r} is not finite")
        if value < 0:
            raise TraceValidationError(f"line {lineno}: negative value {value}")
        seen_data = True
        values.append(value)
    return fmt, values


def load_trace(source: TextIO | str, format: str | None = None) -> ArrivalTrace:
    """Read a one-column trace.

    Parameters
    ----------
    source : text stream or str
        One number per line. An optional header ``timestamp_s`` or
        ``interarrival_s`` selects the format; ``#`` starts a comment.
    format : {"timestamps", "interarrivals"}, optional
        Overrides the header. Defaults to ``"interarrivals"`` when neither is given.

    Interarrival values are cumulatively summed (the first gap is the first
    timestamp). Absolute timestamps are sorted and shifted so the first
    arrival sits at t=0.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    header_fmt, values = _parse_lines(source)
    fmt = format or header_fmt or "interarrivals"
    if fmt not in FORMATS:
        raise TraceValidationError(f"unknown trace format {fmt!r}")
    if not values:
        return ArrivalTrace(np.zeros(0), 0.0)
    arr = np.asarray(values, dtype=float)
    if fmt == "interarrivals":
        ts = np.cumsum(arr)
    else:
        ts = np.sort(arr)
        ts = ts - ts[0]
    return ArrivalTrace(ts, float(ts[-1]))


def dump_trace(trace: ArrivalTrace, stream: TextIO, format: str = "timestamps") -> None:
    if format == "timestamps":
        stream.write("timestamp_s\n")
        values = trace.arrivals
    else:
        stream.write("interarrival_s\n")
        values = np.diff(trace.arrivals, prepend=0.0)
    for v in values:
        stream.write(f"{float(v)!r}\n")


def generate_synthetic(params: SyntheticParams) -> ArrivalTrace:
    """Bursty trace of alternating burst and idle phases, starting with a burst.

    Each burst draws a rate and a duration, then emits evenly spaced arrivals
    ``start + i / rate`` inside ``[start, start + duration)``. Idle phases are
    empty. Generation stops at ``total_duration``.
    """
    params.validate()
    rng = np.random.Generator(np.random.PCG64(params.seed))
    horizon = float(params.total_duration)
    chunks = []
    t = 0.0
    while t < horizon:
        rate = rng.uniform(*params.rate_range)
        burst = rng.uniform(*params.burst_duration_range)
        idle = rng.uniform(*params.idle_range)
        n = int(math.ceil(burst * rate)) + 1
        offsets = np.arange(n) / rate
        ts = t + offsets[offsets < burst]
        chunks.append(ts[ts < horizon])
        t = t + burst + idle
    arrivals = np.concatenate(chunks) if chunks else np.zeros(0)
    return ArrivalTrace(arrivals, horizon)


def bin_arrivals(trace: ArrivalTrace, dt: float) -> RateSeries:
    """Count arrivals per half-open interval ``[k*dt, (k+1)*dt)``."""
    if dt <= 0:
        raise TraceValidationError("dt must be positive")
    idx = np.floor(trace.arrivals / dt).astype(np.int64)
    n_bins = int(math.ceil(trace.duration / dt - 1e-12)) if trace.duration > 0 else 0
    if idx.size:
        n_bins = max(n_bins, int(idx[-1]) + 1)
    counts = np.bincount(idx, minlength=n_bins) if n_bins else np.zeros(0, dtype=np.int64)
    return RateSeries(counts, dt)


def rolling_stats(series: RateSeries | Iterable[float], window: int) -> tuple[float, float]:
    """Population mean and standard deviation of the last ``window`` values."""
    values = series.counts if isinstance(series, RateSeries) else np.asarray(list(series), dtype=float)
    if window < 1:
        raise TraceValidationError("window must be >= 1")
    if len(values) == 0:
        raise TraceValidationError("rolling_stats needs at least one value")
    tail = np.asarray(values[-window:], dtype=float)
    return float(tail.mean()), float(tail.std())


def steady_trace(period: float, total_duration: float, offset: float = 0.0) -> ArrivalTrace:
    """One arrival every ``period`` seconds; the low-rate reference workload."""
    if period <= 0 or total_duration <= 0:
        raise TraceValidationError("period and total_duration must be positive")
    ts = np.arange(offset, total_duration, period)
    return ArrivalTrace(ts, float(total_duration))


def periodic_trace(
    period: float,
    burst: float,
    rate: float,
    total_duration: float,
    base_rate: float = 0.0,
) -> ArrivalTrace:
    """Deterministic periodic workload: a burst of ``rate`` req/s lasting
    ``burst`` seconds at the start of every period, evenly spaced background
    arrivals at ``base_rate`` otherwise.
    """
    ts = []
    start = 0.0
    while start < total_duration:
        n = int(math.ceil(burst * rate)) + 1
        off = np.arange(n) / rate
        ts.append(start + off[off < burst])
        if base_rate > 0:
            bg = np.arange(burst, period, 1.0 / base_rate)
            ts.append(start + bg)
        start += period
    arr = np.sort(np.concatenate(ts))
    return ArrivalTrace(arr[arr < total_duration], float(total_duration))


def sinusoid_trace(
    period: float,
    rate: float,
    total_duration: float,
    amplitude: float = 0.5,
) -> ArrivalTrace:
    """Deterministic arrivals with intensity ``rate (1 + amplitude sin(2 pi t / period))``.

    Arrivals sit where the integrated intensity crosses ``n + 1/2``, so each
    unit of expected load yields exactly one request.
    """
    if period <= 0 or rate <= 0 or total_duration <= 0:
        raise TraceValidationError("period, rate and total_duration must be positive")
    if not 0 <= amplitude <= 1:
        raise TraceValidationError("amplitude must lie in [0, 1]")
    w = 2 * math.pi / period
    grid = np.linspace(0.0, total_duration, int(math.ceil(total_duration / period * 4000)) + 2)
    cum = rate * (grid + amplitude / w * (1 - np.cos(w * grid)))
    levels = np.arange(0.5, cum[-1], 1.0)
    ts = np.interp(levels, cum, grid)
    return ArrivalTrace(ts[ts < total_duration], float(total_duration))
