"""Invocation forecasting: quadratic trend plus dominant Fourier harmonics,
clamped to ``[0, mean + gamma_clip * std]`` of recent counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .workload import rolling_stats


class ForecastError(ValueError):
    pass


class InsufficientDataError(ForecastError):
    pass


@dataclass(frozen=True)
class TrendCoefficients:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(np.isfinite([self.a, self.b, self.c])):
            raise ForecastError("trend coefficients must be finite")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.a * t * t + self.b * t + self.c


@dataclass(frozen=True)
class Harmonic:
    amplitude: float
    frequency: float  # cycles per step
    phase: float  # radians


@dataclass(frozen=True)
class HarmonicSet:
    components: tuple[Harmonic, ...] = ()

    @property
    def k(self) -> int:
        return len(self.components)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for h in self.components:
            out += h.amplitude * np.cos(2 * np.pi * h.frequency * t + h.phase)
        return out


@dataclass(frozen=True)
class ForecastResult:
    raw: np.ndarray
    clipped: np.ndarray
    cap: float


@dataclass(frozen=True)
class ForecastConfig:
    harmonics: int = 10
    gamma_clip: float = 3.0
    stats_window: int = 60
    # number of most recent steps the trend/harmonics are fitted on
    history_window: int = 600
    method: str = "fourier"  # or "persistence"

    def validate(self) -> None:
        if self.harmonics < 1:
            raise ForecastError("forecast.harmonics must be >= 1")
        if self.gamma_clip < 0:
            raise ForecastError("forecast.gamma_clip must be >= 0")
        if self.stats_window < 1:
            raise ForecastError("forecast.stats_window must be >= 1")
        if self.history_window < max(3, 2 * self.harmonics):
            raise ForecastError("forecast.history_window must be >= max(3, 2*harmonics)")
        if self.method not in ("fourier", "persistence"):
            raise ForecastError(f"unknown forecast.method {self.method!r}")


def fit_trend(history: Sequence[float]) -> tuple[TrendCoefficients, np.ndarray]:
    """Least-squares ``a t^2 + b t + c`` over ``t = 0..n-1``.

    Returns the coefficients and the detrended residuals.
    """
    y = np.asarray(history, dtype=float)
    n = y.size
    if n < 3:
        raise InsufficientDataError(f"trend fit needs >= 3 points, got {n}")
    t = np.arange(n, dtype=float)
    # centre and scale the abscissa for conditioning, then map back
    mid = (n - 1) / 2.0
    scale = max(mid, 1.0)
    u = (t - mid) / scale
    V = np.column_stack([u * u, u, np.ones(n)])
    (p2, p1, p0), *_ = np.linalg.lstsq(V, y, rcond=None)
    a = p2 / scale**2
    b = p1 / scale - 2 * p2 * mid / scale**2
    c = p0 - p1 * mid / scale + p2 * mid**2 / scale**2
    trend = TrendCoefficients(float(a), float(b), float(c))
    return trend, y - trend(t)


def extract_harmonics(residuals: Sequence[float], k: int) -> HarmonicSet:
    """Keep the ``k`` largest non-DC DFT bins as cosine components.

    Bin ``j`` maps to amplitude ``2|X_j|/n`` (``|X_j|/n`` for the Nyquist bin
    of an even-length input), frequency ``j/n`` and phase ``arg X_j``. Equal
    magnitudes are ordered by lower frequency first.
    """
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if n < 2:
        raise InsufficientDataError("need at least 2 residuals")
    if not 1 <= k <= n // 2:
        raise ForecastError(f"k must be in [1, {n // 2}], got {k}")
    X = np.fft.rfft(r)
    bins = np.arange(1, n // 2 + 1)
    mags = np.abs(X[bins])
    amps = 2.0 * mags / n
    if n % 2 == 0:
        amps[-1] = mags[-1] / n
    # round away float noise so equal-magnitude bins fall back to frequency order
    top = amps.max()
    key = np.round(amps / top, 9) if top > 0 else np.zeros_like(amps)
    order = np.lexsort((bins, -key))[:k]
    comps = tuple(
        Harmonic(float(amps[i]), float(bins[i]) / n, float(np.angle(X[bins[i]])) if amps[i] > 0 else 0.0)
        for i in order
    )
    return HarmonicSet(comps)


def extrapolate(trend: TrendCoefficients, harmonics: HarmonicSet, n_history: int, H: int) -> np.ndarray:
    """Evaluate trend + harmonics at ``t = n_history .. n_history + H - 1``."""
    if H < 1:
        raise ForecastError("H must be >= 1")
    t = np.arange(n_history, n_history + H, dtype=float)
    return trend(t) + harmonics(t)


def clip_forecast(raw: Sequence[float], mu: float, sigma: float, gamma_clip: float) -> ForecastResult:
    if sigma < 0:
        raise ForecastError("sigma must be non-negative")
    raw = np.asarray(raw, dtype=float)
    cap = float(mu + gamma_clip * sigma)
    clipped = np.minimum(np.maximum(0.0, raw), cap)
    # a negative cap (mu < 0 never happens for counts) would break non-negativity
    clipped = np.maximum(clipped, 0.0)
    return ForecastResult(raw, clipped, cap)


def forecast(
    history: Sequence[float],
    k: int = 10,
    H: int = 20,
    gamma_clip: float = 3.0,
    stats_window: int = 60,
) -> ForecastResult:
    history = np.asarray(history, dtype=float)
    if history.size < max(3, 2 * k):
        raise InsufficientDataError(
            f"forecast with k={k} needs >= {max(3, 2 * k)} history points, got {history.size}"
        )
    trend, resid = fit_trend(history)
    harmonics = extract_harmonics(resid, k)
    raw = extrapolate(trend, harmonics, history.size, H)
    mu, sigma = rolling_stats(history, stats_window)
    return clip_forecast(raw, mu, sigma, gamma_clip)


def persistence_forecast(
    history: Sequence[float], H: int, gamma_clip: float = 3.0, stats_window: int = 60
) -> ForecastResult:
    """Repeat the last observed value; zeros on an empty history."""
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        return ForecastResult(np.zeros(H), np.zeros(H), 0.0)
    raw = np.full(H, history[-1])
    mu, sigma = rolling_stats(history, stats_window)
    return clip_forecast(raw, mu, sigma, gamma_clip)


def predict(history: Sequence[float], H: int, cfg: ForecastConfig) -> ForecastResult:
    """Forecast with ``cfg``; falls back to persistence while history is short."""
    hist = np.asarray(history, dtype=float)[-cfg.history_window:]
    if cfg.method == "persistence" or hist.size < max(3, 2 * cfg.harmonics):
        return persistence_forecast(hist, H, cfg.gamma_clip, cfg.stats_window)
    return forecast(hist, cfg.harmonics, H, cfg.gamma_clip, cfg.stats_window)
