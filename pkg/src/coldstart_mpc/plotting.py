"""Figures for CLI reports. Rendered off-screen with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_COLORS = {"mpc": "tab:blue", "default": "tab:red", "prewarm": "tab:green"}


def _color(name: str):
    return _COLORS.get(name.split("#")[0])


def cdf_points(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF as step points ``(x_sorted, i/n)``."""
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, v.size + 1) / max(v.size, 1)


def response_cdf(series: dict, path, title: str = "Response time CDF") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in series.items():
        x, y = cdf_points(values)
        ax.step(x, y, where="post", label=name, color=_color(name))
    ax.set_xlabel("response time (s)")
    ax.set_ylabel("fraction of requests")
    ax.set_title(title)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def container_timeline(series: dict, path, w_max: int | None = None) -> None:
    """``series`` maps a policy name to ``(times, live_counts)`` step points."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, (t, n) in series.items():
        ax.step(t, n, where="post", label=name, color=_color(name), lw=1.2)
    if w_max is not None:
        ax.axhline(w_max, color="0.5", ls="--", lw=0.8, label="w_max")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("live containers")
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def improvement_bars(rows, path, title: str = "Improvement over baseline") -> None:
    """``rows`` are ``(label, metric, improvement_pct)`` triples."""
    labels = sorted({r[0] for r in rows})
    metrics = list(dict.fromkeys(r[1] for r in rows))
    width = 0.8 / max(len(labels), 1)
    x = np.arange(len(metrics))
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(metrics)), 4))
    for i, lab in enumerate(labels):
        vals = {m: v for l, m, v in rows if l == lab}
        ys = [vals.get(m, np.nan) for m in metrics]
        ax.bar(x + i * width, ys, width, label=lab, color=_color(lab))
    ax.axhline(0, color="k", lw=0.6)
    ax.set_xticks(x + width * (len(labels) - 1) / 2)
    ax.set_xticklabels(metrics, rotation=30, ha="right")
    ax.set_ylabel("improvement (%)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def forecast_vs_actual(actual, predicted, path, title: str = "One-step-ahead forecast") -> None:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    t = np.arange(len(actual))
    ax.plot(t, actual, color="k", lw=1.0, label="actual")
    ax.plot(t, predicted, color="tab:blue", lw=1.0, ls="--", label="predicted")
    ax.set_xlabel("control step")
    ax.set_ylabel("requests per step")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def overhead_hist(forecast_ms, solve_ms, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, data, label in ((axes[0], forecast_ms, "forecast"), (axes[1], solve_ms, "solve")):
        ax.hist(np.asarray(data, dtype=float), bins=40, color="tab:blue", alpha=0.8)
        ax.set_xlabel(f"{label} time per tick (ms)")
        ax.set_ylabel("ticks")
        ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
