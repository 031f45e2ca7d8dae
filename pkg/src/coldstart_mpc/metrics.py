"""Post-run measurements: latency decomposition, percentiles, container
samples, keep-alive spans, policy comparison and forecast accuracy.

Everything here is computed from the request records and the JSON-lines
event log, so a report can be rebuilt from files on disk.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .forecast import ForecastConfig, ForecastResult, predict
from .workload import RateSeries


class MetricsError(ValueError):
    pass


class IntegrityError(MetricsError):
    def __init__(self, ids: Sequence[int]):
        shown = ", ".join(str(i) for i in list(ids)[:20])
        more = "" if len(ids) <= 20 else f" (+{len(ids) - 20} more)"
        super().__init__(f"{len(ids)} unresolved requests: {shown}{more}")
        self.ids = list(ids)


class ComparisonError(MetricsError):
    pass


REQUESTS_HEADER = [
    "request_id",
    "arrival_s",
    "dispatch_s",
    "exec_start_s",
    "completion_s",
    "cold",
    "queue_wait_s",
    "cold_init_s",
    "exec_s",
    "response_s",
]
COMPARE_HEADER = ["metric", "baseline", "candidate", "improvement_pct"]

_CREATE = ("prewarm", "cold_start", "warm_seed")
_REMOVE = ("reclaim", "close")


@dataclass(frozen=True)
class RequestMetrics:
    id: int
    arrival: float
    dispatch: float
    exec_start: float
    completion: float
    cold: bool
    queue_wait: float
    cold_init: float
    exec: float
    response: float

    def row(self) -> list:
        return [
            self.id,
            repr(self.arrival),
            repr(self.dispatch),
            repr(self.exec_start),
            repr(self.completion),
            int(self.cold),
            repr(self.queue_wait),
            repr(self.cold_init),
            repr(self.exec),
            repr(self.response),
        ]


@dataclass(frozen=True)
class LatencySummary:
    mean: float
    p50: float
    p90: float
    p95: float


@dataclass
class MetricsReport:
    per_request: list[RequestMetrics]
    latency_summary: LatencySummary
    container_samples: list[tuple[float, int]]
    keepalive_spans: list[float]
    cold_start_count: int
    totals: dict
    trace_hash: str = ""
    policy: str = ""
    overhead: dict = field(default_factory=dict)

    def to_dict(self, include_requests: bool = False) -> dict:
        d = {
            "policy": self.policy,
            "trace_hash": self.trace_hash,
            "latency_summary": asdict(self.latency_summary),
            "cold_start_count": self.cold_start_count,
            "totals": self.totals,
            "container_samples": [[t, n] for t, n in self.container_samples],
            "keepalive_spans": self.keepalive_spans,
            "overhead": self.overhead,
        }
        if include_requests:
            d["per_request"] = [asdict(r) for r in self.per_request]
        return d


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ``ceil(pct/100 * n)``-th smallest value."""
    if not 0 < pct <= 100:
        raise MetricsError("percentile must be in (0, 100]")
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise MetricsError("percentile of an empty set")
    rank = max(1, math.ceil(pct / 100.0 * v.size - 1e-12))
    return float(v[rank - 1])


def decompose(req) -> RequestMetrics:
    """Split a resolved request's response into wait, cold-start and execution."""
    queue_wait = (req.dispatch - req.arrival) - req.cold_init
    exec_ = req.completion - req.exec_start
    return RequestMetrics(
        req.id,
        req.arrival,
        req.dispatch,
        req.exec_start,
        req.completion,
        req.cold_init > 0,
        queue_wait,
        req.cold_init,
        exec_,
        queue_wait + req.cold_init + exec_,
    )


def container_timeline(event_log: Iterable[dict]) -> list[tuple[float, int]]:
    """Live container count after each creation/removal event."""
    out = []
    n = 0
    for rec in event_log:
        if rec["kind"] in _CREATE:
            n += 1
        elif rec["kind"] in _REMOVE:
            n -= 1
        else:
            continue
        out.append((rec["t"], n))
    return out


def sample_containers(event_log: Sequence[dict], end_time: float, interval: float = 60.0) -> list[tuple[float, int]]:
    """Live count at ``t = 0, interval, 2*interval, ... < end_time``.

    A sample at ``t`` reflects every creation/removal with timestamp ``<= t``.
    """
    if interval <= 0:
        raise MetricsError("sample interval must be positive")
    steps = container_timeline(event_log)
    times = np.array([t for t, _ in steps])
    counts = np.array([n for _, n in steps])
    out = []
    n_samples = max(1, math.ceil(end_time / interval - 1e-12)) if end_time > 0 else 1
    for i in range(n_samples):
        t = i * interval
        j = int(np.searchsorted(times, t, side="right")) - 1 if times.size else -1
        out.append((t, int(counts[j]) if j >= 0 else 0))
    return out


def container_seconds(event_log: Sequence[dict], end_time: float) -> float:
    """Integral of the live container count over ``[0, end_time]``."""
    total = 0.0
    last_t, n = 0.0, 0
    for t, m in container_timeline(event_log):
        total += n * (min(t, end_time) - last_t)
        last_t, n = min(t, end_time), m
    return total + n * (end_time - last_t)


def keepalive_from_log(event_log: Iterable[dict]) -> list[tuple[int, float, bool]]:
    """``(container_id, span_seconds, censored)`` for every reclaim/close record.

    The span runs from the container's last completed activation (or its
    creation if it never served a request) to its removal.
    """
    start: dict[int, float] = {}
    spans = []
    for rec in event_log:
        kind, cid, t = rec["kind"], rec["container_id"], rec["t"]
        if kind in _CREATE:
            start[cid] = t
        elif kind == "complete":
            start[cid] = t
        elif kind in _REMOVE:
            spans.append((cid, t - start.pop(cid), kind == "close"))
    return spans


def summarize(
    event_log: Sequence[dict],
    requests: Sequence,
    *,
    sample_interval: float = 60.0,
    end_time: float | None = None,
    trace_hash: str = "",
    policy: str = "",
) -> MetricsReport:
    unresolved = [r.id for r in requests if r.completion is None]
    if unresolved:
        raise IntegrityError(unresolved)
    per = [decompose(r) for r in sorted(requests, key=lambda r: r.id)]
    if end_time is None:
        end_time = max([rec["t"] for rec in event_log] + [0.0])
    resp = np.array([m.response for m in per], dtype=float)
    if resp.size:
        summary = LatencySummary(
            float(resp.mean()), nearest_rank(resp, 50), nearest_rank(resp, 90), nearest_rank(resp, 95)
        )
    else:
        summary = LatencySummary(0.0, 0.0, 0.0, 0.0)
    spans = keepalive_from_log(event_log)
    samples = sample_containers(event_log, end_time, sample_interval)
    launched = sum(1 for rec in event_log if rec["kind"] in ("prewarm", "cold_start"))
    csec = container_seconds(event_log, end_time)
    totals = {
        "requests": len(per),
        "response_sum": float(math.fsum(m.response for m in per)),
        "queue_wait_sum": float(math.fsum(m.queue_wait for m in per)),
        "cold_init_sum": float(math.fsum(m.cold_init for m in per)),
        "exec_sum": float(math.fsum(m.exec for m in per)),
        "keepalive_total": float(math.fsum(s for _, s, _ in spans)),
        "keepalive_censored": float(math.fsum(s for _, s, c in spans if c)),
        "containers_launched": launched,
        "container_seconds": csec,
        "mean_live_containers": csec / end_time if end_time > 0 else 0.0,
        "mean_sampled_containers": float(np.mean([n for _, n in samples])) if samples else 0.0,
        "peak_live_containers": max([n for _, n in container_timeline(event_log)] + [0]),
        "end_time": float(end_time),
    }
    return MetricsReport(
        per_request=per,
        latency_summary=summary,
        container_samples=samples,
        keepalive_spans=[s for _, s, _ in spans],
        cold_start_count=sum(1 for m in per if m.cold),
        totals=totals,
        trace_hash=trace_hash,
        policy=policy,
    )


def check_report(report: MetricsReport, w_max: int | None = None, tol: float = 1e-9) -> list[str]:
    """Re-validate a report's internal consistency."""
    errors = []
    for m in report.per_request:
        if m.response != m.queue_wait + m.cold_init + m.exec:
            errors.append(f"request {m.id}: response is not the sum of its parts")
        if not (m.arrival <= m.dispatch <= m.exec_start <= m.completion):
            errors.append(f"request {m.id}: timeline not monotone")
    if report.per_request:
        mean = float(np.mean([m.response for m in report.per_request]))
        if abs(mean - report.latency_summary.mean) > tol:
            errors.append("latency mean does not match per-request responses")
        if abs(math.fsum(m.response for m in report.per_request) - report.totals["response_sum"]) > tol:
            errors.append("response_sum does not match per-request responses")
        observed = {m.response for m in report.per_request}
        for name in ("p50", "p90", "p95"):
            if getattr(report.latency_summary, name) not in observed:
                errors.append(f"{name} is not an observed response")
    if w_max is not None and any(n > w_max for _, n in report.container_samples):
        errors.append("container sample above w_max")
    return errors


def _improvement(base: float, cand: float) -> float:
    if base == cand:
        return 0.0
    if base == 0:
        return float("nan")
    return 100.0 * (base - cand) / base


COMPARE_METRICS = (
    ("mean_response_s", lambda r: r.latency_summary.mean),
    ("p50_response_s", lambda r: r.latency_summary.p50),
    ("p90_response_s", lambda r: r.latency_summary.p90),
    ("p95_response_s", lambda r: r.latency_summary.p95),
    ("cold_starts", lambda r: float(r.cold_start_count)),
    ("mean_live_containers", lambda r: r.totals["mean_live_containers"]),
    ("mean_sampled_containers", lambda r: r.totals["mean_sampled_containers"]),
    ("container_seconds", lambda r: r.totals["container_seconds"]),
    ("keepalive_total_s", lambda r: r.totals["keepalive_total"]),
)


def compare(baseline: MetricsReport, candidate: MetricsReport) -> list[tuple[str, float, float, float]]:
    """Improvement of ``candidate`` over ``baseline``: ``100 (b - c) / b`` per metric.

    Positive means the candidate is lower (better) on latency and resource use.
    """
    if baseline.trace_hash != candidate.trace_hash:
        raise ComparisonError(
            f"reports come from different workloads ({baseline.trace_hash[:12]} vs {candidate.trace_hash[:12]})"
        )
    rows = []
    for name, get in COMPARE_METRICS:
        b, c = float(get(baseline)), float(get(candidate))
        rows.append((name, b, c, _improvement(b, c)))
    return rows


@dataclass(frozen=True)
class ForecastAccuracy:
    rmse: float
    mae: float
    accuracy: float
    n: int
    mean_actual: float


def forecast_eval(actual, predicted) -> ForecastAccuracy:
    """RMSE, MAE and ``accuracy = 100 (1 - RMSE / mean(actual))``.

    ``predicted`` may be an array or a sequence of :class:`ForecastResult`
    whose clipped values are concatenated. When the actual mean is ~0 the
    accuracy is 100 for an exact prediction and 0 otherwise.
    """
    a = np.asarray(actual.counts if isinstance(actual, RateSeries) else actual, dtype=float).ravel()
    if isinstance(predicted, ForecastResult):
        p = np.asarray(predicted.clipped, dtype=float)
    elif len(predicted) and isinstance(predicted[0], ForecastResult):
        p = np.concatenate([np.asarray(f.clipped, dtype=float) for f in predicted])
    else:
        p = np.asarray(predicted, dtype=float).ravel()
    if a.size != p.size:
        raise MetricsError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise MetricsError("nothing to evaluate")
    err = p - a
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    mean = float(a.mean())
    if abs(mean) < 1e-12:
        acc = 100.0 if rmse < 1e-12 else 0.0
    else:
        acc = 100.0 * (1.0 - rmse / mean)
    return ForecastAccuracy(rmse, mae, acc, int(a.size), mean)


def rolling_origin(counts, H: int, cfg: ForecastConfig, *, min_history: int | None = None, stride: int = 1):
    """Fit on ``counts[:t]`` and predict ``counts[t:t+H]`` for each origin ``t``.

    Returns ``(actual, predicted)`` flattened over all origins.
    """
    c = np.asarray(counts.counts if isinstance(counts, RateSeries) else counts, dtype=float)
    min_history = min_history if min_history is not None else max(3, 2 * cfg.harmonics)
    if min_history < max(3, 2 * cfg.harmonics):
        raise MetricsError(f"min_history must be >= {max(3, 2 * cfg.harmonics)} for k={cfg.harmonics}")
    if c.size < min_history + H:
        raise MetricsError(f"series of {c.size} steps is shorter than min_history + H = {min_history + H}")
    actual, pred = [], []
    for t in range(min_history, c.size - H + 1, stride):
        actual.append(c[t:t + H])
        pred.append(predict(c[:t], H, cfg).clipped)
    return np.concatenate(actual), np.concatenate(pred)


def write_requests_csv(report: MetricsReport, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REQUESTS_HEADER)
    for m in report.per_request:
        w.writerow(m.row())


def write_compare_csv(rows, stream, label: str | None = None) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(COMPARE_HEADER if label is None else ["pair"] + COMPARE_HEADER)
    for name, b, c, imp in rows:
        vals = [name, repr(b), repr(c), repr(imp)]
        w.writerow(vals if label is None else [label] + vals)


def read_requests_csv(stream) -> list[RequestMetrics]:
    rdr = csv.reader(stream)
    header = next(rdr)
    if header != REQUESTS_HEADER:
        raise MetricsError(f"unexpected requests.csv header {header}")
    out = []
    for row in rdr:
        out.append(
            RequestMetrics(
                int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]),
                bool(int(row[5])), float(row[6]), float(row[7]), float(row[8]), float(row[9]),
            )
        )
    return out


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=True)
