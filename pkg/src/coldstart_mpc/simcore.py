"""Deterministic discrete-event model of a single-function serverless platform.

Containers hold one request at a time and move through
``ColdStarting -> WarmIdle <-> WarmBusy`` until reclaimed. Requests either
wait in a FIFO queue (shaped dispatch, driven by a per-tick budget) or are
routed reactively on arrival (idle warm container, else cold-start-and-bind).

Events at equal timestamps run in a fixed order: container ready, request
completion, arrival, control tick; then by id.
"""

from __future__ import annotations

import heapq
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .workload import ArrivalTrace


class SimulationError(RuntimeError):
    pass


class ColdStarting(NamedTuple):
    ready_at: float


class WarmIdle(NamedTuple):
    idle_since: float


class WarmBusy(NamedTuple):
    done_at: float
    request_id: int


@dataclass(frozen=True)
class PlatformConfig:
    L_warm: float = 0.28
    L_cold: float = 10.5
    w_max: int = 64
    keepalive_ttl: float = 600.0
    service_noise: bool = False
    noise_sigma: float = 0.1

    def validate(self) -> None:
        if not self.L_warm > 0:
            raise ValueError("platform.L_warm must be positive")
        if self.L_cold < 0:
            raise ValueError("platform.L_cold must be non-negative")
        if self.w_max < 1:
            raise ValueError("platform.w_max must be >= 1")
        if self.keepalive_ttl < 0:
            raise ValueError("platform.keepalive_ttl must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("platform.noise_sigma must be non-negative")


@dataclass
class Container:
    id: int
    state: ColdStarting | WarmIdle | WarmBusy
    created_at: float
    ready_at: float
    last_activation_end: float | None = None
    activations: int = 0
    bound_request: int | None = None
    reclaimed_at: float | None = None


@dataclass
class Request:
    id: int
    arrival: float
    dispatch: float | None = None
    exec_start: float | None = None
    completion: float | None = None
    container_id: int | None = None
    cold_init: float = 0.0

    @property
    def cold(self) -> bool:
        return self.cold_init > 0

    @property
    def resolved(self) -> bool:
        return self.completion is not None


@dataclass(frozen=True)
class KeepAliveSpan:
    container_id: int
    start: float  # last activation end, or creation if never used
    end: float
    censored: bool  # still live when the run ended

    @property
    def duration(self) -> float:
        return self.end - self.start


# event priorities at equal timestamps
READY, COMPLETE, ARRIVAL, TICK = 0, 1, 2, 3
_KIND = {READY: "ready", COMPLETE: "complete", ARRIVAL: "arrival", TICK: "tick"}


class Simulator:
    """Event engine plus the three actuators.

    Parameters
    ----------
    platform : PlatformConfig
    reactive : bool
        ``True`` routes each arrival immediately (default/prewarm baselines);
        ``False`` holds arrivals in the queue for budgeted dispatch.
    seed : int
        Seeds the optional service-time noise.
    """

    def __init__(self, platform: PlatformConfig | None = None, *, reactive: bool = False, seed: int = 0):
        self.platform = platform or PlatformConfig()
        self.platform.validate()
        self.reactive = reactive
        self.now = 0.0
        self.queue: deque[Request] = deque()
        self.containers: dict[int, Container] = {}
        self._live: dict[int, Container] = {}
        self.requests: list[Request] = []
        self.event_log: list[dict] = []
        self.keepalive: list[KeepAliveSpan] = []
        self.budget = 0
        self._heap: list = []
        self._next_container = 0
        self._rng = np.random.Generator(np.random.PCG64(seed))

    # -- inspection -------------------------------------------------------

    def live(self) -> list[Container]:
        return list(self._live.values())

    @property
    def live_count(self) -> int:
        return len(self._live)

    def counts(self) -> dict:
        out = {"cold_starting": 0, "warm_idle": 0, "warm_busy": 0}
        for c in self.live():
            if isinstance(c.state, ColdStarting):
                out["cold_starting"] += 1
            elif isinstance(c.state, WarmIdle):
                out["warm_idle"] += 1
            else:
                out["warm_busy"] += 1
        return out

    def idle_containers(self) -> list[Container]:
        idle = [c for c in self.live() if isinstance(c.state, WarmIdle)]
        idle.sort(key=lambda c: (c.state.idle_since, c.id))
        return idle

    def outstanding(self) -> int:
        return sum(1 for r in self.requests if r.completion is None)

    def _log(self, kind: str, container_id=None, request_id=None, **extra) -> None:
        rec = {"t": self.now, "kind": kind, "container_id": container_id, "request_id": request_id}
        rec.update(extra)
        self.event_log.append(rec)

    def dump_events(self, stream) -> None:
        for rec in self.event_log:
            stream.write(json.dumps(rec, sort_keys=False) + "\n")

    def events_jsonl(self) -> str:
        buf = io.StringIO()
        self.dump_events(buf)
        return buf.getvalue()

    # -- scheduling -------------------------------------------------------

    def _push(self, t: float, prio: int, ident: int, payload=None) -> None:
        heapq.heappush(self._heap, (t, prio, ident, payload))

    def inject_arrival(self, request: Request) -> None:
        if request.arrival < self.now:
            raise SimulationError(f"arrival {request.arrival} is in the past (now={self.now})")
        self.requests.append(request)
        self._push(request.arrival, ARRIVAL, request.id, request)

    def load_trace(self, trace: ArrivalTrace) -> None:
        base = len(self.requests)
        for i, t in enumerate(trace.arrivals):
            self.inject_arrival(Request(base + i, float(t)))

    def schedule_tick(self, t: float, index: int) -> None:
        self._push(t, TICK, index, None)

    def next_event_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self):
        """Pop and apply one event. Returns ``(kind, payload)``; ticks are
        returned to the caller unprocessed."""
        t, prio, ident, payload = heapq.heappop(self._heap)
        self.now = t
        if prio == READY:
            self._on_ready(self.containers[ident])
        elif prio == COMPLETE:
            self._on_complete(self.containers[ident])
        elif prio == ARRIVAL:
            self._on_arrival(payload)
        return _KIND[prio], (ident if prio == TICK else payload)

    def advance(self, until: float) -> None:
        """Process every non-tick event with timestamp <= ``until``."""
        if until < self.now:
            raise SimulationError(f"cannot advance backwards to {until} (now={self.now})")
        while self._heap and self._heap[0][0] <= until:
            if self._heap[0][1] == TICK:
                raise SimulationError("advance() reached a tick; drive ticks through run()")
            self.step()
        self.now = until

    # -- lifecycle --------------------------------------------------------

    def _service_time(self) -> float:
        if not self.platform.service_noise:
            return self.platform.L_warm
        s = self.platform.noise_sigma
        return self.platform.L_warm * float(np.exp(self._rng.normal(-0.5 * s * s, s)))

    def _start(self, c: Container, req: Request) -> None:
        req.dispatch = self.now
        req.exec_start = self.now
        req.container_id = c.id
        # waiting on a container that was still initializing counts as cold start
        if c.activations == 0 and c.ready_at > req.arrival:
            req.cold_init = c.ready_at - max(req.arrival, c.created_at)
        done = self.now + self._service_time()
        c.state = WarmBusy(done, req.id)
        c.activations += 1
        self._log("dispatch", c.id, req.id)
        self._push(done, COMPLETE, c.id, None)

    def _new_container(self) -> Container:
        c = Container(
            self._next_container,
            ColdStarting(self.now + self.platform.L_cold),
            created_at=self.now,
            ready_at=self.now + self.platform.L_cold,
        )
        self._next_container += 1
        self.containers[c.id] = c
        self._live[c.id] = c
        self._push(c.ready_at, READY, c.id, None)
        return c

    def seed_warm(self, n: int) -> None:
        """Start the run with ``n`` containers already warm and idle."""
        if self.live_count + n > self.platform.w_max:
            raise SimulationError("seeded pool exceeds w_max")
        for _ in range(n):
            c = Container(self._next_container, WarmIdle(self.now), created_at=self.now, ready_at=self.now)
            self._next_container += 1
            self.containers[c.id] = c
            self._live[c.id] = c
            self._log("warm_seed", c.id)

    def _on_ready(self, c: Container) -> None:
        if c.reclaimed_at is not None:
            return
        c.state = WarmIdle(self.now)
        self._log("ready", c.id)
        if c.bound_request is not None:
            req = self.requests_by_id(c.bound_request)
            c.bound_request = None
            self._start(c, req)
        else:
            self._on_idle()

    def _on_complete(self, c: Container) -> None:
        state = c.state
        req = self.requests_by_id(state.request_id)
        req.completion = self.now
        c.last_activation_end = self.now
        c.state = WarmIdle(self.now)
        self._log("complete", c.id, req.id)
        self._on_idle()

    def _on_arrival(self, req: Request) -> None:
        self._log("arrival", None, req.id)
        if not self.reactive:
            self.queue.append(req)
            self._drain()
            return
        idle = self.idle_containers()
        if idle:
            self._start(idle[0], req)
        elif self.live_count < self.platform.w_max:
            c = self._new_container()
            c.bound_request = req.id
            self._log("cold_start", c.id, req.id)
        else:
            self.queue.append(req)
            self._log("enqueue", None, req.id)

    def _on_idle(self) -> None:
        if self.reactive:
            while self.queue:
                idle = self.idle_containers()
                if not idle:
                    break
                self._start(idle[0], self.queue.popleft())
        else:
            self._drain()

    def requests_by_id(self, rid: int) -> Request:
        req = self.requests[rid]
        if req.id != rid:
            raise SimulationError("request ids must be assigned in injection order")
        return req

    # -- actuators --------------------------------------------------------

    def actuate_prewarm(self, x: int) -> int:
        """Start up to ``x`` cold containers within the ``w_max`` cap."""
        if x < 0:
            raise ValueError("prewarm count must be >= 0")
        room = self.platform.w_max - self.live_count
        n = min(x, max(room, 0))
        if n < x:
            self._log("prewarm_truncated", None, None, requested=int(x), created=int(n))
        for _ in range(n):
            c = self._new_container()
            self._log("prewarm", c.id)
        return n

    def actuate_dispatch(self, s: int) -> int:
        """Set this interval's dispatch budget and send what idle capacity allows.

        The budget stays open until the next tick: containers that free up
        (or finish warming) later in the interval pick up further queued
        requests while budget remains. Returns the number sent immediately.
        """
        if s < 0:
            raise ValueError("dispatch budget must be >= 0")
        self.budget = int(s)
        return self._drain()

    def _drain(self) -> int:
        sent = 0
        while self.budget > 0 and self.queue:
            idle = self.idle_containers()
            batch = min(self.budget, len(idle), len(self.queue))
            if batch == 0:
                break
            for c in idle[:batch]:
                self._start(c, self.queue.popleft())
            self.budget -= batch
            sent += batch
        return sent

    def actuate_reclaim(self, r: int) -> int:
        """Remove up to ``r`` idle containers, longest idle first."""
        if r < 0:
            raise ValueError("reclaim count must be >= 0")
        # busy and initializing containers are never candidates
        victims = self.idle_containers()[:r]
        for c in victims:
            self._retire(c, censored=False)
            self._log("reclaim", c.id)
        return len(victims)

    def _retire(self, c: Container, censored: bool) -> None:
        if isinstance(c.state, WarmBusy):
            raise SimulationError(f"container {c.id} retired while busy")
        c.reclaimed_at = self.now
        del self._live[c.id]
        start = c.last_activation_end if c.last_activation_end is not None else c.created_at
        self.keepalive.append(KeepAliveSpan(c.id, start, self.now, censored))

    def close(self, t: float) -> None:
        """End the run at ``t``: every live container gets a censored keep-alive span."""
        if t < self.now:
            raise SimulationError(f"cannot close at {t} (now={self.now})")
        self.now = t
        for c in sorted(self.live(), key=lambda c: c.id):
            self._retire(c, censored=True)
            self._log("close", c.id)

    # -- invariant audit --------------------------------------------------

    def audit(self) -> list[str]:
        """Replay the event log and report invariant violations."""
        errors = []
        busy: dict[int, int] = {}
        live: set[int] = set()
        for rec in self.event_log:
            kind, cid, rid = rec["kind"], rec["container_id"], rec["request_id"]
            if kind in ("prewarm", "cold_start", "warm_seed"):
                live.add(cid)
                if len(live) > self.platform.w_max:
                    errors.append(f"t={rec['t']}: {len(live)} live containers exceed w_max")
            elif kind == "dispatch":
                if cid in busy:
                    errors.append(f"t={rec['t']}: container {cid} dispatched while busy")
                busy[cid] = rid
            elif kind == "complete":
                busy.pop(cid, None)
            elif kind in ("reclaim", "close"):
                if cid in busy:
                    errors.append(f"t={rec['t']}: container {cid} reclaimed with request {busy[cid]} in flight")
                live.discard(cid)
        for req in self.requests:
            times = [req.arrival, req.dispatch, req.exec_start, req.completion]
            seen = [v for v in times if v is not None]
            if any(b < a for a, b in zip(seen, seen[1:])):
                errors.append(f"request {req.id}: timeline not monotone {times}")
        done = sum(1 for r in self.requests if r.completion is not None)
        in_flight = sum(1 for c in self.live() if isinstance(c.state, WarmBusy)) + sum(
            1 for c in self.live() if c.bound_request is not None
        )
        arrived = sum(1 for r in self.requests if r.arrival <= self.now)
        if arrived != done + len(self.queue) + in_flight:
            errors.append(f"conservation: {arrived} arrived != {done} done + {len(self.queue)} queued + {in_flight} in flight")
        return errors
