"""Scheduling policies and the scenario runner that drives them.

``mpc``
    Forecast, plan, execute step 0. Arrivals are shaped: they wait in the
    queue and are released by the per-tick dispatch budget.
``default``
    Reactive platform behaviour: warm hit if possible, else cold-start and
    bind, 10-minute idle TTL.
``prewarm``
    Forecast-driven pool sizing for the next interval with reactive routing,
    a homogeneous stand-in for predictive prewarming schedulers.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerState, MpcParams, TickResult, control_tick, dump_plan
from .forecast import ForecastConfig, ForecastError, predict
from .simcore import ColdStarting, PlatformConfig, SimulationError, Simulator, WarmBusy, WarmIdle
from .workload import ArrivalTrace, bin_arrivals

log = logging.getLogger(__name__)

POLICIES = ("mpc", "default", "prewarm")


@dataclass(frozen=True)
class PolicyAction:
    s: int = 0  # dispatch budget
    x: int = 0  # prewarm
    r: int = 0  # reclaim
    # when set, the budget is raised to this many requests per warm container
    # left after reclaiming, so arrivals within the interval can be admitted
    fill_rate: float | None = None

    def __post_init__(self):
        if min(self.s, self.x, self.r) < 0:
            raise ValueError(f"policy action counts must be non-negative: {self}")


@dataclass(frozen=True)
class Observation:
    now: float
    queue_len: int
    warm_idle: int
    warm_busy: int
    cold_starting: int
    history: np.ndarray  # arrivals per completed interval, oldest first
    cold_ready_at: tuple[float, ...] = ()
    idle_since: tuple[float, ...] = ()  # longest idle first

    @property
    def live(self) -> int:
        return self.warm_idle + self.warm_busy + self.cold_starting


def observe(sim: Simulator, history) -> Observation:
    idle, busy, cold = [], 0, []
    for c in sim.live():
        if isinstance(c.state, WarmIdle):
            idle.append(c.state.idle_since)
        elif isinstance(c.state, WarmBusy):
            busy += 1
        else:
            cold.append(c.state.ready_at)
    return Observation(
        now=sim.now,
        queue_len=len(sim.queue),
        warm_idle=len(idle),
        warm_busy=busy,
        cold_starting=len(cold),
        history=np.asarray(history),
        cold_ready_at=tuple(sorted(cold)),
        idle_since=tuple(sorted(idle)),
    )


def pending_pipeline(ready_at, now: float, dt: float) -> tuple[int, ...]:
    """Group initializing containers by the control step in which they turn warm.

    Index ``j`` holds containers ready during ``(now + j*dt, now + (j+1)*dt]``,
    which the controller counts into ``w[j + 1]``.
    """
    steps = [max(0, math.ceil((t - now) / dt - 1e-9) - 1) for t in ready_at]
    if not steps:
        return ()
    out = [0] * (max(steps) + 1)
    for j in steps:
        out[j] += 1
    return tuple(out)


class Policy:
    name = "base"
    reactive = False

    def on_tick(self, obs: Observation) -> PolicyAction:
        raise NotImplementedError


class DefaultPolicy(Policy):
    """Reactive routing (handled by the simulator) plus an idle-TTL sweep."""

    name = "default"
    reactive = True

    def __init__(self, keepalive_ttl: float = 600.0):
        self.keepalive_ttl = keepalive_ttl

    def on_tick(self, obs: Observation) -> PolicyAction:
        expired = sum(1 for t in obs.idle_since if obs.now - t > self.keepalive_ttl)
        return PolicyAction(r=expired)


class PrewarmPolicy(Policy):
    """Size the pool to the next interval's forecast; route reactively."""

    name = "prewarm"
    reactive = True

    def __init__(self, params: MpcParams, forecast_cfg: ForecastConfig | None = None):
        self.params = params
        self.forecast_cfg = forecast_cfg or ForecastConfig()

    def target(self, lam1: float) -> int:
        return int(min(max(math.ceil(lam1 / self.params.capacity - 1e-9), 0), self.params.w_max))

    def on_tick(self, obs: Observation) -> PolicyAction:
        try:
            lam1 = float(predict(obs.history, 1, self.forecast_cfg).clipped[0])
        except ForecastError as exc:
            log.warning("prewarm forecast failed, holding pool: %s", exc)
            return PolicyAction()
        target = self.target(lam1)
        if target > obs.live:
            return PolicyAction(x=target - obs.live)
        return PolicyAction(r=min(obs.live - target, obs.warm_idle))


class MpcPolicy(Policy):
    """Receding-horizon control: plan ``H`` steps, execute the first."""

    name = "mpc"
    reactive = False

    def __init__(
        self,
        params: MpcParams,
        forecast_cfg: ForecastConfig | None = None,
        dump_plans=None,
        starvation_guard: bool = True,
    ):
        self.params = params
        # finite-horizon plans can find it cheaper to hold a lone request than
        # to cold-start for it; the guard launches capacity when none exists
        self.starvation_guard = starvation_guard
        self.guarded = 0
        self.forecast_cfg = forecast_cfg or ForecastConfig()
        self.prev_w = 0
        self.prev_x = 0
        self.dump_plans = dump_plans  # optional text stream for JSON-lines plan dumps
        self.timings: list[tuple[float, float]] = []
        self.degraded = 0
        self.last: TickResult | None = None

    def state(self, obs: Observation) -> ControllerState:
        w0 = min(obs.warm_idle + obs.warm_busy, self.params.w_max)
        pending = pending_pipeline(obs.cold_ready_at, obs.now, self.params.dt)
        return ControllerState(obs.queue_len, w0, pending, self.prev_w, self.prev_x)

    def on_tick(self, obs: Observation) -> PolicyAction:
        st = self.state(obs)
        res = control_tick(st, obs.history, self.params, self.forecast_cfg)
        self.last = res
        self.timings.append((res.forecast_ms, res.solve_ms))
        if res.degraded:
            self.degraded += 1
        if self.dump_plans is not None and res.plan is not None:
            self.dump_plans.write(dump_plan(res.problem, res.plan, obs.now) + "\n")
        x0, r0 = res.x0, res.r0
        if (
            self.starvation_guard
            and st.q0 > 0
            and st.w0 == 0
            and not any(st.pending_cold)
            and x0 == 0
            and self.params.w_max > 0
        ):
            x0 = min(self.params.w_max, math.ceil(st.q0 / self.params.capacity - 1e-9))
            r0 = 0
            self.guarded += 1
        self.prev_w, self.prev_x = st.w0, x0
        # a plan that clears the queue leaves the rest of the interval's
        # capacity open to new arrivals
        fill = self.params.capacity if res.s0 >= st.q0 else None
        return PolicyAction(s=res.s0, x=x0, r=r0, fill_rate=fill)


@dataclass
class RunResult:
    policy: str
    trace: ArrivalTrace
    sim: Simulator
    end_time: float
    ticks: int
    timings: list = field(default_factory=list)  # (forecast_ms, solve_ms) per tick
    degraded_ticks: int = 0
    wall_s: float = 0.0


def make_policy(name: str, params: MpcParams, platform: PlatformConfig, forecast_cfg=None, dump_plans=None) -> Policy:
    if name == "mpc":
        return MpcPolicy(params, forecast_cfg, dump_plans=dump_plans)
    if name == "default":
        return DefaultPolicy(platform.keepalive_ttl)
    if name == "prewarm":
        return PrewarmPolicy(params, forecast_cfg)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICIES}")


def run_scenario(
    trace: ArrivalTrace,
    policy: Policy,
    platform: PlatformConfig | None = None,
    *,
    dt: float = 1.0,
    seed: int = 0,
    max_overrun: float = 86_400.0,
    initial_warm: int = 0,
) -> RunResult:
    """Drive one policy over one trace until every request has completed.

    Ticks fire at ``k * dt``. The run ends at the first tick at or after the
    trace duration with no request outstanding; containers still live then
    are closed with censored keep-alive spans.
    """
    platform = platform or PlatformConfig()
    t_wall = time.perf_counter()
    sim = Simulator(platform, reactive=policy.reactive, seed=seed)
    sim.seed_warm(initial_warm)
    sim.load_trace(trace)
    counts = bin_arrivals(trace, dt).counts.astype(float)
    sim.schedule_tick(0.0, 0)
    ticks = 0
    while True:
        kind, ident = sim.step()
        if kind != "tick":
            continue
        k = ident
        ticks += 1
        if sim.now >= trace.duration and sim.outstanding() == 0:
            break
        if sim.now > trace.duration + max_overrun:
            raise SimulationError(f"{policy.name}: {sim.outstanding()} requests unresolved after overrun")
        hist = counts[:k] if k <= counts.size else np.concatenate([counts, np.zeros(k - counts.size)])
        action = policy.on_tick(observe(sim, hist))
        if action.x:
            sim.actuate_prewarm(action.x)
        sent = sim.actuate_dispatch(action.s)
        if action.r:
            sim.actuate_reclaim(action.r)
        if action.fill_rate is not None:
            c = sim.counts()
            room = math.floor(action.fill_rate * (c["warm_idle"] + c["warm_busy"]) + 1e-9) - sent
            sim.budget = max(sim.budget, room)
        sim.schedule_tick((k + 1) * dt, k + 1)
    sim.close(sim.now)
    timings = getattr(policy, "timings", [])
    return RunResult(
        policy.name,
        trace,
        sim,
        sim.now,
        ticks,
        list(timings),
        getattr(policy, "degraded", 0),
        time.perf_counter() - t_wall,
    )
