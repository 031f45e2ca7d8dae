"""Receding-horizon controller for prewarm / dispatch / reclaim decisions.

Per control step ``k`` the plan chooses cold starts ``x_k``, reclaims
``r_k`` and dispatches ``s_k``; queue ``q`` and warm pool ``w`` follow

    q[k+1] = q[k] + lam[k] - s[k]
    w[k+1] = w[k] + ready_cold(k) - r[k]

with ``s[k] <= min(q[k], floor(mu*dt*w[k]))``, ``r[k] <= w[k]``,
``0 <= x[k], w[k] <= w_max`` and ``r[k]*x[k] == 0``. The objective sums
cold-delay and overprovisioning hinges, queue wait, cold-start cost, reclaim
reward and squared changes of ``w`` and ``x``.

Solving goes relaxation -> exclusivity projection -> rounding with forward
repair. ``brute_force_solve`` enumerates tiny instances as an oracle.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .forecast import ForecastConfig, predict
from .qp import QPSolverError, solve_qp

log = logging.getLogger(__name__)

_TIE = 1e-5  # tie-break weight: fewer cold starts / reclaims, more service


class ControllerError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class MpcParams:
    H: int = 20
    dt: float = 1.0
    L_warm: float = 0.28
    L_cold: float = 10.5
    w_max: int = 64
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.1
    delta: float = 0.3
    eta: float = 0.05
    rho1: float = 0.01
    rho2: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.L_warm <= 0:
            raise ControllerError("L_warm must be > 0")
        if self.L_cold < 0:
            raise ControllerError("L_cold must be >= 0")
        if self.dt <= 0:
            raise ControllerError("dt must be > 0")
        if self.H < 1:
            raise ControllerError("H must be >= 1")
        if self.w_max < 0:
            raise ControllerError("w_max must be >= 0")
        for name in ("alpha", "beta", "gamma", "delta", "eta", "rho1", "rho2"):
            if getattr(self, name) < 0:
                raise ControllerError(f"weight {name} must be >= 0")

    @property
    def mu(self) -> float:
        return 1.0 / self.L_warm

    @property
    def capacity(self) -> float:
        """Requests one warm container can serve per control interval."""
        return self.dt / self.L_warm

    @property
    def D(self) -> int:
        return int(math.floor(self.L_cold / self.dt + 1e-9))


@dataclass(frozen=True)
class ControllerState:
    q0: int = 0
    w0: int = 0
    pending_cold: tuple[int, ...] = ()
    prev_w: int = 0
    prev_x: int = 0

    def validate(self, params: MpcParams) -> None:
        if min(self.q0, self.w0, self.prev_w, self.prev_x, *self.pending_cold, 0) < 0:
            raise ControllerError("controller state counts must be non-negative")
        if self.w0 > params.w_max:
            raise ControllerError(f"w0={self.w0} exceeds w_max={params.w_max}")


@dataclass
class ControlPlan:
    x: np.ndarray
    r: np.ndarray
    s: np.ndarray
    q: np.ndarray
    w: np.ndarray
    cost: float
    solver_status: str
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def H(self) -> int:
        return len(self.x)

    def to_dict(self, lam_hat=None) -> dict:
        d = {
            "x": self.x.tolist(),
            "r": self.r.tolist(),
            "s": self.s.tolist(),
            "q": self.q.tolist(),
            "w": self.w.tolist(),
            "lambda": self.lam.tolist(),
            "cost": self.cost,
            "solver_status": self.solver_status,
        }
        if lam_hat is not None:
            d["lambda_hat"] = [float(v) for v in lam_hat]
        return d


@dataclass
class CostBreakdown:
    cold_delay: np.ndarray
    wait: np.ndarray
    overprov: np.ndarray
    cold_start: np.ndarray
    reclaim_reward: np.ndarray
    smoothness: np.ndarray

    @property
    def per_step(self) -> np.ndarray:
        return (
            self.cold_delay + self.wait + self.overprov + self.cold_start + self.reclaim_reward + self.smoothness
        )

    @property
    def total(self) -> float:
        return float(
            sum(
                float(np.sum(getattr(self, f)))
                for f in ("cold_delay", "wait", "overprov", "cold_start", "reclaim_reward", "smoothness")
            )
        )

    def totals(self) -> dict:
        out = {f: float(np.sum(getattr(self, f))) for f in
               ("cold_delay", "wait", "overprov", "cold_start", "reclaim_reward", "smoothness")}
        out["total"] = self.total
        return out


def quantize(lam_hat) -> np.ndarray:
    """Round forecasts half-up to integer request counts for the queue dynamics."""
    return np.floor(np.asarray(lam_hat, dtype=float) + 0.5).astype(np.int64)


def ready_cold(pending_cold: Sequence[int], x: Sequence[int], k: int, D: int):
    """Containers whose cold start completes in step ``k``.

    Launches from before the current tick come from ``pending_cold`` (indexed
    by steps until ready); a plan launch ``x[j]`` completes at ``k = j + D``.
    """
    if k < 0:
        raise ControllerError("k must be >= 0")
    out = pending_cold[k] if k < len(pending_cold) else 0
    if k >= D and k - D < len(x):
        out = out + x[k - D]
    return out


def evaluate_cost(plan: ControlPlan, lam_hat, params: MpcParams, state: ControllerState) -> CostBreakdown:
    H = params.H
    lam_hat = np.asarray(lam_hat, dtype=float)
    x = np.asarray(plan.x, dtype=float)
    r = np.asarray(plan.r, dtype=float)
    q = np.asarray(plan.q, dtype=float)
    w = np.asarray(plan.w, dtype=float)
    if not (len(lam_hat) == len(x) == len(r) == len(plan.s) == H and len(q) == len(w) == H + 1):
        raise ControllerError(
            f"plan dimensions {len(x)},{len(r)},{len(plan.s)},{len(q)},{len(w)} "
            f"inconsistent with H={H} and {len(lam_hat)} forecasts"
        )
    cap = params.capacity * w[:H]
    w_prev = np.concatenate([[state.prev_w], w[: H - 1]])
    x_prev = np.concatenate([[state.prev_x], x[: H - 1]])
    return CostBreakdown(
        cold_delay=params.alpha * np.maximum(0.0, lam_hat - cap) * (params.L_cold + params.L_warm),
        wait=params.beta * q[:H] * params.L_warm,
        overprov=params.gamma * np.maximum(0.0, cap - lam_hat),
        cold_start=params.delta * x,
        reclaim_reward=-params.eta * r,
        smoothness=params.rho1 * (w[:H] - w_prev) ** 2 + params.rho2 * (x - x_prev) ** 2,
    )


def verify_plan(plan: ControlPlan, state: ControllerState, params: MpcParams, lam=None) -> list[str]:
    """Check every dynamics and constraint equation exactly; returns violations."""
    errors = []
    H, D = params.H, params.D
    lam = plan.lam if lam is None else np.asarray(lam)
    x, r, s, q, w = (np.asarray(a) for a in (plan.x, plan.r, plan.s, plan.q, plan.w))
    for name, arr in (("x", x), ("r", r), ("s", s), ("q", q), ("w", w)):
        if not np.issubdtype(arr.dtype, np.integer):
            errors.append(f"{name} is not integer-typed")
    if len(x) != H or len(q) != H + 1:
        return errors + ["dimension mismatch"]
    if q[0] != state.q0 or w[0] != state.w0:
        errors.append("initial state mismatch")
    cap = params.dt / params.L_warm
    for k in range(H):
        ready = (state.pending_cold[k] if k < len(state.pending_cold) else 0) + (x[k - D] if k >= D else 0)
        if q[k + 1] != q[k] + lam[k] - s[k]:
            errors.append(f"k={k}: queue dynamics")
        if w[k + 1] != w[k] + ready - r[k]:
            errors.append(f"k={k}: warm dynamics")
        if s[k] > min(q[k], math.floor(cap * w[k] + 1e-9)):
            errors.append(f"k={k}: serving capacity")
        if not 0 <= r[k] <= w[k]:
            errors.append(f"k={k}: reclaim bound")
        if not 0 <= x[k] <= params.w_max:
            errors.append(f"k={k}: cold start limits")
        if s[k] < 0:
            errors.append(f"k={k}: s negative")
        if r[k] * x[k] != 0:
            errors.append(f"k={k}: mutual exclusivity")
    for k in range(H + 1):
        if not 0 <= w[k] <= params.w_max:
            errors.append(f"k={k}: warm container limits")
        if q[k] < 0:
            errors.append(f"k={k}: q negative")
    return errors


@dataclass
class ProblemInstance:
    """Relaxed QP ``min 1/2 z'Pz + c'z + const  s.t.  l <= Az <= u``.

    ``z`` stacks the blocks in ``layout`` order: x, r, s (steps 0..H-1),
    q and w (steps 1..H), then the cold-delay and overprovision hinge
    auxiliaries.
    """

    params: MpcParams
    state: ControllerState
    lam_hat: np.ndarray
    lam: np.ndarray
    P: np.ndarray
    c: np.ndarray
    const: float
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    layout: dict[str, slice]
    row_labels: list[str]

    @property
    def n_primary(self) -> int:
        return 5 * self.params.H

    @property
    def n_aux(self) -> int:
        return 2 * self.params.H

    def to_dict(self) -> dict:
        def fin(a):
            return [None if not np.isfinite(v) else float(v) for v in a]

        return {
            "H": self.params.H,
            "params": asdict(self.params),
            "state": asdict(self.state),
            "lambda_hat": self.lam_hat.tolist(),
            "lambda": self.lam.tolist(),
            "variables": {k: [v.start, v.stop] for k, v in self.layout.items()},
            "n_variables": int(self.c.size),
            "n_constraints": int(self.A.shape[0]),
            "objective_linear": self.c.tolist(),
            "objective_const": self.const,
            "lower": fin(self.l),
            "upper": fin(self.u),
        }


def build_problem(state: ControllerState, lam_hat, params: MpcParams) -> ProblemInstance:
    lam_hat = np.asarray(lam_hat, dtype=float)
    H, D = params.H, params.D
    if lam_hat.shape != (H,):
        raise ControllerError(f"expected {H} forecasts, got {lam_hat.shape}")
    state.validate(params)
    lam = quantize(lam_hat)
    cap = params.capacity
    names = ("x", "r", "s", "q", "w", "u", "v")
    layout = {nm: slice(i * H, (i + 1) * H) for i, nm in enumerate(names)}
    n = 7 * H

    def idx(block, k):
        return layout[block].start + k

    rows, lo, hi, labels = [], [], [], []

    def add(coefs: dict, lower, upper, label):
        row = np.zeros(n)
        for j, v in coefs.items():
            row[j] += v
        rows.append(row)
        lo.append(lower)
        hi.append(upper)
        labels.append(label)

    def q_term(k):
        # q_k as (coef dict, constant)
        return ({}, float(state.q0)) if k == 0 else ({idx("q", k - 1): 1.0}, 0.0)

    def w_term(k):
        return ({}, float(state.w0)) if k == 0 else ({idx("w", k - 1): 1.0}, 0.0)

    for k in range(H):
        qc, q0 = q_term(k)
        wc, w0 = w_term(k)
        # q[k+1] - q[k] + s[k] = lam[k]
        co = {idx("q", k): 1.0, idx("s", k): 1.0}
        for j, v in qc.items():
            co[j] = co.get(j, 0.0) - v
        add(co, lam[k] + q0, lam[k] + q0, f"queue[{k}]")
        # w[k+1] - w[k] + r[k] - x[k-D] = pending[k]
        co = {idx("w", k): 1.0, idx("r", k): 1.0}
        for j, v in wc.items():
            co[j] = co.get(j, 0.0) - v
        if k >= D:
            co[idx("x", k - D)] = co.get(idx("x", k - D), 0.0) - 1.0
        pend = state.pending_cold[k] if k < len(state.pending_cold) else 0
        add(co, pend + w0, pend + w0, f"warm[{k}]")
        # s[k] <= q[k]
        co = {idx("s", k): 1.0}
        for j, v in qc.items():
            co[j] = co.get(j, 0.0) - v
        add(co, -np.inf, q0, f"serve_queue[{k}]")
        # s[k] <= cap * w[k]
        co = {idx("s", k): 1.0}
        for j, v in wc.items():
            co[j] = co.get(j, 0.0) - cap * v
        add(co, -np.inf, cap * w0, f"serve_capacity[{k}]")
        # r[k] <= w[k]
        co = {idx("r", k): 1.0}
        for j, v in wc.items():
            co[j] = co.get(j, 0.0) - v
        add(co, -np.inf, w0, f"reclaim_bound[{k}]")
        # u[k] >= lam_hat[k] - cap * w[k]
        co = {idx("u", k): 1.0}
        for j, v in wc.items():
            co[j] = co.get(j, 0.0) + cap * v
        add(co, lam_hat[k] - cap * w0, np.inf, f"cold_hinge[{k}]")
        # v[k] >= cap * w[k] - lam_hat[k]
        co = {idx("v", k): 1.0}
        for j, v in wc.items():
            co[j] = co.get(j, 0.0) - cap * v
        add(co, cap * w0 - lam_hat[k], np.inf, f"over_hinge[{k}]")

    bounds = {"x": (0, params.w_max), "r": (0, np.inf), "s": (0, np.inf), "q": (0, np.inf),
              "w": (0, params.w_max), "u": (0, np.inf), "v": (0, np.inf)}
    for nm, (b_lo, b_hi) in bounds.items():
        for k in range(H):
            add({idx(nm, k): 1.0}, b_lo, b_hi, f"bound_{nm}[{k}]")

    A = np.array(rows)
    l = np.array(lo, dtype=float)
    u = np.array(hi, dtype=float)

    c = np.zeros(n)
    const = 0.0
    c[layout["u"]] = params.alpha * (params.L_cold + params.L_warm)
    c[layout["v"]] = params.gamma
    c[layout["x"]] = params.delta + _TIE
    c[layout["r"]] = -params.eta + _TIE
    c[layout["s"]] = -_TIE
    const += params.beta * params.L_warm * state.q0
    for k in range(1, H):
        c[idx("q", k - 1)] += params.beta * params.L_warm

    # smoothness: 1/2 z'Pz form, so squared terms contribute 2*rho
    P = np.zeros((n, n))
    const += params.rho1 * (state.w0 - state.prev_w) ** 2
    for k in range(1, H):
        a = idx("w", k - 1)
        if k == 1:
            P[a, a] += 2 * params.rho1
            c[a] += -2 * params.rho1 * state.w0
            const += params.rho1 * state.w0**2
        else:
            b = idx("w", k - 2)
            P[a, a] += 2 * params.rho1
            P[b, b] += 2 * params.rho1
            P[a, b] -= 2 * params.rho1
            P[b, a] -= 2 * params.rho1
    for k in range(H):
        a = idx("x", k)
        if k == 0:
            P[a, a] += 2 * params.rho2
            c[a] += -2 * params.rho2 * state.prev_x
            const += params.rho2 * state.prev_x**2
        else:
            b = idx("x", k - 1)
            P[a, a] += 2 * params.rho2
            P[b, b] += 2 * params.rho2
            P[a, b] -= 2 * params.rho2
            P[b, a] -= 2 * params.rho2

    return ProblemInstance(params, state, lam_hat, lam, P, c, const, A, l, u, layout, labels)


def _simulate(state, params, lam, x, r, s):
    """Forward integer repair. Mutates x, r, s in place and returns (q, w).

    Clamps every decision into its bounds step by step; a warm pool that would
    exceed ``w_max`` is fixed by trimming the launch that matures into it, then
    by reclaiming.
    """
    H, D = params.H, params.D
    cap = params.capacity
    w_max = params.w_max
    delta, eta = params.delta, params.eta
    # plain ints in the loop: this runs thousands of times per tick
    xl, rl, sl = [int(v) for v in x], [int(v) for v in r], [int(v) for v in s]
    lam_l = [int(v) for v in lam]
    pend = state.pending_cold
    q = [0] * (H + 1)
    w = [0] * (H + 1)
    q[0], w[0] = int(state.q0), int(state.w0)
    for k in range(H):
        xk = min(max(xl[k], 0), w_max)
        rk = min(max(rl[k], 0), w[k])
        if xk > 0 and rk > 0:
            if delta * xk <= eta * rk:
                xk = 0
            else:
                rk = 0
        ready = (pend[k] if k < len(pend) else 0) + (xl[k - D] if k >= D else 0)
        excess = w[k] + ready - rk - w_max
        if excess > 0 and k >= D:
            cut = min(excess, xl[k - D])
            xl[k - D] -= cut
            ready -= cut
            excess -= cut
        if excess > 0:
            rk += excess
            xk = 0
        xl[k], rl[k] = xk, rk
        sk = min(max(sl[k], 0), q[k], math.floor(cap * w[k] + 1e-9))
        sl[k] = sk
        q[k + 1] = q[k] + lam_l[k] - sk
        w[k + 1] = w[k] + ready - rk
    x[:] = xl
    r[:] = rl
    s[:] = sl
    return np.array(q, dtype=np.int64), np.array(w, dtype=np.int64)


def _serve_max(state, params, lam, x, r, s):
    """Raise every dispatch to its bound; the objective is non-increasing in s."""
    cap = params.capacity
    s_full = np.array([10**12] * params.H, dtype=np.int64)
    xs, rs = x.copy(), r.copy()
    q, w = _simulate(state, params, lam, xs, rs, s_full)
    return xs, rs, s_full, q, w


def _cost_total(state, params, lam_hat, x, r, q, w) -> float:
    """Same terms as :func:`evaluate_cost`, summed without the breakdown."""
    H = params.H
    wk = w[:H].astype(float)
    cap = params.capacity * wk
    gap = lam_hat - cap
    xf = x.astype(float)
    dw = w[:H] - np.concatenate(([state.prev_w], w[: H - 1]))
    dx = x - np.concatenate(([state.prev_x], x[: H - 1]))
    return float(
        params.alpha * (params.L_cold + params.L_warm) * np.maximum(0.0, gap).sum()
        + params.beta * params.L_warm * q[:H].sum()
        + params.gamma * np.maximum(0.0, -gap).sum()
        + params.delta * xf.sum()
        - params.eta * r.sum()
        + params.rho1 * float(dw @ dw)
        + params.rho2 * float(dx @ dx)
    )


def _plan_cost(state, params, lam_hat, lam, x, r, s, q, w, status):
    plan = ControlPlan(x, r, s, q, w, 0.0, status, lam)
    plan.cost = evaluate_cost(plan, lam_hat, params, state).total
    return plan


def _neighbourhood(H: int) -> list[tuple]:
    coords = [(nm, k) for nm in ("x", "r") for k in range(H)]
    moves = [((nm, k, d),) for nm, k in coords for d in (1, -1)]
    if H <= 6:
        # short horizons: every signed pair of coordinates
        for i, (n1, k1) in enumerate(coords):
            for n2, k2 in coords[i + 1:]:
                for d1 in (1, -1):
                    for d2 in (1, -1):
                        moves.append(((n1, k1, d1), (n2, k2, d2)))
        return moves
    for k in range(H):
        for j in range(k + 1, min(H, k + 3)):
            for nm in ("x", "r"):
                moves.append(((nm, k, 1), (nm, j, -1)))
                moves.append(((nm, k, -1), (nm, j, 1)))
            moves.append((("x", k, 1), ("r", j, 1)))
            moves.append((("x", k, -1), ("r", j, -1)))
    return moves


def _rollout(state, params, lam, lam_hat, xl, rl):
    """List-only twin of ``_serve_max`` + ``_cost_total`` for the descent loop.

    Mutates ``xl``/``rl`` with the repaired decisions and returns
    ``(cost, q, w)``.
    """
    H, D = params.H, params.D
    cap = params.capacity
    w_max = params.w_max
    delta, eta = params.delta, params.eta
    pend = state.pending_cold
    npend = len(pend)
    q = [0] * (H + 1)
    w = [0] * (H + 1)
    q[0], w[0] = state.q0, state.w0
    for k in range(H):
        xk = xl[k]
        xk = 0 if xk < 0 else (w_max if xk > w_max else xk)
        rk = rl[k]
        rk = 0 if rk < 0 else (w[k] if rk > w[k] else rk)
        if xk > 0 and rk > 0:
            if delta * xk <= eta * rk:
                xk = 0
            else:
                rk = 0
        ready = (pend[k] if k < npend else 0) + (xl[k - D] if k >= D else 0)
        excess = w[k] + ready - rk - w_max
        if excess > 0 and k >= D:
            cut = min(excess, xl[k - D])
            xl[k - D] -= cut
            ready -= cut
            excess -= cut
        if excess > 0:
            rk += excess
            xk = 0
        xl[k], rl[k] = xk, rk
        sk = min(q[k], math.floor(cap * w[k] + 1e-9))
        q[k + 1] = q[k] + lam[k] - sk
        w[k + 1] = w[k] + ready - rk
    a = params.alpha * (params.L_cold + params.L_warm)
    b = params.beta * params.L_warm
    g = params.gamma
    r1, r2 = params.rho1, params.rho2
    cost = 0.0
    wp, xp = state.prev_w, state.prev_x
    for k in range(H):
        gap = lam_hat[k] - cap * w[k]
        cost += a * gap if gap > 0 else -g * gap
        cost += b * q[k] + delta * xl[k] - eta * rl[k]
        dw, dx = w[k] - wp, xl[k] - xp
        cost += r1 * dw * dw + r2 * dx * dx
        wp, xp = w[k], xl[k]
    return cost, q, w


def _local_search(plan: ControlPlan, state, params, lam_hat, max_sweeps=4) -> ControlPlan:
    """Integer descent on x and r over single and paired +-1 moves.

    Each candidate goes through the forward repair, so every plan it can
    return is feasible; s stays greedy.
    """
    moves = _neighbourhood(params.H)
    lam_hat_l = [float(v) for v in lam_hat]
    lam = plan.lam
    lam_l = [int(v) for v in lam]
    bx, br = [int(v) for v in plan.x], [int(v) for v in plan.r]
    best_cost = _cost_total(state, params, np.asarray(lam_hat, dtype=float), plan.x, plan.r, plan.q, plan.w)
    improved_any = False
    for _ in range(max_sweeps):
        improved = False
        for move in moves:
            x, r = bx[:], br[:]
            for name, k, step in move:
                arr = x if name == "x" else r
                arr[k] += step
                if arr[k] < 0:
                    break
                (r if name == "x" else x)[k] = 0
            else:
                cost, _, _ = _rollout(state, params, lam_l, lam_hat_l, x, r)
                if cost < best_cost - 1e-9:
                    bx, br, best_cost = x, r, cost
                    improved = improved_any = True
        if not improved:
            break
    if not improved_any:
        return plan
    xs, rs, s, q, w = _serve_max(state, params, lam, np.array(bx, dtype=np.int64), np.array(br, dtype=np.int64), None)
    return _plan_cost(state, params, lam_hat, lam, xs, rs, s, q, w, plan.solver_status)


def _is_quiescent(problem: ProblemInstance) -> bool:
    """Empty system, zero forecast and no smoothing history.

    Every term but the reclaim reward is then non-negative, and each
    reclaimed container must first be launched at cost ``delta``; with
    ``delta >= eta`` the zero plan is optimal and the QP can be skipped.
    """
    st, p = problem.state, problem.params
    return (
        st.q0 == 0
        and st.w0 == 0
        and st.prev_w == 0
        and st.prev_x == 0
        and not any(st.pending_cold)
        and not np.any(np.asarray(problem.lam_hat) > 0)
        and p.delta >= p.eta
    )


def solve(problem: ProblemInstance, *, max_iter: int | None = None, local_search: bool = True, method: str = "ipm") -> ControlPlan:
    """Relax, project onto ``r*x == 0``, round and repair.

    ``solver_status`` is ``"optimal"`` when the relaxed solution was already
    integral and exclusive, ``"projected"`` otherwise.
    """
    params, state = problem.params, problem.state
    H = params.H
    if _is_quiescent(problem):
        zero = np.zeros(H, dtype=np.int64)
        q, w = np.zeros(H + 1, dtype=np.int64), np.zeros(H + 1, dtype=np.int64)
        return _plan_cost(state, params, problem.lam_hat, problem.lam, zero, zero.copy(), zero.copy(), q, w, "optimal")
    try:
        res = solve_qp(problem.P, problem.c, problem.A, problem.l, problem.u, eps=1e-6, max_iter=max_iter, method=method, polish=False)
    except QPSolverError as exc:
        raise SolverError(str(exc), exc.diagnostics) from exc
    z = res.x
    L = problem.layout
    xr, rr, sr = z[L["x"]].copy(), z[L["r"]].copy(), z[L["s"]].copy()
    x_relaxed, r_relaxed = xr.copy(), rr.copy()
    tol = 1e-6

    changed = False
    for k in range(H):
        if xr[k] > tol and rr[k] > tol:
            changed = True
            overlap = min(xr[k], rr[k])
            if params.delta * xr[k] <= params.eta * rr[k]:
                xr[k], rr[k] = 0.0, rr[k] - overlap
            else:
                rr[k], xr[k] = 0.0, xr[k] - overlap

    xi = np.floor(xr + 0.5).astype(np.int64)
    ri = np.floor(rr + 0.5).astype(np.int64)
    si = np.floor(sr + 0.5).astype(np.int64)
    if np.max(np.abs(np.concatenate([xr - xi, rr - ri, sr - si]))) > tol:
        changed = True
    x0, r0 = xi.copy(), ri.copy()
    q, w = _simulate(state, params, problem.lam, xi, ri, si)
    if not (np.array_equal(x0, xi) and np.array_equal(r0, ri)):
        changed = True
    xi, ri, si, q, w = _serve_max(state, params, problem.lam, xi, ri, si)
    status = "projected" if changed else "optimal"
    plan = _plan_cost(state, params, problem.lam_hat, problem.lam, xi, ri, si, q, w, status)
    if local_search:
        starts = [plan]
        seen = {(tuple(plan.x), tuple(plan.r))}
        # directed roundings of the relaxed point land in other basins
        for rnd in (np.ceil, np.floor):
            xs = rnd(x_relaxed - tol).astype(np.int64) if rnd is np.ceil else rnd(x_relaxed + tol).astype(np.int64)
            rs = rnd(r_relaxed - tol).astype(np.int64) if rnd is np.ceil else rnd(r_relaxed + tol).astype(np.int64)
            both = (xs > 0) & (rs > 0)
            keep_x = params.delta * xs >= params.eta * rs
            xs[both & ~keep_x] = 0
            rs[both & keep_x] = 0
            key = (tuple(xs), tuple(rs))
            if key in seen:
                continue
            seen.add(key)
            xs, rs, ss, qs, ws = _serve_max(state, params, problem.lam, np.maximum(xs, 0), np.maximum(rs, 0), None)
            starts.append(_plan_cost(state, params, problem.lam_hat, problem.lam, xs, rs, ss, qs, ws, status))
        if H <= 6:
            zero = np.zeros(H, dtype=np.int64)
            xs, rs, ss, q0, w0 = _serve_max(state, params, problem.lam, zero, zero.copy(), None)
            starts.append(_plan_cost(state, params, problem.lam_hat, problem.lam, xs, rs, ss, q0, w0, status))
        # descend from the rounded relaxation, then from every other start on
        # short horizons, or only from starts that already beat the incumbent
        best = _local_search(starts[0], state, params, problem.lam_hat)
        for cand in sorted(starts[1:], key=lambda p: p.cost):
            if H <= 6 or cand.cost < best.cost - 1e-9:
                cand = _local_search(cand, state, params, problem.lam_hat)
                if cand.cost < best.cost - 1e-9:
                    best = cand
        plan = best
    return plan


BRUTE_FORCE_LIMIT = 3 * 3  # at most H=3 with bound 4: 5**9 plans


def brute_force_solve(state: ControllerState, lam_hat, params: MpcParams, bound: int) -> ControlPlan:
    """Enumerate every integer plan with ``x, r, s`` in ``[0, bound]``.

    Infeasible plans are dropped; among minimum-cost plans (within 1e-9) the
    lexicographically smallest ``(x, r, -s)`` wins.
    """
    H, D = params.H, params.D
    if H > 3 or bound > 4 or bound < 0:
        raise ControllerError(f"brute force limited to H<=3 and bound<=4 (got H={H}, bound={bound})")
    state.validate(params)
    lam_hat = np.asarray(lam_hat, dtype=float)
    lam = quantize(lam_hat)
    vals = np.arange(bound + 1, dtype=np.int64)
    grid = np.stack(np.meshgrid(*([vals] * (3 * H)), indexing="ij"), axis=-1).reshape(-1, 3 * H)
    X, R, S = grid[:, :H], grid[:, H:2 * H], grid[:, 2 * H:]
    N = grid.shape[0]
    cap = params.capacity
    q = np.zeros((N, H + 1), dtype=np.int64)
    w = np.zeros((N, H + 1), dtype=np.int64)
    q[:, 0], w[:, 0] = state.q0, state.w0
    ok = np.ones(N, dtype=bool)
    for k in range(H):
        pend = state.pending_cold[k] if k < len(state.pending_cold) else 0
        ready = pend + (X[:, k - D] if k >= D else 0)
        ok &= S[:, k] <= np.minimum(q[:, k], np.floor(cap * w[:, k] + 1e-9).astype(np.int64))
        ok &= R[:, k] <= w[:, k]
        ok &= X[:, k] <= params.w_max
        ok &= (R[:, k] * X[:, k]) == 0
        q[:, k + 1] = q[:, k] + lam[k] - S[:, k]
        w[:, k + 1] = w[:, k] + ready - R[:, k]
    ok &= np.all(q >= 0, axis=1) & np.all((w >= 0) & (w <= params.w_max), axis=1)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise ControllerError("no feasible plan within bound")
    X, R, S, q, w = X[idx], R[idx], S[idx], q[idx], w[idx]
    lamh = lam_hat[None, :]
    capw = cap * w[:, :H]
    w_prev = np.concatenate([np.full((len(idx), 1), state.prev_w), w[:, : H - 1]], axis=1)
    x_prev = np.concatenate([np.full((len(idx), 1), state.prev_x), X[:, : H - 1]], axis=1)
    cost = (
        params.alpha * np.maximum(0.0, lamh - capw) * (params.L_cold + params.L_warm)
        + params.beta * q[:, :H] * params.L_warm
        + params.gamma * np.maximum(0.0, capw - lamh)
        + params.delta * X
        - params.eta * R
        + params.rho1 * (w[:, :H] - w_prev) ** 2
        + params.rho2 * (X - x_prev) ** 2
    ).sum(axis=1)
    best = cost.min()
    tie = np.flatnonzero(cost <= best + 1e-9)
    keys = np.concatenate([X[tie], R[tie], -S[tie]], axis=1)
    order = np.lexsort(keys.T[::-1])
    j = tie[order[0]]
    return ControlPlan(X[j].copy(), R[j].copy(), S[j].copy(), q[j].copy(), w[j].copy(), float(cost[j]),
                       "optimal", lam)


@dataclass
class TickResult:
    x0: int
    r0: int
    s0: int
    plan: ControlPlan | None
    lam_hat: np.ndarray
    forecast_ms: float
    solve_ms: float
    degraded: bool = False
    problem: ProblemInstance | None = None


def safe_action(state: ControllerState, params: MpcParams) -> tuple[int, int, int]:
    return 0, 0, int(min(state.q0, math.floor(params.capacity * state.w0 + 1e-9)))


def control_tick(
    state: ControllerState,
    history: Sequence[float],
    params: MpcParams,
    forecast_cfg: ForecastConfig | None = None,
) -> TickResult:
    """Forecast, build, solve; return step-0 actions and the full plan.

    The caller advances the cold-start pipeline and ``prev_w``/``prev_x``.
    """
    forecast_cfg = forecast_cfg or ForecastConfig()
    t0 = time.perf_counter()
    fc = predict(history, params.H, forecast_cfg)
    t1 = time.perf_counter()
    problem = build_problem(state, fc.clipped, params)
    try:
        plan = solve(problem)
    except SolverError as exc:
        log.warning("solver failed, falling back to safe action: %s", exc)
        x0, r0, s0 = safe_action(state, params)
        t2 = time.perf_counter()
        return TickResult(x0, r0, s0, None, fc.clipped, (t1 - t0) * 1e3, (t2 - t1) * 1e3, degraded=True, problem=problem)
    t2 = time.perf_counter()
    return TickResult(int(plan.x[0]), int(plan.r[0]), int(plan.s[0]), plan, fc.clipped,
                      (t1 - t0) * 1e3, (t2 - t1) * 1e3, problem=problem)


def dump_plan(problem: ProblemInstance, plan: ControlPlan, t: float) -> str:
    return json.dumps({"t": t, "problem": problem.to_dict(), "plan": plan.to_dict(problem.lam_hat)})
