import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldstart_mpc import controller as ctl
from coldstart_mpc.controller import (
    ControllerError,
    ControllerState,
    ControlPlan,
    MpcParams,
    SolverError,
    brute_force_solve,
    build_problem,
    control_tick,
    dump_plan,
    evaluate_cost,
    quantize,
    ready_cold,
    safe_action,
    solve,
    verify_plan,
)

from oracle_suite import BOUND, random_instance, suite

UNIT = dict(dt=1.0, L_warm=1.0, L_cold=10.5)  # capacity 1 request per container per step
ZERO_W = dict(alpha=0, beta=0, gamma=0, delta=0, eta=0, rho1=0, rho2=0)


def plan_of(x, r, s, q, w, lam=None):
    arr = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return ControlPlan(arr(x), arr(r), arr(s), arr(q), arr(w), 0.0, "optimal",
                       arr(lam if lam is not None else [0] * len(x)))


class TestParams:
    def test_derived_fields(self):
        p = MpcParams()
        assert p.D == 10
        assert p.mu * p.L_warm == 1.0
        assert p.capacity == pytest.approx(1 / 0.28)

    def test_negative_weight_rejected(self):
        with pytest.raises(ControllerError):
            MpcParams(beta=-1)

    def test_bad_horizon(self):
        with pytest.raises(ControllerError):
            MpcParams(H=0)


class TestCost:
    def test_cold_delay_example(self):
        p = MpcParams(H=1, alpha=1, **{k: 0 for k in ZERO_W if k != "alpha"})
        st_ = ControllerState(w0=2)
        cb = evaluate_cost(plan_of([0], [0], [0], [0, 0], [2, 2]), [10.0], p, st_)
        assert cb.cold_delay[0] == pytest.approx((10 - 2 / 0.28) * 10.78)
        assert cb.cold_delay[0] == pytest.approx(30.80, abs=5e-3)

    def test_hinge_switch(self):
        p = MpcParams(H=1)
        cb = evaluate_cost(plan_of([0], [0], [0], [0, 0], [3, 3]), [2.0], p, ControllerState(w0=3))
        assert cb.cold_delay[0] == 0
        assert cb.overprov[0] == pytest.approx(p.gamma * (3 / 0.28 - 2))

    def test_empty_system_zero(self):
        p = MpcParams(H=3)
        z = [0, 0, 0]
        assert evaluate_cost(plan_of(z, z, z, [0] * 4, [0] * 4), z, p, ControllerState()).total == 0

    def test_smoothness_against_prev(self):
        p = MpcParams(H=1, **{**ZERO_W, "rho1": 1.0, "rho2": 2.0})
        cb = evaluate_cost(plan_of([1], [0], [0], [0, 0], [1, 1]), [0], p, ControllerState(w0=1, prev_w=3, prev_x=0))
        assert cb.smoothness[0] == pytest.approx(1 * 4 + 2 * 1)

    def test_total_is_sum(self):
        state, lam_hat, p = random_instance(np.random.default_rng(1))
        plan = solve(build_problem(state, lam_hat, p))
        cb = evaluate_cost(plan, lam_hat, p, state)
        assert cb.total == pytest.approx(sum(cb.totals()[k] for k in cb.totals() if k != "total"), abs=1e-9)
        assert cb.per_step.sum() == pytest.approx(cb.total, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ControllerError):
            evaluate_cost(plan_of([0], [0], [0], [0, 0], [0, 0]), [0, 0], MpcParams(H=2), ControllerState())

    @settings(max_examples=100, deadline=None)
    @given(lam=st.floats(0, 100), w=st.integers(0, 63), seed=st.integers(0, 1000))
    def test_monotone_hinges(self, lam, w, seed):
        p = MpcParams(H=1)
        st_ = ControllerState(w0=w)
        lo = evaluate_cost(plan_of([0], [0], [0], [0, 0], [w, w]), [lam], p, st_)
        hi = evaluate_cost(plan_of([0], [0], [0], [0, 0], [w + 1, w + 1]), [lam], p, ControllerState(w0=w + 1))
        assert hi.cold_delay[0] <= lo.cold_delay[0] + 1e-12
        assert hi.overprov[0] >= lo.overprov[0] - 1e-12


class TestReadyCold:
    def test_launch_matures_after_d(self):
        x = [1] + [0] * 19
        D = MpcParams().D
        assert D == 10
        assert [ready_cold((), x, k, D) for k in range(20)] == [0] * 10 + [1] + [0] * 9

    def test_empty_pipeline(self):
        assert ready_cold((), [0] * 5, 3, 10) == 0

    def test_pipeline_index(self):
        assert ready_cold((0, 0, 2), [0] * 5, 2, 10) == 2

    def test_negative_k(self):
        with pytest.raises(ControllerError):
            ready_cold((), [0], -1, 1)


class TestBuildProblem:
    def test_h1_dimensions(self):
        pr = build_problem(ControllerState(), [0.0], MpcParams(H=1))
        assert pr.n_primary == 5 and pr.n_aux == 2
        assert pr.c.size == 7

    def test_h20_dimensions(self):
        pr = build_problem(ControllerState(), np.zeros(20), MpcParams())
        assert pr.n_primary == 100

    def test_w0_above_cap_rejected(self):
        with pytest.raises(ControllerError):
            build_problem(ControllerState(w0=5), [0.0], MpcParams(H=1, w_max=4))

    def test_forecast_length_checked(self):
        with pytest.raises(ControllerError):
            build_problem(ControllerState(), [0.0, 1.0], MpcParams(H=3))

    def test_serialises(self):
        pr = build_problem(ControllerState(q0=2, w0=1), [1.0, 2.0], MpcParams(H=2))
        d = json.loads(json.dumps(pr.to_dict()))
        assert d["H"] == 2 and d["n_variables"] == 14


class TestSolveExamples:
    def test_empty_optimum(self):
        plan = solve(build_problem(ControllerState(), np.zeros(20), MpcParams()))
        assert plan.cost == 0
        assert not plan.x.any() and not plan.r.any() and not plan.s.any()

    def test_h2_hand_instance(self):
        p = MpcParams(H=2, w_max=2, **UNIT, **{**ZERO_W, "alpha": 1, "beta": 1})
        st_ = ControllerState(q0=2, w0=2)
        plan = solve(build_problem(st_, [2.0, 2.0], p))
        bf = brute_force_solve(st_, [2.0, 2.0], p, bound=2)
        assert plan.s.tolist() == [2, 2]
        assert plan.x.tolist() == [0, 0] and plan.r.tolist() == [0, 0]
        assert plan.cost == pytest.approx(bf.cost, abs=1e-6)
        assert not verify_plan(plan, st_, p)

    def test_steady_load_matching_capacity(self):
        p = MpcParams(H=2, **UNIT)
        st_ = ControllerState(q0=2, w0=2, prev_w=2)
        plan = solve(build_problem(st_, [2.0, 2.0], p))
        bf = brute_force_solve(st_, [2.0, 2.0], p, bound=3)
        assert (plan.x[0], plan.r[0], plan.s[0]) == (0, 0, 2)
        assert (bf.x[0], bf.r[0], bf.s[0]) == (0, 0, 2)

    def test_burst_in_d_steps_prewarms_now(self):
        # a launch at step 0 joins the pool at w[D + 1]
        p = MpcParams(H=3, L_cold=1.0, L_warm=1.0, w_max=4)
        assert p.D == 1
        lam_hat = [0.0, 3.0, 3.0]
        plan = solve(build_problem(ControllerState(), lam_hat, p))
        bf = brute_force_solve(ControllerState(), lam_hat, p, bound=3)
        assert bf.x[0] >= 1
        assert plan.x[0] >= 1

    def test_burst_in_d_steps_default_platform(self):
        p = MpcParams()
        lam_hat = np.zeros(20)
        lam_hat[p.D:] = 20.0
        plan = solve(build_problem(ControllerState(), lam_hat, p))
        assert plan.x[0] > 0

    def test_zero_forecast_reclaims(self):
        p = MpcParams(H=2, L_cold=10.5, L_warm=1.0, w_max=3)
        st_ = ControllerState(w0=2, prev_w=2)
        plan = solve(build_problem(st_, [0.0, 0.0], p))
        bf = brute_force_solve(st_, [0.0, 0.0], p, bound=3)
        assert bf.r[0] > 0 and plan.r[0] > 0

    def test_free_reclaim_drains(self):
        # reclaiming earns eta whenever it happens; gamma makes idling cost
        p = MpcParams(H=3, L_warm=1.0, w_max=3, **{**ZERO_W, "eta": 1.0, "gamma": 0.1})
        st_ = ControllerState(w0=3)
        bf = brute_force_solve(st_, [0.0] * 3, p, bound=3)
        plan = solve(build_problem(st_, [0.0] * 3, p))
        assert bf.r.tolist() == [3, 0, 0]
        assert plan.cost == pytest.approx(bf.cost)
        assert plan.w[1] == 0

    def test_all_zero_weights(self):
        state, lam_hat, p = random_instance(np.random.default_rng(11))
        p = MpcParams(H=p.H, dt=p.dt, L_warm=p.L_warm, L_cold=p.L_cold, w_max=p.w_max, **ZERO_W)
        plan = solve(build_problem(state, lam_hat, p))
        assert plan.cost == 0
        assert not verify_plan(plan, state, p)

    def test_solver_error_propagates(self, monkeypatch):
        def boom(*a, **k):
            raise ctl.QPSolverError("stalled", {"iter": 3})

        monkeypatch.setattr(ctl, "solve_qp", boom)
        with pytest.raises(SolverError) as exc:
            solve(build_problem(ControllerState(q0=1, w0=1), [1.0], MpcParams(H=1)))
        assert exc.value.diagnostics == {"iter": 3}

    @pytest.mark.parametrize("method", ["ipm", "admm"])
    def test_methods_give_valid_plans(self, method):
        state, lam_hat, p = random_instance(np.random.default_rng(4))
        plan = solve(build_problem(state, lam_hat, p), method=method, max_iter=None if method == "ipm" else 50_000)
        assert not verify_plan(plan, state, p)


class TestVerifier:
    def test_catches_each_violation(self):
        p = MpcParams(H=1, **UNIT, w_max=2)
        st_ = ControllerState(q0=1, w0=1)
        ok = plan_of([0], [0], [1], [1, 0], [1, 1])
        assert verify_plan(ok, st_, p) == []
        assert any("queue" in e for e in verify_plan(plan_of([0], [0], [1], [1, 1], [1, 1]), st_, p))
        assert any("capacity" in e for e in verify_plan(plan_of([0], [0], [2], [2, 0], [1, 1]), ControllerState(q0=2, w0=1), p))
        assert any("exclusivity" in e for e in verify_plan(plan_of([1], [1], [0], [1, 1], [1, 0]), st_, p))
        assert any("initial" in e for e in verify_plan(ok, ControllerState(q0=0, w0=1), p))

    def test_float_arrays_flagged(self):
        p = MpcParams(H=1)
        bad = ControlPlan(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(2), np.zeros(2), 0.0, "optimal",
                          np.zeros(1, dtype=np.int64))
        assert any("integer" in e for e in verify_plan(bad, ControllerState(), p))


class TestBruteForce:
    def test_refuses_large_search(self):
        with pytest.raises(ControllerError):
            brute_force_solve(ControllerState(), [0.0] * 4, MpcParams(H=4), bound=2)
        with pytest.raises(ControllerError):
            brute_force_solve(ControllerState(), [0.0], MpcParams(H=1), bound=5)

    def test_empty_system_zero_plan(self):
        bf = brute_force_solve(ControllerState(), [0.0, 0.0], MpcParams(H=2), bound=2)
        assert bf.cost == 0 and not bf.x.any() and not bf.r.any()

    def test_tie_break_deterministic(self):
        p = MpcParams(H=2, **UNIT, **ZERO_W)
        bf = brute_force_solve(ControllerState(q0=1, w0=1), [1.0, 0.0], p, bound=2)
        # all plans cost 0: smallest x, then r, then largest s
        assert bf.x.tolist() == [0, 0] and bf.r.tolist() == [0, 0] and bf.s.tolist() == [1, 1]


class TestSuiteProperties:
    """Whole-suite invariants; the acceptance gap check lives in test_acceptance."""

    @pytest.fixture(scope="class")
    @staticmethod
    def solved():
        return [(st_, lam, p, solve(build_problem(st_, lam, p))) for st_, lam, p in suite()]

    def test_every_plan_valid(self, solved):
        for st_, _, p, plan in solved:
            assert verify_plan(plan, st_, p) == []

    def test_reported_cost_decomposes(self, solved):
        for st_, lam, p, plan in solved:
            assert evaluate_cost(plan, lam, p, st_).total == pytest.approx(plan.cost, abs=1e-6)

    def test_exclusivity(self, solved):
        for *_, plan in solved:
            assert not np.any(plan.x * plan.r)

    def test_optimal_status_is_exact(self, solved):
        for st_, lam, p, plan in solved:
            if plan.solver_status != "optimal":
                continue
            bf = brute_force_solve(st_, lam, p, BOUND)
            assert plan.cost <= bf.cost + 1e-6
            if max(plan.x.max(), plan.r.max(), plan.s.max()) <= BOUND:
                assert plan.cost == pytest.approx(bf.cost, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_instances_valid(seed):
    state, lam_hat, p = random_instance(np.random.default_rng(seed))
    plan = solve(build_problem(state, lam_hat, p))
    assert verify_plan(plan, state, p) == []
    bf = brute_force_solve(state, lam_hat, p, BOUND)
    assert plan.cost <= bf.cost + 0.05 * abs(bf.cost) + 1e-6


@settings(max_examples=15, deadline=None)
@given(
    q0=st.integers(0, 300),
    w0=st.integers(0, 64),
    pend=st.lists(st.integers(0, 3), min_size=10, max_size=10),
    lam=st.lists(st.floats(0, 150), min_size=20, max_size=20),
)
def test_full_horizon_plans_valid(q0, w0, pend, lam):
    p = MpcParams()
    if w0 + sum(pend) > p.w_max:
        pend = [0] * 10
    state = ControllerState(q0=q0, w0=w0, pending_cold=tuple(pend), prev_w=w0)
    plan = solve(build_problem(state, lam, p))
    assert verify_plan(plan, state, p) == []
    assert np.all(plan.w <= p.w_max)


def test_quantize_half_up():
    assert quantize([0.49, 0.5, 1.5, 2.51]).tolist() == [0, 1, 2, 3]


class TestControlTick:
    def test_step_zero_actions(self):
        p = MpcParams()
        res = control_tick(ControllerState(q0=5, w0=2, prev_w=2), np.full(100, 3.0), p)
        assert (res.x0, res.r0, res.s0) == (int(res.plan.x[0]), int(res.plan.r[0]), int(res.plan.s[0]))
        assert res.s0 == 5
        assert not res.degraded
        assert res.forecast_ms >= 0 and res.solve_ms >= 0

    def test_fallback_on_solver_error(self, monkeypatch):
        def boom(problem, **kw):
            raise SolverError("no convergence")

        monkeypatch.setattr(ctl, "solve", boom)
        p = MpcParams()
        st_ = ControllerState(q0=20, w0=3)
        res = control_tick(st_, np.full(50, 4.0), p)
        assert res.degraded and res.plan is None
        assert (res.x0, res.r0, res.s0) == safe_action(st_, p) == (0, 0, math.floor(3 / 0.28))

    def test_dump_plan_json(self):
        p = MpcParams(H=3)
        res = control_tick(ControllerState(q0=1, w0=1), [1.0] * 30, p)
        rec = json.loads(dump_plan(res.problem, res.plan, 12.0))
        assert rec["t"] == 12.0
        assert set(rec["plan"]) >= {"x", "r", "s", "q", "w", "lambda_hat"}
