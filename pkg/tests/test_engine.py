import copy
import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pdpred.bench import packing_suite, random_packing_instance, feasible_bits
from pdpred.engine import (
    EngineState,
    OnlinePackingSolver,
    PackingInstance,
    PredictionStream,
    finalize_element,
    grow_element,
    lemma1_violations,
    robustness_bound,
    run_online_packing,
    scaled_column,
    sparsity_and_divergence,
    verify_dual,
    verify_feasibility,
    verify_lemma1,
    verify_trace,
)
from pdpred.objective import EvalMode, LinearOracle, SmoothnessParams, evaluate_F
from pdpred.offline import packing_opt_frac


def unit_instance(w=1.0, b=1.0):
    return PackingInstance([[b]], LinearOracle([w]))


def prepared_state(instance, eta=1.0, step=1e-4, e=0, col=None):
    state = EngineState.initial(instance, eta, step=step)
    state.b_bar[e] = instance.columns[e] if col is None else col
    state.released = e + 1
    return state


# -- scaled_column -----------------------------------------------------------

def test_scaled_column_predicted_keeps_column():
    np.testing.assert_array_equal(scaled_column([0.2, 0.0], 1, True, 0.5), [0.2, 0.0])


def test_scaled_column_unpredicted_is_inflated():
    np.testing.assert_allclose(scaled_column([0.2, 0.0], 0, True, 0.5), [0.4, 0.0])


@pytest.mark.parametrize("bit", [0, 1])
@pytest.mark.parametrize("feasible", [True, False])
def test_scaled_column_eta_one_is_identity(bit, feasible):
    np.testing.assert_array_equal(scaled_column([0.3, 0.7], bit, feasible, 1.0), [0.3, 0.7])


def test_scaled_column_after_failure_policies():
    b = np.array([0.2, 0.1])
    np.testing.assert_allclose(scaled_column(b, 1, False, 0.5), b / 0.5)
    np.testing.assert_allclose(scaled_column(b, 1, False, 0.5, after_failure="original"), b)
    np.testing.assert_allclose(scaled_column(b, 0, False, 0.5, after_failure="original"), b)


@pytest.mark.parametrize("eta", [0.0, -0.1, 1.5, float("nan")])
def test_scaled_column_rejects_bad_eta(eta):
    with pytest.raises(ValueError):
        scaled_column([0.1], 0, True, eta)


def test_scaled_column_never_weaker():
    rng = np.random.default_rng(0)
    for _ in range(50):
        b = rng.random(4)
        eta = rng.uniform(0.01, 1)
        out = scaled_column(b, int(rng.integers(2)), bool(rng.integers(2)), eta)
        assert np.all(out >= b)


# -- grow_element --------------------------------------------------------------

def test_grow_zero_gradient_leaves_state():
    inst = unit_instance()
    state = prepared_state(inst)
    grow_element(state, 0, 0.0)
    assert state.y[0] == 0.0 and np.all(state.alpha == 0.0)


def test_grow_already_tight_does_not_move():
    inst = unit_instance()
    state = prepared_state(inst)
    state.alpha[:] = 2.0
    grow_element(state, 0, 1.0, method="exact")
    assert state.y[0] == 0.0
    np.testing.assert_array_equal(state.alpha, [2.0])


def test_grow_rejects_nonfinite_gradient():
    state = prepared_state(unit_instance())
    with pytest.raises(ValueError):
        grow_element(state, 0, float("inf"))


def test_grow_single_resource_closed_form():
    # alpha(y) = 2**y - 1 reaches the exit value 1 exactly at y = 1
    inst = unit_instance()
    state = prepared_state(inst)
    grow_element(state, 0, 1.0, method="exact")
    assert state.y[0] == pytest.approx(1.0, abs=1e-12)
    assert state.alpha[0] == pytest.approx(1.0, abs=1e-12)


def test_grow_single_resource_fine_integrator_agrees():
    inst = unit_instance()
    state = prepared_state(inst, step=1e-5)
    grow_element(state, 0, 1.0, method="euler")
    assert state.y[0] == pytest.approx(1.0, abs=1e-5)
    assert state.alpha[0] == pytest.approx(1.0, abs=1e-4)


def test_grow_interior_exit_matches_analytic():
    # b=4, w=1, d=rho=1: alpha(y) = (2**(4y) - 1)/4, exit at 4 alpha = 1, so y = 1/4
    inst = PackingInstance([[4.0]], LinearOracle([1.0]))
    state = prepared_state(inst)
    grow_element(state, 0, 1.0, method="exact", guard=False)
    y_star = 0.25
    assert state.y[0] == pytest.approx(y_star, rel=1e-10)
    assert 4 * state.alpha[0] == pytest.approx(1.0, rel=1e-10)


def _implicit_loop(alpha0, col, grad, d, lam, L, dy, y0=0.0):
    """Step-by-step backward-Euler reference: returns (y at first exit step, steps)."""
    alpha = np.array(alpha0, dtype=float)
    k = col / grad
    c = 1.0 / (d * lam)
    delta = dy * grad * L
    y = y0
    j = 0
    while col @ alpha <= grad / lam and y < 1.0:
        act = k > 0
        alpha[act] = (alpha[act] + delta * c) / (1.0 - delta * k[act])
        y += dy
        j += 1
    return y, j, alpha


def test_grow_euler_matches_step_loop():
    cols = np.array([[0.9, 0.0, 0.4], [0.3, 0.5, 0.2]])
    inst = PackingInstance(cols, LinearOracle([1.3, 0.7]))
    dy = 1e-3
    state = EngineState.initial(inst, 0.5, step=dy)
    state.b_bar[0] = cols[0] / 0.5
    state.released = 1
    grow_element(state, 0, 1.3, method="euler", guard=False)
    y_ref, steps, _ = _implicit_loop(np.zeros(3), cols[0] / 0.5, 1.3, inst.d, 1.0,
                                     state.log_rate, dy)
    assert state.steps_taken[0] == steps
    assert y_ref - dy - 1e-12 <= state.y[0] <= y_ref + 1e-12
    load = state.b_bar[0] @ state.alpha
    assert load == pytest.approx(1.3, rel=1e-10)


def test_grow_euler_error_shrinks_with_step():
    inst = PackingInstance([[4.0]], LinearOracle([1.0]))
    y_star = 0.25
    errs = []
    for dy in (1e-2, 1e-3, 1e-4):
        state = prepared_state(inst, step=dy)
        grow_element(state, 0, 1.0, method="euler", guard=False)
        errs.append(abs(state.y[0] - y_star))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_grow_implicit_alpha_dominates_exact():
    inst = PackingInstance([[4.0]], LinearOracle([1.0]))
    state = prepared_state(inst, step=1e-2)
    grow_element(state, 0, 1.0, method="euler", guard=False)
    exact = (2.0 ** (4 * state.y[0]) - 1.0) / 4
    assert state.alpha[0] >= exact - 1e-12


def test_grow_zero_column_caps_at_one():
    inst = PackingInstance([[0.0]], LinearOracle([1.0]))
    for method in ("exact", "euler"):
        state = prepared_state(inst, step=1e-9)
        grow_element(state, 0, 1.0, method=method)
        assert state.y[0] == 1.0 and state.alpha[0] == 0.0
        assert 0 in state.capped


def test_grow_step_cap_raises():
    inst = PackingInstance([[1e-6]], LinearOracle([1.0]))
    state = prepared_state(inst, step=1e-8)
    with pytest.raises(RuntimeError):
        grow_element(state, 0, 1.0, method="euler")


def test_grow_unknown_method():
    with pytest.raises(ValueError):
        grow_element(prepared_state(unit_instance()), 0, 1.0, method="rk4")


# -- finalize ------------------------------------------------------------------

def test_finalize_predicted_feasible():
    state = EngineState.initial(unit_instance(), 0.25)
    finalize_element(state, 0, 1, True)
    assert state.x[0] == pytest.approx(0.8)


def test_finalize_unpredicted_uses_iterate():
    state = EngineState.initial(unit_instance(), 1.0)
    state.y[0] = 0.5
    finalize_element(state, 0, 0, True)
    assert state.x[0] == pytest.approx(0.25)


def test_finalize_after_prediction_failure():
    state = EngineState.initial(unit_instance(), 0.5)
    state.y[0] = 0.3
    finalize_element(state, 0, 1, False)
    assert state.x[0] == pytest.approx(0.2)


def test_finalize_is_irrevocable():
    state = EngineState.initial(unit_instance(), 0.5)
    finalize_element(state, 0, 1, True)
    with pytest.raises(RuntimeError):
        finalize_element(state, 0, 0, True)


# -- run_online_packing -------------------------------------------------------------

def test_run_empty_stream():
    inst = PackingInstance(np.zeros((0, 2)), LinearOracle([]), m=2)
    res = run_online_packing(inst, [], eta=0.5)
    assert res.x.shape == (0,) and res.y.shape == (0,)
    assert res.objective == 0.0
    np.testing.assert_array_equal(res.dual.alpha, [0.0, 0.0])
    assert verify_dual(res.dual, inst.oracle, res.state.b_bar, 1, 1).ok


def test_run_single_predicted_element():
    inst = unit_instance()
    res = run_online_packing(inst, [1], eta=0.5)
    assert res.x[0] == pytest.approx(2 / 3)
    assert verify_feasibility(res.x, res.y, inst, res.state.b_bar).ok
    assert verify_dual(res.dual, inst.oracle, res.state.b_bar, 1, 1).ok
    assert verify_lemma1(res.trace)


def test_run_single_unpredicted_element():
    inst = unit_instance()
    for method in ("exact", "euler"):
        res = run_online_packing(inst, [0], eta=1.0, method=method, step=1e-5)
        assert res.y[0] == pytest.approx(1.0, abs=1e-5)
        assert res.x[0] == pytest.approx(res.y[0] / 2)
        assert verify_feasibility(res.x, res.y, inst, res.state.b_bar).ok
        assert verify_dual(res.dual, inst.oracle, res.state.b_bar, 1, 1).ok
        assert verify_lemma1(res.trace)
        assert verify_lemma1(res.trace, form="normalized")


def test_run_requires_one_bit_per_element():
    with pytest.raises(ValueError):
        run_online_packing(unit_instance(), [1, 0])


def test_run_rejects_unknown_divergence():
    with pytest.raises(ValueError):
        run_online_packing(unit_instance(), [0], divergence="final")


def test_instance_validation():
    with pytest.raises(ValueError):
        PackingInstance([[-0.1]], LinearOracle([1.0]))
    with pytest.raises(ValueError):
        PackingInstance([[0.1]], LinearOracle([1.0, 2.0]))
    with pytest.raises(ValueError):
        PackingInstance([[0.1], [0.4]], LinearOracle([1.0, 1.0]), rho=2.0)
    with pytest.raises(ValueError):
        PackingInstance([[0.1], [0.4]], LinearOracle([1.0, 1.0]), d=1)


def test_sparsity_and_divergence():
    cols = np.array([[0.1, 0.0], [0.4, 0.3], [0.0, 0.0]])
    assert sparsity_and_divergence(cols) == (2, pytest.approx(4.0))
    assert sparsity_and_divergence(np.zeros((2, 2))) == (1, 1.0)


def test_prediction_stream_monitor():
    ps = PredictionStream([1, 1, 1], 1)
    assert ps.observe(0, np.array([0.6]))
    assert ps.observe(1, np.array([0.4]))
    assert not ps.observe(2, np.array([1e-9]))
    assert ps.infeasible_at == 2
    with pytest.raises(ValueError):
        ps.observe(0, np.array([0.0]))


def test_prediction_stream_slack():
    ps = PredictionStream([1, 1], 1)
    ps.observe(0, np.array([0.5]))
    ps.observe(1, np.array([0.5 + 5e-13]))
    assert ps.feasible


def test_prediction_value():
    inst = PackingInstance([[0.6], [0.6]], LinearOracle([1.0, 2.0]))
    assert PredictionStream([0, 1], 1).value(inst) == 2.0
    assert PredictionStream([1, 1], 1).value(inst) == 0.0


# -- verifiers ---------------------------------------------------------------------------

def test_lemma1_holds_on_empty_trace():
    state = EngineState.initial(unit_instance(), 1.0)
    assert verify_lemma1(state.trace)


def test_lemma1_mutation_detected():
    inst = PackingInstance([[0.5, 0.2], [0.3, 0.4], [0.2, 0.1]], LinearOracle([1, 1, 1]))
    res = run_online_packing(inst, [0, 0, 0], eta=0.5)
    assert verify_lemma1(res.trace)
    bad = copy.deepcopy(res.trace)
    snap = bad.snapshots[-1]
    snap.alpha = snap.alpha / 2
    assert not verify_lemma1(bad)
    assert any(v["kind"] == "alpha_bound" for v in lemma1_violations(bad))


def test_lemma1_rejects_unknown_form():
    with pytest.raises(ValueError):
        lemma1_violations(EngineState.initial(unit_instance(), 1.0).trace, form="loose")


def test_literal_bound_breaks_when_gradient_jumps():
    # the second element's gradient is ten times the first; alpha built up for
    # the cheap element cannot meet a bound scaled by the larger gradient
    inst = PackingInstance([[0.5], [0.5]], LinearOracle([1.0, 10.0]))
    res = run_online_packing(inst, [0, 0], eta=1.0)
    assert not verify_lemma1(res.trace, form="literal")
    assert verify_lemma1(res.trace, form="normalized")
    assert verify_feasibility(res.x, res.y, inst, res.state.b_bar).ok


def test_literal_bound_holds_for_unit_weights():
    rng = np.random.default_rng(7)
    for t in range(30):
        inst = random_packing_instance(rng, kind="linear")
        inst = PackingInstance(inst.columns, LinearOracle(np.ones(inst.n)))
        bits = feasible_bits(rng, inst) if t % 2 else (rng.random(inst.n) < 0.5).astype(int)
        res = run_online_packing(inst, bits, eta=[0.05, 0.5, 1.0][t % 3])
        assert verify_lemma1(res.trace, form="literal")


def test_feasibility_report_flags_overload():
    inst = PackingInstance([[0.6], [0.6]], LinearOracle([1.0, 1.0]))
    rep = verify_feasibility(np.array([1.0, 1.0]), np.zeros(2), inst, inst.columns)
    assert not rep.ok and {v["kind"] for v in rep.violations} == {"load"}


def test_dual_report_flags_uncovered_element():
    inst = unit_instance()
    res = run_online_packing(inst, [0], eta=1.0)
    dual = copy.deepcopy(res.dual)
    dual.alpha[:] = 0.0
    dual.box[:] = 0.0
    rep = verify_dual(dual, inst.oracle, res.state.b_bar, 1, 1)
    assert any(v["kind"] == "element" for v in rep.violations)


def test_original_scaling_can_overload():
    # after the prediction fails, keeping later columns unscaled lets x exceed capacity
    cols = np.array([[0.9], [0.5], [0.8]])
    inst = PackingInstance(cols, LinearOracle([0.6, 1.5, 1.9]))
    bits = [1, 1, 0]
    lit = run_online_packing(inst, bits, eta=0.1, after_failure="original")
    assert not verify_feasibility(lit.x, lit.y, inst, lit.state.b_bar).ok
    fixed = run_online_packing(inst, bits, eta=0.1)
    assert verify_feasibility(fixed.x, fixed.y, inst, fixed.state.b_bar).ok


SUITE = packing_suite(40, seed=3)


@pytest.mark.parametrize("idx", range(len(SUITE)))
def test_suite_invariants(idx):
    inst, bits, eta = SUITE[idx]
    res = run_online_packing(inst, bits, eta=eta)
    b, x = inst.columns, res.x
    # online feasibility after every finalization
    load = np.zeros(inst.m)
    for e, y_e, x_e in res.trace.finals:
        load += b[e] * x_e
        assert np.all(load <= 1 + 1e-9)
    # irrevocability: the recorded final is the returned x
    assert [f[0] for f in res.trace.finals] == list(range(inst.n))
    np.testing.assert_array_equal([f[2] for f in res.trace.finals], x)
    assert verify_feasibility(res.x, res.y, inst, res.state.b_bar).ok
    assert verify_lemma1(res.trace, form="normalized")
    assert verify_trace(res.trace) == []
    if inst.n <= 12:
        assert verify_dual(res.dual, inst.oracle, res.state.b_bar, 1, 1).ok
    # alpha non-decreasing along the trace
    prev = np.zeros(inst.m)
    for snap in res.trace.snapshots:
        assert np.all(snap.alpha >= prev - 1e-12)
        prev = snap.alpha
    assert res.state.running_rho_bar <= inst.rho / eta * (1 + 1e-12)
    assert res.state.rho_bar == pytest.approx(inst.rho / eta)


@pytest.mark.parametrize("idx", range(0, len(SUITE), 2))
def test_consistency_mechanics(idx):
    inst, bits, eta = SUITE[idx]
    res = run_online_packing(inst, bits, eta=eta)
    assert res.prediction_infeasible_at is None
    assert np.all(res.x[bits == 1] == 1.0 / (1.0 + eta))
    if isinstance(inst.oracle, LinearOracle):
        p = PredictionStream(bits, inst.m).value(inst)
        assert res.objective >= p / (1 + eta) - 1e-12


def test_running_divergence_policy():
    inst, bits, eta = SUITE[1]
    res = run_online_packing(inst, bits, eta=eta, divergence="running")
    assert res.state.rho_bar <= inst.rho / eta * (1 + 1e-12)
    assert verify_feasibility(res.x, res.y, inst, res.state.b_bar).ok


def test_sampled_mode_reproducible():
    rng = np.random.default_rng(11)
    inst = random_packing_instance(rng, kind="coverage", n_max=8)
    bits = feasible_bits(rng, inst)
    mode = EvalMode.sampled(2000, seed=4)
    a = run_online_packing(inst, bits, eta=0.5, mode=mode)
    b = run_online_packing(inst, bits, eta=0.5, mode=mode)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.dual.alpha, b.dual.alpha)


def test_halving_step_converges():
    diffs = []
    rng = np.random.default_rng(5)
    inst = random_packing_instance(rng, kind="coverage", n_max=10)
    bits = np.zeros(inst.n, dtype=int)
    objs = [run_online_packing(inst, bits, eta=0.5, step=s, method="euler").objective
            for s in (1e-2, 5e-3, 2.5e-3)]
    diffs = [abs(objs[1] - objs[0]), abs(objs[2] - objs[1])]
    assert diffs[1] <= 2 * diffs[0] + 1e-12


def test_exact_matches_fine_euler_linear():
    rng = np.random.default_rng(9)
    for _ in range(5):
        inst = random_packing_instance(rng, kind="linear")
        bits = (rng.random(inst.n) < 0.3).astype(int)
        ex = run_online_packing(inst, bits, eta=0.5, method="exact")
        eu = run_online_packing(inst, bits, eta=0.5, method="euler", step=1e-7)
        assert abs(ex.objective - eu.objective) <= 1e-6


def test_robustness_bound_values():
    assert robustness_bound(1.0, 1, 1) == pytest.approx(0.5 / (2 * math.log(2) + 1))
    s = SmoothnessParams(1, 1)
    assert robustness_bound(0.5, 2, 3, s, kind="submodular") == pytest.approx(
        0.5 / (2 * math.log1p(12) + 1))


# -- estimator ---------------------------------------------------------------------------

def test_solver_estimator_api():
    est = OnlinePackingSolver(eta=0.5, step=1e-3)
    params = est.get_params()
    assert params["eta"] == 0.5 and params["after_failure"] == "scaled"
    assert clone(est).get_params() == params
    with pytest.raises(NotFittedError):
        est.score()
    inst, bits, _ = SUITE[0]
    est.fit(inst, bits)
    assert est.score() == est.objective_
    np.testing.assert_array_equal(est.x_, run_online_packing(inst, bits, eta=0.5, step=1e-3).x)


def test_solver_sampled_estimator():
    inst, bits, _ = SUITE[2]
    a = OnlinePackingSolver(eta=0.5, samples=500, seed=1).fit(inst, bits)
    b = OnlinePackingSolver(eta=0.5, samples=500, seed=1).fit(inst, bits)
    np.testing.assert_array_equal(a.x_, b.x_)


# -- what the robustness argument actually certifies -----------------------------------------------

def column_sparsity(inst):
    return int((inst.columns > 0).sum(axis=1).max(initial=0))


@pytest.mark.parametrize("idx", range(len(SUITE)))
def test_rate_accounting(idx):
    # F(y) pays for the dual growth at rate 1/(2 ln(1 + d rho_bar) + mu) when no element
    # touches more than d resources
    inst, bits, eta = SUITE[idx]
    if column_sparsity(inst) > inst.d:
        pytest.skip("element touches more than d resources")
    res = run_online_packing(inst, bits, eta=eta)
    rate = 1.0 / (2 * math.log(1 + inst.d * res.state.rho_bar) + 1.0)
    growth = res.dual.alpha.sum() + res.dual.gamma
    assert evaluate_F(inst.oracle, res.state.y) >= rate * growth - 1e-9


@pytest.mark.parametrize("idx", range(len(SUITE)))
def test_robustness_against_scaled_optimum(idx):
    inst, bits, eta = SUITE[idx]
    res = run_online_packing(inst, bits, eta=eta)
    opt = packing_opt_frac(PackingInstance(res.state.b_bar, inst.oracle))
    if opt <= 0:
        pytest.skip("empty optimum")
    kind = "linear" if isinstance(inst.oracle, LinearOracle) else "submodular"
    bound = robustness_bound(eta, inst.d, inst.rho, SmoothnessParams(1, 1), kind)
    assert res.objective / opt >= bound - 1e-9


def test_robustness_against_original_optimum_can_fail():
    # a wrong "skip" prediction inflates the column 20-fold, so OPT of the original
    # instance is out of reach while the scaled optimum is not
    inst = PackingInstance([[0.6]], LinearOracle([1.0]))
    res = run_online_packing(inst, np.array([0]), eta=0.05)
    bound = robustness_bound(0.05, inst.d, inst.rho, SmoothnessParams(1, 1), "linear")
    assert res.state.b_bar[0, 0] == pytest.approx(12.0)
    assert res.objective / packing_opt_frac(inst) < bound
    scaled = packing_opt_frac(PackingInstance(res.state.b_bar, inst.oracle))
    assert res.objective / scaled >= bound
