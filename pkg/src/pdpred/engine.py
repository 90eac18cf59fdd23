"""Online primal-dual packing with predictions.

Elements of a packing instance arrive one at a time.  For each element the
engine scales its requirement column according to the prediction, grows the
internal iterate ``y_e`` together with the resource duals ``alpha`` until the
dual constraint of ``e`` becomes tight, and then fixes the output ``x_e``
irrevocably.

The growth is the continuous process

    dy_e/dtau    = 1 / (g * ln(1 + d * rho_bar))
    dalpha_i/dtau = bbar_ie * alpha_i / g + 1 / (d * lam)     (bbar_ie > 0)

run until ``sum_i bbar_ie * alpha_i > g / lam``, where ``g`` is the gradient of
the multilinear extension along ``e`` at arrival.  ``g`` does not change
during the loop (F is affine in y_e), so the process is a linear ODE with
constant coefficients.  Two integrators are offered:

``exact``
    the analytic solution, with the exit time located by bisection;
``euler``
    fixed steps that advance y_e by ``step`` each, with the alpha update
    taken implicitly (backward Euler).  The implicit update never
    undershoots the analytic alpha, so the alpha lower bound checked by
    ``verify_lemma1`` is preserved at every discrete step.  The discrete
    recursion is solved in closed form, so the step count does not affect
    runtime.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_column, check_eta, check_positive
from .objective import (
    EvalMode,
    LinearOracle,
    SmoothnessParams,
    _mask_bits,
    _subset_probabilities,
    evaluate_F,
    gradient_F,
    gradient_vector,
    subset_values,
    MAX_EXHAUSTIVE_SETS_N,
)

__all__ = [
    "PackingInstance",
    "PredictionStream",
    "EngineState",
    "DualCertificate",
    "Snapshot",
    "Trace",
    "PackingResult",
    "OnlinePackingSolver",
    "sparsity_and_divergence",
    "scaled_column",
    "grow_element",
    "finalize_element",
    "run_online_packing",
    "verify_lemma1",
    "lemma1_violations",
    "verify_feasibility",
    "verify_dual",
    "verify_trace",
    "robustness_bound",
]

CAPACITY_SLACK = 1e-12
MAX_STEPS = 10_000_000
BISECTION_ITERS = 60


def sparsity_and_divergence(columns):
    """Row sparsity d and divergence rho of an (n, m) requirement array.

    d is the largest number of positive entries in a resource row; rho is the
    largest ratio between two positive entries of the same row (1 for rows
    with at most one positive entry, and for an empty instance).
    """
    B = np.asarray(columns, dtype=float)
    if B.size == 0:
        return 1, 1.0
    pos = B > 0
    d = int(pos.sum(axis=0).max(initial=0))
    rho = 1.0
    for i in range(B.shape[1]):
        vals = B[pos[:, i], i]
        if vals.size:
            rho = max(rho, float(vals.max() / vals.min()))
    return max(d, 1), rho


class PackingInstance:
    """Unit-capacity packing instance streamed in element order.

    Parameters
    ----------
    columns : array-like of shape (n, m)
        ``columns[e, i]`` is the requirement of element ``e`` on resource ``i``.
    oracle : SetFunctionOracle
        Objective over the ``n`` elements.
    d, rho : optional
        Row-sparsity and divergence bounds handed to the online algorithm.
        Computed from the full instance when omitted; when given they must
        dominate the realized values.
    """

    def __init__(self, columns, oracle, d=None, rho=None, m=None):
        B = np.asarray(columns, dtype=float)
        if B.size == 0:
            B = B.reshape(0, int(m or 0))
        if B.ndim != 2:
            raise ValueError("columns must be a 2-D array of shape (n, m)")
        if m is not None and B.shape[1] != m:
            raise ValueError(f"columns have {B.shape[1]} resources, expected m={m}")
        if not np.all(np.isfinite(B)) or np.any(B < 0):
            raise ValueError("requirements must be finite and non-negative")
        if oracle.n != B.shape[0]:
            raise ValueError(f"oracle covers {oracle.n} elements but instance has {B.shape[0]}")
        self.columns = B
        self.oracle = oracle
        real_d, real_rho = sparsity_and_divergence(B)
        self.d = real_d if d is None else int(d)
        self.rho = real_rho if rho is None else float(rho)
        if self.d < real_d:
            raise ValueError(f"row sparsity bound d={self.d} below realized {real_d}")
        if self.rho < real_rho * (1 - 1e-12):
            raise ValueError(f"divergence bound rho={self.rho} below realized {real_rho}")

    @property
    def m(self):
        return self.columns.shape[1]

    @property
    def n(self):
        return self.columns.shape[0]

    def __iter__(self):
        for e in range(self.n):
            yield e, self.columns[e]


class PredictionStream:
    """0/1 predictions with an online budget monitor.

    ``observe`` must be called once per element in stream order.  The stream
    becomes infeasible at the first predicted element that pushes some
    resource load above ``1 + 1e-12`` and stays infeasible.
    """

    def __init__(self, bits, m):
        bits = np.asarray(bits).astype(int)
        if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("predictions must be a 1-D array of 0/1 values")
        self.bits = bits
        self.loads = np.zeros(int(m))
        self.infeasible_at = None
        self._seen = 0

    @classmethod
    def none(cls, n, m):
        return cls(np.zeros(n, dtype=int), m)

    @property
    def feasible(self):
        return self.infeasible_at is None

    def observe(self, e, column):
        if e != self._seen:
            raise ValueError(f"predictions observed out of order: got {e}, expected {self._seen}")
        self._seen += 1
        if self.bits[e] == 1:
            self.loads = self.loads + column
            if self.infeasible_at is None and np.any(self.loads > 1.0 + CAPACITY_SLACK):
                self.infeasible_at = e
        return self.feasible

    def value(self, instance, mode=EvalMode()):
        """Prediction value P(I): f of the predicted set if feasible, else 0."""
        loads = self.bits @ instance.columns if instance.n else np.zeros(instance.m)
        if np.any(loads > 1.0 + CAPACITY_SLACK):
            return 0.0
        return evaluate_F(instance.oracle, self.bits.astype(float), mode)


@dataclass
class Snapshot:
    element: int
    y_e: float
    grad: float
    alpha: np.ndarray


@dataclass
class Trace:
    """Everything the verifiers need to replay a run."""

    m: int
    d: int
    rho_bar: float
    lam: float
    mu: float
    eta: float
    columns: dict = field(default_factory=dict)
    scaled: dict = field(default_factory=dict)
    preds: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    finals: list = field(default_factory=list)


@dataclass
class EngineState:
    y: np.ndarray
    x: np.ndarray
    alpha: np.ndarray
    b_bar: np.ndarray
    eta: float
    smooth: SmoothnessParams
    d: int
    rho_bar: float
    step: float
    trace: Trace
    grads: np.ndarray
    released: int = 0
    finalized: np.ndarray = None
    capped: set = field(default_factory=set)
    saturated: set = field(default_factory=set)
    steps_taken: np.ndarray = None
    running_rho_bar: float = 1.0

    @classmethod
    def initial(cls, instance, eta, smooth=SmoothnessParams(), step=1e-4, rho_bar=None):
        eta = check_eta(eta)
        n, m = instance.n, instance.m
        rho_bar = instance.rho / eta if rho_bar is None else float(rho_bar)
        trace = Trace(m=m, d=instance.d, rho_bar=rho_bar, lam=smooth.lam, mu=smooth.mu, eta=eta)
        return cls(
            y=np.zeros(n), x=np.zeros(n), alpha=np.zeros(m), b_bar=np.zeros((n, m)),
            eta=eta, smooth=smooth, d=instance.d, rho_bar=rho_bar,
            step=check_positive(step, "step"), trace=trace, grads=np.zeros(n),
            finalized=np.zeros(n, dtype=bool), steps_taken=np.zeros(n, dtype=np.int64),
        )

    @property
    def log_rate(self):
        return math.log1p(self.d * self.rho_bar)

    def load(self):
        """Scaled loads sum_e bbar_ie * y_e per resource."""
        return self.y @ self.b_bar


@dataclass
class DualCertificate:
    """Dual solution (alpha, beta, gamma) plus box multipliers for capped elements."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: float
    x: np.ndarray
    box: np.ndarray

    @property
    def objective(self):
        return float(self.alpha.sum() + self.gamma + self.box.sum())

    def z(self, S):
        """Probability of configuration S under independent rounding of x."""
        inside = np.zeros(self.x.shape[0], dtype=bool)
        inside[list(S)] = True
        return float(np.prod(np.where(inside, self.x, 1.0 - self.x)))


@dataclass
class PackingResult:
    x: np.ndarray
    y: np.ndarray
    dual: DualCertificate
    trace: Trace
    objective: float
    state: EngineState
    prediction_infeasible_at: int = None


def scaled_column(b_col, pred_bit, pred_feasible_so_far, eta, after_failure="scaled"):
    """Requirement column, inflated by 1/eta unless the prediction vouches for it.

    A predicted element keeps its original column while the prediction is
    feasible.  Once the prediction has failed, ``after_failure="scaled"``
    inflates every later column (which keeps x feasible), while
    ``"original"`` keeps every later column unscaled.
    """
    eta = check_eta(eta)
    b_col = np.asarray(b_col, dtype=float)
    if np.any(b_col < 0):
        raise ValueError("requirement entries must be non-negative")
    if after_failure not in ("scaled", "original"):
        raise ValueError(f"unknown after_failure policy {after_failure!r}")
    if pred_feasible_so_far:
        return b_col.copy() if pred_bit == 1 else b_col / eta
    return b_col / eta if after_failure == "scaled" else b_col.copy()


def _release(state, e, b_col, bbar_col):
    state.b_bar[e] = bbar_col
    state.released = e + 1
    B = state.b_bar[: e + 1]
    pos = B > 0
    rho = 1.0
    for i in np.flatnonzero(pos.any(axis=0)):
        vals = B[pos[:, i], i]
        rho = max(rho, float(vals.max() / vals.min()))
    state.running_rho_bar = rho
    state.trace.columns[e] = np.asarray(b_col, dtype=float).copy()
    state.trace.scaled[e] = bbar_col.copy()


def _snapshot(state, e, y_e, grad, alpha):
    state.trace.snapshots.append(Snapshot(e, float(y_e), float(grad), np.array(alpha, dtype=float)))


def _exact_alpha(alpha0, k, c, tau):
    out = alpha0.copy()
    act = k > 0
    ck = c / k[act]
    out[act] = (alpha0[act] + ck) * np.exp(k[act] * tau) - ck
    return out


def _euler_alpha(alpha0, k, c, delta, j):
    """alpha after j implicit steps of length delta (closed-form recursion)."""
    out = alpha0.copy()
    act = k > 0
    ck = c / k[act]
    growth = np.exp(-j * np.log1p(-delta * k[act]))
    out[act] = (alpha0[act] + ck) * growth - ck
    return out


def _euler_partial(alpha0, k, c, delta):
    out = alpha0.copy()
    act = k > 0
    out[act] = (alpha0[act] + delta * c) / (1.0 - delta * k[act])
    return out


def _bisect_exit(fn, lo, hi, threshold, iters):
    """Smallest-ish t in (lo, hi] with fn(t) > threshold; returns the upper end."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) > threshold:
            hi = mid
        else:
            lo = mid
    return hi


def grow_element(state, e, grad, method="euler", snapshots=4, guard=True):
    """Run the primal-dual growth loop of element ``e`` in place.

    ``grad`` is the gradient of F along ``e`` at arrival.  Growth stops at
    the dual exit condition, at y_e = 1, or (with ``guard``) when a scaled
    resource load reaches 1; in the last case the saturated resource's dual
    is raised until the exit condition holds.  Returns ``state``.
    """
    if not np.isfinite(grad):
        raise ValueError(f"non-finite gradient {grad} for element {e}")
    state.grads[e] = grad
    lam = state.smooth.lam
    col = state.b_bar[e]
    alpha0 = state.alpha.copy()
    y0 = state.y[e]
    if grad <= 0 or col @ alpha0 > grad / lam:
        _snapshot(state, e, y0, grad, alpha0)
        return state

    L = state.log_rate
    c = 1.0 / (state.d * lam)
    k = col / grad
    threshold = grad / lam
    y_cap, saturating = 1.0, None
    if guard:
        touched = np.flatnonzero(col > 0)
        if touched.size:
            room = (1.0 - (state.load() - col * y0)[touched]) / col[touched]
            j = int(np.argmin(room))
            if room[j] < y_cap:
                y_cap, saturating = max(float(room[j]), y0), int(touched[j])

    def load(a):
        return float(col @ a)

    points = []
    exited = True
    if method == "exact":
        tau_cap = (y_cap - y0) * grad * L
        if not np.any(k > 0) or load(_exact_alpha(alpha0, k, c, tau_cap)) <= threshold:
            tau = tau_cap
            exited = False
        else:
            tau = _bisect_exit(lambda t: load(_exact_alpha(alpha0, k, c, t)), 0.0, tau_cap,
                               threshold, 200)
        for t in np.linspace(0.0, tau, snapshots + 2)[:-1]:
            points.append((y0 + t / (grad * L), _exact_alpha(alpha0, k, c, t)))
        alpha = _exact_alpha(alpha0, k, c, tau)
        y_e = y_cap if not exited else min(y_cap, y0 + tau / (grad * L))
    elif method == "euler":
        dy = state.step
        kmax = float(k.max(initial=0.0))
        if kmax > 0 and dy * grad * L * kmax > 0.5:
            dy = 0.5 / (grad * L * kmax)
        delta = dy * grad * L
        span = y_cap - y0
        full = int(math.floor(span / dy * (1 + 1e-12)))
        rest = span - full * dy

        def at(j):
            return _euler_alpha(alpha0, k, c, delta, j)

        limit = min(full, MAX_STEPS)
        if limit >= 1 and load(at(limit)) > threshold:
            lo, hi = 0, limit
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if load(at(mid)) > threshold:
                    hi = mid
                else:
                    lo = mid
            base = at(lo)
            frac = _bisect_exit(lambda t: load(_euler_partial(base, k, c, t)), 0.0, delta,
                                threshold, BISECTION_ITERS)
            alpha = _euler_partial(base, k, c, frac)
            y_e = y0 + lo * dy + frac / (grad * L)
            steps = hi
        else:
            if full > MAX_STEPS and np.any(k > 0):
                raise RuntimeError(f"element {e}: exit not reached within {MAX_STEPS} steps")
            lo = full
            base = at(full)
            steps = full + (1 if rest > 0 else 0)
            partial = max(rest, 0.0) * grad * L
            if partial > 0 and load(_euler_partial(base, k, c, partial)) > threshold:
                frac = _bisect_exit(lambda t: load(_euler_partial(base, k, c, t)), 0.0,
                                    partial, threshold, BISECTION_ITERS)
                alpha = _euler_partial(base, k, c, frac)
                y_e = y0 + full * dy + frac / (grad * L)
            else:
                alpha = _euler_partial(base, k, c, partial) if partial > 0 else base
                y_e = y_cap
                exited = False
        state.steps_taken[e] = steps
        for j in np.unique(np.linspace(0, lo, snapshots + 1).astype(np.int64)):
            points.append((y0 + j * dy, at(int(j))))
        y_e = min(y_cap, y_e)
    else:
        raise ValueError(f"unknown integration method {method!r}")

    for y_s, a_s in points:
        _snapshot(state, e, min(y_cap, y_s), grad, a_s)
    alpha = np.maximum(alpha, alpha0)
    if not exited:
        if saturating is not None and y_cap < 1.0:
            short = threshold - load(alpha)
            if short > 0:
                alpha[saturating] += short / col[saturating] * (1 + 1e-12)
            state.saturated.add(e)
        else:
            state.capped.add(e)
    state.alpha = alpha
    state.y[e] = y_e
    _snapshot(state, e, y_e, grad, state.alpha)
    return state


def finalize_element(state, e, pred_bit, pred_feasible):
    """Fix x_e: the scaled prediction while it is feasible, the scaled iterate otherwise."""
    if state.finalized[e]:
        raise RuntimeError(f"element {e} already finalized")
    if pred_bit == 1 and pred_feasible:
        state.x[e] = 1.0 / (1.0 + state.eta)
    else:
        state.x[e] = state.y[e] / (1.0 + state.eta)
    state.finalized[e] = True
    state.trace.finals.append((e, float(state.y[e]), float(state.x[e])))
    return state


def _choose_method(method, oracle):
    if method == "auto":
        return "exact" if isinstance(oracle, LinearOracle) else "euler"
    return method


def run_online_packing(instance, predictions=None, eta=1.0, smooth=SmoothnessParams(),
                       mode=EvalMode(), step=1e-4, method="auto", divergence="bound",
                       after_failure="scaled", guard=True, snapshots=4):
    """Process the instance online and return a :class:`PackingResult`.

    ``divergence="bound"`` runs with the a-priori bound rho/eta in the growth
    rate; ``"running"`` uses the divergence of the scaled columns seen so far.
    """
    eta = check_eta(eta)
    if predictions is None:
        predictions = PredictionStream.none(instance.n, instance.m)
    elif not isinstance(predictions, PredictionStream):
        predictions = PredictionStream(predictions, instance.m)
    else:
        predictions = PredictionStream(predictions.bits, instance.m)
    if predictions.bits.shape[0] != instance.n:
        raise ValueError("one prediction bit per element is required")
    if divergence not in ("bound", "running"):
        raise ValueError(f"unknown divergence policy {divergence!r}")
    method = _choose_method(method, instance.oracle)
    state = EngineState.initial(instance, eta, smooth, step)
    oracle = instance.oracle

    for e, b_col in instance:
        b_col = check_column(b_col, instance.m)
        bit = int(predictions.bits[e])
        predictions.observe(e, b_col)
        bbar_col = scaled_column(b_col, bit, predictions.feasible, eta, after_failure)
        _release(state, e, b_col, bbar_col)
        state.trace.preds[e] = bit
        if divergence == "running":
            state.rho_bar = state.running_rho_bar
        grad = gradient_F(oracle, state.y, e, mode.reseeded(e), released=e + 1)
        grow_element(state, e, grad, method, snapshots, guard)
        finalize_element(state, e, bit, predictions.feasible)

    dual = _certificate(state, oracle, mode)
    objective = evaluate_F(oracle, state.x, mode.reseeded(instance.n + 1))
    return PackingResult(x=state.x.copy(), y=state.y.copy(), dual=dual, trace=state.trace,
                         objective=objective, state=state,
                         prediction_infeasible_at=predictions.infeasible_at)


def _certificate(state, oracle, mode):
    lam, mu = state.smooth.lam, state.smooth.mu
    n = state.y.shape[0]
    if n:
        grad = gradient_vector(oracle, state.y, mode)
        grad[state.released:] = 0.0
        F_y = evaluate_F(oracle, state.y, mode)
    else:
        grad = np.zeros(0)
        F_y = 0.0
    beta = grad / lam
    cover = (state.b_bar * state.alpha).sum(axis=1) if n else np.zeros(0)
    box = np.zeros(n)
    for e in state.capped:
        box[e] = max(0.0, beta[e] - cover[e])
    return DualCertificate(alpha=state.alpha.copy(), beta=beta, gamma=mu / lam * F_y,
                           x=state.x.copy(), box=box)


def lemma1_violations(trace, d=None, rho_bar=None, lam=None, rel_tol=1e-6, form="literal"):
    """Replay ``trace`` and list snapshots that break the alpha lower bound.

    With ``form="literal"`` the bound for resource i is

        g / (max_e' bbar_ie' * d * lam) * (exp(ln(1 + d rho_bar) * load_i) - 1)

    with g the gradient of the element currently being grown.  This form can
    fail at the arrival of an element whose gradient exceeds earlier ones.
    ``form="normalized"`` replaces g / max_e' bbar_ie' by the smallest ratio
    g_e' / bbar_ie' over the released elements of row i, which the growth
    process maintains for arbitrary gradients.  Every snapshot is also
    checked for non-negative, non-decreasing alpha.
    """
    if form not in ("literal", "normalized"):
        raise ValueError(f"unknown form {form!r}")
    d = trace.d if d is None else d
    rho_bar = trace.rho_bar if rho_bar is None else rho_bar
    lam = trace.lam if lam is None else lam
    L = math.log1p(d * rho_bar)
    m = trace.m
    y = {}
    cols = {}
    col_max = np.zeros(m)
    ratio_min = np.full(m, np.inf)
    prev_alpha = np.zeros(m)
    bad = []
    for snap in trace.snapshots:
        e = snap.element
        if e not in cols:
            col = np.asarray(trace.scaled[e], dtype=float)
            cols[e] = col
            col_max = np.maximum(col_max, col)
            if snap.grad > 0:
                pos = col > 0
                ratio_min[pos] = np.minimum(ratio_min[pos], snap.grad / col[pos])
        y[e] = snap.y_e
        load = np.zeros(m)
        for e2, col in cols.items():
            load += col * y[e2]
        alpha = np.asarray(snap.alpha, dtype=float)
        if np.any(alpha < 0) or np.any(alpha < prev_alpha - 1e-12 * np.maximum(1.0, prev_alpha)):
            bad.append({"element": e, "kind": "alpha_monotone"})
        prev_alpha = alpha
        if snap.grad <= 0:
            continue
        if form == "literal":
            with np.errstate(divide="ignore"):
                scale = np.where(col_max > 0, snap.grad / col_max, 0.0)
        else:
            scale = np.where(np.isfinite(ratio_min), ratio_min, 0.0)
        rhs = scale / (d * lam) * np.expm1(L * load)
        for i in np.flatnonzero(alpha < rhs * (1.0 - rel_tol) - 1e-12):
            bad.append({"element": e, "resource": int(i), "kind": "alpha_bound",
                        "alpha": float(alpha[i]), "bound": float(rhs[i]), "y_e": snap.y_e})
    return bad


def verify_lemma1(trace, d=None, rho_bar=None, lam=None, rel_tol=1e-6, form="literal"):
    """True iff every snapshot satisfies the alpha lower bound."""
    return not lemma1_violations(trace, d, rho_bar, lam, rel_tol, form)


@dataclass
class Report:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def verify_feasibility(x, y, instance, b_bar, tol=1e-9):
    """Scaled loads of y and original loads of x must stay within capacity 1.

    For n <= 12 the configuration distribution z_S = prod x_e prod (1 - x_e)
    is also checked to be a distribution with marginals x.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    report = Report()
    if np.any(x < -tol) or np.any(x > 1 + tol) or np.any(y < -tol) or np.any(y > 1 + tol):
        report.violations.append({"kind": "box"})
    scaled_load = y @ np.asarray(b_bar, dtype=float) if y.size else np.zeros(instance.m)
    load = x @ instance.columns if x.size else np.zeros(instance.m)
    for i in range(instance.m):
        if scaled_load[i] > 1 + tol:
            report.violations.append({"kind": "scaled_load", "resource": i, "load": float(scaled_load[i])})
        if load[i] > 1 + tol:
            report.violations.append({"kind": "load", "resource": i, "load": float(load[i])})
    n = x.shape[0]
    if n <= MAX_EXHAUSTIVE_SETS_N:
        z = _subset_probabilities(x)
        if abs(z.sum() - 1.0) > tol:
            report.violations.append({"kind": "z_total", "value": float(z.sum())})
        if n:
            marg = z @ _mask_bits(n)
            for e in np.flatnonzero(np.abs(marg - x) > tol):
                report.violations.append({"kind": "z_marginal", "element": int(e)})
    return report


def verify_dual(dual, oracle, b_bar, lam, mu, tol=1e-9):
    """Check both dual constraint families of the configuration program.

    The configuration family (gamma + sum_{e in S} beta_e >= f(S)) is
    enumerated only when n <= 12.
    """
    report = Report()
    b_bar = np.asarray(b_bar, dtype=float)
    n = dual.beta.shape[0]
    if np.any(dual.alpha < -tol):
        report.violations.append({"kind": "alpha_negative"})
    cover = (b_bar * dual.alpha).sum(axis=1) + dual.box if n else np.zeros(0)
    for e in np.flatnonzero(cover < dual.beta - tol * np.maximum(1.0, np.abs(dual.beta))):
        report.violations.append({"kind": "element", "element": int(e),
                                  "cover": float(cover[e]), "beta": float(dual.beta[e])})
    if n <= MAX_EXHAUSTIVE_SETS_N:
        table = subset_values(oracle)
        lhs = dual.gamma + _mask_bits(n) @ dual.beta
        gap = table - lhs
        for S in np.flatnonzero(gap > tol * np.maximum(1.0, np.abs(table))):
            report.violations.append({"kind": "configuration", "set": int(S), "gap": float(gap[S])})
    return report


def verify_trace(trace, form="normalized", rel_tol=1e-6, tol=1e-9):
    """Replay a recorded run without the instance and list every violation.

    Checks the alpha lower bound (see :func:`lemma1_violations`), that every
    scaled column is the original or the original divided by eta, the
    scaled and original loads, that each element is finalized once with
    x_e matching its y_e and the replayed prediction monitor, and that the
    final y_e equals the last recorded growth value.
    """
    bad = [dict(v) for v in lemma1_violations(trace, rel_tol=rel_tol, form=form)]
    eta = trace.eta
    for e, col in trace.columns.items():
        bbar = trace.scaled.get(e)
        if bbar is None or bbar.shape != col.shape:
            bad.append({"kind": "column", "element": e})
        elif not (np.allclose(bbar, col, rtol=1e-12, atol=0)
                  or np.allclose(bbar, col / eta, rtol=1e-12, atol=0)):
            bad.append({"kind": "column", "element": e})
    last_y = {}
    for snap in trace.snapshots:
        last_y[snap.element] = snap.y_e
    seen = set()
    pred_load = np.zeros(trace.m)
    feasible = True
    y_load = np.zeros(trace.m)
    x_load = np.zeros(trace.m)
    for e, y_e, x_e in trace.finals:
        if e in seen:
            bad.append({"kind": "refinalized", "element": e})
            continue
        seen.add(e)
        col = trace.columns.get(e, np.zeros(trace.m))
        bit = trace.preds.get(e, 0)
        if bit == 1:
            pred_load = pred_load + col
            feasible = feasible and not np.any(pred_load > 1.0 + CAPACITY_SLACK)
        want = 1.0 / (1.0 + eta) if (bit == 1 and feasible) else y_e / (1.0 + eta)
        if abs(x_e - want) > tol or not (-tol <= y_e <= 1 + tol):
            bad.append({"kind": "finalize", "element": e, "x": x_e, "expected": want})
        if e in last_y and abs(last_y[e] - y_e) > tol:
            bad.append({"kind": "final_y", "element": e, "y": y_e, "grown": last_y[e]})
        y_load += trace.scaled.get(e, np.zeros(trace.m)) * y_e
        x_load += col * x_e
        for i in np.flatnonzero(y_load > 1 + tol):
            bad.append({"kind": "scaled_load", "element": e, "resource": int(i),
                        "load": float(y_load[i])})
        for i in np.flatnonzero(x_load > 1 + tol):
            bad.append({"kind": "load", "element": e, "resource": int(i), "load": float(x_load[i])})
    for e in set(trace.columns) - seen:
        bad.append({"kind": "unfinalized", "element": e})
    return bad


def robustness_bound(eta, d, rho, smooth=SmoothnessParams(), kind="linear"):
    """Guaranteed fraction of the fractional optimum: r(eta) * lam / (2 ln(1 + d rho / eta) + mu)."""
    r = 1.0 / (1.0 + eta) if kind == "linear" else 1.0 - eta
    return r * smooth.lam / (2.0 * math.log1p(d * rho / eta) + smooth.mu)


class OnlinePackingSolver(BaseEstimator):
    """Estimator wrapper around :func:`run_online_packing`.

    Parameters
    ----------
    eta : float, default=1.0
        Confidence in (0, 1]; smaller trusts the prediction more.
    lam, mu : float
        Local-smoothness parameters of the objective.
    step : float, default=1e-4
        Increment of y_e per integration step (``euler`` method).
    method : {"auto", "exact", "euler"}
    divergence : {"bound", "running"}
    samples : int or None
        Monte-Carlo samples for gradients; ``None`` evaluates exactly.
    seed : int
    after_failure : {"scaled", "original"}
        Column scaling once the prediction has become infeasible.
    guard : bool, default=True
        Stop growth at a saturated scaled load.
    """

    def __init__(self, eta=1.0, lam=1.0, mu=1.0, step=1e-4, method="auto",
                 divergence="bound", samples=None, seed=0, snapshots=4,
                 after_failure="scaled", guard=True):
        self.eta = eta
        self.lam = lam
        self.mu = mu
        self.step = step
        self.method = method
        self.divergence = divergence
        self.samples = samples
        self.seed = seed
        self.snapshots = snapshots
        self.after_failure = after_failure
        self.guard = guard

    def fit(self, instance, predictions=None):
        mode = EvalMode.exact() if self.samples is None else EvalMode.sampled(self.samples, self.seed)
        res = run_online_packing(instance, predictions, eta=self.eta,
                                 smooth=SmoothnessParams(self.lam, self.mu), mode=mode,
                                 step=self.step, method=self.method,
                                 divergence=self.divergence, after_failure=self.after_failure,
                                 guard=self.guard, snapshots=self.snapshots)
        self.result_ = res
        self.x_ = res.x
        self.y_ = res.y
        self.alpha_ = res.dual.alpha
        self.dual_ = res.dual
        self.trace_ = res.trace
        self.objective_ = res.objective
        self.prediction_infeasible_at_ = res.prediction_infeasible_at
        return self

    def score(self, instance=None, predictions=None):
        check_is_fitted(self, "objective_")
        return self.objective_
