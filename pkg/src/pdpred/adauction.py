"""Fractional ad-auction allocation with predicted assignments.

Buyers are numbered ``1..m``; buyer ``0`` is a fictitious sink that bids 0
on every item and absorbs unallocated mass.  Bids are kept as a dense
``(n, m + 1)`` array whose column 0 is identically zero.
"""

from dataclasses import dataclass, field
import math
import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_eta

__all__ = [
    "AdAuctionInstance",
    "AuctionState",
    "AuctionResult",
    "AuctionCertificate",
    "AdAuctionAllocator",
    "constant_C",
    "select_buyer",
    "allocate_item",
    "verify_lemma4",
    "lemma4_violations",
    "verify_budgets",
    "verify_auction_dual",
    "step_ratio_violations",
    "run_ad_auction",
    "prediction_value",
    "robustness_guarantee",
]

BUDGET_SLACK = 1e-12


class AdAuctionInstance:
    """Buyers with budgets and a stream of items carrying sparse bids.

    Parameters
    ----------
    budgets : array-like of shape (m,)
        Budget of buyers ``1..m``.
    bids : array-like of shape (n, m) or list of dicts
        Either a dense matrix (column ``j`` is buyer ``j + 1``) or one
        ``{buyer: bid}`` mapping per item.
    strict : bool, default=True
        Require every bid to be at most its buyer's budget.  Buyers without
        bids may have budget 0.
    """

    def __init__(self, budgets, bids, strict=True):
        budgets = np.asarray(budgets, dtype=float).reshape(-1)
        m = budgets.shape[0]
        if not np.all(np.isfinite(budgets)) or np.any(budgets < 0):
            raise ValueError("budgets must be finite and non-negative")
        if isinstance(bids, np.ndarray) or (len(bids) and not isinstance(bids[0], dict)):
            dense = np.asarray(bids, dtype=float)
            if dense.size == 0:
                dense = dense.reshape(0, m)
            if dense.ndim != 2 or dense.shape[1] != m:
                raise ValueError(f"bid matrix has shape {dense.shape}, expected (n, {m})")
        else:
            dense = np.zeros((len(bids), m))
            for e, row in enumerate(bids):
                for i, b in row.items():
                    if not isinstance(i, numbers.Integral) or not (1 <= i <= m):
                        raise ValueError(f"item {e}: buyer id {i!r} outside 1..{m}")
                    dense[e, i - 1] = float(b)
        if not np.all(np.isfinite(dense)) or np.any(dense < 0):
            raise ValueError("bids must be finite and non-negative")
        self.budgets = np.concatenate([[0.0], budgets])
        self.bids = np.hstack([np.zeros((dense.shape[0], 1)), dense])
        if strict:
            over = self.bids[:, 1:] > self.budgets[1:] * (1 + BUDGET_SLACK)
            if np.any(over):
                e, j = np.argwhere(over)[0]
                raise ValueError(f"item {e}: bid {self.bids[e, j + 1]} of buyer {j + 1} "
                                 f"exceeds budget {self.budgets[j + 1]}")
        self.strict = strict

    @property
    def m(self):
        return self.budgets.shape[0] - 1

    @property
    def n(self):
        return self.bids.shape[0]

    @property
    def r_max(self):
        """Largest bid-to-budget ratio (0 when there is no positive bid)."""
        b = self.bids[:, 1:]
        B = self.budgets[1:]
        pos = (b > 0) & (B > 0)
        if not pos.any():
            return 0.0
        return float((b / np.where(B > 0, B, 1.0))[pos].max())

    def item_bids(self, e):
        row = self.bids[e]
        return {int(i): float(row[i]) for i in np.flatnonzero(row > 0)}

    def bidders(self, e):
        return np.flatnonzero(self.bids[e] > 0)

    def scaled(self, factor):
        """Copy with bids and budgets multiplied by ``factor``."""
        return AdAuctionInstance(self.budgets[1:] * factor, self.bids[:, 1:] * factor, self.strict)


def constant_C(r_max, eta):
    """(1 + r_max) ** (eta / r_max)."""
    eta = check_eta(eta)
    r_max = float(r_max)
    if not (r_max > 0) or not np.isfinite(r_max):
        raise ValueError(f"R_max must be positive, got {r_max}")
    return math.exp(eta / r_max * math.log1p(r_max))


def robustness_guarantee(r_max, eta):
    """(1 - 1/C) / (1 + r_max)."""
    C = constant_C(r_max, eta)
    return (1.0 - 1.0 / C) / (1.0 + r_max)


def _dense_row(bids, m):
    if isinstance(bids, dict):
        row = np.zeros(m + 1)
        for i, b in bids.items():
            row[i] = b
        return row
    return np.asarray(bids, dtype=float)


def select_buyer(bids, alpha):
    """Buyer maximizing b_i * (1 - alpha_i); lowest id on ties, 0 if nothing is positive.

    ``bids`` is a ``{buyer: bid}`` mapping or a dense row indexed by buyer
    (entry 0 is the fictitious buyer); ``alpha`` is indexed the same way.
    """
    alpha = np.asarray(alpha, dtype=float)
    row = _dense_row(bids, alpha.shape[0] - 1)
    value = row[1:] * (1.0 - alpha[1:])
    if value.size == 0:
        return 0
    j = int(np.argmax(value))
    return j + 1 if value[j] > 0 else 0


@dataclass
class AuctionState:
    budgets: np.ndarray
    eta: float
    C: float
    r_max: float
    alpha: np.ndarray
    x: np.ndarray
    b_bar: np.ndarray
    beta: np.ndarray
    spent: np.ndarray
    M: list
    N: list
    m_spend: np.ndarray
    pred_spend: np.ndarray
    revenue: float = 0.0
    pred_feasible: bool = True
    infeasible_at: int = None
    processed: int = 0
    selected: list = field(default_factory=list)
    selected_bid: list = field(default_factory=list)
    primal_steps: list = field(default_factory=list)
    dual_steps: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @classmethod
    def initial(cls, instance, eta):
        eta = check_eta(eta)
        m1 = instance.m + 1
        r_max = instance.r_max
        # with no positive bid the value of C never matters
        C = constant_C(r_max, eta) if r_max > 0 else math.e ** eta
        return cls(
            budgets=instance.budgets.copy(), eta=eta, C=C, r_max=r_max,
            alpha=np.zeros(m1), x=np.zeros((instance.n, m1)), b_bar=np.zeros((instance.n, m1)),
            beta=np.zeros(instance.n), spent=np.zeros(m1),
            M=[set() for _ in range(m1)], N=[set() for _ in range(m1)],
            m_spend=np.zeros(m1), pred_spend=np.zeros(m1),
        )


def allocate_item(state, e, bids, pred_buyer=None, use_prediction=True):
    """Allocate item ``e`` with dense bid row ``bids`` (entry 0 is buyer 0).

    ``pred_buyer`` is the predicted buyer or ``None``/0.  The prediction
    monitor adds the predicted spend of this item before deciding, so an
    item that breaks a budget is already treated as unpredicted.
    """
    bids = np.asarray(bids, dtype=float)
    pred = 0 if pred_buyer is None else int(pred_buyer)
    if pred and use_prediction:
        state.pred_spend[pred] += bids[pred]
        B = state.budgets[pred]
        if state.pred_feasible and state.pred_spend[pred] > B + BUDGET_SLACK * max(1.0, B):
            state.pred_feasible = False
            state.infeasible_at = e
    star = pred if (use_prediction and state.pred_feasible) else 0

    i = select_buyer(bids, state.alpha)
    state.beta[e] = max(0.0, bids[i] * (1.0 - state.alpha[i]))
    if bids[i] < bids[star]:
        state.x[e, i] = state.eta
        state.x[e, star] = 1.0 - state.eta
        state.b_bar[e, i] = bids[i] / state.eta
        state.N[star].add(e)
    else:
        state.x[e, i] = 1.0
        state.b_bar[e, i] = bids[i]
    state.M[i].add(e)
    gain = float(bids @ state.x[e])
    state.spent += bids * state.x[e]
    state.revenue += gain

    dual = state.beta[e]
    if i != 0:
        r = bids[i] / state.budgets[i]
        old = state.alpha[i]
        state.alpha[i] = old * (1.0 + r) + r / (state.C - 1.0)
        state.m_spend[i] += bids[i]
        dual += state.budgets[i] * (state.alpha[i] - old)
    state.selected.append(i)
    state.selected_bid.append(float(bids[i]))
    state.primal_steps.append(gain)
    state.dual_steps.append(float(dual))
    state.processed = e + 1
    return state


def _lemma4_rhs(state):
    B = np.where(state.budgets > 0, state.budgets, 1.0)
    expo = state.m_spend / (state.eta * B)
    rhs = np.expm1(expo * math.log(state.C)) / (state.C - 1.0)
    rhs[0] = 0.0
    return rhs


def lemma4_violations(state, rel_tol=1e-9):
    rhs = _lemma4_rhs(state)
    bad = np.flatnonzero(state.alpha < rhs * (1.0 - rel_tol) - 1e-300)
    return [{"kind": "alpha_bound", "buyer": int(i), "alpha": float(state.alpha[i]),
             "bound": float(rhs[i])} for i in bad]


def verify_lemma4(state, rel_tol=1e-9):
    """alpha_i >= (C ** (spend on M(i) / (eta B_i)) - 1) / (C - 1) for every buyer."""
    return not lemma4_violations(state, rel_tol)


@dataclass
class BudgetReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def verify_budgets(state, tol=1e-9):
    """Spend within B_i (1 + R_max) and at most one unit of mass per item."""
    report = BudgetReport()
    limit = state.budgets * (1.0 + state.r_max) + tol
    for i in np.flatnonzero(state.spent[1:] > limit[1:]) + 1:
        report.violations.append({"kind": "budget", "buyer": int(i), "spent": float(state.spent[i]),
                                  "limit": float(limit[i])})
    mass = state.x.sum(axis=1)
    for e in np.flatnonzero(mass > 1.0 + tol):
        report.violations.append({"kind": "item_mass", "item": int(e), "mass": float(mass[e])})
    if np.any(state.alpha[0] != 0.0):
        report.violations.append({"kind": "fictitious_dual"})
    return report


@dataclass
class AuctionCertificate:
    alpha: np.ndarray
    beta: np.ndarray
    budgets: np.ndarray

    @property
    def objective(self):
        return float(self.budgets[1:] @ self.alpha[1:] + self.beta.sum())


def verify_auction_dual(cert, instance, tol=1e-9):
    """b_ie * alpha_i + beta_e >= b_ie for every buyer and item."""
    if instance.n == 0:
        return []
    slack = instance.bids[:, 1:] * (1.0 - cert.alpha[1:]) - cert.beta[:, None]
    bad = np.argwhere(slack > tol * np.maximum(1.0, instance.bids[:, 1:]))
    return [{"kind": "auction_dual", "item": int(e), "buyer": int(j + 1)} for e, j in bad]


def step_ratio_violations(state, tol=1e-9):
    """Items where the primal gain falls short of (C - 1)/C times the dual increase,
    or the dual increase differs from C/(C - 1) * b_ie."""
    ratio = (state.C - 1.0) / state.C
    bad = []
    steps = zip(state.primal_steps, state.dual_steps, state.selected, state.selected_bid)
    for e, (p, dlt, i, b) in enumerate(steps):
        if i == 0:
            continue
        if p < ratio * dlt - tol * max(1.0, dlt):
            bad.append({"kind": "step_ratio", "item": e, "primal": p, "dual": dlt})
        expected = state.C / (state.C - 1.0) * b
        if abs(dlt - expected) > 1e-9 * max(1.0, expected):
            bad.append({"kind": "dual_increase", "item": e, "dual": dlt, "expected": expected})
    return bad


def prediction_value(instance, assignment):
    """Revenue of a predicted assignment (buyer id per item, 0 for none); 0 if over budget."""
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape[0] != instance.n:
        raise ValueError("one predicted buyer per item is required")
    if instance.n == 0:
        return 0.0
    gain = instance.bids[np.arange(instance.n), assignment]
    spend = np.bincount(assignment, weights=gain, minlength=instance.m + 1)
    B = instance.budgets
    if np.any(spend[1:] > B[1:] + BUDGET_SLACK * np.maximum(1.0, B[1:])):
        return 0.0
    return float(gain.sum())


@dataclass
class AuctionResult:
    allocation: np.ndarray
    revenue: float
    state: AuctionState
    certificate: AuctionCertificate
    infeasible_at: int = None
    violations: list = field(default_factory=list)

    @property
    def infeasibility_position(self):
        if self.infeasible_at is None:
            return None
        return self.infeasible_at / max(1, self.allocation.shape[0])


def run_ad_auction(instance, predictions=None, eta=1.0, use_prediction=True, check=True):
    """Allocate every item in stream order.

    ``predictions`` holds one buyer id per item (0 for no prediction).  With
    ``use_prediction=False`` the prediction branch is disabled entirely.
    With ``check`` the alpha lower bound is verified after every item and any
    failure is listed in ``violations``.
    """
    state = AuctionState.initial(instance, eta)
    if predictions is None:
        predictions = np.zeros(instance.n, dtype=int)
    predictions = np.asarray(predictions, dtype=int)
    if predictions.shape[0] != instance.n:
        raise ValueError("one predicted buyer per item is required")
    if np.any(predictions < 0) or np.any(predictions > instance.m):
        raise ValueError("predicted buyer ids must lie in 0..m")
    violations = []
    for e in range(instance.n):
        allocate_item(state, e, instance.bids[e], predictions[e], use_prediction)
        if check:
            for v in lemma4_violations(state):
                violations.append(dict(v, item=e))
    cert = AuctionCertificate(alpha=state.alpha.copy(), beta=state.beta.copy(),
                              budgets=state.budgets.copy())
    return AuctionResult(allocation=state.x, revenue=state.revenue, state=state,
                         certificate=cert, infeasible_at=state.infeasible_at,
                         violations=violations)


class AdAuctionAllocator(BaseEstimator):
    """Estimator wrapper around :func:`run_ad_auction`.

    Parameters
    ----------
    eta : float, default=1.0
        Confidence in (0, 1].
    use_prediction : bool, default=True
    check : bool, default=True
        Verify the dual lower bound after every item.
    """

    def __init__(self, eta=1.0, use_prediction=True, check=True):
        self.eta = eta
        self.use_prediction = use_prediction
        self.check = check

    def fit(self, instance, predictions=None):
        res = run_ad_auction(instance, predictions, eta=self.eta,
                             use_prediction=self.use_prediction, check=self.check)
        self.result_ = res
        self.allocation_ = res.allocation
        self.revenue_ = res.revenue
        self.alpha_ = res.state.alpha
        self.certificate_ = res.certificate
        self.infeasible_at_ = res.infeasible_at
        self.C_ = res.state.C
        return self

    def score(self, instance=None, predictions=None):
        check_is_fitted(self, "revenue_")
        return self.revenue_
