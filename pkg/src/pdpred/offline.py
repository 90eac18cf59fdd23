"""Offline optima and prediction generation.

``solve_lp`` maximizes ``c @ x`` subject to ``A @ x <= cap`` and
``0 <= x <= ub``.  Small dense problems go through a bounded-variable primal
simplex (Dantzig pricing, Bland's rule once pivots stall); larger or sparse
problems are delegated to HiGHS through :func:`scipy.optimize.linprog`.
"""

from dataclasses import dataclass, field
import time

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .adauction import BUDGET_SLACK
from .objective import CoverageOracle, LinearOracle

__all__ = [
    "LpProblem",
    "LpSolution",
    "PredictionPlan",
    "BnbResult",
    "solve_lp",
    "simplex",
    "adauction_lp",
    "solve_adauction_lp",
    "packing_lp",
    "packing_opt_frac",
    "solve_integral_bnb",
    "greedy_assignment",
    "round_lp_solution",
    "base_prediction",
    "generate_prediction",
    "generate_bit_prediction",
]

MAX_DENSE_VARS = 500
MAX_DENSE_ROWS = 200
_TOL = 1e-9


@dataclass
class LpProblem:
    """max c.x  s.t.  A x <= cap,  0 <= x <= ub.

    ``A`` may be a dense array or a scipy sparse matrix; ``ub`` defaults to
    +inf.  Capacities must be non-negative so that x = 0 is feasible.
    """

    c: np.ndarray
    A: object
    cap: np.ndarray
    ub: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.shape[0]
        if sparse.issparse(self.A):
            self.A = sparse.csr_matrix(self.A, dtype=float)
        else:
            self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.cap = np.asarray(self.cap, dtype=float).reshape(-1)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.A.shape != (self.cap.shape[0], n) or self.ub.shape[0] != n:
            raise ValueError(f"inconsistent LP shapes: c {n}, A {self.A.shape}, cap {self.cap.shape}")
        data = self.A.data if sparse.issparse(self.A) else self.A
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(data))
                and np.all(np.isfinite(self.cap))):
            raise ValueError("LP entries must be finite")
        if np.any(self.cap < 0) or np.any(self.ub < 0):
            raise ValueError("capacities and upper bounds must be non-negative")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LpSolution:
    value: float
    x: np.ndarray
    status: str
    method: str
    iterations: int = 0


def simplex(problem, max_iter=50_000):
    """Bounded-variable primal simplex on the dense tableau.

    Slack variables start basic, which is feasible because cap >= 0.
    Nonbasic variables sit at either bound.  Pricing is Dantzig's rule;
    after a run of degenerate pivots it switches to Bland's rule (smallest
    eligible index, smallest leaving index on ties) until progress resumes.
    """
    A = problem.A.toarray() if sparse.issparse(problem.A) else problem.A
    m, n = A.shape
    if n > MAX_DENSE_VARS or m > MAX_DENSE_ROWS:
        raise ValueError(f"LP of size {m}x{n} exceeds the dense simplex limit "
                         f"{MAX_DENSE_ROWS}x{MAX_DENSE_VARS}")
    N = n + m
    T = np.hstack([A, np.eye(m)])
    upper = np.concatenate([problem.ub, np.full(m, np.inf)])
    cost = np.concatenate([problem.c, np.zeros(m)])
    basis = np.arange(n, N)
    xb = problem.cap.copy()
    at_upper = np.zeros(N, dtype=bool)
    d = cost.copy()
    degenerate = 0
    it = 0
    status = "optimal"
    while True:
        if it >= max_iter:
            status = "iteration_limit"
            break
        nonbasic = np.ones(N, dtype=bool)
        nonbasic[basis] = False
        score = np.where(at_upper, -d, d)
        score[~nonbasic] = 0.0
        eligible = np.flatnonzero(score > _TOL)
        if eligible.size == 0:
            break
        bland = degenerate > 50
        j = int(eligible[0]) if bland else int(eligible[np.argmax(score[eligible])])
        s = -1.0 if at_upper[j] else 1.0
        col = T[:, j] * s
        # basic variables move by -t * col
        t_best, r_best = upper[j], -1
        for r in range(m):
            if col[r] > _TOL:
                t = xb[r] / col[r]
            elif col[r] < -_TOL and np.isfinite(upper[basis[r]]):
                t = (upper[basis[r]] - xb[r]) / -col[r]
            else:
                continue
            if t < t_best - _TOL or (abs(t - t_best) <= _TOL and r_best >= 0
                                     and basis[r] < basis[r_best]):
                t_best, r_best = max(t, 0.0), r
        if not np.isfinite(t_best):
            status = "unbounded"
            break
        it += 1
        degenerate = degenerate + 1 if t_best <= _TOL else 0
        xb -= t_best * col
        if r_best < 0:
            at_upper[j] = not at_upper[j]
            continue
        enter_val = (upper[j] if at_upper[j] else 0.0) + s * t_best
        leave = basis[r_best]
        at_upper[leave] = col[r_best] < 0
        piv = T[r_best, j]
        T[r_best] /= piv
        others = np.arange(m) != r_best
        T[others] -= np.outer(T[others, j], T[r_best])
        d -= d[j] * T[r_best]
        basis[r_best] = j
        at_upper[j] = False
        xb[r_best] = enter_val
        xb = np.clip(xb, 0.0, upper[basis])

    full = np.where(at_upper, upper, 0.0)
    full[~np.isfinite(full)] = 0.0
    full[basis] = xb
    x = np.clip(full[:n], 0.0, problem.ub)
    return LpSolution(value=float(problem.c @ x), x=x, status=status, method="simplex",
                      iterations=it)


def _highs(problem):
    bounds = np.column_stack([np.zeros_like(problem.ub), problem.ub])
    bounds = [(lo, None if not np.isfinite(hi) else hi) for lo, hi in bounds]
    res = linprog(-problem.c, A_ub=problem.A, b_ub=problem.cap, bounds=bounds, method="highs")
    if res.status == 3:
        return LpSolution(np.inf, np.zeros_like(problem.c), "unbounded", "highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    x = np.clip(res.x, 0.0, problem.ub)
    return LpSolution(value=float(problem.c @ x), x=x, status="optimal", method="highs",
                      iterations=int(getattr(res, "nit", 0)))


def solve_lp(problem, method="auto"):
    """Optimal value and solution of an :class:`LpProblem`.

    ``method="simplex"`` forces the dense simplex (raises above 200 rows or
    500 variables), ``"highs"`` forces HiGHS, and ``"auto"`` picks the
    simplex whenever the problem is small and dense.
    """
    if method not in ("auto", "simplex", "highs"):
        raise ValueError(f"unknown LP method {method!r}")
    m, n = problem.shape
    small = n <= MAX_DENSE_VARS and m <= MAX_DENSE_ROWS
    if method == "simplex" or (method == "auto" and small and not sparse.issparse(problem.A)):
        sol = simplex(problem)
    else:
        sol = _highs(problem)
    if sol.status == "unbounded":
        raise ValueError("LP is unbounded")
    return sol


def adauction_lp(instance):
    """Fractional ad-auction LP with one variable per positive bid.

    Returns ``(problem, pairs)`` where ``pairs[k] = (item, buyer)`` names
    variable ``k``.
    """
    items, cols = np.nonzero(instance.bids[:, 1:] > 0)
    buyers = cols + 1
    bids = instance.bids[items, buyers]
    k = items.shape[0]
    n, m = instance.n, instance.m
    rows = np.concatenate([items, n + cols])
    vals = np.concatenate([np.ones(k), bids])
    A = sparse.csr_matrix((vals, (rows, np.tile(np.arange(k), 2))), shape=(n + m, k))
    cap = np.concatenate([np.ones(n), instance.budgets[1:]])
    problem = LpProblem(c=bids, A=A, cap=cap, ub=np.ones(k))
    return problem, list(zip(items.tolist(), buyers.tolist()))


def solve_adauction_lp(instance, method="auto"):
    """OPT_frac and the optimal fractional allocation as an (n, m + 1) array."""
    problem, pairs = adauction_lp(instance)
    x = np.zeros((instance.n, instance.m + 1))
    if not pairs:
        return 0.0, x
    if method == "simplex" or (method == "auto" and problem.shape[1] <= MAX_DENSE_VARS
                               and problem.shape[0] <= MAX_DENSE_ROWS):
        problem = LpProblem(problem.c, problem.A.toarray(), problem.cap, problem.ub)
        sol = solve_lp(problem, "simplex")
    else:
        sol = solve_lp(problem, "highs")
    for (e, i), v in zip(pairs, sol.x):
        x[e, i] = v
    return sol.value, x


def packing_lp(instance):
    """LP whose optimum is OPT_frac (linear objective) or an upper bound on it (coverage).

    For coverage objectives each universe point u gets a variable
    z_u <= min(1, sum of x_e over elements covering u); the multilinear
    extension never exceeds this relaxation.
    """
    oracle = instance.oracle
    n, m = instance.n, instance.m
    B = instance.columns.T
    if isinstance(oracle, LinearOracle):
        return LpProblem(c=oracle.weights, A=B, cap=np.ones(m), ub=np.ones(n))
    if isinstance(oracle, CoverageOracle):
        cover = oracle.cover_matrix.astype(float)
        U = cover.shape[1]
        c = np.concatenate([np.zeros(n), oracle.point_weights])
        A = np.block([[B, np.zeros((m, U))], [-cover.T, np.eye(U)]])
        cap = np.concatenate([np.ones(m), np.zeros(U)])
        return LpProblem(c=c, A=A, cap=cap, ub=np.ones(n + U))
    raise TypeError(f"no LP relaxation for oracle {oracle!r}")


def packing_opt_frac(instance, method="auto"):
    if instance.n == 0:
        return 0.0
    return solve_lp(packing_lp(instance), method).value


@dataclass
class BnbResult:
    value: float
    assignment: np.ndarray
    optimal: bool
    nodes: int = 0


def greedy_assignment(instance):
    """Each item to its highest bidder that can still afford it."""
    left = instance.budgets.copy()
    out = np.zeros(instance.n, dtype=int)
    for e in range(instance.n):
        row = instance.bids[e]
        for i in np.argsort(-row[1:], kind="stable") + 1:
            if row[i] <= 0:
                break
            if row[i] <= left[i] + BUDGET_SLACK * max(1.0, left[i]):
                out[e] = i
                left[i] -= row[i]
                break
    return out


def _assignment_value(instance, assignment):
    return float(instance.bids[np.arange(instance.n), assignment].sum()) if instance.n else 0.0


def solve_integral_bnb(instance, time_limit=10.0, max_items=1000):
    """Best 0/1 assignment respecting budgets exactly, by depth-first branch and bound.

    Items are branched in order; each node tries affordable bidders by
    decreasing bid and then leaving the item unassigned.  The bound adds,
    for the remaining items, the larger bid still affordable, capped by the
    remaining budget of the buyers that can still receive them.  Instances
    beyond 25 items also get the LP optimum as a global bound.  When the
    time limit expires the best assignment found is returned with
    ``optimal=False``.
    """
    n = instance.n
    if n > max_items:
        raise ValueError(f"branch and bound limited to {max_items} items, got {n}")
    bids = instance.bids
    best = greedy_assignment(instance)
    best_val = _assignment_value(instance, best)
    if n == 0:
        return BnbResult(0.0, best, True)
    global_ub = np.inf
    if n > 25:
        global_ub = solve_adauction_lp(instance)[0]
    # suffix sums of the best bid per item for a cheap bound
    top = bids.max(axis=1)
    suffix = np.concatenate([np.cumsum(top[::-1])[::-1], [0.0]])
    deadline = time.monotonic() + time_limit
    current = np.zeros(n, dtype=int)
    left = instance.budgets.copy()
    state = {"best": best.copy(), "val": best_val, "nodes": 0, "timeout": False}

    def bound(e, left):
        reach = min(suffix[e], float(np.clip(left[1:], 0, None).sum()))
        return reach

    def dfs(e, val):
        state["nodes"] += 1
        if state["nodes"] % 1024 == 0 and time.monotonic() > deadline:
            state["timeout"] = True
        if state["timeout"]:
            return
        if e == n:
            if val > state["val"] + 1e-12:
                state["val"], state["best"] = val, current.copy()
            return
        if val + bound(e, left) <= state["val"] + 1e-12:
            return
        if state["val"] >= global_ub - 1e-9:
            return
        row = bids[e]
        for i in np.argsort(-row[1:], kind="stable") + 1:
            if row[i] <= 0:
                break
            if row[i] <= left[i] + BUDGET_SLACK * max(1.0, left[i]):
                left[i] -= row[i]
                current[e] = i
                dfs(e + 1, val + row[i])
                left[i] += row[i]
                current[e] = 0
        dfs(e + 1, val)

    dfs(0, 0.0)
    return BnbResult(value=state["val"], assignment=state["best"],
                     optimal=not state["timeout"], nodes=state["nodes"])


def round_lp_solution(instance, x_frac):
    """Greedy rounding of a fractional allocation into a budget-feasible assignment.

    (item, buyer) pairs are visited by decreasing fractional mass (ties by
    larger bid, then item, then buyer); an item goes to the buyer if still
    unassigned and the buyer can afford it.
    """
    x_frac = np.asarray(x_frac, dtype=float)
    items, buyers = np.nonzero(x_frac[:, 1:] > _TOL)
    buyers = buyers + 1
    mass = x_frac[items, buyers]
    bid = instance.bids[items, buyers]
    order = np.lexsort((buyers, items, -bid, -mass))
    left = instance.budgets.copy()
    out = np.zeros(instance.n, dtype=int)
    for k in order:
        e, i = items[k], buyers[k]
        if out[e] == 0 and bid[k] <= left[i] + BUDGET_SLACK * max(1.0, left[i]):
            out[e] = i
            left[i] -= bid[k]
    return out


def base_prediction(instance, exact_items=25):
    """Prediction base: exact integral optimum for tiny instances, else rounded LP optimum."""
    if instance.n <= exact_items:
        res = solve_integral_bnb(instance)
        if res.optimal:
            return res.assignment
    return round_lp_solution(instance, solve_adauction_lp(instance)[1])


@dataclass
class PredictionPlan:
    base: np.ndarray
    epsilon: float
    seed: object
    assignment: np.ndarray
    perturbed: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


def generate_prediction(base, epsilon, seed, instance):
    """Perturb a base assignment item by item.

    With probability ``epsilon`` an assigned item is moved to a buyer drawn
    uniformly among its bidders (possibly the same one); unassigned items
    stay unassigned.  The random draws are made for every item, so the
    outcome for an item does not depend on the others.
    """
    epsilon = float(epsilon)
    base = np.asarray(base, dtype=int)
    if base.shape[0] != instance.n:
        raise ValueError("base assignment must cover every item")
    if not (0.0 <= epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    rng = np.random.default_rng(seed)
    flip = rng.random(instance.n) < epsilon
    pick = rng.random(instance.n)
    out = base.copy()
    perturbed = flip & (base != 0)
    for e in np.flatnonzero(perturbed):
        who = instance.bidders(e)
        if who.size:
            out[e] = who[min(int(pick[e] * who.size), who.size - 1)]
    return PredictionPlan(base=base, epsilon=epsilon, seed=seed, assignment=out,
                          perturbed=perturbed)


def generate_bit_prediction(base_bits, epsilon, seed):
    """0/1 analogue: with probability ``epsilon`` a bit is replaced by a fair coin."""
    base_bits = np.asarray(base_bits, dtype=int)
    rng = np.random.default_rng(seed)
    flip = rng.random(base_bits.shape[0]) < float(epsilon)
    coin = rng.integers(0, 2, base_bits.shape[0])
    return np.where(flip, coin, base_bits), flip
