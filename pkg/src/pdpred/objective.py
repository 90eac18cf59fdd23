"""Set-function oracles and their multilinear extension.

Three oracle kinds are supported: linear (weights per element), weighted
coverage (each element covers a subset of a finite universe), and custom
black-box callbacks.  ``evaluate_F`` and ``gradient_F`` compute the
multilinear extension

    F(x) = E[f(T)],  T random with P(e in T) = x_e independently,

either exactly or by seeded Monte Carlo sampling.
"""

from dataclasses import dataclass, field
import itertools

import numpy as np

from ._validation import check_element, check_point, check_positive

__all__ = [
    "SetFunctionOracle",
    "LinearOracle",
    "CoverageOracle",
    "CustomOracle",
    "EvalMode",
    "SmoothnessParams",
    "SmoothnessReport",
    "evaluate_F",
    "estimate_F",
    "gradient_F",
    "estimate_gradient",
    "gradient_vector",
    "multilinear_by_enumeration",
    "subset_values",
    "check_local_smoothness",
    "check_monotone",
    "check_submodular",
    "scaling_ratio",
]

MAX_EXACT_N = 20
MAX_EXHAUSTIVE_SETS_N = 12
_CHUNK = 1 << 14


class SetFunctionOracle:
    """Base class: a non-negative monotone set function over ``n`` elements.

    Subclasses implement ``values_batch`` on boolean membership matrices.
    Those with a polynomial closed form for the multilinear extension also
    implement ``_closed_F`` and ``_closed_grad``.
    """

    kind = "abstract"

    def __init__(self, n):
        self.n = int(n)

    def values_batch(self, members):
        raise NotImplementedError

    def value(self, S):
        """f(S) for an iterable of element ids."""
        row = np.zeros((1, self.n), dtype=bool)
        for e in S:
            row[0, check_element(e, self.n)] = True
        return float(self.values_batch(row)[0])

    @property
    def has_closed_form(self):
        return False

    def _closed_F(self, x):
        raise NotImplementedError

    def _closed_grad(self, x):
        raise NotImplementedError


class LinearOracle(SetFunctionOracle):
    """f(S) = sum of non-negative weights over S."""

    kind = "linear"

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("linear weights must be a 1-D array of finite values >= 0")
        super().__init__(w.shape[0])
        self.weights = w

    def values_batch(self, members):
        return np.asarray(members, dtype=float) @ self.weights

    @property
    def has_closed_form(self):
        return True

    def _closed_F(self, x):
        return float(x @ self.weights)

    def _closed_grad(self, x):
        return self.weights.copy()

    def __repr__(self):
        return f"LinearOracle(n={self.n})"


class CoverageOracle(SetFunctionOracle):
    """Weighted coverage: f(S) is the total weight of universe points covered by S.

    Parameters
    ----------
    universe_size : int
    covers : sequence of iterables
        ``covers[e]`` lists the universe points covered by element ``e``.
    point_weights : array-like, optional
        Non-negative weight per universe point; unit weights by default.
    """

    kind = "coverage"

    def __init__(self, universe_size, covers, point_weights=None):
        super().__init__(len(covers))
        self.universe_size = int(universe_size)
        cov = np.zeros((self.n, self.universe_size), dtype=bool)
        for e, pts in enumerate(covers):
            for u in pts:
                if not (0 <= int(u) < self.universe_size):
                    raise ValueError(f"element {e} covers point {u} outside the universe")
                cov[e, int(u)] = True
        self.cover_matrix = cov
        if point_weights is None:
            point_weights = np.ones(self.universe_size)
        pw = np.asarray(point_weights, dtype=float)
        if pw.shape != (self.universe_size,) or np.any(pw < 0) or not np.all(np.isfinite(pw)):
            raise ValueError("point_weights must be finite, >= 0, one per universe point")
        self.point_weights = pw

    @property
    def covers(self):
        return [np.flatnonzero(row).tolist() for row in self.cover_matrix]

    def values_batch(self, members):
        members = np.asarray(members, dtype=bool)
        covered = (members.astype(np.int32) @ self.cover_matrix.astype(np.int32)) > 0
        return covered @ self.point_weights

    @property
    def has_closed_form(self):
        return True

    def _miss_probabilities(self, x):
        # P(point u uncovered) = prod over covering elements of (1 - x_e)
        return np.prod(np.where(self.cover_matrix, (1.0 - x)[:, None], 1.0), axis=0)

    def _closed_F(self, x):
        return float(self.point_weights @ (1.0 - self._miss_probabilities(x)))

    def _closed_grad(self, x):
        grad = np.zeros(self.n)
        for e in range(self.n):
            pts = self.cover_matrix[e]
            if pts.any():
                others = x.copy()
                others[e] = 0.0
                grad[e] = float(self.point_weights[pts] @ self._miss_probabilities(others)[pts])
        return grad

    def __repr__(self):
        return f"CoverageOracle(n={self.n}, universe={self.universe_size})"


class CustomOracle(SetFunctionOracle):
    """Black-box oracle wrapping ``fn(frozenset) -> float``.

    Values must be non-negative; monotonicity is only spot-checked (see
    ``check_monotone``).
    """

    kind = "custom"

    def __init__(self, fn, n):
        super().__init__(n)
        self.fn = fn

    def _call(self, S):
        v = float(self.fn(frozenset(S)))
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"custom oracle returned {v} for {sorted(S)}; values must be >= 0")
        return v

    def values_batch(self, members):
        members = np.asarray(members, dtype=bool)
        cache = {}
        out = np.empty(members.shape[0])
        for k, row in enumerate(members):
            key = row.tobytes()
            if key not in cache:
                cache[key] = self._call(np.flatnonzero(row).tolist())
            out[k] = cache[key]
        return out

    def __repr__(self):
        return f"CustomOracle(n={self.n}, fn={getattr(self.fn, '__name__', self.fn)!r})"


@dataclass(frozen=True)
class EvalMode:
    """How to evaluate F: ``exact`` or ``sampled`` with a sample count and seed."""

    kind: str = "exact"
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "sampled"):
            raise ValueError(f"unknown evaluation mode {self.kind!r}")
        if self.kind == "sampled" and (int(self.samples) <= 0):
            raise ValueError("sampled mode needs a positive sample count")

    @classmethod
    def exact(cls):
        return cls("exact")

    @classmethod
    def sampled(cls, samples, seed=0):
        return cls("sampled", int(samples), int(seed) & 0xFFFFFFFFFFFFFFFF)

    def reseeded(self, *keys):
        """A sampled mode whose seed is derived from this seed and ``keys``."""
        if self.kind != "sampled":
            return self
        seq = np.random.SeedSequence([self.seed, *[int(k) for k in keys]])
        return EvalMode("sampled", self.samples, int(seq.generate_state(1, np.uint64)[0]))


@dataclass(frozen=True)
class SmoothnessParams:
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        check_positive(self.lam, "lambda")
        check_positive(self.mu, "mu", strict=False)


@dataclass
class SmoothnessReport:
    violations: list = field(default_factory=list)
    max_violation: float = float("-inf")
    checked: int = 0

    @property
    def ok(self):
        return not self.violations


def _mask_bits(n):
    """Boolean matrix (2^n, n); row k has bit e set iff element e in subset k."""
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(bool)


def subset_values(oracle):
    """f(S) for every subset, indexed by bitmask (bit e <=> element e)."""
    n = oracle.n
    if n > MAX_EXACT_N:
        raise ValueError(f"subset enumeration needs n <= {MAX_EXACT_N}, got n={n}")
    if isinstance(oracle, CoverageOracle):
        covered = np.zeros((1, oracle.universe_size), dtype=bool)
        for e in range(n):
            covered = np.concatenate([covered, covered | oracle.cover_matrix[e]], axis=0)
        return covered @ oracle.point_weights
    return np.asarray(oracle.values_batch(_mask_bits(n)), dtype=float)


def _subset_probabilities(x):
    p = np.ones(1)
    for xe in x:
        p = np.concatenate([p * (1.0 - xe), p * xe])
    return p


def multilinear_by_enumeration(oracle, x, table=None):
    """Brute-force F(x) = sum_S prod x_e prod (1 - x_e) f(S); n <= 20."""
    x = check_point(x, oracle.n)
    if table is None:
        table = subset_values(oracle)
    return float(_subset_probabilities(x) @ table)


def _sample_members(rng, x, count):
    return rng.random((count, x.shape[0])) < x


def _sampled_stats(fn_chunk, x, mode):
    rng = np.random.default_rng(mode.seed)
    total = 0.0
    total_sq = 0.0
    left = mode.samples
    while left > 0:
        k = min(left, _CHUNK)
        vals = fn_chunk(_sample_members(rng, x, k))
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        left -= k
    s = mode.samples
    mean = total / s
    var = max(total_sq / s - mean * mean, 0.0) * s / max(s - 1, 1)
    return mean, float(np.sqrt(var / s))


def estimate_F(oracle, x, mode=EvalMode()):
    """Return ``(F(x), standard_error)``; the error is 0 for exact evaluation."""
    x = check_point(x, oracle.n)
    if isinstance(oracle, LinearOracle):
        return oracle._closed_F(x), 0.0
    if mode.kind == "exact":
        if oracle.has_closed_form:
            return oracle._closed_F(x), 0.0
        if oracle.n > MAX_EXACT_N:
            raise ValueError(f"exact mode supports n <= {MAX_EXACT_N}; use sampled mode for n={oracle.n}")
        return multilinear_by_enumeration(oracle, x), 0.0
    return _sampled_stats(oracle.values_batch, x, mode)


def evaluate_F(oracle, x, mode=EvalMode()):
    """Multilinear extension F(x) under ``mode``."""
    return estimate_F(oracle, x, mode)[0]


def estimate_gradient(oracle, x, e, mode=EvalMode(), released=None):
    """Return ``(grad_e F(x), standard_error)``.

    ``grad_e F(x) = F(x_{-e}, 1) - F(x_{-e}, 0)``.  When ``released`` is given
    (number of elements revealed so far) unreleased elements have gradient 0.
    Sampled mode uses the same random sets R for both terms.
    """
    x = check_point(x, oracle.n)
    e = check_element(e, oracle.n)
    if released is not None and e >= released:
        return 0.0, 0.0
    if isinstance(oracle, LinearOracle):
        return float(oracle.weights[e]), 0.0
    if mode.kind == "exact":
        if oracle.has_closed_form:
            return float(oracle._closed_grad(x)[e]), 0.0
        hi = x.copy()
        lo = x.copy()
        hi[e] = 1.0
        lo[e] = 0.0
        table = subset_values(oracle) if oracle.n <= MAX_EXACT_N else None
        if table is None:
            raise ValueError(f"exact mode supports n <= {MAX_EXACT_N}; use sampled mode for n={oracle.n}")
        return multilinear_by_enumeration(oracle, hi, table) - multilinear_by_enumeration(oracle, lo, table), 0.0

    def diff(members):
        with_e = members.copy()
        with_e[:, e] = True
        members[:, e] = False
        return oracle.values_batch(with_e) - oracle.values_batch(members)

    return _sampled_stats(diff, x, mode)


def gradient_F(oracle, x, e, mode=EvalMode(), released=None):
    """Directional derivative of F along element ``e``."""
    return estimate_gradient(oracle, x, e, mode, released)[0]


def gradient_vector(oracle, x, mode=EvalMode(), table=None):
    """All partial derivatives of F at ``x`` as an array."""
    x = check_point(x, oracle.n)
    if isinstance(oracle, LinearOracle):
        return oracle.weights.copy()
    if mode.kind == "exact" and oracle.has_closed_form:
        return oracle._closed_grad(x)
    if mode.kind == "exact" and table is not None:
        out = np.empty(oracle.n)
        for e in range(oracle.n):
            hi = x.copy()
            lo = x.copy()
            hi[e], lo[e] = 1.0, 0.0
            out[e] = _subset_probabilities(hi) @ table - _subset_probabilities(lo) @ table
        return out
    return np.array([gradient_F(oracle, x, e, mode.reseeded(e)) for e in range(oracle.n)])


def _random_points(rng, n, trials):
    """Mixture of interior, sparse and vertex points in [0,1]^n."""
    pts = []
    for t in range(trials):
        style = t % 4
        if style == 0:
            p = rng.random(n)
        elif style == 1:
            p = rng.random(n) * (rng.random(n) < 0.5)
        elif style == 2:
            p = (rng.random(n) < 0.5).astype(float)
        else:
            p = rng.beta(0.3, 0.3, size=n)
        pts.append(p)
    return pts


def check_local_smoothness(oracle, params, trials=64, seed=0, points=None, sets=None,
                           tol=1e-9, mode=None):
    """Empirically test sum_{e in S} grad_e F(x) >= lam f(S) - mu F(x).

    For n <= 12 every subset S is tested against each point x (``trials``
    random points unless ``points`` is supplied).  Larger ground sets test
    ``trials`` random (S, x) pairs.  Exact F is used whenever available; for
    sampled evaluation the tolerance is three standard errors.
    """
    n = oracle.n
    rng = np.random.default_rng(seed)
    if points is None:
        points = _random_points(rng, n, trials)
    points = [check_point(p, n) for p in points]
    exact = mode is None or mode.kind == "exact"
    if exact and not oracle.has_closed_form and n > MAX_EXACT_N:
        mode = EvalMode.sampled(20_000, seed)
        exact = False

    report = SmoothnessReport()
    if sets is not None:
        masks = np.zeros((len(sets), n), dtype=bool)
        for k, S in enumerate(sets):
            masks[k, list(S)] = True
    elif n <= MAX_EXHAUSTIVE_SETS_N:
        masks = _mask_bits(n)
    else:
        masks = rng.random((max(trials, 256), n)) < rng.random((max(trials, 256), 1))
    f_sets = subset_values(oracle) if (sets is None and n <= MAX_EXHAUSTIVE_SETS_N) \
        else oracle.values_batch(masks)
    f_sets = np.asarray(f_sets, dtype=float)
    table = subset_values(oracle) if (exact and not oracle.has_closed_form) else None

    for k, x in enumerate(points):
        if exact:
            Fx = evaluate_F(oracle, x) if table is None else float(_subset_probabilities(x) @ table)
            grad = gradient_vector(oracle, x, table=table)
            slack_tol = np.full(masks.shape[0], tol)
        else:
            pmode = mode.reseeded(k)
            Fx, Fse = estimate_F(oracle, x, pmode)
            stats = [estimate_gradient(oracle, x, e, pmode.reseeded(e)) for e in range(n)]
            grad = np.array([s[0] for s in stats])
            gse2 = np.array([s[1] ** 2 for s in stats])
            slack_tol = 3.0 * np.sqrt(masks @ gse2 + (params.mu * Fse) ** 2) + tol
        lhs = masks @ grad
        rhs = params.lam * f_sets - params.mu * Fx
        gap = rhs - lhs
        report.checked += gap.shape[0]
        report.max_violation = max(report.max_violation, float(gap.max(initial=-np.inf)))
        for j in np.flatnonzero(gap > slack_tol):
            report.violations.append({
                "set": np.flatnonzero(masks[j]).tolist(),
                "x": x.tolist(),
                "lhs": float(lhs[j]),
                "rhs": float(rhs[j]),
                "gap": float(gap[j]),
            })
    return report


def check_monotone(oracle, chains=1000, seed=0):
    """Randomized chain comparisons f(S) <= f(S + e); returns violating pairs."""
    rng = np.random.default_rng(seed)
    n = oracle.n
    bad = []
    if n == 0:
        return bad
    base = rng.random((chains, n)) < rng.random((chains, 1))
    es = rng.integers(0, n, size=chains)
    grown = base.copy()
    grown[np.arange(chains), es] = True
    lo = oracle.values_batch(base)
    hi = oracle.values_batch(grown)
    for k in np.flatnonzero(hi < lo - 1e-12):
        bad.append((np.flatnonzero(base[k]).tolist(), int(es[k])))
    return bad


def check_submodular(oracle, tol=1e-12):
    """Exhaustive diminishing-returns check (n <= 12); returns a list of violations."""
    n = oracle.n
    if n > MAX_EXHAUSTIVE_SETS_N:
        raise ValueError(f"exhaustive submodularity check needs n <= {MAX_EXHAUSTIVE_SETS_N}")
    table = subset_values(oracle)
    bad = []
    for e in range(n):
        bit = 1 << e
        for T in range(1 << n):
            if T & bit:
                continue
            gain_T = table[T | bit] - table[T]
            # every S subset of T, enumerated via the standard submask walk
            S = T
            while True:
                if table[S | bit] - table[S] < gain_T - tol:
                    bad.append((S, T, e))
                if S == 0:
                    break
                S = (S - 1) & T
    return bad


def scaling_ratio(oracle, u, eta, mode=EvalMode()):
    """F(u / (1 + eta)) / F(u); NaN when F(u) is 0."""
    u = check_point(u, oracle.n)
    top = evaluate_F(oracle, u, mode)
    if top == 0:
        return float("nan")
    return evaluate_F(oracle, u / (1.0 + eta), mode) / top


def all_subsets(n):
    """Iterate subsets of range(n) as tuples (small n only)."""
    return itertools.chain.from_iterable(itertools.combinations(range(n), k) for k in range(n + 1))
