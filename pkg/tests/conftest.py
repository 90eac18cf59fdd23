"""Independent reference implementations shared by the test modules.

Everything here is deliberately naive: plain Python loops over subsets,
no reuse of the library's vectorized code paths.
"""

import itertools

import numpy as np
import pytest

from pdpred.objective import CoverageOracle, LinearOracle


def coverage_value(covers, weights, S):
    covered = set()
    for e in S:
        covered.update(int(u) for u in covers[e])
    return float(sum(weights[u] for u in covered))


def brute_F(f, x):
    """sum over all subsets of prob(S) * f(S) with f a Python callable on tuples."""
    n = len(x)
    total = 0.0
    for k in range(n + 1):
        for S in itertools.combinations(range(n), k):
            p = 1.0
            for e in range(n):
                p *= x[e] if e in S else 1.0 - x[e]
            total += p * f(S)
    return total


def brute_grad(f, x, e):
    hi = list(x)
    lo = list(x)
    hi[e], lo[e] = 1.0, 0.0
    return brute_F(f, hi) - brute_F(f, lo)


def random_coverage(rng, n, universe=None, max_cover=4):
    universe = universe or int(rng.integers(3, 12))
    covers = [rng.choice(universe, size=int(rng.integers(1, min(max_cover, universe) + 1)),
                         replace=False).tolist() for _ in range(n)]
    weights = rng.uniform(0.1, 2.0, universe)
    return CoverageOracle(universe, covers, weights), covers, weights


def random_linear(rng, n):
    w = rng.uniform(0.0, 3.0, n)
    return LinearOracle(w), w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed at the end of the run
CRITERIA = {}


def record_criterion(number, ok, detail):
    CRITERIA[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
