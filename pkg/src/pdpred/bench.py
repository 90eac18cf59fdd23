"""Seeded experiment generation, (eta, epsilon) sweeps and data-file emission."""

from dataclasses import dataclass, field, asdict, replace
import csv
import io
import math
import os

import numpy as np

from ._validation import check_eta
from .adauction import AdAuctionInstance, prediction_value, robustness_guarantee, run_ad_auction
from .engine import PackingInstance
from .objective import CoverageOracle, LinearOracle
from .offline import base_prediction, generate_prediction, solve_adauction_lp

__all__ = [
    "ExperimentConfig",
    "SweepResult",
    "PRESETS",
    "preset",
    "lognormal_parameters",
    "generate_instance",
    "random_packing_instance",
    "feasible_bits",
    "packing_suite",
    "run_sweep",
    "emit_dat",
    "dat_name",
]

DESK_ETAS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass
class ExperimentConfig:
    """Parameters of a seeded ad-auction experiment.

    ``lognormal`` selects how (mean_log, sd_log) are read: ``"normal"``
    takes them as the mean and standard deviation of the underlying normal,
    ``"moments"`` as the mean and standard deviation of the bid
    distribution itself.
    """

    buyers: int = 20
    items: int = 1000
    bidders_per_item: int = 6
    mean_log: float = 0.5
    sd_log: float = 0.5
    lognormal: str = "normal"
    budget_fraction: float = 0.1
    etas: tuple = DESK_ETAS
    epsilons: tuple = (0.0, 0.01, 0.1)
    seeds: tuple = (0, 1, 2)
    seed_pred: int = 1
    seed_alg: int = 2
    out_dir: str = "."
    opt: str = "lp"

    def __post_init__(self):
        self.etas = tuple(float(v) for v in self.etas)
        self.epsilons = tuple(float(v) for v in self.epsilons)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.buyers < 1 or self.items < 0:
            raise ValueError("need at least one buyer and a non-negative item count")
        if not (1 <= self.bidders_per_item <= self.buyers):
            raise ValueError(f"bidders_per_item must lie in 1..buyers, got {self.bidders_per_item}")
        if not self.etas or not self.epsilons or not self.seeds:
            raise ValueError("eta, epsilon and seed grids must be non-empty")
        for eta in self.etas:
            check_eta(eta)
        if any(not (0.0 <= eps <= 1.0) for eps in self.epsilons):
            raise ValueError("epsilon values must lie in [0, 1]")
        if self.lognormal not in ("normal", "moments"):
            raise ValueError(f"unknown lognormal parameterization {self.lognormal!r}")
        if self.sd_log < 0 or self.budget_fraction <= 0:
            raise ValueError("sd_log must be >= 0 and budget_fraction > 0")
        if self.lognormal == "moments" and self.mean_log <= 0:
            raise ValueError("the moments reading needs a positive mean")
        if self.opt not in ("lp", "none"):
            raise ValueError(f"unknown opt policy {self.opt!r}")


PRESETS = {
    "desk": dict(buyers=20, items=1000, lognormal="moments"),
    "paper": dict(buyers=100, items=10000, lognormal="moments"),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


def lognormal_parameters(config):
    """(mu, sigma) of the underlying normal."""
    if config.lognormal == "normal":
        return config.mean_log, config.sd_log
    sigma2 = math.log1p((config.sd_log / config.mean_log) ** 2)
    return math.log(config.mean_log) - 0.5 * sigma2, math.sqrt(sigma2)


def generate_instance(config, seed):
    """Random ad-auction instance: k distinct bidders per item, lognormal bids,
    budgets a fixed fraction of each buyer's total bids."""
    rng = np.random.default_rng(seed)
    m, n, k = config.buyers, config.items, config.bidders_per_item
    mu, sigma = lognormal_parameters(config)
    bids = np.zeros((n, m))
    for e in range(n):
        who = rng.choice(m, size=k, replace=False)
        bids[e, who] = rng.lognormal(mu, sigma, size=k)
    budgets = config.budget_fraction * bids.sum(axis=0)
    return AdAuctionInstance(budgets, bids)


def random_packing_instance(rng, m_max=10, n_max=30, kind=None, density=0.4,
                            low=0.05, high=0.6, universe=15):
    """Random packing instance with heterogeneous linear weights or a weighted
    coverage objective.  ``kind`` is "linear", "coverage" or None (coin flip)."""
    m = int(rng.integers(1, m_max + 1))
    n = int(rng.integers(1, n_max + 1))
    cols = rng.uniform(low, high, (n, m)) * (rng.random((n, m)) < density)
    if kind is None:
        kind = "linear" if rng.random() < 0.5 else "coverage"
    if kind == "linear":
        oracle = LinearOracle(rng.uniform(0.5, 2.0, n))
    elif kind == "coverage":
        covers = [rng.choice(universe, size=int(rng.integers(1, 5)), replace=False) for _ in range(n)]
        oracle = CoverageOracle(universe, covers, rng.uniform(0.5, 2.0, universe))
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    return PackingInstance(cols, oracle)


def feasible_bits(rng, instance, keep=0.7):
    """A capacity-respecting 0/1 prediction built greedily in random order."""
    bits = np.zeros(instance.n, dtype=int)
    load = np.zeros(instance.m)
    for e in rng.permutation(instance.n):
        if rng.random() < keep and np.all(load + instance.columns[e] <= 1.0):
            bits[e] = 1
            load += instance.columns[e]
    return bits


def packing_suite(count, seed=0, etas=(0.05, 0.5, 1.0), **kwargs):
    """``count`` (instance, prediction bits, eta) triples; even ones have feasible
    predictions, odd ones uniform random (usually infeasible) predictions."""
    rng = np.random.default_rng(seed)
    out = []
    for t in range(count):
        inst = random_packing_instance(rng, **kwargs)
        bits = feasible_bits(rng, inst) if t % 2 == 0 else (rng.random(inst.n) < 0.5).astype(int)
        out.append((inst, bits, etas[t % len(etas)]))
    return out


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    epsilons: tuple = ()
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("seed", "epsilon", "eta", "revenue", "opt_frac", "robustness",
               "consistency_ratio", "infeasibility_position", "prediction_value",
               "r_max", "bound")

    def sort(self):
        self.rows.sort(key=lambda r: (r["epsilon"], r["eta"], r["seed"]))
        return self

    def curve(self, epsilon):
        """Mean robustness per eta over seeds, ascending eta."""
        by_eta = {}
        for r in self.rows:
            if r["epsilon"] == epsilon and r["robustness"] is not None:
                by_eta.setdefault(r["eta"], []).append(r["robustness"])
        return [(eta, float(np.mean(v))) for eta, v in sorted(by_eta.items())]

    def select(self, **match):
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]


def _pred_seed(config, seed, j):
    return np.random.SeedSequence([config.seed_pred, seed, j])


def run_sweep(config):
    result = SweepResult(epsilons=config.epsilons,
                         metadata=asdict(config))
    for seed in config.seeds:
        inst = generate_instance(config, seed)
        r_max = inst.r_max
        opt = solve_adauction_lp(inst)[0] if config.opt == "lp" else None
        base = base_prediction(inst)
        for j, eps in enumerate(config.epsilons):
            plan = generate_prediction(base, eps, _pred_seed(config, seed, j), inst)
            p_val = prediction_value(inst, plan.assignment)
            for eta in config.etas:
                res = run_ad_auction(inst, plan.assignment, eta, check=False)
                result.rows.append({
                    "seed": seed,
                    "epsilon": eps,
                    "eta": eta,
                    "revenue": res.revenue,
                    "opt_frac": opt,
                    "robustness": res.revenue / opt if opt else None,
                    "consistency_ratio": res.revenue / p_val if p_val > 0 else None,
                    "infeasibility_position": res.infeasibility_position,
                    "prediction_value": p_val,
                    "r_max": r_max,
                    "bound": robustness_guarantee(r_max, eta) if r_max > 0 else 0.0,
                })
    return result.sort()


def dat_name(epsilon):
    return f"ratio_{float(epsilon)!r}.dat"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_dat(result, prefix):
    """Write one ``ratio_<eps>.dat`` per epsilon and a combined ``sweep.csv``.

    ``prefix`` is a directory.  Returns the written paths.
    """
    os.makedirs(prefix, exist_ok=True)
    paths = []
    epsilons = sorted(set(result.epsilons) | {r["epsilon"] for r in result.rows})
    for eps in epsilons:
        path = os.path.join(prefix, dat_name(eps))
        with open(path, "w", newline="\n") as fh:
            for eta, rob in result.curve(eps):
                fh.write(f"{eta:.6f} {rob:.6f}\n")
        paths.append(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SweepResult.COLUMNS)
    for r in result.rows:
        writer.writerow([_fmt(r[c]) for c in SweepResult.COLUMNS])
    path = os.path.join(prefix, "sweep.csv")
    with open(path, "w", newline="\n") as fh:
        fh.write(buf.getvalue())
    paths.append(path)
    return paths


def with_overrides(config, **kw):
    """Copy of ``config`` with non-None overrides applied."""
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
