"""Online primal-dual packing and ad-auction allocation with predictions."""

from .objective import (
    CoverageOracle,
    CustomOracle,
    EvalMode,
    LinearOracle,
    SetFunctionOracle,
    SmoothnessParams,
    check_local_smoothness,
    evaluate_F,
    gradient_F,
)
from .engine import (
    DualCertificate,
    OnlinePackingSolver,
    PackingInstance,
    PredictionStream,
    run_online_packing,
    verify_dual,
    verify_feasibility,
    verify_lemma1,
)
from .adauction import AdAuctionAllocator, AdAuctionInstance, constant_C, run_ad_auction
from .offline import LpProblem, generate_prediction, solve_integral_bnb, solve_lp
from .bench import ExperimentConfig, SweepResult, emit_dat, generate_instance, run_sweep

__version__ = "0.1.0"

__all__ = [
    "CoverageOracle", "CustomOracle", "EvalMode", "LinearOracle", "SetFunctionOracle",
    "SmoothnessParams", "check_local_smoothness", "evaluate_F", "gradient_F",
    "DualCertificate", "OnlinePackingSolver", "PackingInstance", "PredictionStream",
    "run_online_packing", "verify_dual", "verify_feasibility", "verify_lemma1",
    "AdAuctionAllocator", "AdAuctionInstance", "constant_C", "run_ad_auction",
    "LpProblem", "generate_prediction", "solve_integral_bnb", "solve_lp",
    "ExperimentConfig", "SweepResult", "emit_dat", "generate_instance", "run_sweep",
]
