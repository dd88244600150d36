"""Round-synchronous decentralized optimization algorithms as pure state transitions."""

from relaysum.algorithms.gossip import (
    GT_VARIANTS,
    EigenvalueConditionError,
    GossipState,
    all_reduce_round,
    check_d2_matrix,
    d2_round,
    dpsgd_round,
    drop_gossip_matrix,
    gradient_tracking_round,
    local_momentum_update,
    min_eigenvalue,
    sgp_exchange,
    sgp_round,
)
from relaysum.algorithms.relay import (
    DmeState,
    DoubleTreeState,
    NoEstimateError,
    RelayState,
    correction_factor,
    double_tree_round,
    relay_dme_round,
    relay_grad_round,
    relay_plan,
    relay_sgd_robust_round,
    relay_sgd_round,
)

__all__ = [
    "GT_VARIANTS", "EigenvalueConditionError", "GossipState", "all_reduce_round", "check_d2_matrix",
    "d2_round", "dpsgd_round", "drop_gossip_matrix", "gradient_tracking_round", "local_momentum_update",
    "min_eigenvalue", "sgp_exchange", "sgp_round", "DmeState", "DoubleTreeState", "NoEstimateError",
    "RelayState", "correction_factor", "double_tree_round", "relay_dme_round", "relay_grad_round",
    "relay_plan", "relay_sgd_robust_round", "relay_sgd_round",
]
