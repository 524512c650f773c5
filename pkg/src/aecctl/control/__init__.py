"""Step-size controllers: classical laws, oracle baselines, GRU estimators."""

from aecctl.control.classic import (
    PowerEstimates,
    StallOrAdaptNlms,
    EaNlms,
    MinSystemDistanceNlms,
    KalmanController,
    OracleGradNlms,
    OracleIpKalman,
    ea_nlms_step,
    kalman_step_size,
    min_system_distance_step,
    stall_or_adapt_step,
)
from aecctl.control.neural import (
    FeatureSpec,
    WeightBundle,
    GruStack,
    DnnController,
    random_bundle,
    load_bundle,
    save_bundle,
    count_parameters,
    step_size_from_masks,
)

__all__ = [
    "PowerEstimates",
    "StallOrAdaptNlms",
    "EaNlms",
    "MinSystemDistanceNlms",
    "KalmanController",
    "OracleGradNlms",
    "OracleIpKalman",
    "ea_nlms_step",
    "kalman_step_size",
    "min_system_distance_step",
    "stall_or_adapt_step",
    "FeatureSpec",
    "WeightBundle",
    "GruStack",
    "DnnController",
    "random_bundle",
    "load_bundle",
    "save_bundle",
    "count_parameters",
    "step_size_from_masks",
]
