from ._uet import (
    ConfigError,
    DetNet,
    NumericError,
    distance,
    estimate_uncertainty,
    extract,
    gradcheck,
    schedule_ratios,
    uet_loss,
)

__all__ = [
    "ConfigError",
    "DetNet",
    "NumericError",
    "distance",
    "estimate_uncertainty",
    "extract",
    "gradcheck",
    "schedule_ratios",
    "uet_loss",
]
