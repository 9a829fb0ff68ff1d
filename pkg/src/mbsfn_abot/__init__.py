"""Outage and ABOT simulation for OFDM MBSFN deployments."""

from .errors import MbsfnError
from .metrics import AbotCurve, OutageMap, abot, mean_abot, outage_map, rate_to_threshold, sweep
from .outage import OutageProblem, XiInput, conditional_outage, merge_equal_scales, weak_compositions, xi

__version__ = "1.0.0"

__all__ = [
    "AbotCurve",
    "MbsfnError",
    "OutageMap",
    "OutageProblem",
    "XiInput",
    "abot",
    "conditional_outage",
    "mean_abot",
    "merge_equal_scales",
    "outage_map",
    "rate_to_threshold",
    "sweep",
    "weak_compositions",
    "xi",
]
