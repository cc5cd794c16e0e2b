"""In-situ feature extraction for iterative simulations.

Samples a diagnostic variable during the simulation loop, fits a linear
auto-regressive model by mini-batch gradient descent, and extracts
threshold-crossing regions and inflection delay times from its predictions,
optionally signalling the host to stop early.
"""
from .ar_core import (
    ARModel,
    forward_many,
    forward_space,
    forward_time,
    holdout_error,
    least_squares,
    predict,
    predict_many,
    train_step,
)
from .errors import ConfigError, DataError, DimensionError, DivergenceError, InsituError, UsageError
from .features import (
    ActionFlag,
    Decision,
    DelayTimeResult,
    RoiResult,
    TerminationPolicy,
    ThresholdQuery,
    derive_delay_time,
    roi_search,
    should_terminate,
)
from .kernels import BACKEND
from .region_api import (
    AnalyzerConfig,
    DetectionStatus,
    RegionConfig,
    RegionHandle,
    StatusChannel,
    item_para_init,
    poll_status,
    publish_status,
    region_add_analysis,
    region_begin,
    region_end,
    region_finalize,
    region_init,
)
from .sampling import MiniBatch, SampleHistory, SamplePoint, SamplingSpec, matches, windows_from_batch
from .tracking import EventKind, TrackEvent, Tracker, detect_inflections, gradient_triple

__version__ = "0.1.0"

__all__ = [
    "ARModel", "forward_many", "forward_space", "forward_time", "holdout_error",
    "least_squares", "predict", "predict_many", "train_step",
    "ConfigError", "DataError", "DimensionError", "DivergenceError", "InsituError", "UsageError",
    "ActionFlag", "Decision", "DelayTimeResult", "RoiResult", "TerminationPolicy",
    "ThresholdQuery", "derive_delay_time", "roi_search", "should_terminate",
    "BACKEND",
    "AnalyzerConfig", "DetectionStatus", "RegionConfig", "RegionHandle", "StatusChannel",
    "item_para_init", "poll_status", "publish_status", "region_add_analysis",
    "region_begin", "region_end", "region_finalize", "region_init",
    "MiniBatch", "SampleHistory", "SamplePoint", "SamplingSpec", "matches", "windows_from_batch",
    "EventKind", "TrackEvent", "Tracker", "detect_inflections", "gradient_triple",
]
