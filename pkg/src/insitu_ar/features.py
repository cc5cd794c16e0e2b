"""Feature extraction built on the AR model and the tracker.

* :func:`roi_search` finds the break-point radius: the outermost location
  whose predicted peak reaches a threshold.
* :func:`derive_delay_time` maps the first inflection of a channel to a
  delay time.
* :func:`should_terminate` decides when the model is accurate enough to
  stop the host simulation.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ar_core import ARModel, forward_many, holdout_error
from .errors import UsageError
from .sampling import SampleHistory
from .tracking import TrackerConfig, TrackEvent, detect_inflections, peak_value


class ActionFlag(str, enum.Enum):
    STOP_SIMULATION = "StopSimulation"
    CONTINUE_NO_COLLECT = "ContinueNoCollect"
    CONTINUE_COLLECT = "ContinueCollect"


class Decision(str, enum.Enum):
    STOP = "Stop"
    CONTINUE = "Continue"


@dataclass(frozen=True)
class ThresholdQuery:
    threshold_fraction: float
    reference_value: float
    radius_step: int = 1
    search_origin: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold_fraction <= 1.0:
            raise UsageError(
                f"threshold_fraction must lie in (0, 1], got {self.threshold_fraction}")
        if not self.absolute_threshold > 0:
            raise UsageError("threshold_fraction * reference_value must be positive")
        if self.radius_step < 1:
            raise UsageError(f"radius_step must be >= 1, got {self.radius_step}")

    @property
    def absolute_threshold(self) -> float:
        return self.threshold_fraction * self.reference_value


@dataclass
class RoiResult:
    radius: int
    detected_at_iteration: int | None
    predicted_peak: float
    terminated_early: bool = False
    exhausted: bool = False


@dataclass
class DelayTimeResult:
    channel: str
    delay_time: float
    source_event: TrackEvent | None

    @property
    def detected(self) -> bool:
        return self.source_event is not None


@dataclass
class TerminationPolicy:
    accuracy_threshold: float = 0.05
    min_training_fraction: float = 0.40
    action_flag: ActionFlag = ActionFlag.STOP_SIMULATION

    def __post_init__(self):
        self.action_flag = ActionFlag(self.action_flag)
        if not self.accuracy_threshold >= 0:
            raise UsageError(f"accuracy_threshold must be >= 0, got {self.accuracy_threshold}")
        if not 0.0 < self.min_training_fraction <= 1.0:
            raise UsageError(
                f"min_training_fraction must lie in (0, 1], got {self.min_training_fraction}")


@dataclass
class TerminationDecision:
    decision: Decision
    holdout_error: float | None

    @property
    def stop(self) -> bool:
        return self.decision is Decision.STOP


def should_terminate(policy: TerminationPolicy, model: ARModel, holdout, elapsed_fraction: float,
                     floor: float = 1e-12) -> TerminationDecision:
    """Stop once enough of the run has elapsed and the holdout error is small.

    ``holdout`` is either a pair collection or an already measured error.
    The error is only computed once the elapsed-fraction gate is open.
    """
    if elapsed_fraction < policy.min_training_fraction:
        return TerminationDecision(Decision.CONTINUE, None)
    if isinstance(holdout, (int, float)):
        err = float(holdout)
    else:
        err = holdout_error(model, holdout, floor)
    decision = Decision.STOP if err <= policy.accuracy_threshold else Decision.CONTINUE
    return TerminationDecision(decision, err)


# region-of-interest search

def predicted_profile(model: ARModel, history: SampleHistory, location: int, *,
                      stride: int = 1) -> tuple[np.ndarray, np.ndarray] | None:
    """Model-predicted temporal profile at ``location``.

    The profile is forwarded along the spatial axis from the nearest observed
    stencil below ``location``.  Each seed is an observed window
    ``[V(e, s), V(e - stride, s), ...]`` for an edge location ``e``; every
    forwarding step moves one stride outward and ``lag`` iterations later, so
    ``k = (location - e) / stride`` steps predict ``V(location, s + k * lag)``.
    Returns ``(iterations, values)``, or ``None`` when no stencil below
    ``location`` is observed.
    """
    n = model.order_n
    observed = set(history.locations())
    edge = location - stride
    while edge >= 0:
        stencil = [edge - i * stride for i in range(n)]
        if all(s in observed for s in stencil):
            break
        edge -= stride
    else:
        return None
    steps = (location - edge) // stride
    common = None
    for s in stencil:
        s_its, _ = history.series(s)
        common = set(s_its.tolist()) if common is None else common & set(s_its.tolist())
    src_its = np.array(sorted(common), dtype=np.int64)
    if src_its.size == 0:
        return None
    seeds = np.array([[history.get(s, int(t)) for s in stencil] for t in src_its])
    preds = forward_many(model, seeds, steps)[:, -1]
    return src_its + steps * model.lag, preds


def roi_search(model: ARModel, query: ThresholdQuery, history: SampleHistory, *,
               stride: int = 1, lower_bound: int | None = None,
               detected_at_iteration: int | None = None,
               profile_fn: Callable[[int], tuple[np.ndarray, np.ndarray] | None] | None = None,
               ) -> RoiResult:
    """Outside-in search for the break-point radius.

    Starting at ``query.search_origin`` the predicted peak at each candidate is
    compared with the absolute threshold; candidates that fall short move the
    search inward by ``radius_step``.  When nothing reaches the threshold the
    innermost observed location is returned; ``exhausted`` is set unless
    its own peak reaches the threshold.

    ``profile_fn`` replaces model predictions (for oracle runs); it maps a
    location to ``(iterations, values)``.
    """
    if profile_fn is None and not model.trained:
        raise UsageError("roi_search needs a model that completed at least one training step")
    observed = history.locations()
    if lower_bound is None:
        lower_bound = observed[0] if observed else 0
    threshold = query.absolute_threshold
    get_profile = profile_fn or (lambda loc: predicted_profile(model, history, loc, stride=stride))
    location = query.search_origin
    best_peak = math.nan
    innermost = location
    while location >= lower_bound:
        prof = get_profile(location)
        if prof is not None and len(prof[1]):
            _, peak = peak_value(*prof)
            innermost = location
            best_peak = peak
            if peak >= threshold:
                return RoiResult(location, detected_at_iteration, float(peak))
        location -= query.radius_step
    if profile_fn is None and observed:
        # fall back to the innermost observed location itself
        its, vals = history.series(observed[0])
        if vals.size:
            best_peak = peak_value(its, vals)[1]
        innermost = observed[0]
    exhausted = not (best_peak >= threshold)
    return RoiResult(innermost, detected_at_iteration, float(best_peak), exhausted=exhausted)


# delay time

def derive_delay_time(channel: str, series, config: TrackerConfig | None = None, *,
                      time_axis: Callable[[float], float] | None = None) -> DelayTimeResult:
    """Delay time of the first inflection in ``series``.

    ``series`` is ``(iterations, values)``; ``time_axis`` maps an iteration to
    simulation time (identity by default).  When no inflection is found the
    result has ``source_event=None`` and ``delay_time=nan``.
    """
    config = config or TrackerConfig()
    events = detect_inflections(series, config.smoothing_width, config.min_slope_fraction)
    if not events:
        return DelayTimeResult(channel, math.nan, None)
    first = min(events, key=lambda e: e.iteration)
    to_time = time_axis or (lambda it: float(it))
    return DelayTimeResult(channel, float(to_time(first.iteration)), first)


def derive_delay_times(channels: dict, config: TrackerConfig | None = None, *,
                       time_axis=None) -> list[DelayTimeResult]:
    return [derive_delay_time(name, series, config, time_axis=time_axis)
            for name, series in channels.items()]


__all__ = [
    "ActionFlag", "Decision", "DelayTimeResult", "RoiResult", "TerminationDecision",
    "TerminationPolicy", "ThresholdQuery", "derive_delay_time", "derive_delay_times",
    "predicted_profile", "roi_search", "should_terminate",
]
