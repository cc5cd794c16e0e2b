"""Instrumentation API: analyzers, begin/end region hooks and status broadcast.

Typical use inside a host loop::

    handle = region_init(total_iterations=932, domain=sim)
    temporal = item_para_init(0, 931, 1)
    spatial = item_para_init(0, 30, 1)
    region_add_analysis(handle, provider, temporal, spatial, "Curve_Fitting",
                        "threshold_break_point", threshold=0.05,
                        flag=ActionFlag.STOP_SIMULATION)
    for it in range(932):
        region_begin(handle)
        sim.advance(it)
        report = region_end(handle)
        if report.stop_requested:
            break

``region_end`` does all of the work synchronously: it samples the matched
locations through the provider, trains on full mini-batches, evaluates the
termination policy and publishes a :class:`DetectionStatus` on the handle's
:class:`StatusChannel`.  Stopping is advisory; the host decides whether to
break.
"""
from __future__ import annotations

import itertools
import json
import math
import threading
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable

import numpy as np

from .ar_core import ARModel, holdout_error, train_step
from .errors import ConfigError, DataError, UsageError
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
from .sampling import MiniBatch, Pairs, SampleHistory, SamplePoint, SamplingSpec, windows_from_batch
from .tracking import Tracker, TrackerConfig

CONFIG_SCHEMA = "insitu-ar/config@1"

METHODS = frozenset({"Curve_Fitting"})

# feature name -> (requires a threshold, model axis)
FEATURES = {
    "threshold_break_point": (True, "space"),
    "delay_time": (False, "time"),
}


# status broadcast


@dataclass(frozen=True)
class DetectionStatus:
    predicted_value: float = math.nan
    wavefront_rank: int = -1
    action_flag: ActionFlag = ActionFlag.CONTINUE_COLLECT
    detected: bool = False
    updated_at_iteration: int = -1


class StatusChannel:
    """Process-wide, last-write-wins status slot.

    ``publish`` and ``poll`` are safe from any thread.  Once a published
    status has ``detected=True`` every later poll reports ``detected=True``,
    whatever later publishers send.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._status = DetectionStatus()
        self.publishes = 0
        self.first_detected_iteration: int | None = None

    def publish(self, status: DetectionStatus) -> None:
        with self._lock:
            if self._status.detected and not status.detected:
                status = replace(status, detected=True, action_flag=self._status.action_flag)
            if status.detected and self.first_detected_iteration is None:
                self.first_detected_iteration = status.updated_at_iteration
            self._status = status
            self.publishes += 1

    def poll(self) -> DetectionStatus:
        # statuses are immutable and replaced whole, so reading the reference
        # needs no lock; publishers still serialise on it
        return self._status


# configuration


def _triple(value, name: str) -> SamplingSpec:
    if isinstance(value, SamplingSpec):
        return value
    try:
        begin, end, step = value
        return SamplingSpec(int(begin), int(end), int(step))
    except UsageError as exc:
        raise ConfigError(f"{name}: {exc}", field=name) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a (begin, end, step) triple, got {value!r}",
                          field=name) from exc


@dataclass
class AnalyzerConfig:
    """Everything about an analyzer except its provider callback.

    ``provider`` names an entry of the ``providers`` mapping passed to
    :func:`region_init`.  ``threshold`` is the fraction of ``reference_value``
    for threshold features; when ``reference_value`` is ``None`` the largest
    magnitude collected at the innermost sampled location is used.
    """

    temporal: Any
    spatial: Any
    feature: str = "threshold_break_point"
    method: str = "Curve_Fitting"
    provider: str = "default"
    threshold: float | None = None
    reference_value: float | None = None
    radius_step: int = 1
    action_flag: ActionFlag = ActionFlag.STOP_SIMULATION
    order_n: int = 3
    lag: int = 50
    learning_rate: float = 1e-2
    scale_decay: float = 0.9
    batch_capacity: int = 32
    accuracy_threshold: float = 0.05
    min_training_fraction: float = 0.40
    holdout_every: int = 10
    holdout_capacity: int = 64
    error_floor_fraction: float = 1e-2
    smoothing_width: int = 1
    min_slope_fraction: float = 0.5
    dt: float = 1.0

    def __post_init__(self):
        self.temporal = _triple(self.temporal, "temporal")
        self.spatial = _triple(self.spatial, "spatial")
        if self.method not in METHODS:
            raise ConfigError(
                f"method {self.method!r} is not registered; available: {sorted(METHODS)}",
                field="method")
        if self.feature not in FEATURES:
            raise ConfigError(
                f"feature {self.feature!r} is not supported; available: {sorted(FEATURES)}",
                field="feature")
        try:
            self.action_flag = ActionFlag(self.action_flag)
        except ValueError:
            raise ConfigError(f"unknown action flag {self.action_flag!r}",
                              field="action_flag") from None
        needs_threshold = FEATURES[self.feature][0]
        if needs_threshold and self.threshold is None:
            raise ConfigError(f"feature {self.feature!r} requires a threshold", field="threshold")
        if self.threshold is not None and not 0.0 < self.threshold <= 1.0:
            raise ConfigError(f"threshold must lie in (0, 1], got {self.threshold}",
                              field="threshold")
        checks = {
            "order_n": self.order_n >= 1,
            "lag": self.lag >= 0,
            "learning_rate": self.learning_rate > 0,
            "scale_decay": 0.0 <= self.scale_decay <= 1.0,
            "batch_capacity": self.batch_capacity >= 1,
            "radius_step": self.radius_step >= 1,
            "accuracy_threshold": self.accuracy_threshold >= 0,
            "min_training_fraction": 0.0 < self.min_training_fraction <= 1.0,
            "holdout_every": self.holdout_every >= 2,
            "holdout_capacity": self.holdout_capacity >= 1,
            "error_floor_fraction": self.error_floor_fraction >= 0,
            "smoothing_width": self.smoothing_width >= 1 and self.smoothing_width % 2 == 1,
            "min_slope_fraction": 0.0 <= self.min_slope_fraction <= 1.0,
            "dt": self.dt > 0,
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid {name}: {getattr(self, name)!r}", field=name)

    @property
    def axis(self) -> str:
        return FEATURES[self.feature][1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["temporal"] = list(self.temporal.as_tuple())
        d["spatial"] = list(self.spatial.as_tuple())
        d["action_flag"] = self.action_flag.value
        return d

    @classmethod
    def from_dict(cls, record: dict) -> "AnalyzerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(record) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown analyzer field {name!r}", field=name)
        for name in ("temporal", "spatial"):
            if name not in record:
                raise ConfigError(f"analyzer config is missing {name!r}", field=name)
        try:
            return cls(**record)
        except ConfigError:
            raise
        except UsageError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class RegionConfig:
    """Serializable description of a region: run length, ranks and analyzers."""

    total_iterations: int | None = None
    rank_count: int = 1
    analyzers: list = field(default_factory=list)

    def __post_init__(self):
        self.analyzers = [a if isinstance(a, AnalyzerConfig) else AnalyzerConfig.from_dict(a)
                          for a in self.analyzers]
        if self.total_iterations is not None and self.total_iterations < 1:
            raise ConfigError(f"total_iterations must be >= 1, got {self.total_iterations}",
                              field="total_iterations")
        if self.rank_count < 1:
            raise ConfigError(f"rank_count must be >= 1, got {self.rank_count}",
                              field="rank_count")

    def to_dict(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "total_iterations": self.total_iterations,
            "rank_count": self.rank_count,
            "analyzers": [a.to_dict() for a in self.analyzers],
        }

    @classmethod
    def from_dict(cls, record: dict) -> "RegionConfig":
        if record.get("schema") != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {record.get('schema')!r}",
                              field="schema")
        return cls(
            total_iterations=record.get("total_iterations"),
            rank_count=int(record.get("rank_count", 1)),
            analyzers=list(record.get("analyzers", [])),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "RegionConfig":
        return cls.from_dict(parse_json(text))


def parse_json(text: str) -> dict:
    """``json.loads`` that reports syntax errors as :class:`ConfigError` with line context."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}: {context.strip()!r}",
                          field=f"line {exc.lineno}") from exc


# analyzers


@dataclass
class AnalyzerReport:
    analyzer_id: int
    samples_collected: int = 0
    batches_trained: int = 0
    batch_loss: float = math.nan
    holdout_error: float | None = None
    decision: Decision = Decision.CONTINUE
    result: Any = None


class Analyzer:
    """One bound analysis: provider, sampling specs, model, batch and policy."""

    def __init__(self, analyzer_id: int, provider: Callable, config: AnalyzerConfig):
        if not callable(provider):
            raise ConfigError("provider must be callable", field="provider")
        self.id = analyzer_id
        self.provider = provider
        self.config = config
        self.temporal: SamplingSpec = config.temporal
        self.spatial: SamplingSpec = config.spatial
        self.method = config.method
        self.feature = config.feature
        self.threshold_query: ThresholdQuery | None = None
        self.termination = TerminationPolicy(config.accuracy_threshold,
                                             config.min_training_fraction, config.action_flag)
        self.tracker_config = TrackerConfig(config.smoothing_width, config.min_slope_fraction)
        self.tracker = Tracker(config.smoothing_width)
        self.model = ARModel(order_n=config.order_n, lag=config.lag,
                             learning_rate=config.learning_rate, scale_decay=config.scale_decay)
        self.batch = MiniBatch(config.batch_capacity)
        self.history = SampleHistory()
        self.holdout: deque = deque(maxlen=config.holdout_capacity)
        self.status = DetectionStatus(action_flag=config.action_flag)
        self.samples_total = 0
        self.batches_total = 0
        self.pairs_seen = 0
        self.skipped_total = 0
        self.magnitude = 0.0
        self.finished = False
        self.result: RoiResult | list[DelayTimeResult] | None = None
        self.last_decision = Decision.CONTINUE
        self.last_holdout_error: float | None = None
        self.predicted_value = math.nan
        self.wavefront_rank = -1
        self._error_stale = True
        self._extract_failed = False
        self._locations = list(self.spatial)

    @property
    def collecting(self) -> bool:
        return not self.finished or self.config.action_flag is ActionFlag.CONTINUE_COLLECT

    def holdout_pairs(self) -> Pairs:
        if not self.holdout:
            return Pairs.empty(self.model.order_n)
        windows, targets = zip(*self.holdout)
        return Pairs(np.array(windows), np.array(targets))

    def error_floor(self) -> float:
        return max(self.config.error_floor_fraction * self.magnitude, 1e-12)

    def _train(self, entries, report: AnalyzerReport) -> None:
        pairs = windows_from_batch(entries, self.model.order_n, self.model.lag, self.history,
                                   axis=self.config.axis, stride=self.spatial.step
                                   if self.config.axis == "space" else self.temporal.step)
        self.skipped_total += pairs.skipped
        if not len(pairs):
            return
        # every holdout_every-th pair is held out for the termination check
        every = self.config.holdout_every
        slots = (self.pairs_seen + np.arange(len(pairs))) % every == every - 1
        self.pairs_seen += len(pairs)
        for i in np.flatnonzero(slots):
            self.holdout.append((pairs.windows[i], pairs.targets[i]))
            self._error_stale = True
        keep = ~slots
        train = Pairs(pairs.windows[keep], pairs.targets[keep])
        if not len(train):
            return
        self.model, loss = train_step(self.model, train)
        self._error_stale = True
        self.batches_total += 1
        report.batches_trained += 1
        report.batch_loss = loss
        coeffs = self.model.coeffs
        self.predicted_value = float(coeffs[0] + coeffs[1:] @ train.windows[-1])

    def _extract(self, iteration: int, handle: "RegionHandle"):
        if self.feature == "threshold_break_point":
            reference = self.config.reference_value
            if reference is None:
                its, vals = self.history.series(self.spatial.begin)
                reference = float(np.max(np.abs(vals))) if vals.size else 0.0
            query = ThresholdQuery(self.config.threshold, reference, self.config.radius_step,
                                   self.spatial.last)
            self.threshold_query = query
            res = roi_search(self.model, query, self.history, stride=self.spatial.step,
                             lower_bound=self.spatial.begin, detected_at_iteration=iteration)
            res.terminated_early = self.config.action_flag is ActionFlag.STOP_SIMULATION
            return res
        dt = self.config.dt
        results = []
        for loc in self.history.locations():
            series = self.history.series(loc)
            if series[0].size < self.tracker_config.smoothing_width + 5:
                results.append(DelayTimeResult(str(loc), math.nan, None))
                continue
            results.append(derive_delay_time(str(loc), series, self.tracker_config,
                                             time_axis=lambda it: it * dt))
        return results

    @staticmethod
    def _result_complete(result) -> bool:
        if isinstance(result, list):
            return bool(result) and all(r.detected for r in result)
        return result is not None

    def idle_at(self, iteration: int) -> bool:
        """True when :meth:`end_iteration` would neither sample nor decide."""
        return not self.model.trained and not (self.collecting and iteration in self.temporal)

    def end_iteration(self, iteration: int, handle: "RegionHandle") -> AnalyzerReport:
        report = AnalyzerReport(self.id)
        if self.collecting and iteration in self.temporal:
            provider, domain, locs = self.provider, handle.domain, self._locations
            values = [float(provider(domain, loc)) for loc in locs]
            mags = [abs(v) for v in values]
            if not all(map(math.isfinite, values)):
                loc, value = next((l, v) for l, v in zip(locs, values) if not math.isfinite(v))
                raise DataError(
                    f"analyzer {self.id}: provider returned {value!r} at location {loc}, "
                    f"iteration {iteration}", location=loc, iteration=iteration,
                    analyzer=self.id)
            points = [SamplePoint(loc, iteration, v) for loc, v in zip(locs, values)]
            self.history.extend(points)
            for handoff in self.batch.collect_many(points):
                self._train(handoff, report)
            report.samples_collected = len(points)
            self.samples_total += len(points)
            peak = max(mags)
            if peak > self.magnitude:
                self.magnitude = peak
            self.wavefront_rank = locs[mags.index(peak)] % handle.rank_count
        if not self.finished:
            self._decide(iteration, handle, report)
        if report.samples_collected or report.decision is Decision.STOP:
            self.status = DetectionStatus(self.predicted_value, self.wavefront_rank,
                                          self.config.action_flag, self.finished, iteration)
        report.holdout_error = self.last_holdout_error if report.holdout_error is None \
            else report.holdout_error
        return report

    def _decide(self, iteration: int, handle: "RegionHandle", report: AnalyzerReport) -> None:
        elapsed = handle.elapsed_fraction(iteration, self.temporal)
        if not self.model.trained or not self.holdout:
            return
        if elapsed < self.termination.min_training_fraction:
            return
        if self._error_stale:
            self.last_holdout_error = holdout_error(self.model, self.holdout_pairs(),
                                                    self.error_floor())
            self._error_stale = False
        verdict = should_terminate(self.termination, self.model, self.last_holdout_error,
                                   elapsed)
        report.holdout_error = verdict.holdout_error
        if not verdict.stop or (self._extract_failed and not report.samples_collected):
            return
        result = self._extract(iteration, handle)
        self._extract_failed = not self._result_complete(result)
        if self._extract_failed:
            return
        self.result = result
        self.finished = True
        self.last_decision = Decision.STOP
        report.decision = Decision.STOP
        report.result = result
        if isinstance(result, RoiResult):
            self.predicted_value = result.predicted_peak
            self.wavefront_rank = result.radius % handle.rank_count

    def finalize(self, handle: "RegionHandle"):
        """Extract the feature from whatever was collected, if not already done."""
        if self.result is None and self.model.trained:
            last = self.history.last_iteration()
            self.result = self._extract(-1 if last is None else last, handle)
        return self.result


# handles

_handle_ids = itertools.count()


@dataclass
class RegionReport:
    iteration: int
    samples_collected: int = 0
    batches_trained: int = 0
    batch_loss: float = math.nan
    holdout_error: float | None = None
    decision: Decision = Decision.CONTINUE
    action_flag: ActionFlag | None = None
    stop_requested: bool = False
    # reports of the analyzers that sampled or decided this iteration
    analyzers: list = field(default_factory=list)


class RegionHandle:
    """Binds a set of analyzers to one simulation run."""

    def __init__(self, config: RegionConfig, domain=None, channel: StatusChannel | None = None):
        self.id = next(_handle_ids)
        self.config = config
        self.domain = domain
        self.channel = channel or StatusChannel()
        self.analyzers: list[Analyzer] = []
        self.iteration = 0
        self.in_region = False

    @property
    def rank_count(self) -> int:
        return self.config.rank_count

    def elapsed_fraction(self, iteration: int, temporal: SamplingSpec) -> float:
        total = self.config.total_iterations or (temporal.end + 1)
        return (iteration + 1) / total


def region_init(config: RegionConfig | dict | None = None, domain=None, *,
                providers: dict[str, Callable] | None = None,
                channel: StatusChannel | None = None,
                total_iterations: int | None = None, rank_count: int | None = None) -> RegionHandle:
    """Create a handle, building any analyzers that ``config`` defines.

    Analyzers may also be added afterwards with :func:`region_add_analysis`.
    """
    if config is None:
        config = RegionConfig()
    elif isinstance(config, dict):
        config = RegionConfig.from_dict(config) if "schema" in config else RegionConfig(**config)
    if total_iterations is not None or rank_count is not None:
        config = replace(config,
                         total_iterations=total_iterations or config.total_iterations,
                         rank_count=rank_count or config.rank_count)
    handle = RegionHandle(config, domain, channel)
    providers = providers or {}
    for acfg in config.analyzers:
        if acfg.provider not in providers:
            raise ConfigError(f"no provider registered under {acfg.provider!r}", field="provider")
        handle.analyzers.append(Analyzer(len(handle.analyzers), providers[acfg.provider], acfg))
    return handle


def item_para_init(begin: int, end: int, step: int = 1) -> SamplingSpec:
    return SamplingSpec(begin, end, step)


def region_add_analysis(handle: RegionHandle, provider: Callable, temporal, spatial,
                        method: str = "Curve_Fitting", feature: str = "threshold_break_point",
                        threshold: float | None = None,
                        flag: ActionFlag | str = ActionFlag.STOP_SIMULATION, **params) -> int:
    """Attach a new analyzer; returns its id (its index on the handle).

    Extra keyword arguments are :class:`AnalyzerConfig` hyperparameters.
    """
    if handle.in_region:
        raise UsageError("cannot add an analyzer between region_begin and region_end")
    try:
        acfg = AnalyzerConfig(temporal=temporal, spatial=spatial, method=method, feature=feature,
                              threshold=threshold, action_flag=flag, **params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    handle.config.analyzers.append(acfg)
    analyzer = Analyzer(len(handle.analyzers), provider, acfg)
    handle.analyzers.append(analyzer)
    return analyzer.id


def region_begin(handle: RegionHandle) -> DetectionStatus:
    """Open the region for the current iteration; returns the latest broadcast status."""
    if handle.in_region:
        raise UsageError(f"region_begin called twice without region_end "
                         f"(iteration {handle.iteration})")
    handle.in_region = True
    return handle.channel.poll()


def region_end(handle: RegionHandle) -> RegionReport:
    """Close the region: sample, train, decide and publish for every analyzer."""
    if not handle.in_region:
        raise UsageError(f"region_end called without region_begin (iteration {handle.iteration})")
    iteration = handle.iteration
    report = RegionReport(iteration)
    try:
        for analyzer in handle.analyzers:
            if analyzer.idle_at(iteration):
                continue
            before = analyzer.status
            ar = analyzer.end_iteration(iteration, handle)
            report.analyzers.append(ar)
            report.samples_collected += ar.samples_collected
            report.batches_trained += ar.batches_trained
            if ar.batches_trained:
                report.batch_loss = ar.batch_loss
            if ar.holdout_error is not None:
                report.holdout_error = ar.holdout_error
            if ar.decision is Decision.STOP:
                report.decision = Decision.STOP
                report.action_flag = analyzer.config.action_flag
            if analyzer.status is not before:
                handle.channel.publish(analyzer.status)
        # the host is asked to stop once every analyzer carrying the stop flag is done
        if report.decision is Decision.STOP:
            stoppers = [a for a in handle.analyzers
                        if a.config.action_flag is ActionFlag.STOP_SIMULATION]
            report.stop_requested = bool(stoppers) and all(a.finished for a in stoppers)
    finally:
        handle.in_region = False
        handle.iteration += 1
    return report


def publish_status(handle: RegionHandle, status: DetectionStatus) -> None:
    handle.channel.publish(status)


def poll_status(subscriber) -> DetectionStatus:
    """Latest status seen by ``subscriber`` (a handle or a channel)."""
    channel = subscriber.channel if isinstance(subscriber, RegionHandle) else subscriber
    return channel.poll()


def region_finalize(handle: RegionHandle) -> list:
    """Feature results of every analyzer, extracting any that are still pending."""
    if handle.in_region:
        raise UsageError("region_finalize called inside an open region")
    return [a.finalize(handle) for a in handle.analyzers]
