"""Streaming peak/valley tracking and inflection detection.

The detector looks at four consecutive samples and their three difference
quotients ``k1, k2, k3``.  A positive ``k2`` followed by a negative ``k3``
marks the third sample as a local maximum; the mirrored pattern marks a local
minimum.  Zero gradients never satisfy the strict tests, so plateaus stay
silent until the sign really flips.

Inflections are extrema of the derivative: :func:`detect_inflections`
differentiates the (optionally smoothed) series and runs the same detector on
the result.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, UsageError


class EventKind(str, enum.Enum):
    LOCAL_MAX = "LocalMax"
    LOCAL_MIN = "LocalMin"
    INFLECTION = "Inflection"


class TrackEvent(NamedTuple):
    kind: EventKind
    iteration: float
    value: float


def gradient_triple(points) -> tuple[float, float, float]:
    """Difference quotients of four ``(iteration, value)`` points."""
    pts = list(points)
    if len(pts) != 4:
        raise UsageError(f"gradient_triple needs exactly 4 points, got {len(pts)}")
    ks = []
    for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
        if not t1 > t0:
            raise UsageError(f"iterations must be strictly increasing, got {t0} then {t1}")
        ks.append((v1 - v0) / (t1 - t0))
    return ks[0], ks[1], ks[2]


def classify(k2: float, k3: float) -> EventKind | None:
    if k2 > 0 and k3 < 0:
        return EventKind.LOCAL_MAX
    if k2 < 0 and k3 > 0:
        return EventKind.LOCAL_MIN
    return None


class Tracker:
    """Rolling four-sample extremum detector fed one sample at a time."""

    def __init__(self, smoothing_width: int = 1):
        if smoothing_width < 1 or smoothing_width % 2 == 0:
            raise UsageError(f"smoothing_width must be a positive odd integer, got {smoothing_width}")
        self.smoothing_width = smoothing_width
        self.window: deque = deque(maxlen=4)
        self.emitted = 0
        self.events: list[TrackEvent] = []

    def reset(self):
        self.window.clear()

    def push(self, iteration, value) -> TrackEvent | None:
        if not math.isfinite(value):
            raise DataError(f"non-finite value {value!r} at iteration {iteration}",
                            iteration=iteration)
        if self.window and not iteration > self.window[-1][0]:
            raise UsageError(
                f"iteration {iteration} does not follow last pushed iteration {self.window[-1][0]}")
        self.window.append((iteration, value))
        if len(self.window) < 4:
            return None
        _, k2, k3 = gradient_triple(self.window)
        kind = classify(k2, k3)
        if kind is None:
            return None
        it, val = self.window[2]
        event = TrackEvent(kind, it, val)
        self.emitted += 1
        self.events.append(event)
        return event

    def feed(self, iterations, values) -> list[TrackEvent]:
        return [e for e in map(self.push, iterations, values) if e is not None]


def scan(iterations, values) -> list[TrackEvent]:
    """Batch equivalent of pushing a whole series through a fresh :class:`Tracker`."""
    its = np.asarray(iterations, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if its.shape != vals.shape:
        raise UsageError("iterations and values must have the same length")
    if its.size > 1 and not np.all(np.diff(its) > 0):
        raise UsageError("iterations must be strictly increasing")
    pos, kinds = kernels.scan_extrema(its, vals)
    out = []
    for p, k in zip(np.asarray(pos), np.asarray(kinds)):
        kind = EventKind.LOCAL_MAX if k > 0 else EventKind.LOCAL_MIN
        out.append(TrackEvent(kind, _num(its[p]), float(vals[p])))
    return out


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def peak_value(iterations, values) -> tuple[float, float]:
    """Largest tracked local maximum of a profile as ``(iteration, value)``.

    A profile with no interior maximum (monotone, or too short) falls back to
    its larger endpoint.
    """
    its = np.asarray(iterations, dtype=np.float64)
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise UsageError("cannot take the peak of an empty profile")
    maxima = [e for e in scan(its, vals) if e.kind is EventKind.LOCAL_MAX]
    if maxima:
        best = max(maxima, key=lambda e: e.value)
        return best.iteration, best.value
    j = 0 if vals[0] >= vals[-1] else vals.size - 1
    return _num(its[j]), float(vals[j])


def smooth(values, width: int) -> np.ndarray:
    """Centred moving average; the window shrinks symmetrically at the edges."""
    vals = np.asarray(values, dtype=np.float64)
    if width == 1 or vals.size == 0:
        return vals.copy()
    half = width // 2
    n = vals.size
    csum = np.concatenate([[0.0], np.cumsum(vals)])
    idx = np.arange(n)
    reach = np.minimum(np.minimum(idx, n - 1 - idx), half)
    lo = idx - reach
    hi = idx + reach + 1
    return (csum[hi] - csum[lo]) / (hi - lo)


def derivative(iterations, values) -> np.ndarray:
    """First derivative by (non-uniform) central differences."""
    return np.gradient(np.asarray(values, dtype=np.float64),
                       np.asarray(iterations, dtype=np.float64))


def _split_stream(stream):
    if isinstance(stream, tuple) and len(stream) == 2 and np.ndim(stream[0]) == 1:
        its, vals = stream
    else:
        pairs = list(stream)
        its = [p[0] for p in pairs]
        vals = [p[1] for p in pairs]
    return np.asarray(its, dtype=np.float64), np.asarray(vals, dtype=np.float64)


def detect_inflections(stream, smoothing_width: int = 1,
                       min_slope_fraction: float = 0.0) -> list[TrackEvent]:
    """Inflection points of a series as extrema of its first derivative.

    ``stream`` is an iterable of ``(iteration, value)`` or an
    ``(iterations, values)`` pair of arrays.  Both maxima and minima of the
    derivative are reported.  With ``min_slope_fraction > 0`` an event is kept
    only when ``|derivative|`` there reaches that fraction of the largest
    ``|derivative|`` in the series, which discards noise wiggles on plateaus.
    """
    its, vals = _split_stream(stream)
    if its.size < smoothing_width + 5:
        raise UsageError(
            f"stream of length {its.size} too short for smoothing width {smoothing_width}")
    if not np.all(np.isfinite(vals)):
        raise DataError("stream contains non-finite values")
    smoothed = smooth(vals, smoothing_width)
    d = derivative(its, smoothed)
    tracker = Tracker(smoothing_width)
    events = tracker.feed(its.tolist(), d.tolist())
    dmax = float(np.max(np.abs(d)))
    index = {t: i for i, t in enumerate(its.tolist())}
    out = []
    for e in events:
        if min_slope_fraction > 0 and abs(e.value) < min_slope_fraction * dmax:
            continue
        i = index[e.iteration]
        out.append(TrackEvent(EventKind.INFLECTION, _num(its[i]), float(vals[i])))
    return out


@dataclass
class TrackerConfig:
    smoothing_width: int = 1
    min_slope_fraction: float = 0.5

    def __post_init__(self):
        if self.smoothing_width < 1 or self.smoothing_width % 2 == 0:
            raise UsageError(
                f"smoothing_width must be a positive odd integer, got {self.smoothing_width}")
        if not 0.0 <= self.min_slope_fraction <= 1.0:
            raise UsageError(
                f"min_slope_fraction must lie in [0, 1], got {self.min_slope_fraction}")
