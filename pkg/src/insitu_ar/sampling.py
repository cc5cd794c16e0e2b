"""Temporal/spatial sampling specs, mini-batches and supervised pair assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

import numpy as np

from .errors import DataError, UsageError

AXES = ("space", "time")


@dataclass(frozen=True)
class SamplingSpec:
    """Inclusive arithmetic progression ``begin, begin+step, ... <= end``."""

    begin: int
    end: int
    step: int = 1

    def __post_init__(self):
        for name in ("begin", "end", "step"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise UsageError(f"{name} must be an integer, got {value!r}")
        if self.begin < 0:
            raise UsageError(f"begin must be non-negative, got {self.begin}")
        if self.begin > self.end:
            raise UsageError(f"begin ({self.begin}) must not exceed end ({self.end})")
        if self.step < 1:
            raise UsageError(f"step must be >= 1, got {self.step}")

    def __contains__(self, index) -> bool:
        return self.begin <= index <= self.end and (index - self.begin) % self.step == 0

    def __len__(self) -> int:
        return (self.end - self.begin) // self.step + 1

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.begin, self.end + 1, self.step))

    def indices(self) -> range:
        return range(self.begin, self.end + 1, self.step)

    @property
    def last(self) -> int:
        return self.begin + (len(self) - 1) * self.step

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.begin, self.end, self.step)


def matches(temporal: SamplingSpec, spatial: SamplingSpec, iteration: int, location: int) -> bool:
    return iteration in temporal and location in spatial


class SamplePoint(NamedTuple):
    location: int
    iteration: int
    value: float


class MiniBatch:
    """Fixed-capacity buffer that hands its entries off when it fills.

    ``consumer`` (optional) is called with the full entry list on every
    handoff; :meth:`collect` also returns that list so callers can drive
    training inline.
    """

    def __init__(self, capacity: int = 32, consumer: Callable[[list], None] | None = None):
        if capacity < 1:
            raise UsageError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.consumer = consumer
        self.entries: list[SamplePoint] = []
        self.handoffs = 0
        self.accepted = 0

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def collect(self, point: SamplePoint) -> list[SamplePoint] | None:
        if not math.isfinite(point.value):
            raise DataError(
                f"non-finite value {point.value!r} at location {point.location}, "
                f"iteration {point.iteration}",
                location=point.location, iteration=point.iteration)
        if self.entries:
            last = self.entries[-1]
            if (point.iteration, point.location) < (last.iteration, last.location):
                raise UsageError(
                    f"sample ({point.location}, {point.iteration}) collected out of order")
        self.entries.append(point)
        self.accepted += 1
        if len(self.entries) < self.capacity:
            return None
        handoff, self.entries = self.entries, []
        self.handoffs += 1
        if self.consumer is not None:
            self.consumer(handoff)
        return handoff

    def collect_many(self, points) -> list[list[SamplePoint]]:
        """Collect an ordered run of points; returns every handoff it triggered.

        Equivalent to calling :meth:`collect` on each point in turn.
        """
        points = list(points)
        if not points:
            return []
        bad = [p for p in points if not math.isfinite(p.value)]
        if bad:
            self.collect(bad[0])  # raises with the offending point
        keys = [(p.iteration, p.location) for p in points]
        if self.entries:
            last = self.entries[-1]
            keys.insert(0, (last.iteration, last.location))
        if any(b < a for a, b in zip(keys, keys[1:])):
            for p in points:  # find and report the first out-of-order point
                self.collect(p)
        handoffs = []
        self.accepted += len(points)
        entries = self.entries + points
        cap = self.capacity
        while len(entries) >= cap:
            handoff, entries = entries[:cap], entries[cap:]
            self.handoffs += 1
            if self.consumer is not None:
                self.consumer(handoff)
            handoffs.append(handoff)
        self.entries = entries
        return handoffs

    def drain(self) -> list[SamplePoint]:
        """Hand off whatever is buffered, full or not."""
        handoff, self.entries = self.entries, []
        return handoff


def collect(batch: MiniBatch, point: SamplePoint) -> list[SamplePoint] | None:
    return batch.collect(point)


class SampleHistory:
    """Every collected sample, indexed by location then iteration."""

    def __init__(self):
        self._data: dict[int, dict[int, float]] = {}
        self.count = 0

    def add(self, point: SamplePoint) -> None:
        self._data.setdefault(point.location, {})[point.iteration] = point.value
        self.count += 1

    def extend(self, points) -> None:
        data = self._data
        n = 0
        for p in points:
            row = data.get(p.location)
            if row is None:
                row = data[p.location] = {}
            row[p.iteration] = p.value
            n += 1
        self.count += n

    def get(self, location: int, iteration: int, default=None):
        row = self._data.get(location)
        if row is None:
            return default
        return row.get(iteration, default)

    def __contains__(self, key) -> bool:
        location, iteration = key
        row = self._data.get(location)
        return row is not None and iteration in row

    def locations(self) -> list[int]:
        return sorted(self._data)

    def series(self, location: int) -> tuple[np.ndarray, np.ndarray]:
        """Iterations and values recorded at ``location``, sorted by iteration."""
        row = self._data.get(location, {})
        its = np.array(sorted(row), dtype=np.int64)
        vals = np.array([row[i] for i in its], dtype=np.float64)
        return its, vals

    def last_iteration(self) -> int | None:
        last = [max(row) for row in self._data.values() if row]
        return max(last) if last else None

    @classmethod
    def from_points(cls, points) -> "SampleHistory":
        h = cls()
        h.extend(points)
        return h


@dataclass
class Pairs:
    """Supervised ``(window, target)`` pairs built from samples.

    ``keys`` holds the ``(location, iteration)`` of each target; ``skipped``
    counts samples that lacked a complete history.
    """

    windows: np.ndarray
    targets: np.ndarray
    keys: list = field(default_factory=list)
    skipped: int = 0

    def __len__(self):
        return self.targets.shape[0]

    def __iter__(self):
        return iter(zip(self.windows, self.targets))

    def __getitem__(self, idx) -> "Pairs":
        idx = np.asarray(idx) if not isinstance(idx, slice) else idx
        keys = [self.keys[i] for i in np.arange(len(self))[idx]] if self.keys else []
        return Pairs(self.windows[idx], self.targets[idx], keys, 0)

    @classmethod
    def empty(cls, order_n: int) -> "Pairs":
        return cls(np.empty((0, order_n)), np.empty(0), [], 0)

    @classmethod
    def concat(cls, parts, order_n: int) -> "Pairs":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(order_n)
        return cls(
            np.vstack([p.windows for p in parts]),
            np.concatenate([p.targets for p in parts]),
            [k for p in parts for k in p.keys],
            sum(p.skipped for p in parts),
        )


def window_offsets(order_n: int, lag: int, axis: str = "space", stride: int = 1):
    """``(dl, dt)`` offsets of each window entry relative to the target.

    Entry ``i`` of a window is ``V(l - dl_i, t - dt_i)``; on the spatial axis
    ``dl_i = (i+1) * stride, dt_i = lag``, on the time axis
    ``dl_i = 0, dt_i = lag + (i+1) * stride``.
    """
    if axis not in AXES:
        raise UsageError(f"axis must be one of {AXES}, got {axis!r}")
    if axis == "space":
        return [((i + 1) * stride, lag) for i in range(order_n)]
    return [(0, lag + (i + 1) * stride) for i in range(order_n)]


def windows_from_batch(entries, order_n: int, lag: int, history: SampleHistory | None = None,
                       axis: str = "space", stride: int = 1) -> Pairs:
    """Build one ``(window, target)`` pair per entry whose history is complete.

    Window values are looked up in ``history`` (which should already contain
    ``entries``); without one, only the entries themselves are searched.
    Entries lacking history are counted in ``Pairs.skipped``.
    """
    entries = list(entries)
    if history is None:
        history = SampleHistory.from_points(entries)
    offsets = window_offsets(order_n, lag, axis, stride)
    rows = []
    targets = []
    keys = []
    skipped = 0
    get = history.get
    for p in entries:
        w = []
        for dl, dt in offsets:
            v = get(p.location - dl, p.iteration - dt)
            if v is None:
                break
            w.append(v)
        else:
            rows.append(w)
            targets.append(p.value)
            keys.append((p.location, p.iteration))
            continue
        skipped += 1
    if not rows:
        out = Pairs.empty(order_n)
        out.skipped = skipped
        return out
    return Pairs(np.array(rows, dtype=np.float64), np.array(targets, dtype=np.float64),
                 keys, skipped)
