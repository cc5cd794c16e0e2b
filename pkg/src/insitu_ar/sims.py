"""Synthetic stand-ins for the host simulations, with analytic ground truth.

``BlastField`` is a radially attenuating Gaussian pulse::

    v(l, t) = V0 * (1 + l)**(-p) * exp(-(t - l / c)**2 / (2 w**2)) + noise

``MergerCurves`` holds four logistic diagnostic channels whose inflection
(knee) times are construction parameters.  Both expose a provider with the
``(domain, location) -> value`` prototype used by :mod:`insitu_ar.region_api`;
for merger curves the channel index plays the role of the location.

The host-loop half of the module wraps a field in a simulation object that
burns a fixed amount of floating-point work per iteration, so that overhead
and early-termination timings are meaningful.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UsageError

# blast wave


@dataclass(frozen=True)
class BlastField:
    domain_size: int = 30
    wave_speed: float = 0.1
    attenuation_exponent: float = 1.2
    pulse_width: float = 40.0
    initial_velocity: float = 1.0
    iterations: int = 932
    seed: int = 0
    noise_amplitude: float = 0.0

    def __post_init__(self):
        if self.domain_size < 1:
            raise UsageError(f"domain_size must be >= 1, got {self.domain_size}")
        if self.iterations < 1:
            raise UsageError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("wave_speed", "attenuation_exponent", "pulse_width", "initial_velocity"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive, got {getattr(self, name)}")
        if self.noise_amplitude < 0:
            raise UsageError(f"noise_amplitude must be >= 0, got {self.noise_amplitude}")

    @property
    def locations(self) -> range:
        return range(self.domain_size + 1)

    def clean_field(self) -> np.ndarray:
        l = np.arange(self.domain_size + 1, dtype=np.float64)[:, None]
        t = np.arange(self.iterations, dtype=np.float64)[None, :]
        arrival = l / self.wave_speed
        return (self.initial_velocity * (1.0 + l) ** (-self.attenuation_exponent)
                * np.exp(-((t - arrival) ** 2) / (2.0 * self.pulse_width ** 2)))

    def full_field(self) -> np.ndarray:
        """All values as a ``(domain_size + 1, iterations)`` array."""
        return _blast_cache(self)


_FIELD_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def _blast_cache(bf: BlastField) -> np.ndarray:
    with _CACHE_LOCK:
        arr = _FIELD_CACHE.get(bf)
        if arr is None:
            arr = bf.clean_field()
            if bf.noise_amplitude > 0:
                rng = np.random.default_rng(bf.seed)
                arr = arr + bf.noise_amplitude * bf.initial_velocity * rng.standard_normal(arr.shape)
            arr.setflags(write=False)
            if len(_FIELD_CACHE) > 16:
                _FIELD_CACHE.clear()
            _FIELD_CACHE[bf] = arr
        return arr


def blast_value(bf: BlastField, location: int, iteration: int) -> float:
    if not 0 <= location <= bf.domain_size:
        raise UsageError(f"location {location} outside 0..{bf.domain_size}")
    if not 0 <= iteration < bf.iterations:
        raise UsageError(f"iteration {iteration} outside 0..{bf.iterations - 1}")
    return float(bf.full_field()[location, iteration])


def blast_peaks(bf: BlastField) -> np.ndarray:
    """Temporal peak of every location."""
    return bf.full_field().max(axis=1)


def blast_ground_truth_radius(bf: BlastField, threshold_fraction: float) -> int:
    """Outermost location whose true temporal peak reaches ``fraction * V0``."""
    if not 0.0 < threshold_fraction <= 1.0:
        raise UsageError(f"threshold_fraction must lie in (0, 1], got {threshold_fraction}")
    threshold = threshold_fraction * bf.initial_velocity
    # a relative tolerance keeps fraction 1.0 on the source despite rounding
    hits = np.flatnonzero(blast_peaks(bf) >= threshold * (1.0 - 1e-12))
    return int(hits.max()) if hits.size else 0


# merger curves

CHANNELS = ("temperature", "angular_momentum", "mass", "energy")


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    base: float
    amplitude: float
    knee_time: float
    steepness: float = 1.0
    rising: bool = True

    def __post_init__(self):
        if not self.steepness > 0:
            raise UsageError(f"steepness must be positive, got {self.steepness}")

    def value(self, time_):
        """Logistic step of width ``steepness`` (time units) centred on the knee.

        ``base`` is the pre-knee plateau; the curve moves by ``amplitude``
        upwards (rising) or downwards (falling) across the knee.
        """
        z = (np.asarray(time_, dtype=np.float64) - self.knee_time) / self.steepness
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        sign = 1.0 if self.rising else -1.0
        return self.base + sign * self.amplitude * s


def default_channels(knees=(30.8, 30.3, 31.2, 32.2)) -> tuple[ChannelSpec, ...]:
    t, a, m, e = knees
    return (
        ChannelSpec("temperature", base=1.0e8, amplitude=4.0e9, knee_time=t, steepness=1.5),
        ChannelSpec("angular_momentum", base=3.2e51, amplitude=3.0e51, knee_time=a,
                    steepness=1.5, rising=False),
        ChannelSpec("mass", base=2.8e33, amplitude=1.2e33, knee_time=m, steepness=1.5,
                    rising=False),
        ChannelSpec("energy", base=1.0e49, amplitude=8.0e50, knee_time=e, steepness=1.5),
    )


@dataclass(frozen=True)
class MergerCurves:
    channels: tuple = field(default_factory=default_channels)
    iterations: int = 256
    dt: float = 0.5
    seed: int = 0
    noise_amplitude: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise UsageError(f"iterations must be >= 1, got {self.iterations}")
        if not self.dt > 0:
            raise UsageError(f"dt must be positive, got {self.dt}")
        if self.noise_amplitude < 0:
            raise UsageError(f"noise_amplitude must be >= 0, got {self.noise_amplitude}")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def time(self, iteration):
        return np.asarray(iteration, dtype=np.float64) * self.dt

    def channel_index(self, channel) -> int:
        if isinstance(channel, str):
            try:
                return self.names.index(channel)
            except ValueError:
                raise UsageError(f"unknown channel {channel!r}; known: {self.names}") from None
        if not 0 <= channel < len(self.channels):
            raise UsageError(f"channel index {channel} outside 0..{len(self.channels) - 1}")
        return int(channel)

    def full_field(self) -> np.ndarray:
        """All channels as a ``(n_channels, iterations)`` array."""
        return _merger_cache(self)


def _merger_cache(mc: MergerCurves) -> np.ndarray:
    with _CACHE_LOCK:
        arr = _FIELD_CACHE.get(mc)
        if arr is None:
            t = mc.time(np.arange(mc.iterations))
            arr = np.vstack([c.value(t) for c in mc.channels])
            if mc.noise_amplitude > 0:
                rng = np.random.default_rng(mc.seed)
                amp = np.array([abs(c.amplitude) for c in mc.channels])[:, None]
                arr = arr + mc.noise_amplitude * amp * rng.standard_normal(arr.shape)
            arr.setflags(write=False)
            _FIELD_CACHE[mc] = arr
        return arr


def merger_value(mc: MergerCurves, channel, iteration) -> float:
    """Value of ``channel`` (name or index) at ``iteration``.

    Integer iterations read the stored (possibly noisy) curves; fractional
    iterations evaluate the noiseless analytic curve.
    """
    idx = mc.channel_index(channel)
    if not 0 <= iteration <= mc.iterations - 1:
        raise UsageError(f"iteration {iteration} outside 0..{mc.iterations - 1}")
    if float(iteration).is_integer():
        return float(mc.full_field()[idx, int(iteration)])
    return float(mc.channels[idx].value(mc.time(iteration)))


def knee_iterations(mc: MergerCurves) -> dict[str, float]:
    return {c.name: c.knee_time / mc.dt for c in mc.channels}


# host simulations


@dataclass(frozen=True)
class SyntheticWork:
    """Floating-point work performed by one simulation step.

    Each step applies ``repeats`` rounds of the logistic map to a state vector
    of ``cells`` entries.  The state is small enough to stay cache resident,
    which keeps the cost per step steady from run to run.
    """

    cells: int = 512
    repeats: int = 2400

    def __post_init__(self):
        if self.cells < 1 or self.repeats < 0:
            raise UsageError("cells must be >= 1 and repeats >= 0")


class HostSimulation:
    """A deterministic iterative "simulation" with a readable diagnostic field.

    The simulation object doubles as the opaque domain handle handed to
    providers: ``sim.iteration`` is the iteration being executed and
    ``sim.values`` the diagnostic array indexed ``[location, iteration]``.
    """

    def __init__(self, values: np.ndarray, work: SyntheticWork | None = None, seed: int = 0):
        self.values = values
        self.work = work or SyntheticWork()
        self.iteration = -1
        rng = np.random.default_rng(seed)
        self.state = rng.uniform(0.1, 0.9, self.work.cells)
        self._scratch = (np.empty(self.work.cells), np.empty(self.work.cells))

    @property
    def total_iterations(self) -> int:
        return self.values.shape[1]

    @property
    def location_count(self) -> int:
        return self.values.shape[0]

    def advance(self, iteration: int) -> None:
        self.iteration = iteration
        x = self.state
        a, b = self._scratch
        # chaotic logistic map x <- 3.9 x (1 - x): bounded state, identical cost
        # every iteration, updated in place so no step allocates
        for _ in range(self.work.repeats):
            np.multiply(x, 3.9, out=a)
            np.subtract(1.0, x, out=b)
            np.multiply(a, b, out=x)

    def checksum(self) -> bytes:
        return self.state.tobytes()


def field_provider(domain: HostSimulation, location: int) -> float:
    """Provider reading the diagnostic at the simulation's current iteration."""
    return float(domain.values[location, domain.iteration])


class BlastSimulation(HostSimulation):
    def __init__(self, bf: BlastField | None = None, work: SyntheticWork | None = None):
        self.field = bf or BlastField()
        super().__init__(self.field.full_field(), work, self.field.seed)


class MergerSimulation(HostSimulation):
    def __init__(self, mc: MergerCurves | None = None, work: SyntheticWork | None = None):
        self.curves = mc or MergerCurves()
        super().__init__(self.curves.full_field(), work, self.curves.seed)


@dataclass
class RunSummary:
    iterations_executed: int
    wall_time: float
    final_status: object = None
    stop_iteration: int | None = None
    reports: list = field(default_factory=list)
    step_times: list = field(default_factory=list)


def run_host_loop(sim: HostSimulation, handle=None, stop_on_flag: bool = True, *,
                  iterations: int | None = None, keep_reports: bool = False) -> RunSummary:
    """Drive ``region_begin`` / step / ``region_end`` for every iteration.

    ``handle=None`` runs the uninstrumented loop.  With ``stop_on_flag`` the
    loop breaks after the iteration whose report asks to stop the simulation.
    """
    from . import region_api as api

    total = sim.total_iterations if iterations is None else iterations
    reports = []
    stop_iteration = None
    executed = 0
    t0 = time.perf_counter()
    if handle is None:
        for it in range(total):
            sim.advance(it)
        executed = total
    else:
        for it in range(total):
            api.region_begin(handle)
            sim.advance(it)
            report = api.region_end(handle)
            executed += 1
            if keep_reports:
                reports.append(report)
            if report.stop_requested and stop_iteration is None:
                stop_iteration = it
                if stop_on_flag:
                    break
    wall = time.perf_counter() - t0
    final = handle.channel.poll() if handle is not None else None
    return RunSummary(executed, wall, final, stop_iteration, reports)


class _SteppedRun:
    """One host loop advanced an iteration at a time, timing only its own steps."""

    def __init__(self, sim: HostSimulation, handle, stop_on_flag: bool, total: int):
        self.sim, self.handle, self.stop_on_flag, self.total = sim, handle, stop_on_flag, total
        self.executed = 0
        self.wall = 0.0
        self.step_times = []
        self.stop_iteration = None
        self.done = total == 0

    def step(self, api) -> None:
        it = self.executed
        t0 = time.perf_counter()
        if self.handle is None:
            self.sim.advance(it)
        else:
            api.region_begin(self.handle)
            self.sim.advance(it)
            report = api.region_end(self.handle)
            if report.stop_requested and self.stop_iteration is None:
                self.stop_iteration = it
                self.done = self.stop_on_flag
        dt = time.perf_counter() - t0
        self.wall += dt
        self.step_times.append(dt)
        self.executed += 1
        self.done = self.done or self.executed == self.total

    def summary(self) -> RunSummary:
        final = self.handle.channel.poll() if self.handle is not None else None
        return RunSummary(self.executed, self.wall, final, self.stop_iteration,
                          step_times=self.step_times)


def run_interleaved(runs, *, iterations: int | None = None) -> list[RunSummary]:
    """Run several host loops side by side, one iteration of each in turn.

    ``runs`` holds ``(sim, handle, stop_on_flag)`` triples with the same
    meaning as the arguments of :func:`run_host_loop`.  Each run's
    ``wall_time`` is the sum of its own timed iterations, which are also
    kept individually in ``step_times``.  Because the loops
    share every stretch of machine time, slow drift in machine speed affects
    them alike, which makes their wall-time ratios far steadier than those
    of back-to-back runs.  The order within each round rotates so that no
    run always goes first.
    """
    from . import region_api as api

    loops = [_SteppedRun(sim, handle, stop, sim.total_iterations if iterations is None
                         else iterations) for sim, handle, stop in runs]
    k = 0
    while True:
        active = [r for r in loops if not r.done]
        if not active:
            break
        shift = k % len(active)
        for r in active[shift:] + active[:shift]:
            r.step(api)
        k += 1
    return [r.summary() for r in loops]


@dataclass
class RankTrace:
    rank: int
    iterations_executed: int = 0
    first_detected_at: int | None = None
    regressions: int = 0
    statuses: list = field(default_factory=list)


@dataclass
class RankedRun:
    traces: list
    publish_iteration: int | None
    wall_time: float
    final_status: object = None


def run_ranked(make_sim: Callable[[int], HostSimulation], make_handle: Callable, rank_count: int = 8,
               stop_on_flag: bool = True, iterations: int | None = None) -> RankedRun:
    """Lock-step multi-rank harness: one thread and one handle per rank.

    ``make_handle(rank, channel)`` builds each rank's handle on the shared
    status channel, or returns ``None`` for a rank that runs uninstrumented.  Every rank polls the channel in ``region_begin``; a
    barrier at the top of each iteration keeps the ranks in lock step, so a
    status published during iteration ``i`` must be visible to every rank at
    the start of iteration ``i + 1``.
    """
    from . import region_api as api

    if rank_count < 1:
        raise UsageError(f"rank_count must be >= 1, got {rank_count}")
    channel = api.StatusChannel()
    sims = [make_sim(r) for r in range(rank_count)]
    handles = [make_handle(r, channel) for r in range(rank_count)]
    total = sims[0].total_iterations if iterations is None else iterations
    barrier = threading.Barrier(rank_count)
    traces = [RankTrace(r) for r in range(rank_count)]
    errors: list = []

    def body(rank: int):
        sim, handle, trace = sims[rank], handles[rank], traces[rank]
        seen = False
        try:
            for it in range(total):
                barrier.wait()
                if handle is None:  # uninstrumented rank
                    sim.advance(it)
                    trace.iterations_executed += 1
                    continue
                status = api.poll_status(handle)
                trace.statuses.append((it, status.detected))
                if status.detected and not seen:
                    trace.first_detected_at = it
                if seen and not status.detected:
                    trace.regressions += 1
                seen = seen or status.detected
                if (stop_on_flag and status.detected
                        and status.action_flag is api.ActionFlag.STOP_SIMULATION):
                    break
                api.region_begin(handle)
                sim.advance(it)
                api.region_end(handle)
                trace.iterations_executed += 1
        except threading.BrokenBarrierError:
            pass
        except BaseException as exc:  # pragma: no cover - surfaced below
            errors.append(exc)
            barrier.abort()

    threads = [threading.Thread(target=body, args=(r,), name=f"rank-{r}") for r in range(rank_count)]
    t0 = time.perf_counter()
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    wall = time.perf_counter() - t0
    if errors:
        raise errors[0]
    final = channel.poll()
    publish_it = channel.first_detected_iteration
    return RankedRun(traces, publish_it, wall, final)


def dump_field_csv(values: np.ndarray, path_or_file, row_label: str = "location") -> None:
    """Write a field as long-format CSV: ``row_label,iteration,value``."""
    import csv

    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow([row_label, "iteration", "value"])
        for loc in range(values.shape[0]):
            for it in range(values.shape[1]):
                w.writerow([loc, it, repr(float(values[loc, it]))])
    finally:
        if own:
            fh.close()
