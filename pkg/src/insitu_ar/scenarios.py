"""Experiment configuration and scenario runners shared by the CLI and tests.

An :class:`ExperimentConfig` names a scenario (``blast`` or ``merger``), the
surrogate parameters, analyzer hyperparameters and sweep lists.  The runners
turn it into simulations and instrumented region handles and return plain
row dictionaries.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import region_api as api
from .ar_core import ARModel, holdout_error, train_step
from .errors import ConfigError
from .features import ThresholdQuery, roi_search
from .sampling import SampleHistory, SamplePoint, windows_from_batch
from .sims import (
    BlastField,
    BlastSimulation,
    ChannelSpec,
    MergerCurves,
    MergerSimulation,
    SyntheticWork,
    blast_ground_truth_radius,
    default_channels,
    field_provider,
    run_host_loop,
    run_interleaved,
    run_ranked,
)

EXPERIMENT_SCHEMA = "insitu-ar/experiment@1"
SCENARIOS = ("blast", "merger")

DEFAULT_THRESHOLDS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2)

# analyzer settings each scenario starts from; ExperimentConfig.analyzer overrides them
BLAST_ANALYZER = dict(order_n=1, learning_rate=0.3, batch_capacity=32,
                      accuracy_threshold=0.05, min_training_fraction=0.40)
MERGER_ANALYZER = dict(order_n=2, lag=0, learning_rate=0.3, batch_capacity=4,
                       holdout_capacity=8, accuracy_threshold=0.05,
                       min_training_fraction=0.25, min_slope_fraction=0.5)


@dataclass
class ExperimentConfig:
    scenario: str = "blast"
    blast: dict = field(default_factory=dict)
    merger: dict = field(default_factory=dict)
    analyzer: dict = field(default_factory=dict)
    work: dict = field(default_factory=dict)
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    fractions: list = field(default_factory=lambda: [0.10, 0.25, 0.50])
    repetitions: int = 5
    ranks: int = 1
    seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}",
                              field="scenario")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}",
                              field="repetitions")
        if self.ranks < 1:
            raise ConfigError(f"ranks must be >= 1, got {self.ranks}", field="ranks")
        if self.scenario == "blast" and not self.thresholds:
            raise ConfigError("thresholds list must not be empty for the blast scenario",
                              field="thresholds")
        for t in self.thresholds:
            if not 0.0 < t <= 1.0:
                raise ConfigError(f"threshold {t} outside (0, 1]", field="thresholds")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"fraction {f} outside (0, 1]", field="fractions")
        # surface bad parameter names now rather than mid-run
        self.blast_field()
        self.merger_curves()
        self.synthetic_work()
        unknown = set(self.analyzer) - {f.name for f in fields(api.AnalyzerConfig)}
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown analyzer parameter {name!r}", field=f"analyzer.{name}")

    # builders

    def blast_field(self) -> BlastField:
        params = dict(self.blast)
        params.setdefault("seed", self.seed)
        try:
            return BlastField(**params)
        except TypeError as exc:
            raise ConfigError(str(exc), field="blast") from exc

    def merger_curves(self) -> MergerCurves:
        params = dict(self.merger)
        params.setdefault("seed", self.seed)
        knees = params.pop("knees", None)
        steepness = params.pop("steepness", None)
        channels = params.pop("channels", None)
        if channels is not None:
            params["channels"] = tuple(c if isinstance(c, ChannelSpec) else ChannelSpec(**c)
                                       for c in channels)
        else:
            chans = default_channels(tuple(knees)) if knees is not None else default_channels()
            if steepness is not None:
                chans = tuple(ChannelSpec(**{**asdict(c), "steepness": steepness}) for c in chans)
            params["channels"] = chans
        try:
            return MergerCurves(**params)
        except TypeError as exc:
            raise ConfigError(str(exc), field="merger") from exc

    def synthetic_work(self) -> SyntheticWork:
        try:
            return SyntheticWork(**self.work)
        except TypeError as exc:
            raise ConfigError(str(exc), field="work") from exc

    def analyzer_params(self) -> dict:
        if self.scenario == "blast":
            bf = self.blast_field()
            params = dict(BLAST_ANALYZER, lag=max(1, round(1.0 / bf.wave_speed)))
        else:
            mc = self.merger_curves()
            params = dict(MERGER_ANALYZER, dt=mc.dt,
                          smoothing_width=5 if mc.noise_amplitude > 0 else 1)
        params.update(self.analyzer)
        return params

    # serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema"] = EXPERIMENT_SCHEMA
        return d

    @classmethod
    def from_dict(cls, record: dict) -> "ExperimentConfig":
        record = dict(record)
        schema = record.pop("schema", EXPERIMENT_SCHEMA)
        if schema != EXPERIMENT_SCHEMA:
            raise ConfigError(f"unsupported experiment schema {schema!r}", field="schema")
        known = {f.name for f in fields(cls)}
        unknown = set(record) - known
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(f"unknown experiment field {name!r}", field=name)
        return cls(**record)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(api.parse_json(text))


def percent_error(truth: float, extracted: float) -> float:
    """``100 * (truth - extracted) / truth``; NaN when undefined."""
    if truth == 0 or not math.isfinite(extracted):
        return math.nan
    return 100.0 * (truth - extracted) / truth


# blast scenario


def blast_handle(cfg: ExperimentConfig, sim: BlastSimulation, threshold: float,
                 channel=None, **overrides) -> api.RegionHandle:
    bf = sim.field
    handle = api.region_init(domain=sim, total_iterations=bf.iterations, channel=channel,
                             rank_count=cfg.ranks)
    params = {**cfg.analyzer_params(), **overrides}
    params.setdefault("action_flag", api.ActionFlag.STOP_SIMULATION)
    flag = params.pop("action_flag")
    api.region_add_analysis(handle, field_provider,
                            api.item_para_init(0, bf.iterations - 1, 1),
                            api.item_para_init(0, bf.domain_size, 1),
                            "Curve_Fitting", "threshold_break_point", threshold=threshold,
                            flag=flag, **params)
    return handle


def roi_rows(cfg: ExperimentConfig, oracle: bool = False) -> list[dict]:
    """One in-situ run per threshold; radius compared with the exhaustive scan."""
    bf = cfg.blast_field()
    no_work = SyntheticWork(cells=1, repeats=0)
    full = bf.full_field()
    iterations = np.arange(bf.iterations)
    rows = []
    for threshold in cfg.thresholds:
        truth = blast_ground_truth_radius(bf, threshold)
        sim = BlastSimulation(bf, no_work)
        handle = blast_handle(cfg, sim, threshold)
        summary = run_host_loop(sim, handle, stop_on_flag=True)
        analyzer = handle.analyzers[0]
        result = analyzer.result
        if oracle:
            query = ThresholdQuery(threshold, bf.initial_velocity, 1, bf.domain_size)
            result = roi_search(analyzer.model, query, analyzer.history, lower_bound=0,
                                detected_at_iteration=summary.stop_iteration,
                                profile_fn=lambda loc: (iterations, full[loc]))
        elif result is None:
            result = api.region_finalize(handle)[0]
        extracted = result.radius if result is not None else math.nan
        rows.append({
            "scenario": "blast",
            "mode": "oracle" if oracle else "model",
            "threshold_fraction": threshold,
            "extracted_radius": extracted,
            "truth_radius": truth,
            "difference": truth - extracted,
            "percent_error": percent_error(truth, extracted),
            "predicted_peak": result.predicted_peak if result is not None else math.nan,
            "exhausted": bool(result.exhausted) if result is not None else True,
            "iterations_executed": summary.iterations_executed,
            "total_iterations": bf.iterations,
            "holdout_error": analyzer.last_holdout_error,
        })
    return rows


# merger scenario


def merger_handle(cfg: ExperimentConfig, sim: MergerSimulation, channel=None,
                  **overrides) -> api.RegionHandle:
    mc = sim.curves
    handle = api.region_init(domain=sim, total_iterations=mc.iterations, channel=channel,
                             rank_count=cfg.ranks)
    params = {**cfg.analyzer_params(), **overrides}
    flag = params.pop("action_flag", api.ActionFlag.STOP_SIMULATION)
    temporal = api.item_para_init(0, mc.iterations - 1, 1)
    for ci in range(len(mc.channels)):
        api.region_add_analysis(handle, field_provider, temporal, api.item_para_init(ci, ci, 1),
                                "Curve_Fitting", "delay_time", flag=flag, **params)
    return handle


def delay_rows(cfg: ExperimentConfig) -> list[dict]:
    mc = cfg.merger_curves()
    sim = MergerSimulation(mc, SyntheticWork(cells=1, repeats=0))
    handle = merger_handle(cfg, sim)
    summary = run_host_loop(sim, handle, stop_on_flag=True)
    results = api.region_finalize(handle)
    rows = []
    for spec, analyzer, res in zip(mc.channels, handle.analyzers, results):
        r = res[0] if res else None
        detected = r is not None and r.detected
        extracted = r.delay_time if detected else math.nan
        rows.append({
            "scenario": "merger",
            "channel": spec.name,
            "truth_delay": spec.knee_time,
            "extracted_delay": extracted,
            "difference": spec.knee_time - extracted,
            "percent_error": percent_error(spec.knee_time, extracted),
            "detected": detected,
            "status": "ok" if detected else "not_detected",
            "event_iteration": r.source_event.iteration if detected else math.nan,
            "stopped_early": analyzer.finished,
            "iterations_executed": summary.iterations_executed,
            "total_iterations": mc.iterations,
        })
    return rows


# fit sweep


def _group_pairs(values: np.ndarray, targets_at: list[int], axis: str, params: dict):
    """Supervised pairs for the target locations, in simulation (iteration-major) order."""
    n_loc, n_it = values.shape
    history = SampleHistory()
    points = []
    wanted = set(targets_at)
    for t in range(n_it):
        for loc in range(n_loc):
            p = SamplePoint(loc, t, float(values[loc, t]))
            history.add(p)
            if loc in wanted:
                points.append(p)
    pairs = windows_from_batch(points, params["order_n"], params["lag"], history, axis=axis)
    its = np.array([k[1] for k in pairs.keys])
    return pairs, its


def _sweep_fraction(pairs, its, n_it: int, fraction: float, params: dict,
                    floor: float) -> tuple[float, int, int]:
    """Train a fresh model on the first ``fraction`` of iterations and score the rest.

    Every ``batch_capacity`` pairs drive one gradient step, as in the in-situ
    loop.  When the fraction leaves no later iterations, the most recent 10%
    of pairs are held out instead.
    """
    cut = int(round(fraction * n_it))
    train = np.flatnonzero(its < cut)
    hold = np.flatnonzero(its >= cut)
    if hold.size == 0:
        n_hold = max(1, int(math.ceil(0.1 * train.size)))
        train, hold = train[:-n_hold], train[-n_hold:]
    model = ARModel(order_n=params["order_n"], lag=params["lag"],
                    learning_rate=params["learning_rate"],
                    scale_decay=params.get("scale_decay", 0.9))
    cap = params["batch_capacity"]
    for start in range(0, train.size, cap):
        model, _ = train_step(model, pairs[train[start:start + cap]])
    return holdout_error(model, pairs[hold], floor), int(train.size), int(hold.size)


BLAST_GROUPS = ((1, 10), (11, 20), (21, 30))


def fit_sweep_rows(cfg: ExperimentConfig) -> list[dict]:
    if not cfg.fractions:
        raise ConfigError("fractions list must not be empty", field="fractions")
    params = cfg.analyzer_params()
    rows = []
    if cfg.scenario == "merger":
        mc = cfg.merger_curves()
        full = mc.full_field()
        groups = [(spec.name, full[ci:ci + 1], [0]) for ci, spec in enumerate(mc.channels)]
        axis = "time"
    else:
        bf = cfg.blast_field()
        full = bf.full_field()
        groups = [(f"({a}, {b})", full, list(range(a, b + 1)))
                  for a, b in BLAST_GROUPS if b <= bf.domain_size]
        axis = "space"
    for name, values, targets_at in groups:
        floor = max(params.get("error_floor_fraction", 1e-2) * float(np.max(np.abs(values))),
                    1e-12)
        pairs, its = _group_pairs(values, targets_at, axis, params)
        for fraction in cfg.fractions:
            err, n_train, n_hold = _sweep_fraction(pairs, its, values.shape[1], fraction,
                                                   params, floor)
            rows.append({
                "scenario": cfg.scenario,
                "group": name,
                "fraction": fraction,
                "train_pairs": n_train,
                "holdout_pairs": n_hold,
                "holdout_error": err,
            })
    return rows


# timing


def _scenario_parts(cfg: ExperimentConfig):
    work = cfg.synthetic_work()
    if cfg.scenario == "blast":
        bf = cfg.blast_field()
        threshold = cfg.thresholds[len(cfg.thresholds) // 2] if cfg.thresholds else 0.05
        make_sim = lambda: BlastSimulation(bf, work)
        make_handle = lambda sim, **kw: blast_handle(cfg, sim, threshold, **kw)
    else:
        mc = cfg.merger_curves()
        make_sim = lambda: MergerSimulation(mc, work)
        make_handle = lambda sim, **kw: merger_handle(cfg, sim, **kw)
    return make_sim, make_handle


TIMING_MODES = ("orig", "no_stop", "stop")


def timing_runs(cfg: ExperimentConfig, modes=TIMING_MODES) -> dict:
    """Uninstrumented / instrumented / early-stopped runs, ``repetitions`` times.

    Within a repetition the selected runs execute interleaved, one iteration
    of each in turn (see :func:`insitu_ar.sims.run_interleaved`).  Rank-harness
    mode cannot interleave and runs the modes back to back instead, each
    through the same rank harness (uninstrumented ranks for ``orig``).  Returns
    the per-repetition wall times of each selected mode (an empty list for the
    others) plus the iterations executed by the early-stopped runs.
    """
    unknown = set(modes) - set(TIMING_MODES)
    if unknown or not modes:
        raise ConfigError(f"timing modes must be drawn from {TIMING_MODES}, got {modes}")
    make_sim, make_handle = _scenario_parts(cfg)
    out = {m: [] for m in TIMING_MODES}
    executed, total = [], make_sim().total_iterations
    for _ in range(cfg.repetitions):
        if cfg.ranks > 1:
            for mode in modes:
                if mode == "orig":
                    out[mode].append(run_ranked(lambda rank: make_sim(),
                                                lambda rank, channel: None,
                                                cfg.ranks).wall_time)
                else:
                    run = _ranked(cfg, make_sim, make_handle, mode == "stop")
                    out[mode].append(run.wall_time)
                    if mode == "stop":
                        executed.append(run.traces[0].iterations_executed)
            continue
        runs = []
        for mode in modes:
            sim = make_sim()
            handle = None if mode == "orig" else make_handle(sim)
            runs.append((sim, handle, mode != "no_stop"))
        for mode, summary in zip(modes, run_interleaved(runs)):
            out[mode].append(summary.wall_time)
            if mode == "stop":
                executed.append(summary.iterations_executed)
    return {**out, "executed": executed, "total_iterations": total}


def _ranked(cfg, make_sim, make_handle, stop_on_flag):
    def handle_for(rank, channel):
        sim = sims_by_rank[rank]
        if rank == 0:
            return make_handle(sim, channel=channel)
        return api.region_init(domain=sim, total_iterations=sim.total_iterations,
                               channel=channel, rank_count=cfg.ranks)

    sims_by_rank = {}

    def sim_for(rank):
        sims_by_rank[rank] = make_sim()
        return sims_by_rank[rank]

    return run_ranked(sim_for, handle_for, cfg.ranks, stop_on_flag)


def bench_rows(cfg: ExperimentConfig) -> list[dict]:
    """Median wall times plus medians of the per-repetition paired ratios.

    The three modes of a repetition run interleaved, so ratios taken within a
    repetition cancel drift in machine speed.
    """
    t = timing_runs(cfg)
    med = statistics.median
    overhead = [(n - o) / o for n, o in zip(t["no_stop"], t["orig"])]
    ratio = [s / o for s, o in zip(t["stop"], t["orig"])]
    executed = int(med(t["executed"]))
    return [{
        "scenario": cfg.scenario,
        "repetitions": cfg.repetitions,
        "ranks": cfg.ranks,
        "orig_wall_s": med(t["orig"]),
        "no_stop_wall_s": med(t["no_stop"]),
        "stop_wall_s": med(t["stop"]),
        "overhead_pct": 100.0 * med(overhead),
        "acceleration_pct": 100.0 * (1.0 - med(ratio)),
        "stop_time_ratio": med(ratio),
        "iterations_executed": executed,
        "total_iterations": t["total_iterations"],
        "iteration_fraction": executed / t["total_iterations"],
    }]
