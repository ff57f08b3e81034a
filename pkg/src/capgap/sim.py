"""Episode runner: preliminary estimation, mechanism phase, repeat averaging."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    BaselineKind,
    EvolutionaryMinerState,
    UserBaseline,
    baseline_fee,
    evolutionary_update,
    initial_fee,
    miner_strategy_values,
    sample_miner_level,
)
from .errors import ConfigurationError, NotReadyError
from .mechanism import TransitionEstimate, init_mechanism, mechanism_round_target
from .payoff import SidePayoffModel
from .zdengine import RESIDUAL_RULES, PayoffTables, StrategyGrid, controllable_payoff_range, zd_user_policy

log = logging.getLogger(__name__)

ZD_USER = "ZD"
USER_KINDS = (ZD_USER,) + tuple(k.value for k in BaselineKind)
PLAY_MODES = ("analytic", "sampled")
TRACE_COLUMNS = (
    "run", "round", "phase", "fee_level", "miner_level", "s_m", "s_u",
    "e_target", "branch", "p_e", "kappa", "start_time",
)
AGGREGATE_COLUMNS = ("round", "metric", "mean", "std")
AGGREGATE_METRICS = ("p_e", "fee", "start_time", "s_m", "s_u", "e_target")
SUMMARY_TAIL = 20


@dataclass(frozen=True)
class SimConfig:
    R: int = 100
    Q: int = 200
    repeats: int = 50
    seed: int = 0
    grid: StrategyGrid = field(default_factory=StrategyGrid)
    model: SidePayoffModel = field(default_factory=SidePayoffModel)
    user: str = ZD_USER
    p0: float = 0.5
    q0: float = 0.7
    play_mode: str = "analytic"
    omega1: float = 0.4
    omega2: float = 0.8
    smoothing: float = 1.0
    aspiration: float | None = None
    residual_rule: str = "zero"
    window: int | None = None

    def __post_init__(self):
        if self.R < 1 or self.Q < 1 or self.repeats < 1:
            raise ConfigurationError("R, Q and repeats must all be at least 1")
        if self.user not in USER_KINDS:
            raise ConfigurationError(f"unknown user kind {self.user!r}; expected one of {USER_KINDS}")
        if self.play_mode not in PLAY_MODES:
            raise ConfigurationError(f"unknown play mode {self.play_mode!r}; expected one of {PLAY_MODES}")
        if self.residual_rule not in RESIDUAL_RULES:
            raise ConfigurationError(f"unknown residual rule {self.residual_rule!r}")
        for name in ("p0", "q0"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if abs(self.grid.max_fee - self.model.params.max_fee) > 1e-12:
            raise ConfigurationError("grid max_fee differs from the payoff model's max_fee")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RoundRecord:
    run: int
    round: int
    phase: str
    fee_level: int
    miner_level: int
    s_m: float
    s_u: float
    e_target: float
    branch: str
    p_e: float
    kappa: float
    start_time: float
    e_m: float = float("nan")  # miner-side expected payoff used for the long-run average

    def as_row(self) -> dict:
        return {c: getattr(self, c) for c in TRACE_COLUMNS}


@dataclass
class SimTrace:
    config_hash: str
    records: list[RoundRecord]
    summary: dict = field(default_factory=dict)

    def column(self, name: str, phase: str | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records if phase is None or r.phase == phase])


def long_run_average_payoff(trace: SimTrace) -> float:
    e_m = trace.column("e_m", phase="main")
    if e_m.size == 0:
        raise NotReadyError("trace has no main-phase rounds")
    return float(np.mean(e_m))


def _summarize(trace: SimTrace, grid: StrategyGrid) -> dict:
    tail = [r for r in trace.records if r.phase == "main"][-SUMMARY_TAIL:]
    return {
        "final_p_e": trace.records[-1].p_e,
        "final_mean_fee": float(np.mean([r.fee_level for r in tail])) * grid.mu2,
        "final_mean_start_time": float(np.mean([r.start_time for r in tail])),
        "upsilon_m": long_run_average_payoff(trace),
    }


def run_episode(config: SimConfig, rng: np.random.Generator, run_index: int = 0) -> SimTrace:
    grid = config.grid
    tables = PayoffTables.from_model(config.model, grid)
    S_M = tables.miner_matrix()
    S_U = tables.S_U.reshape(grid.n_miner, grid.n_fee)
    T = config.model.params.round_duration
    top_payoff = float(S_M[grid.eta1, grid.eta2])

    miner = EvolutionaryMinerState.initial(grid, config.p0, config.window)
    estimate = TransitionEstimate.empty(grid.n_miner, config.smoothing)
    zd = config.user == ZD_USER
    baseline = None if zd else UserBaseline(config.user, q0=config.q0, aspiration=config.aspiration)

    records: list[RoundRecord] = []
    prev: tuple[int, int] | None = None
    last_round = None
    mech = None
    nan = float("nan")

    for t in range(config.R + config.Q):
        main = t >= config.R
        e_target, branch, kappa = nan, "", nan

        # user-side commits its fee first
        if not zd:
            s = baseline_fee(baseline, last_round, grid, rng)
        elif not main:
            s = initial_fee(config.q0, grid, rng)
        else:
            if mech is None:
                mech, _ = init_mechanism(
                    estimate, controllable_payoff_range(tables), config.omega1, config.omega2
                )
            mech, e_target, branch = mechanism_round_target(mech, estimate, prev[0])
            kappa = mech.kappa
            q, _ = zd_user_policy(grid, tables, e_target, config.residual_rule)
            row = q.q[grid.outcome_index(*prev)]
            s = int(rng.choice(grid.n_fee, p=row))
        miner.record_fee(s)

        r = sample_miner_level(miner, rng)
        s_m, s_u = float(S_M[r, s]), float(S_U[r, s])
        if prev is not None:
            estimate.observe(prev[0], r)

        e_m = nan
        if main:
            W_e, _, freq_e_m = miner_strategy_values(miner, tables)
            if zd and config.play_mode == "analytic":
                W_e, e_m = top_payoff, e_target
            else:
                e_m = freq_e_m
            evolutionary_update(miner, W_e, e_m)

        records.append(RoundRecord(
            run=run_index, round=t + 1, phase="main" if main else "prelim",
            fee_level=s, miner_level=r, s_m=s_m, s_u=s_u,
            e_target=e_target, branch=branch, p_e=miner.p_earliest, kappa=kappa,
            start_time=(1.0 - r / grid.eta1) * T, e_m=e_m,
        ))
        prev = (r, s)
        last_round = (r, s_u)

    if miner.skipped_updates:
        log.warning("run %d: %d evolutionary updates skipped (E_m <= 0)", run_index, miner.skipped_updates)
    trace = SimTrace(config.config_hash(), records)
    trace.summary = _summarize(trace, grid)
    return trace


def _episode_job(args):
    config, k = args
    return run_episode(config, np.random.default_rng(config.seed + k), run_index=k)


@dataclass
class ExperimentResult:
    config: SimConfig
    traces: list[SimTrace]
    aggregate: dict[str, tuple[np.ndarray, np.ndarray]]

    def summary(self) -> dict:
        keys = self.traces[0].summary.keys()
        return {k: float(np.mean([tr.summary[k] for tr in self.traces])) for k in keys}


def _metric_matrix(traces: list[SimTrace], metric: str, mu2: float) -> np.ndarray:
    if metric == "fee":
        return np.array([tr.column("fee_level") for tr in traces], dtype=float) * mu2
    return np.array([tr.column(metric) for tr in traces], dtype=float)


def run_experiment(config: SimConfig, workers: int = 1) -> ExperimentResult:
    jobs = [(config, k) for k in range(config.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_episode_job, jobs))
    else:
        traces = [_episode_job(j) for j in jobs]
    aggregate = {}
    for metric in AGGREGATE_METRICS:
        m = _metric_matrix(traces, metric, config.grid.mu2)
        with warnings.catch_warnings():
            # prelim rounds carry no target; their columns are all-NaN
            warnings.simplefilter("ignore", RuntimeWarning)
            mean, std = np.nanmean(m, axis=0), np.nanstd(m, axis=0)
        aggregate[metric] = (mean, std)
    return ExperimentResult(config, traces, aggregate)


def write_trace_csv(traces: list[SimTrace], path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for tr in traces:
            for rec in tr.records:
                writer.writerow(rec.as_row())


def write_aggregate_csv(result: ExperimentResult, path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        for metric, (mean, std) in result.aggregate.items():
            for i, (m, s) in enumerate(zip(mean, std)):
                writer.writerow([i + 1, metric, m, s])
