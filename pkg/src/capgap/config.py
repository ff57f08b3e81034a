"""Experiment configuration files (TOML, one table per section)."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError
from .incircle import MiningSystemModel
from .payoff import EconomicParams, FunctionSpec, SidePayoffModel
from .sim import SimConfig
from .zdengine import StrategyGrid

SCHEMA_VERSION = 1
RUNNING_MEAN = "running_mean"

_FN = {"kind": str, "scale": float, "offset": float, "exponent": float}
SCHEMA: dict[str, dict[str, type]] = {
    "meta": {"schema_version": int},
    "economics": {
        "varpi_m": float, "varkappa_m": float, "varpi_u": float, "varkappa_u": float,
        "max_fee": float, "subsidy": float, "round_duration": float,
    },
    "payoff.chi_m": _FN,
    "payoff.chi_u": _FN,
    "payoff.xi_m": _FN,
    "payoff.xi_u": _FN,
    "grid": {"eta1": int, "eta2": int},
    "zd": {"residual_rule": str},
    "mechanism": {"omega1": float, "omega2": float, "smoothing": float},
    "agents": {"user": str, "p0": float, "q0": float, "aspiration": (float, str), "window": int},
    "sim": {"R": int, "Q": int, "repeats": int, "seed": int, "play_mode": str, "workers": int},
    "incircle": {
        "miner_strategies": list, "user_fees": list, "lam": float, "cost_rate": float,
        "eps_m": float, "sig_m": float, "eps_u": float, "sig_u": float,
        "user_value": float, "fee_cost_slope": float,
        "grid_resolution": int, "time_resolution": int, "gap_resolution": int, "br_max_iters": int,
    },
    "output": {"dir": str, "trace_file": str, "aggregate_file": str},
}


@dataclass(frozen=True)
class IncircleOptions:
    grid_resolution: int = 5
    time_resolution: int = 200
    gap_resolution: int = 101
    br_max_iters: int = 50


@dataclass(frozen=True)
class OutputOptions:
    dir: str = "out"
    trace_file: str = "trace.csv"
    aggregate_file: str = "aggregate.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    incircle: MiningSystemModel = field(default_factory=lambda: MiningSystemModel(
        miner_strategies=(0.5, 0.5), user_fees=(2.0, 3.0), subsidy=6.25, cost_rate=8.0,
    ))
    incircle_options: IncircleOptions = field(default_factory=IncircleOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    workers: int = 1


def _fn_dict(f: FunctionSpec) -> dict:
    return {"kind": f.kind, "scale": f.scale, "offset": f.offset, "exponent": f.exponent}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    s = cfg.sim
    p = s.model.params
    m = cfg.incircle
    o = cfg.incircle_options
    return {
        "meta": {"schema_version": SCHEMA_VERSION},
        "economics": {
            "varpi_m": p.varpi_m, "varkappa_m": p.varkappa_m, "varpi_u": p.varpi_u,
            "varkappa_u": p.varkappa_u, "max_fee": p.max_fee, "subsidy": p.subsidy,
            "round_duration": p.round_duration,
        },
        "payoff": {name: _fn_dict(getattr(s.model, name)) for name in ("chi_m", "chi_u", "xi_m", "xi_u")},
        "grid": {"eta1": s.grid.eta1, "eta2": s.grid.eta2},
        "zd": {"residual_rule": s.residual_rule},
        "mechanism": {"omega1": s.omega1, "omega2": s.omega2, "smoothing": s.smoothing},
        "agents": {
            "user": s.user, "p0": s.p0, "q0": s.q0,
            "aspiration": RUNNING_MEAN if s.aspiration is None else s.aspiration,
            "window": 0 if s.window is None else s.window,
        },
        "sim": {
            "R": s.R, "Q": s.Q, "repeats": s.repeats, "seed": s.seed,
            "play_mode": s.play_mode, "workers": cfg.workers,
        },
        "incircle": {
            "miner_strategies": list(m.miner_strategies), "user_fees": list(m.user_fees),
            "lam": m.lam, "cost_rate": m.cost_rate, "eps_m": m.eps_m, "sig_m": m.sig_m,
            "eps_u": m.eps_u, "sig_u": m.sig_u, "user_value": m.user_value,
            "fee_cost_slope": m.fee_cost_slope,
            "grid_resolution": o.grid_resolution, "time_resolution": o.time_resolution,
            "gap_resolution": o.gap_resolution, "br_max_iters": o.br_max_iters,
        },
        "output": {"dir": cfg.output.dir, "trace_file": cfg.output.trace_file,
                   "aggregate_file": cfg.output.aggregate_file},
    }


def _sections(doc: dict) -> dict[str, dict]:
    """Flatten nested tables into dotted section names."""
    out = {}
    for name, value in doc.items():
        if not isinstance(value, dict):
            raise ConfigurationError(f"top-level key {name!r} must be a section")
        if name == "payoff":
            for sub, body in value.items():
                if not isinstance(body, dict):
                    raise ConfigurationError(f"payoff.{sub} must be a section")
                out[f"payoff.{sub}"] = body
        else:
            out[name] = value
    return out


def _coerce(section: str, key: str, value, expected):
    where = f"{section}.{key}"
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where} must be a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where} must be an integer, got {value!r}")
        return value
    if expected is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where} must be a string, got {value!r}")
        return value
    if expected is list:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigurationError(f"{where} must be a list of numbers")
        return tuple(float(v) for v in value)
    # aspiration: a number or the running-mean keyword
    if isinstance(value, str):
        if value != RUNNING_MEAN:
            raise ConfigurationError(f"{where} must be a number or {RUNNING_MEAN!r}")
        return None
    return _coerce(section, key, value, float)


def parse_config(doc: dict) -> ExperimentConfig:
    sections = _sections(doc)
    for name in sections:
        if name not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{name}]")
    vals: dict[str, dict] = {}
    for name, keys in SCHEMA.items():
        if name not in sections:
            raise ConfigurationError(f"missing config section [{name}]")
        body = sections[name]
        for key in body:
            if key not in keys:
                raise ConfigurationError(f"unknown config key {name}.{key}")
        missing = [k for k in keys if k not in body]
        if missing:
            raise ConfigurationError(f"missing config key {name}.{missing[0]}")
        vals[name] = {k: _coerce(name, k, body[k], t) for k, t in keys.items()}

    version = vals["meta"]["schema_version"]
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {version}; expected {SCHEMA_VERSION}")

    try:
        econ = EconomicParams(**vals["economics"])
        model = SidePayoffModel(
            **{n: FunctionSpec(**vals[f"payoff.{n}"]) for n in ("chi_m", "chi_u", "xi_m", "xi_u")},
            params=econ,
        )
        grid = StrategyGrid(vals["grid"]["eta1"], vals["grid"]["eta2"], econ.max_fee)
        a, sm, mech = vals["agents"], vals["sim"], vals["mechanism"]
        sim = SimConfig(
            R=sm["R"], Q=sm["Q"], repeats=sm["repeats"], seed=sm["seed"], grid=grid, model=model,
            user=a["user"], p0=a["p0"], q0=a["q0"], play_mode=sm["play_mode"],
            omega1=mech["omega1"], omega2=mech["omega2"], smoothing=mech["smoothing"],
            aspiration=a["aspiration"], residual_rule=vals["zd"]["residual_rule"],
            window=a["window"] or None,
        )
        ic = dict(vals["incircle"])
        opts = IncircleOptions(**{k: ic.pop(k) for k in list(ic) if k in IncircleOptions.__dataclass_fields__})
        incircle = MiningSystemModel(
            **ic, round_duration=econ.round_duration, subsidy=econ.subsidy, max_fee=econ.max_fee,
        )
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    if a["window"] < 0:
        raise ConfigurationError("agents.window must be >= 0 (0 means cumulative)")
    if sm["workers"] < 1:
        raise ConfigurationError("sim.workers must be at least 1")
    return ExperimentConfig(sim, incircle, opts, OutputOptions(**vals["output"]), sm["workers"])


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    return parse_config(doc)


def write_config(cfg: ExperimentConfig, path: str | Path):
    with open(path, "wb") as fh:
        tomli_w.dump(config_to_dict(cfg), fh)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, repeats: int | None = None) -> ExperimentConfig:
    sim = cfg.sim
    if seed is not None:
        sim = replace(sim, seed=seed)
    if repeats is not None:
        try:
            sim = replace(sim, repeats=repeats)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
    return replace(cfg, sim=sim)
