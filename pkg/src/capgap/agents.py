"""Evolutionary miner-side and the classical user-side baselines."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DomainError, NotReadyError
from .zdengine import PayoffTables, StrategyGrid


@dataclass
class EvolutionaryMinerState:
    """Mixed start strategy of the miner-side plus the frequencies it learns from.

    ``residual`` is the normalized distribution over the non-earliest levels
    0..eta1-1; it keeps its proportions when ``p_earliest`` moves.
    """

    p_earliest: float
    residual: np.ndarray
    f_counts: np.ndarray
    g_counts: np.ndarray
    window: int | None = None
    rounds_seen: int = 0
    skipped_updates: int = 0
    _levels: deque = field(default_factory=deque, repr=False)
    _fees: deque = field(default_factory=deque, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.p_earliest <= 1.0:
            raise DomainError("p_earliest must lie in [0, 1]")
        self.residual = np.asarray(self.residual, dtype=float)
        if np.any(self.residual < 0) or abs(self.residual.sum() - 1.0) > 1e-9:
            raise DomainError("residual must be a probability vector")
        if self.window is not None and self.window < 1:
            raise ConfigurationError("window must be a positive round count")

    @classmethod
    def initial(cls, grid: StrategyGrid, p0: float, window: int | None = None) -> "EvolutionaryMinerState":
        return cls(
            p_earliest=float(p0),
            residual=np.full(grid.eta1, 1.0 / grid.eta1),
            f_counts=np.zeros(grid.n_miner),
            g_counts=np.zeros(grid.n_fee),
            window=window,
        )

    def mixed_strategy(self) -> np.ndarray:
        return np.append((1.0 - self.p_earliest) * self.residual, self.p_earliest)

    def _push(self, counts: np.ndarray, history: deque, level: int):
        counts[level] += 1
        if self.window is not None:
            history.append(level)
            if len(history) > self.window:
                counts[history.popleft()] -= 1

    def record_level(self, r: int):
        self._push(self.f_counts, self._levels, r)

    def record_fee(self, s: int):
        self._push(self.g_counts, self._fees, s)
        self.rounds_seen += 1

    @property
    def f(self) -> np.ndarray:
        return self.f_counts / self.f_counts.sum()

    @property
    def g(self) -> np.ndarray:
        return self.g_counts / self.g_counts.sum()


def miner_strategy_values(state: EvolutionaryMinerState, tables: PayoffTables):
    """(W_e, W, E_m): value of each start level against the observed fee mix."""
    if state.g_counts.sum() == 0 or state.f_counts.sum() == 0:
        raise NotReadyError("miner has not observed any round yet")
    W = tables.miner_matrix() @ state.g
    return float(W[-1]), W, float(state.f @ W)


def evolutionary_update(state: EvolutionaryMinerState, W_e: float, E_m: float) -> bool:
    """Multiplicative update of p_earliest; returns False when the round is skipped."""
    if not E_m > 0:
        state.skipped_updates += 1
        return False
    state.p_earliest = float(np.clip(state.p_earliest * W_e / E_m, 0.0, 1.0))
    return True


def sample_miner_level(state: EvolutionaryMinerState, rng: np.random.Generator, record: bool = True) -> int:
    eta1 = state.residual.shape[0]
    if rng.random() < state.p_earliest:
        r = eta1
    else:
        r = int(rng.choice(eta1, p=state.residual))
    if record:
        state.record_level(r)
    return r


class BaselineKind(str, Enum):
    ALL_C = "ALL_C"
    ALL_D = "ALL_D"
    WSLS = "WSLS"
    TFT = "TFT"
    RANDOM = "RANDOM"


@dataclass
class UserBaseline:
    kind: BaselineKind
    q0: float = 0.5
    aspiration: float | None = None  # None: running mean of own past payoffs
    last_fee: int | None = None
    last_miner: int | None = None
    payoff_sum: float = 0.0
    n_payoffs: int = 0

    def __post_init__(self):
        self.kind = BaselineKind(self.kind)
        if not 0.0 <= self.q0 <= 1.0:
            raise ConfigurationError("q0 must lie in [0, 1]")


def initial_fee(q0: float, grid: StrategyGrid, rng: np.random.Generator) -> int:
    """Top fee with probability q0, otherwise uniform over the lower levels."""
    if rng.random() < q0:
        return grid.eta2
    return int(rng.integers(grid.eta2))


def baseline_fee(
    baseline: UserBaseline,
    last_round: tuple[int, float] | None,
    grid: StrategyGrid,
    rng: np.random.Generator,
) -> int:
    """Next fee level of a baseline; ``last_round`` is (miner level, own payoff)."""
    kind = baseline.kind
    if last_round is not None:
        baseline.last_miner, payoff = last_round
        baseline.payoff_sum += payoff
        baseline.n_payoffs += 1

    if kind is BaselineKind.ALL_C:
        s = grid.eta2
    elif kind is BaselineKind.ALL_D:
        s = 0
    elif kind is BaselineKind.RANDOM:
        s = int(rng.integers(grid.n_fee))
    elif last_round is None or baseline.last_fee is None:
        s = initial_fee(baseline.q0, grid, rng)
    elif kind is BaselineKind.WSLS:
        level = baseline.aspiration
        if level is None:
            level = baseline.payoff_sum / baseline.n_payoffs
        s = baseline.last_fee if payoff >= level else grid.eta2 - baseline.last_fee
    else:
        s = grid.eta2 - int(round(baseline.last_miner * grid.eta2 / grid.eta1))
    baseline.last_fee = s
    return s
