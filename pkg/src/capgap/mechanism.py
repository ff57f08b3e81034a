"""Sigmoid-scheduled reward/penalty controller for the user-side's ZD target."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)

KAPPA_CAP = 1e6


@dataclass
class TransitionEstimate:
    """Smoothed counts of the miner-side's level transitions a -> r."""

    counts: np.ndarray
    smoothing: float = 1.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        n = self.counts.shape[0]
        if self.counts.shape != (n, n):
            raise ConfigurationError("transition counts must be square")
        if np.any(self.counts < 0):
            raise DomainError("transition counts must be nonnegative")
        if not self.smoothing > 0:
            raise ConfigurationError("smoothing must be positive so every P entry stays finite")

    @classmethod
    def empty(cls, n_levels: int, smoothing: float = 1.0) -> "TransitionEstimate":
        return cls(np.zeros((n_levels, n_levels)), smoothing)

    @property
    def n_levels(self) -> int:
        return self.counts.shape[0]

    @property
    def P(self) -> np.ndarray:
        c = self.counts + self.smoothing
        return c / c.sum(axis=1, keepdims=True)

    def observe(self, a: int, r: int) -> "TransitionEstimate":
        self.counts[a, r] += 1
        return self


def update_transition_estimate(estimate: TransitionEstimate, a: int, r: int) -> TransitionEstimate:
    n = estimate.n_levels
    if not (0 <= a < n and 0 <= r < n):
        raise DomainError(f"transition {a}->{r} outside levels 0..{n - 1}")
    return estimate.observe(a, r)


@dataclass(frozen=True)
class MechanismState:
    kappa: float
    omega1: float
    omega2: float
    e_min: float
    e_max: float
    rho: int | None = None
    round_index: int = 0
    kappa_cap: float = KAPPA_CAP

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError("kappa must be positive")
        if not (self.omega1 > 0 and self.omega2 > 0):
            raise ConfigurationError("omega1 and omega2 must be positive")
        if not self.e_min < self.e_max:
            raise ConfigurationError("controllable range must satisfy E_min < E_max")


def init_mechanism(
    estimate: TransitionEstimate,
    payoff_range: tuple[float, float],
    omega1: float,
    omega2: float,
) -> tuple[MechanismState, float]:
    e_min, e_max = payoff_range
    kappa = float(estimate.P[:, -1].mean())
    target = kappa * (e_max - e_min) + e_min
    return MechanismState(kappa, omega1, omega2, e_min, e_max), target


def classify_early_bird(estimate: TransitionEstimate, rho: int) -> bool:
    """True when jumping to the earliest level is a (possibly tied) argmax of row rho."""
    if not 0 <= rho < estimate.n_levels:
        raise DomainError(f"miner level {rho} outside 0..{estimate.n_levels - 1}")
    row = estimate.P[rho]
    return bool(row[-1] >= row[:-1].max())


def mechanism_round_target(
    state: MechanismState, estimate: TransitionEstimate, rho: int
) -> tuple[MechanismState, float, str]:
    p_top = float(estimate.P[rho, -1])
    if classify_early_bird(estimate, rho):
        branch = "reward"
        kappa = min(state.kappa * (1.0 + p_top), state.kappa_cap)
        target = state.e_max * float(expit(state.omega1 * kappa))
    else:
        branch = "penalty"
        kappa = min(state.kappa * (1.0 + 1.0 / p_top), state.kappa_cap)
        target = state.e_min * (float(expit(-state.omega2 * kappa)) + 1.0)
    clamped = min(max(target, state.e_min), state.e_max)
    if clamped != target:
        log.info("round %d: %s target %.6g clamped to %.6g", state.round_index, branch, target, clamped)
    new_state = replace(state, kappa=kappa, rho=rho, round_index=state.round_index + 1)
    return new_state, clamped, branch
