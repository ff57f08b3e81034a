"""Discretized miner-side/user-side Markov game and zero-determinant control.

Joint outcomes ``(a, b)`` pair a miner level ``a`` (start strategy
``a * mu1``) with a fee level ``b`` (fee ``b * mu2``) and are indexed as
``a * (eta2 + 1) + b``.  The user-side conditions its fee on the previous
joint outcome (``q[ab, s]``); the miner-side conditions its level on the
current fee (``p[s, r]``).

ZD construction
---------------
For any function ``h`` of the user's fee level, the stationary vector
``sigma`` of the chain satisfies ``sigma . (E_q[h(s) | ab] - h(b)) = 0``.
Choosing ``h(s) = s / eta2`` and forcing

    E_q[h(s) | ab] - b / eta2 = alpha * S_M[ab] + gamma

pins ``alpha * E_m + gamma = 0`` whatever the miner-side does.  With the
default residual rule (all non-F_h mass on fee 0) the F_h column reads
``q[ab, eta2] = alpha * S_M[ab] + gamma + b / eta2``; on outcomes with
``b in {0, eta2}`` that is the textbook ``-1`` adjustment on the adopter's
own top action.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateTargetError,
    DomainError,
    InfeasibleTargetError,
)
from .payoff import SidePayoffModel, miner_side_payoff, user_side_payoff

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
RESIDUAL_RULES = ("zero", "uniform")


@dataclass(frozen=True)
class StrategyGrid:
    eta1: int = 10
    eta2: int = 10
    max_fee: float = 10.0

    def __post_init__(self):
        if self.eta1 < 1 or self.eta2 < 1:
            raise ConfigurationError("grid needs at least one partition per axis")
        if not self.max_fee > 0:
            raise ConfigurationError("max_fee must be positive")

    @property
    def mu1(self) -> float:
        return 1.0 / self.eta1

    @property
    def mu2(self) -> float:
        return self.max_fee / self.eta2

    @property
    def n_miner(self) -> int:
        return self.eta1 + 1

    @property
    def n_fee(self) -> int:
        return self.eta2 + 1

    @property
    def n_outcomes(self) -> int:
        return self.n_miner * self.n_fee

    def x_values(self) -> np.ndarray:
        # a / eta1 rather than a * mu1 so that the top level is exactly 1
        return np.arange(self.n_miner) / self.eta1

    def y_values(self) -> np.ndarray:
        return np.arange(self.n_fee) * self.max_fee / self.eta2

    def outcome_index(self, a: int, b: int) -> int:
        return a * self.n_fee + b

    def outcome_levels(self) -> tuple[np.ndarray, np.ndarray]:
        """Miner level and fee level of every outcome, in index order."""
        a, b = np.divmod(np.arange(self.n_outcomes), self.n_fee)
        return a, b


@dataclass(frozen=True)
class PayoffTables:
    S_M: np.ndarray
    S_U: np.ndarray
    grid: StrategyGrid

    def __post_init__(self):
        n = self.grid.n_outcomes
        if self.S_M.shape != (n,) or self.S_U.shape != (n,):
            raise ConfigurationError(f"payoff tables must have length {n}")

    @classmethod
    def from_model(cls, model: SidePayoffModel, grid: StrategyGrid) -> "PayoffTables":
        if abs(grid.max_fee - model.params.max_fee) > 1e-12:
            raise ConfigurationError("grid max_fee differs from the payoff model's max_fee")
        a, b = grid.outcome_levels()
        x = grid.x_values()[a]
        y = grid.y_values()[b]
        S_M = np.asarray(miner_side_payoff(model, x, y), dtype=float)
        S_U = np.asarray(user_side_payoff(model, x, y), dtype=float)
        return cls(S_M, S_U, grid)

    def miner_matrix(self) -> np.ndarray:
        """S_m as an (eta1+1, eta2+1) array indexed [miner level, fee level]."""
        return self.S_M.reshape(self.grid.n_miner, self.grid.n_fee)


def _check_row_stochastic(m: np.ndarray, what: str, tol: float = 1e-9):
    if np.any(~np.isfinite(m)) or np.any(m < -tol) or np.any(m > 1 + tol):
        raise DomainError(f"{what} has entries outside [0, 1]")
    if np.any(np.abs(m.sum(axis=-1) - 1.0) > tol):
        raise DomainError(f"{what} rows do not sum to 1")


@dataclass(frozen=True)
class UserPolicy:
    """``q[ab, s]``: probability of fee level s after joint outcome ab."""

    q: np.ndarray

    def __post_init__(self):
        _check_row_stochastic(self.q, "user policy")

    def validate_for(self, grid: StrategyGrid):
        if self.q.shape != (grid.n_outcomes, grid.n_fee):
            raise ConfigurationError(
                f"user policy shape {self.q.shape} does not match grid "
                f"({grid.n_outcomes}, {grid.n_fee})"
            )

    @classmethod
    def uniform(cls, grid: StrategyGrid) -> "UserPolicy":
        return cls(np.full((grid.n_outcomes, grid.n_fee), 1.0 / grid.n_fee))

    @classmethod
    def constant(cls, grid: StrategyGrid, level: int) -> "UserPolicy":
        q = np.zeros((grid.n_outcomes, grid.n_fee))
        q[:, level] = 1.0
        return cls(q)


@dataclass(frozen=True)
class MinerPolicy:
    """``p[s, r]``: probability of miner level r when the current fee level is s."""

    p: np.ndarray

    def __post_init__(self):
        _check_row_stochastic(self.p, "miner policy")

    def validate_for(self, grid: StrategyGrid):
        if self.p.shape != (grid.n_fee, grid.n_miner):
            raise ConfigurationError(
                f"miner policy shape {self.p.shape} does not match grid "
                f"({grid.n_fee}, {grid.n_miner})"
            )

    @classmethod
    def uniform(cls, grid: StrategyGrid) -> "MinerPolicy":
        return cls(np.full((grid.n_fee, grid.n_miner), 1.0 / grid.n_miner))

    @classmethod
    def constant(cls, grid: StrategyGrid, level: int) -> "MinerPolicy":
        p = np.zeros((grid.n_fee, grid.n_miner))
        p[:, level] = 1.0
        return cls(p)


@dataclass(frozen=True)
class ZDCoefficients:
    alpha: float
    beta: float
    gamma: float
    target: float


def random_miner_policy(grid: StrategyGrid, rng: np.random.Generator) -> MinerPolicy:
    return MinerPolicy(rng.dirichlet(np.ones(grid.n_miner), size=grid.n_fee))


def random_user_policy(grid: StrategyGrid, rng: np.random.Generator) -> UserPolicy:
    return UserPolicy(rng.dirichlet(np.ones(grid.n_fee), size=grid.n_outcomes))


def build_transition_matrix(q: UserPolicy, p: MinerPolicy, grid: StrategyGrid | None = None) -> np.ndarray:
    """Entry [(a,b) -> (r,s)] = q[ab, s] * p[s, r]."""
    n_fee = q.q.shape[1]
    if p.p.shape[0] != n_fee:
        raise ConfigurationError(
            f"user policy has {n_fee} fee levels but miner policy has {p.p.shape[0]} rows"
        )
    n_miner = p.p.shape[1]
    if q.q.shape[0] != n_miner * n_fee:
        raise ConfigurationError(
            f"user policy has {q.q.shape[0]} rows, expected {n_miner * n_fee} joint outcomes"
        )
    if grid is not None:
        q.validate_for(grid)
        p.validate_for(grid)
    # (n, r, s) -> flattened column index r * n_fee + s
    return (q.q[:, None, :] * p.p.T[None, :, :]).reshape(q.q.shape[0], -1)


def transition_stack(q: UserPolicy, p_stack: np.ndarray) -> np.ndarray:
    """Transition matrices of one user policy against a stack of miner tables (k, n_fee, n_miner)."""
    p_stack = np.asarray(p_stack, dtype=float)
    if p_stack.ndim != 3 or p_stack.shape[1] != q.q.shape[1]:
        raise ConfigurationError("miner policy stack must have shape (k, n_fee, n_miner)")
    _check_row_stochastic(p_stack, "miner policy stack")
    k, _, n_miner = p_stack.shape
    if q.q.shape[0] != n_miner * q.q.shape[1]:
        raise ConfigurationError("user policy rows do not match the joint outcome count")
    G = q.q[None, :, None, :] * np.swapaxes(p_stack, 1, 2)[:, None, :, :]
    return G.reshape(k, q.q.shape[0], -1)


@dataclass(frozen=True)
class StationaryInfo:
    method: str
    damping: float
    steps: int
    residual: float


def stationary_distribution(
    matrix: np.ndarray,
    *,
    damping: float = 0.0,
    tol: float = 1e-12,
    max_steps: int = 1_000_000,
    return_info: bool = False,
):
    """Stationary row vector of a row-stochastic matrix (or a stack of them).

    Power iteration on the lazy chain ``(G + I) / 2`` started from the
    uniform vector, accelerated by repeated squaring.  The lazy chain is
    aperiodic, so the iteration converges even for periodic or reducible
    inputs and returns the uniform-start Cesaro limit.  That limit is the
    zero-damping limit of mixing toward uniform; ``damping > 0`` applies the
    mixing explicitly instead.
    """
    G = np.asarray(matrix, dtype=float)
    if G.ndim < 2 or G.shape[-1] != G.shape[-2]:
        raise DomainError("stationary_distribution needs square matrices")
    _check_row_stochastic(G, "transition matrix")
    if not 0.0 <= damping < 1.0:
        raise DomainError("damping must lie in [0, 1)")
    n = G.shape[-1]
    if damping > 0:
        G = (1.0 - damping) * G + damping / n
    L = 0.5 * (G + np.eye(n))
    u = np.full(G.shape[:-1], 1.0 / n)

    steps = 1
    M = L
    while True:
        sigma = np.einsum("...i,...ij->...j", u, M)
        sigma /= sigma.sum(axis=-1, keepdims=True)
        # a few plain steps polish the round-off accumulated while squaring
        for _ in range(2):
            sigma = np.einsum("...i,...ij->...j", sigma, G)
            sigma /= sigma.sum(axis=-1, keepdims=True)
        resid = float(np.max(np.abs(np.einsum("...i,...ij->...j", sigma, G) - sigma)))
        if resid < tol:
            break
        if steps >= max_steps:
            raise ConvergenceError(
                f"stationary distribution did not converge within {max_steps} steps "
                f"(residual {resid:.3e})"
            )
        M = M @ M
        M /= M.sum(axis=-1, keepdims=True)
        steps *= 2
    sigma = np.clip(sigma, 0.0, None)
    sigma /= sigma.sum(axis=-1, keepdims=True)
    if return_info:
        return sigma, StationaryInfo("lazy-power-squaring", damping, steps, resid)
    return sigma


def expected_payoffs(sigma: np.ndarray, tables: PayoffTables) -> tuple[float, float]:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[-1] != tables.S_M.shape[0]:
        raise ConfigurationError(
            f"distribution over {sigma.shape[-1]} outcomes vs payoff tables of {tables.S_M.shape[0]}"
        )
    E_m = sigma @ tables.S_M
    E_u = sigma @ tables.S_U
    if np.ndim(E_m) == 0:
        return float(E_m), float(E_u)
    return E_m, E_u


def controllable_payoff_range(tables: PayoffTables) -> tuple[float, float]:
    """Miner-side payoffs the user-side can pin: between S_m(0,0) and S_m(1,F_h)."""
    g = tables.grid
    lo = float(tables.S_M[g.outcome_index(0, 0)])
    hi = float(tables.S_M[g.outcome_index(g.eta1, g.eta2)])
    return (min(lo, hi), max(lo, hi))


def _mean_bounds(grid: StrategyGrid, residual_rule: str) -> tuple[float, float]:
    """Admissible range of the normalized conditional mean fee E[s/eta2]."""
    if residual_rule == "zero":
        return 0.0, 1.0
    if residual_rule == "uniform":
        # remaining mass spread over levels 0..eta2-1 has normalized mean cbar
        return (grid.eta2 - 1) / (2 * grid.eta2), 1.0
    raise ConfigurationError(f"unknown residual rule {residual_rule!r}; expected one of {RESIDUAL_RULES}")


def _alpha_interval(offset: np.ndarray, slope: np.ndarray, lo: float, hi: float):
    """Set of alpha with lo <= offset + alpha * slope <= hi for every row."""
    a_lo, a_hi = -np.inf, np.inf
    flat = np.abs(slope) < 1e-15
    if np.any(flat & ((offset < lo - 1e-12) | (offset > hi + 1e-12))):
        return None
    s = slope[~flat]
    c = offset[~flat]
    if s.size:
        b1 = (lo - c) / s
        b2 = (hi - c) / s
        a_lo = max(a_lo, float(np.max(np.minimum(b1, b2))))
        a_hi = min(a_hi, float(np.min(np.maximum(b1, b2))))
    if a_lo > a_hi + 1e-15:
        return None
    return a_lo, a_hi


def zd_user_policy(
    grid: StrategyGrid,
    tables: PayoffTables,
    target: float,
    residual_rule: str = "zero",
) -> tuple[UserPolicy, ZDCoefficients]:
    """User policy pinning the miner-side's stationary payoff to ``target``."""
    lo_t, hi_t = controllable_payoff_range(tables)
    if not (lo_t - 1e-12 <= target <= hi_t + 1e-12):
        raise InfeasibleTargetError(target, (lo_t, hi_t))
    m_lo, m_hi = _mean_bounds(grid, residual_rule)
    _, b = grid.outcome_levels()
    offset = b / grid.eta2
    slope = tables.S_M - target

    interval = _alpha_interval(offset, slope, m_lo, m_hi)
    if interval is None:
        raise DegenerateTargetError(
            f"no ZD slope keeps the policy feasible for target {target:g} "
            f"with residual rule {residual_rule!r}"
        )
    a_lo, a_hi = interval
    alpha = a_lo if abs(a_lo) >= abs(a_hi) else a_hi
    if not np.isfinite(alpha) or abs(alpha) <= 1e-12:
        raise DegenerateTargetError(
            f"largest feasible ZD slope for target {target:g} is {alpha:g}"
        )
    gamma = -alpha * target

    mean = np.clip(offset + alpha * slope, m_lo, m_hi)
    q = np.zeros((grid.n_outcomes, grid.n_fee))
    if residual_rule == "zero":
        q[:, grid.eta2] = mean
        q[:, 0] += 1.0 - mean
    else:
        top = (mean - m_lo) / (1.0 - m_lo)
        q[:, grid.eta2] = top
        q[:, : grid.eta2] = ((1.0 - top) / grid.eta2)[:, None]
    return UserPolicy(q), ZDCoefficients(float(alpha), 0.0, float(gamma), float(target))


def verify_linear_relation(
    q_zd: UserPolicy,
    coefficients: ZDCoefficients,
    p: MinerPolicy,
    tables: PayoffTables,
    beta: float | None = None,
) -> float:
    """|alpha*E_m + beta*E_u + gamma| under the stationary distribution."""
    beta = coefficients.beta if beta is None else beta
    G = build_transition_matrix(q_zd, p, tables.grid)
    sigma = stationary_distribution(G)
    E_m, E_u = expected_payoffs(sigma, tables)
    return abs(coefficients.alpha * E_m + beta * E_u + coefficients.gamma)
