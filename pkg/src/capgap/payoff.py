"""Stage-game payoffs of the aggregated miner-side and user-side.

The miner-side picks a start strategy ``x`` in [0, 1] (1 = power on at the
start of the round) and the user-side picks an aggregate fee ``y`` in
[0, F_h].  Both payoffs are "scaled profit minus scaled cost":

    S_m(x, y) = varpi_m * chi_m(y) - varkappa_m * xi_m(x)
    S_u(x, y) = varpi_u * chi_u(x) - varkappa_u * xi_u(y)

where ``chi_m`` includes the block subsidy as an additive constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, PreconditionError

_DOMAIN_SLACK = 1e-12
FAMILIES = ("linear", "affine", "power")


@dataclass(frozen=True)
class FunctionSpec:
    """A named monotone function family, so payoff models stay serializable.

    ``linear``: scale*v, ``affine``: scale*v + offset,
    ``power``: scale*v**exponent + offset.
    """

    kind: str = "linear"
    scale: float = 1.0
    offset: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown function family {self.kind!r}; expected one of {FAMILIES}")
        if self.scale < 0:
            raise ValueError("function scale must be nonnegative (monotone nondecreasing)")
        if self.kind == "power" and self.exponent <= 0:
            raise ValueError("power exponent must be positive")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "linear":
            out = self.scale * v
        elif self.kind == "affine":
            out = self.scale * v + self.offset
        else:
            out = self.scale * np.power(v, self.exponent) + self.offset
        return out if out.ndim else float(out)

    @property
    def strictly_increasing(self) -> bool:
        return self.scale > 0


@dataclass(frozen=True)
class EconomicParams:
    varpi_m: float = 0.4
    varkappa_m: float = 0.6
    varpi_u: float = 0.4
    varkappa_u: float = 0.6
    max_fee: float = 10.0
    subsidy: float = 6.25
    round_duration: float = 10.0

    def __post_init__(self):
        for name in ("varpi_m", "varkappa_m", "varpi_u", "varkappa_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.max_fee > 0:
            raise ValueError("max_fee must be strictly positive")
        if not self.round_duration > 0:
            raise ValueError("round_duration must be strictly positive")
        if self.subsidy < 0:
            raise ValueError("subsidy must be nonnegative")


@dataclass(frozen=True)
class SidePayoffModel:
    chi_m: FunctionSpec = field(default_factory=FunctionSpec)
    chi_u: FunctionSpec = field(default_factory=FunctionSpec)
    xi_m: FunctionSpec = field(default_factory=FunctionSpec)
    xi_u: FunctionSpec = field(default_factory=FunctionSpec)
    params: EconomicParams = field(default_factory=EconomicParams)

    def miner_profit(self, y):
        # subsidy is the additive constant of chi_m
        return self.chi_m(y) + self.params.subsidy


def default_model() -> SidePayoffModel:
    """Linear model used in the reference experiments (subsidy 6.25, F_h = 10)."""
    return SidePayoffModel()


def _check_domain(model: SidePayoffModel, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x < -_DOMAIN_SLACK) or np.any(x > 1 + _DOMAIN_SLACK):
        raise DomainError(f"start strategy x must lie in [0, 1], got {x}")
    fh = model.params.max_fee
    if np.any(y < -_DOMAIN_SLACK) or np.any(y > fh + _DOMAIN_SLACK):
        raise DomainError(f"fee y must lie in [0, {fh:g}], got {y}")
    return np.clip(x, 0.0, 1.0), np.clip(y, 0.0, fh)


def _scalarize(v):
    return v if np.ndim(v) else float(v)


def miner_side_payoff(model: SidePayoffModel, x, y):
    x, y = _check_domain(model, x, y)
    p = model.params
    return _scalarize(p.varpi_m * model.miner_profit(y) - p.varkappa_m * model.xi_m(x))


def user_side_payoff(model: SidePayoffModel, x, y):
    x, y = _check_domain(model, x, y)
    p = model.params
    return _scalarize(p.varpi_u * model.chi_u(x) - p.varkappa_u * model.xi_u(y))


def stage_equilibrium(model: SidePayoffModel) -> tuple[float, float]:
    """Myopic best-response pair of the one-shot game.

    Each side's payoff depends on its own action only through its cost
    term, so with strictly increasing costs both sides pick the minimum.
    """
    if not (model.xi_m.strictly_increasing and model.xi_u.strictly_increasing):
        raise PreconditionError("stage equilibrium needs strictly increasing cost functions")
    return 0.0, 0.0
