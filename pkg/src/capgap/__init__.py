"""Simulator for the miner-side/user-side transaction-fee incentive game."""

from .payoff import EconomicParams, FunctionSpec, SidePayoffModel, default_model
from .zdengine import (
    MinerPolicy,
    PayoffTables,
    StrategyGrid,
    UserPolicy,
    ZDCoefficients,
    build_transition_matrix,
    controllable_payoff_range,
    expected_payoffs,
    stationary_distribution,
    verify_linear_relation,
    zd_user_policy,
)
from .sim import SimConfig, run_episode, run_experiment

__version__ = "0.1.0"
