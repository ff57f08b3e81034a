"""Multi-miner / multi-user in-circle model.

Miner i powers its rig on at ``t_i = (1 - x_i) T``.  The number of active
rigs ``alpha_I(t)`` and the aggregate mining time ``tau(t)`` drive a
shifted-exponential block time with density ``lam * alpha_I * exp(-lam * tau)``.

With ``sharpness=None`` activation is a hard step.  A finite sharpness
replaces each step by ``expit(s (t - t_i))`` and each active time by the
matching softplus integral, which keeps ``d tau / dt = alpha_I`` (so the
density still normalizes) while making every partial in ``x`` exist.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from .errors import DomainError, ModelError

log = logging.getLogger(__name__)

TAIL_MASS = 1e-9
SMOOTH_SHARPNESS = 50.0
FD_STEP = 1e-4
_PANEL_WIDTH = 0.02
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class MiningSystemModel:
    miner_strategies: tuple[float, ...] = (1.0,)
    user_fees: tuple[float, ...] = (1.0,)
    lam: float = 1.0
    round_duration: float = 10.0
    cost_rate: float = 0.0
    eps_m: float = 1.0
    sig_m: float = 1.0
    eps_u: float = 1.0
    sig_u: float = 1.0
    user_value: float = 1.0
    fee_cost_slope: float = 1.0
    subsidy: float = 0.0
    max_fee: float = 10.0
    sharpness: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "miner_strategies", tuple(float(v) for v in self.miner_strategies))
        object.__setattr__(self, "user_fees", tuple(float(v) for v in self.user_fees))
        if not self.lam > 0:
            raise ModelError(f"rate parameter lam must be positive, got {self.lam:g}")
        if not self.round_duration > 0:
            raise ModelError("round_duration must be positive")
        if not self.max_fee > 0:
            raise ModelError("max_fee must be positive")
        for name in ("eps_m", "sig_m", "eps_u", "sig_u"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be positive")
        for name in ("cost_rate", "fee_cost_slope", "subsidy", "user_value"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be nonnegative")
        if self.sharpness is not None and not self.sharpness > 0:
            raise ModelError("sharpness must be positive (or None for hard steps)")
        if any(not 0.0 <= v <= 1.0 for v in self.miner_strategies):
            raise DomainError("miner strategies must lie in [0, 1]")
        if any(not 0.0 <= v <= self.max_fee for v in self.user_fees):
            raise DomainError(f"user fees must lie in [0, {self.max_fee:g}]")

    @property
    def n_miners(self) -> int:
        return len(self.miner_strategies)

    @property
    def n_users(self) -> int:
        return len(self.user_fees)

    @property
    def miner_value(self) -> float:
        """Reward of the winning miner: subsidy plus every fee in the block."""
        return self.subsidy + sum(self.user_fees)

    def smoothed(self, sharpness: float = SMOOTH_SHARPNESS) -> "MiningSystemModel":
        return self if self.sharpness is not None else replace(self, sharpness=sharpness)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _activity(model: MiningSystemModel, x: np.ndarray, t: np.ndarray):
    """Per-rig activation and active time, shaped (..., len(t), n_miners)."""
    ti = (1.0 - np.asarray(x, dtype=float))[..., None, :] * model.round_duration
    t = np.asarray(t, dtype=float)[:, None]
    s = model.sharpness
    if s is None:
        act = (t >= ti).astype(float)
        tau = np.maximum(0.0, t - ti)
    else:
        act = expit(s * (t - ti))
        tau = (_softplus(s * (t - ti)) - _softplus(-s * ti)) / s
    return act, tau


def horizon(model: MiningSystemModel) -> float:
    """Integration horizon leaving tail mass below TAIL_MASS."""
    latest = (1.0 - min(model.miner_strategies)) * model.round_duration
    pad = 0.0 if model.sharpness is None else 5.0 / model.sharpness
    return latest + pad + (math.log(1.0 / TAIL_MASS) + 1.0) / model.lam


def _breakpoints(model: MiningSystemModel, H: float) -> list[float]:
    ti = {(1.0 - x) * model.round_duration for x in model.miner_strategies}
    return sorted({0.0, H} | {v for v in ti if 0.0 < v < H})


def block_time_density(model: MiningSystemModel, t):
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise DomainError("block time density is defined for t >= 0")
    act, tau = _activity(model, np.array(model.miner_strategies), t_arr)
    out = model.lam * act.sum(-1) * np.exp(-model.lam * tau.sum(-1))
    return float(out[0]) if np.ndim(t) == 0 else out


def survival(model: MiningSystemModel, t: float) -> float:
    """Probability that no block has been found by time t."""
    _, tau = _activity(model, np.array(model.miner_strategies), np.array([t]))
    return float(np.exp(-model.lam * tau.sum()))


def density_normalization(model: MiningSystemModel) -> tuple[float, float]:
    """(integral of the density over [0, H], tail mass beyond H)."""
    H = horizon(model)
    pts = _breakpoints(model, H)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += quad(lambda u: block_time_density(model, u), lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
    return total, survival(model, H)


def _miner_integrand(model: MiningSystemModel, i: int, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    # (eps * alpha_i * V - sig * C_i * alpha_I) * lam * exp(-lam * tau); the alpha_I of the
    # density cancels the win share alpha_i / alpha_I, which avoids the 0/0 before any rig starts
    act, tau = _activity(model, x, t)
    gain = model.eps_m * act[..., i] * model.miner_value
    cost = model.sig_m * model.cost_rate * tau[..., i] * act.sum(-1)
    return (gain - cost) * model.lam * np.exp(-model.lam * tau.sum(-1))


def _check_miner(model: MiningSystemModel, i: int):
    if model.n_miners == 0:
        raise ModelError("the mining system has no miners")
    if not 0 <= i < model.n_miners:
        raise DomainError(f"miner index {i} outside 0..{model.n_miners - 1}")


def miner_expected_payoff(model: MiningSystemModel, i: int) -> float:
    _check_miner(model, i)
    x = np.array(model.miner_strategies)
    H = horizon(model)
    pts = _breakpoints(model, H)
    f = lambda u: float(_miner_integrand(model, i, x, np.array([u]))[0])
    return sum(
        quad(f, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11)[0]
        for lo, hi in zip(pts[:-1], pts[1:])
    )


def packaging_probability(model: MiningSystemModel) -> np.ndarray:
    """Chance each user's transaction is packed, proportional to its fee."""
    y = np.array(model.user_fees)
    total = y.sum()
    if total <= 0:
        warnings.warn("all user fees are zero; packaging probability set to 0", RuntimeWarning)
        return np.zeros_like(y)
    return y / total


def user_expected_payoff(model: MiningSystemModel, k: int) -> float:
    if not 0 <= k < model.n_users:
        raise DomainError(f"user index {k} outside 0..{model.n_users - 1}")
    y = model.user_fees[k]
    pro = packaging_probability(model)[k]
    # the block-time density integrates to one, so it drops out
    return float((model.eps_u * model.user_value - model.sig_u * model.fee_cost_slope * y) * pro)


def _user_payoffs(model: MiningSystemModel, k: int, y: np.ndarray) -> np.ndarray:
    total = y.sum(-1)
    yk = y[..., k]
    with np.errstate(invalid="ignore", divide="ignore"):
        pro = np.where(total > 0, yk / total, 0.0)
    return (model.eps_u * model.user_value - model.sig_u * model.fee_cost_slope * yk) * pro


def _fixed_rule(model: MiningSystemModel, H: float):
    """Composite Gauss-Legendre nodes that do not move when x is perturbed."""
    edges = np.union1d(np.linspace(0.0, H, int(math.ceil(H / _PANEL_WIDTH)) + 1), _breakpoints(model, H))
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + half * (_GL_NODES + 1.0)).ravel()
    weights = (half * _GL_WEIGHTS).ravel()
    return nodes, weights


def miner_payoff_scale(model: MiningSystemModel) -> float:
    return model.eps_m * model.miner_value + model.sig_m * model.cost_rate / model.lam


def user_payoff_scale(model: MiningSystemModel) -> float:
    return model.eps_u * model.user_value + model.sig_u * model.fee_cost_slope * model.max_fee


def _interior(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n + 2)[1:-1]


@dataclass
class SupermodularReport:
    """Pointwise condition checks plus finite-difference mixed partials.

    Miner arrays are indexed [profile, ordered pair, time]; user arrays
    [profile, ordered pair].
    """

    miner_profiles: np.ndarray
    miner_pairs: list[tuple[int, int]]
    times: np.ndarray
    condition_a_holds: np.ndarray
    condition_b_holds: np.ndarray
    user_profiles: np.ndarray
    user_pairs: list[tuple[int, int]]
    user_condition_holds: np.ndarray
    min_mixed_partial: float
    user_min_mixed_partial: float
    integrand_min_where_conditions_hold: float
    miner_tolerance: float
    user_tolerance: float
    integrand_tolerance: float

    def miner_conditions_hold(self) -> bool:
        return bool(self.condition_a_holds.all() and self.condition_b_holds.all())

    def user_conditions_hold(self) -> bool:
        return bool(self.user_condition_holds.all())

    def pointwise_holds(self) -> bool:
        """Integrand mixed partial is nonnegative wherever both miner conditions hold."""
        v = self.integrand_min_where_conditions_hold
        return bool(math.isnan(v) or v >= -self.integrand_tolerance)

    def passes(self, side: str = "both") -> bool:
        miner_ok = self.miner_conditions_hold() and self.min_mixed_partial >= -self.miner_tolerance
        user_ok = self.user_conditions_hold() and self.user_min_mixed_partial >= -self.user_tolerance
        return {"miner": miner_ok, "user": user_ok, "both": miner_ok and user_ok}[side]

    def first_violation(self, side: str = "both") -> str | None:
        if side in ("miner", "both"):
            for name, arr in (("a", self.condition_a_holds), ("b", self.condition_b_holds)):
                bad = np.argwhere(~arr)
                if bad.size:
                    p, k, n = bad[0]
                    i, j = self.miner_pairs[k]
                    return (
                        f"miner condition ({name}) fails at x={self.miner_profiles[p].round(6).tolist()}, "
                        f"pair ({i},{j}), t={self.times[n]:.6g}"
                    )
            if self.min_mixed_partial < -self.miner_tolerance:
                return f"miner mixed partial {self.min_mixed_partial:.3e} below tolerance"
        if side in ("user", "both"):
            bad = np.argwhere(~self.user_condition_holds)
            if bad.size:
                p, k = bad[0]
                i, j = self.user_pairs[k]
                return f"user condition fails at y={self.user_profiles[p].round(6).tolist()}, pair ({i},{j})"
            if self.user_min_mixed_partial < -self.user_tolerance:
                return f"user mixed partial {self.user_min_mixed_partial:.3e} below tolerance"
        return None

    def rows(self):
        """Flat rows for CSV export: side, profile, pair, t, condition flags."""
        for p, prof in enumerate(self.miner_profiles):
            for k, (i, j) in enumerate(self.miner_pairs):
                for n, t in enumerate(self.times):
                    yield {
                        "side": "miner", "profile": " ".join(f"{v:.6g}" for v in prof),
                        "i": i, "j": j, "t": float(t),
                        "condition_a": bool(self.condition_a_holds[p, k, n]),
                        "condition_b": bool(self.condition_b_holds[p, k, n]),
                        "user_condition": "",
                    }
        for p, prof in enumerate(self.user_profiles):
            for k, (i, j) in enumerate(self.user_pairs):
                yield {
                    "side": "user", "profile": " ".join(f"{v:.6g}" for v in prof),
                    "i": i, "j": j, "t": "", "condition_a": "", "condition_b": "",
                    "user_condition": bool(self.user_condition_holds[p, k]),
                }


REPORT_COLUMNS = ("side", "profile", "i", "j", "t", "condition_a", "condition_b", "user_condition")


def _shift(x: np.ndarray, k: int, dh: float) -> np.ndarray:
    out = x.copy()
    out[..., k] += dh
    return out


def _mixed(f, x: np.ndarray, i: int, j: int, h: float):
    """Second-order central estimate of d2 f / dx_i dx_j."""
    pp = f(_shift(_shift(x, i, h), j, h))
    pm = f(_shift(_shift(x, i, h), j, -h))
    mp = f(_shift(_shift(x, i, -h), j, h))
    mm = f(_shift(_shift(x, i, -h), j, -h))
    return (pp - pm - mp + mm) / (4.0 * h * h)


def _miner_checks(model: MiningSystemModel, res: int, time_res: int, h: float):
    n = model.n_miners
    profiles = np.array(list(itertools.product(_interior(0.0, 1.0, res), repeat=n)))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    H = horizon(replace(model, miner_strategies=(profiles.min(),) * n))
    times = _interior(0.0, H, time_res)
    lam = model.lam

    act, tau = _activity(model, profiles, times)  # (P, nt, n)
    a = np.empty_like(act)
    d = np.empty_like(act)
    for k in range(n):
        ap, tp = _activity(model, _shift(profiles, k, h), times)
        am, tm = _activity(model, _shift(profiles, k, -h), times)
        a[..., k] = (ap.sum(-1) - am.sum(-1)) / (2 * h)
        d[..., k] = (tp.sum(-1) - tm.sum(-1)) / (2 * h)
    # g_i = dC_i/dx_i; C_i depends on x only through tau_i, whose x_i-derivative is d_i
    g = model.cost_rate * d
    C = model.cost_rate * tau

    cond_a = np.empty((len(profiles), len(pairs), len(times)), dtype=bool)
    cond_b = np.empty_like(cond_a)
    pointwise_min = math.inf
    nodes, weights = _fixed_rule(model, H)
    u_min = math.inf
    for k, (i, j) in enumerate(pairs):
        # conservative pairing of the two players' partials
        lhs_a = act[..., i] * lam * np.minimum(d[..., i], d[..., j]) - np.maximum(a[..., i], a[..., j])
        lhs_b = g[..., i] - C[..., i] * lam * d[..., i]
        scale_a = 1e-9 * (1.0 + np.abs(a[..., i]) + np.abs(a[..., j]))
        scale_b = 1e-9 * (1.0 + np.abs(g[..., i]))
        cond_a[:, k] = lhs_a >= -scale_a
        cond_b[:, k] = lhs_b >= -scale_b

        both = cond_a[:, k] & cond_b[:, k]
        if both.any():
            mixed_t = _mixed(lambda z: _miner_integrand(model, i, z, times), profiles, i, j, h)
            pointwise_min = min(pointwise_min, float(mixed_t[both].min()))

        U = lambda z: _miner_integrand(model, i, z, nodes) @ weights
        u_min = min(u_min, float(np.min(_mixed(U, profiles, i, j, h))))

    return profiles, pairs, times, cond_a, cond_b, (pointwise_min if pointwise_min < math.inf else math.nan), u_min


def user_condition_margin(model: MiningSystemModel, y: np.ndarray, k: int) -> np.ndarray:
    """Numerator of the users' cross-partial; nonnegative means complements."""
    yk = y[..., k]
    total = y.sum(-1)
    ev = model.eps_u * model.user_value
    sw = model.sig_u * model.fee_cost_slope
    return 2.0 * (ev - sw * yk) * yk - (ev - 2.0 * sw * yk) * total


def _user_checks(model: MiningSystemModel, res: int, h: float):
    nu = model.n_users
    profiles = np.array(list(itertools.product(_interior(0.0, model.max_fee, res), repeat=nu)))
    pairs = [(i, j) for i in range(nu) for j in range(nu) if i != j]
    cond = np.ones((len(profiles), len(pairs)), dtype=bool)
    fd_min = math.inf
    for k, (i, j) in enumerate(pairs):
        margin = user_condition_margin(model, profiles, i)
        cond[:, k] = margin >= -1e-9 * user_payoff_scale(model) * model.max_fee
        fd = _mixed(lambda z: _user_payoffs(model, i, z), profiles, i, j, h)
        fd_min = min(fd_min, float(fd.min()))
    return profiles, pairs, cond, (fd_min if fd_min < math.inf else 0.0)


def check_supermodular(
    model: MiningSystemModel,
    grid_resolution: int = 5,
    time_resolution: int = 200,
    h: float = FD_STEP,
) -> SupermodularReport:
    """Evaluate the complementarity conditions on the smoothed model."""
    if grid_resolution < 3 or time_resolution < 3:
        raise DomainError("grid and time resolution must be at least 3")
    if model.n_miners < 1:
        raise ModelError("the mining system has no miners")
    smooth = model.smoothed()

    if smooth.n_miners >= 2:
        mp, mpairs, times, cond_a, cond_b, pointwise_min, u_min = _miner_checks(smooth, grid_resolution, time_resolution, h)
    else:
        mp, mpairs, times = np.empty((0, smooth.n_miners)), [], np.empty(0)
        cond_a = cond_b = np.ones((0, 0, 0), dtype=bool)
        pointwise_min, u_min = math.nan, 0.0
    if smooth.n_users >= 2:
        up, upairs, ucond, uu_min = _user_checks(smooth, grid_resolution, h)
    else:
        up, upairs, ucond, uu_min = np.empty((0, smooth.n_users)), [], np.ones((0, 0), dtype=bool), 0.0

    m_scale = miner_payoff_scale(smooth)
    return SupermodularReport(
        miner_profiles=mp, miner_pairs=mpairs, times=times,
        condition_a_holds=cond_a, condition_b_holds=cond_b,
        user_profiles=up, user_pairs=upairs, user_condition_holds=ucond,
        min_mixed_partial=u_min, user_min_mixed_partial=uu_min,
        integrand_min_where_conditions_hold=pointwise_min,
        miner_tolerance=1e-4 * m_scale,
        user_tolerance=1e-4 * user_payoff_scale(smooth),
        integrand_tolerance=1e-4 * m_scale * smooth.lam,
    )


@dataclass
class BestResponseTrajectory:
    profiles: list[np.ndarray] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.profiles) - 1

    @property
    def final(self) -> np.ndarray:
        return self.profiles[-1]


def _best_response(values: np.ndarray, choices: np.ndarray) -> float:
    # ties go to the largest maximizer so the map stays monotone
    best = values.max()
    tol = 1e-12 * max(1.0, abs(best))
    return float(choices[np.flatnonzero(values >= best - tol)[-1]])


def best_response_dynamics(
    model: MiningSystemModel,
    max_iters: int = 50,
    side: str = "miners",
    grid_resolution: int = 11,
) -> BestResponseTrajectory:
    """Simultaneous best responses on a uniform strategy grid."""
    if max_iters < 1:
        raise DomainError("max_iters must be at least 1")
    if side not in ("miners", "users"):
        raise DomainError("side must be 'miners' or 'users'")
    hi = 1.0 if side == "miners" else model.max_fee
    choices = np.linspace(0.0, hi, grid_resolution)
    key = "miner_strategies" if side == "miners" else "user_fees"
    profile = np.array(getattr(model, key))
    traj = BestResponseTrajectory([profile.copy()])

    for _ in range(max_iters):
        new = np.empty_like(profile)
        for i in range(len(profile)):
            vals = []
            for c in choices:
                trial = profile.copy()
                trial[i] = c
                m = replace(model, **{key: tuple(trial)})
                vals.append(miner_expected_payoff(m, i) if side == "miners" else _user_payoffs(m, i, trial))
            new[i] = _best_response(np.array(vals, dtype=float), choices)
        traj.profiles.append(new.copy())
        if np.array_equal(new, profile):
            traj.converged = True
            break
        profile = new
    return traj


@dataclass
class GapProfile:
    t: np.ndarray
    income: np.ndarray
    cost: np.ndarray
    in_gap: np.ndarray

    @property
    def gap_length(self) -> float:
        if len(self.t) < 2:
            return 0.0
        dt = self.t[1] - self.t[0]
        return float(np.count_nonzero(self.in_gap) * dt)

    def gap_end(self) -> float | None:
        """First sample after the initial gap, or None when there is no gap."""
        if not self.in_gap.any():
            return None
        idx = np.flatnonzero(~self.in_gap)
        return float(self.t[idx[0]]) if idx.size else float(self.t[-1])


def mining_gap_profile(model: MiningSystemModel, time_resolution: int = 101) -> GapProfile:
    """Instantaneous expected income vs. running cost over one round.

    Fees accumulate linearly to their total by the end of the round; income
    is the block rate times the reward currently on offer.
    """
    if time_resolution < 2:
        raise DomainError("time_resolution must be at least 2")
    T = model.round_duration
    t = np.linspace(0.0, T, time_resolution)
    pooled = model.subsidy + sum(model.user_fees) * np.minimum(1.0, t / T)
    income = model.eps_m * model.lam * pooled
    cost = np.full_like(t, model.sig_m * model.cost_rate)
    return GapProfile(t, income, cost, income < cost)


def gap_crossing_time(model: MiningSystemModel) -> float | None:
    """Analytic time at which income overtakes cost, if it happens within the round."""
    fees = sum(model.user_fees)
    need = model.sig_m * model.cost_rate / (model.eps_m * model.lam) - model.subsidy
    if need <= 0:
        return 0.0
    if fees <= 0:
        return None
    tc = need * model.round_duration / fees
    return tc if tc <= model.round_duration else None
