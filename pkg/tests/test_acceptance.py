"""Acceptance gate: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline; they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from capgap.incircle import (
    MiningSystemModel,
    check_supermodular,
    density_normalization,
    miner_payoff_scale,
    user_payoff_scale,
)
from capgap.payoff import default_model
from capgap.sim import SimConfig, long_run_average_payoff, run_experiment
from capgap.zdengine import (
    PayoffTables,
    StrategyGrid,
    build_transition_matrix,
    controllable_payoff_range,
    expected_payoffs,
    random_miner_policy,
    random_user_policy,
    stationary_distribution,
    transition_stack,
    verify_linear_relation,
    zd_user_policy,
)

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

SETTINGS = [(0.3, 0.5), (0.5, 0.7), (0.7, 0.9), (0.9, 0.3)]
BASELINES = ["ALL_C", "ALL_D", "WSLS", "TFT", "RANDOM"]
_cache: dict = {}


def report(capsys, number: int, title: str, passed: bool, detail: str):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


def zd_runs():
    if "zd" not in _cache:
        t0 = time.perf_counter()
        _cache["zd"] = {s: run_experiment(SimConfig(p0=s[0], q0=s[1], repeats=50)) for s in SETTINGS}
        _cache["zd_seconds"] = time.perf_counter() - t0
    return _cache["zd"]


def test_convergence(capsys):
    runs = zd_runs()
    finals = {s: float(r.aggregate["p_e"][0][-1]) for s, r in runs.items()}
    secs = _cache["zd_seconds"]
    ok = all(v >= 0.99 for v in finals.values()) and secs < 120
    detail = ", ".join(f"(p0={a},q0={b}) {v:.4f}" for (a, b), v in finals.items())
    report(capsys, 1, "ZD mechanism drives mean p_e >= 0.99 by round 200", ok,
           f"{detail}; {secs:.1f}s")


def test_baselines_fail(capsys):
    failing = {}
    worst = {}
    for kind in BASELINES:
        finals = [
            float(run_experiment(SimConfig(user=kind, p0=a, q0=b, repeats=50)).aggregate["p_e"][0][-1])
            for a, b in SETTINGS
        ]
        worst[kind] = max(finals)
        failing[kind] = all(v < 0.99 for v in finals)
    ok = sum(failing.values()) >= 4
    detail = ", ".join(f"{k} max {v:.3g}" for k, v in worst.items())
    report(capsys, 2, "at least 4 of 5 baselines stay below 0.99", ok, detail)


def test_start_time(capsys):
    details, ok = [], True
    for s, r in zd_runs().items():
        m = r.aggregate["start_time"][0]
        tail = m[-50:]
        # nonincreasing within noise: no later value exceeds an earlier one by more than 0.1
        rise = max(float(tail[j] - tail[:j].min()) for j in range(1, len(tail)))
        ok &= m[-1] < 0.5 and rise <= 0.1
        details.append(f"{s}: final {m[-1]:.3f}, max rise {rise:.3f}")
    report(capsys, 3, "mean start-up time < 0.5 and nonincreasing at the end", ok, "; ".join(details))


def test_fairness(capsys):
    tables = PayoffTables.from_model(default_model(), StrategyGrid())
    lo, hi = controllable_payoff_range(tables)
    range_ok = abs(lo - 2.5) <= 1e-12 and abs(hi - 5.9) <= 1e-12
    fees = {s: float(r.aggregate["fee"][0][-20:].mean()) for s, r in zd_runs().items()}
    ok = range_ok and all(abs(f - 10.0) <= 0.5 for f in fees.values())
    detail = f"range ({lo!r}, {hi!r}); last-20 mean fee " + ", ".join(f"{v:.3f}" for v in fees.values())
    report(capsys, 4, "users end at the top fee; range equals (S_m(0,0), S_m(1,F_h))", ok, detail)


def test_zd_identity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240501)
    grid = StrategyGrid(3, 3, 10.0)
    tables = PayoffTables.from_model(default_model(), grid)
    lo, hi = controllable_payoff_range(tables)
    worst = 0.0
    for target in rng.uniform(lo, hi, 1000):
        q, c = zd_user_policy(grid, tables, target)
        ps = rng.dirichlet(np.ones(grid.n_miner), size=(100, grid.n_fee))
        sigma = stationary_distribution(transition_stack(q, ps))
        E_m = sigma @ tables.S_M
        worst = max(worst, float(np.max(np.abs(c.alpha * E_m + c.gamma))))
    full = StrategyGrid()
    full_tables = PayoffTables.from_model(default_model(), full)
    worst_full = 0.0
    for target in rng.uniform(2.5, 5.9, 10):
        q, c = zd_user_policy(full, full_tables, target)
        worst_full = max(worst_full, verify_linear_relation(q, c, random_miner_policy(full, rng), full_tables))
    secs = time.perf_counter() - t0
    ok = worst < 1e-9 and worst_full < 1e-9 and secs < 60
    report(capsys, 5, "|alpha E_m + gamma| < 1e-9 for random targets and miner policies", ok,
           f"4x4 max {worst:.2e} over 100000 pairs, 11x11 max {worst_full:.2e}, {secs:.1f}s")


def test_sustained_motivation(capsys):
    res = run_experiment(SimConfig(Q=10_000, repeats=5, seed=77))
    ups = [long_run_average_payoff(tr) for tr in res.traces]
    mean = float(np.mean(ups))
    ok = all(abs(u - 5.9) <= 0.2 for u in ups)
    report(capsys, 6, "long-run average miner payoff within 0.2 of 5.9 over 10000 rounds", ok,
           f"per-run {', '.join(f'{u:.4f}' for u in ups)}; mean {mean:.4f}")


def test_density_normalization(capsys):
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(100):
        n = int(rng.integers(2, 7))
        m = MiningSystemModel(
            miner_strategies=tuple(rng.uniform(0, 1, n)),
            lam=float(rng.uniform(0.2, 3.0)),
            round_duration=float(rng.uniform(1.0, 20.0)),
            sharpness=None if k % 2 == 0 else 50.0,
        )
        integral, tail = density_normalization(m)
        worst = max(worst, abs(integral + tail - 1.0))
    report(capsys, 7, "density integral plus tail equals 1", worst < 1e-6, f"max error {worst:.2e} over 100 systems")


def _user_sets(rng, want, satisfying):
    found = []
    while len(found) < want:
        n = int(rng.integers(2, 4))
        eps, sig, w = rng.uniform(0.5, 2.0, 3)
        value = rng.uniform(0.0, 0.05) if satisfying else rng.uniform(20.0, 60.0)
        m = MiningSystemModel(
            miner_strategies=(1.0, 1.0), user_fees=(1.0,) * n, eps_u=float(eps), sig_u=float(sig),
            fee_cost_slope=float(w), user_value=float(value),
        )
        rep = check_supermodular(m, grid_resolution=5, time_resolution=10)
        if rep.user_conditions_hold() == satisfying:
            found.append((m, rep))
    return found


def _miner_sets(rng, want):
    out = []
    for _ in range(want):
        m = MiningSystemModel(
            miner_strategies=(0.5, 0.5), user_fees=(float(rng.uniform(0.5, 5.0)),),
            subsidy=float(rng.uniform(0.5, 3.0)), cost_rate=float(rng.uniform(0.05, 1.0)),
            lam=float(rng.uniform(0.3, 2.0)), eps_m=float(rng.uniform(0.5, 2.0)), sig_m=float(rng.uniform(0.5, 2.0)),
        )
        out.append((m, check_supermodular(m, grid_resolution=3, time_resolution=60)))
    return out


def test_supermodularity(capsys):
    rng = np.random.default_rng(99)
    users = _user_sets(rng, 20, satisfying=True)
    user_ok = all(rep.user_min_mixed_partial >= -1e-4 * user_payoff_scale(m) for m, rep in users)
    miners = _miner_sets(rng, 20)
    # wherever both pointwise conditions hold, the integrand's cross-partial is nonnegative
    pointwise_ok = all(
        not math.isnan(rep.integrand_min_where_conditions_hold)
        and rep.integrand_min_where_conditions_hold >= -1e-4 * miner_payoff_scale(m) * m.lam
        for m, rep in miners
    )
    bad_users = _user_sets(rng, 3, satisfying=False)
    bad_miners = [
        check_supermodular(
            MiningSystemModel(miner_strategies=(0.5, 0.5), user_fees=(1.0,), subsidy=1.0,
                              cost_rate=c, lam=1.5), grid_resolution=3, time_resolution=60)
        for c in (0.5, 2.0)
    ]
    flagged = sum(not rep.user_condition_holds.all() and rep.first_violation("user") is not None
                  for _, rep in bad_users)
    flagged += sum(not rep.condition_b_holds.all() and rep.first_violation("miner") is not None
                   for rep in bad_miners)
    ok = user_ok and pointwise_ok and flagged == 5
    worst_user = min(rep.user_min_mixed_partial for _, rep in users)
    worst_pointwise = min(rep.integrand_min_where_conditions_hold for _, rep in miners)
    report(capsys, 8, "mixed partials nonnegative under the conditions; violations flagged", ok,
           f"user min {worst_user:.3e}, miner integrand min {worst_pointwise:.3e}, flagged {flagged}/5")


def _simulate_chain(q, p, tables, rng, chains=1000, steps=1000, burn=100):
    n_fee = q.shape[1]
    cq = np.cumsum(q, axis=1)
    cp = np.cumsum(p, axis=1)
    state = rng.integers(q.shape[0], size=chains)
    sum_m = np.zeros(chains)
    sum_u = np.zeros(chains)
    for t in range(burn + steps):
        s = np.minimum((rng.random(chains)[:, None] > cq[state]).sum(1), n_fee - 1)
        r = np.minimum((rng.random(chains)[:, None] > cp[s]).sum(1), p.shape[1] - 1)
        state = r * n_fee + s
        if t >= burn:
            sum_m += tables.S_M[state]
            sum_u += tables.S_U[state]
    return sum_m / steps, sum_u / steps


def test_oracle_equivalence(capsys):
    rng = np.random.default_rng(31)
    grid = StrategyGrid(1, 1, 10.0)
    tables = PayoffTables.from_model(default_model(), grid)
    worst = 0.0
    for _ in range(20):
        q = random_user_policy(grid, rng)
        p = random_miner_policy(grid, rng)
        E_m, E_u = expected_payoffs(stationary_distribution(build_transition_matrix(q, p)), tables)
        cm, cu = _simulate_chain(q.q, p.p, tables, rng)
        for exact, chain_means in ((E_m, cm), (E_u, cu)):
            se = chain_means.std(ddof=1) / math.sqrt(len(chain_means))
            worst = max(worst, abs(chain_means.mean() - exact) / se)
    report(capsys, 9, "stationary payoffs match 1e6-step chain simulation within 3 SE", worst <= 3.0,
           f"largest deviation {worst:.2f} SE over 20 policy pairs")
