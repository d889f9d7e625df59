import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leo_precoding.channel import ArrayGeometry, ChannelDistributionSpec, draw_channel_set
from leo_precoding.system import PowerModel, energy_efficiency, is_feasible, total_power
from leo_precoding.wmmse import (
    BisectionError,
    dinkelbach_solve,
    effective_bandwidth,
    initial_precoder,
    mse,
    subproblem_objective,
    trace_to_jsonl,
    update_b,
    update_u,
    update_w,
    wmmse_solve,
)

BW = 20e6
UNIFORM = ChannelDistributionSpec(gamma="uniform")


def instance(seed, nx=2, ny=2, k=2, **kw):
    return draw_channel_set(ArrayGeometry(nx, ny), k, seed, UNIFORM, **kw)


def rand_b(seed, n, k):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))


def golden_max(f, lo, hi, tol=1e-13):
    r = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - r * (b - a), a + r * (b - a)
    while b - a > tol * max(1.0, b):
        if f(c) > f(d):
            b, d = d, c
            c = b - r * (b - a)
        else:
            a, c = c, d
            d = a + r * (b - a)
    return (a + b) / 2


def test_u_zero_precoder():
    cs = instance(0)
    np.testing.assert_array_equal(update_u(cs, np.zeros((4, 2))), 0)


def test_u_single_user_closed_form():
    cs = draw_channel_set(ArrayGeometry(2, 2), 1, 0)
    u = update_u(cs, math.sqrt(3.0) * cs.v * 1j)
    assert u[0] * 1j == pytest.approx(math.sqrt(3.0) / (3.0 + cs.n0), rel=1e-12)


@given(st.integers(0, 10**6))
def test_u_and_w_match_scalar_oracles(seed):
    cs = instance(seed, k=3)
    b = rand_b(seed, 4, 3)
    u = update_u(cs, b)
    w = update_w(cs, b, u)
    for k in range(3):
        z = [np.vdot(cs.v[:, k], b[:, i]) for i in range(3)]
        a = sum(cs.gamma[k] * abs(zi) ** 2 for zi in z) + cs.n0
        uk = math.sqrt(cs.gamma[k]) * np.conj(z[k]) / a
        assert u[k] == pytest.approx(uk, rel=1e-12)
        e = abs(uk * math.sqrt(cs.gamma[k]) * z[k] - 1) ** 2
        e += sum(cs.gamma[k] * abs(uk * z[i]) ** 2 for i in range(3) if i != k) + cs.n0 * abs(uk) ** 2
        assert w[k] == pytest.approx(1 / e, rel=1e-12)
        # MMSE identity at the optimal receiver
        assert e == pytest.approx((1 - uk * math.sqrt(cs.gamma[k]) * z[k]).real, rel=1e-10)


def test_w_zero_precoder():
    cs = instance(1)
    b = np.zeros((4, 2))
    np.testing.assert_array_equal(update_w(cs, b, update_u(cs, b)), 1.0)


def test_b_single_user_direction():
    cs = draw_channel_set(ArrayGeometry(2, 3), 1, 4)
    pm = PowerModel(6)
    b0 = initial_precoder(cs, 10.0) * 0.3
    u, w = update_u(cs, b0), update_w(cs, b0, update_u(cs, b0))
    for rho in (0.0, 1e6):
        b = update_b(cs, u, w, rho, pm, BW, 10.0)
        cos = abs(np.vdot(b[:, 0], cs.v[:, 0])) / np.linalg.norm(b)
        assert cos == pytest.approx(1.0, abs=1e-10)


def test_b_slack_multiplier_zero_when_feasible():
    cs = instance(2)
    pm = PowerModel(4)
    b0 = initial_precoder(cs, 10.0)
    u = update_u(cs, b0)
    w = update_w(cs, b0, u)
    b, a = update_b(cs, u, w, 1e9, pm, BW, 10.0, return_multiplier=True)
    assert a == 0.0
    assert np.sum(np.abs(b) ** 2) < 10.0


@given(st.integers(0, 10**5))
def test_b_complementary_slackness(seed):
    cs = instance(seed)
    pm = PowerModel(4)
    b0 = initial_precoder(cs, 10.0)
    u, w = update_u(cs, b0), update_w(cs, b0, update_u(cs, b0))
    rho = [0.0, 1e5, 1e6, 1e7][seed % 4]
    b, a = update_b(cs, u, w, rho, pm, BW, 10.0, return_multiplier=True)
    power = float(np.sum(np.abs(b) ** 2))
    assert power <= 10.0 * (1 + 1e-12)
    if a > 0:
        assert power == pytest.approx(10.0, rel=1e-8)


def _solve_with(cs, u, w, rho, pm, a):
    c = effective_bandwidth(BW) * w * np.abs(u) ** 2 * cs.gamma
    m = (cs.v * c) @ cs.v.conj().T + (rho * pm.xi + a) * np.eye(cs.n_t)
    rhs = cs.v * (effective_bandwidth(BW) * w * np.sqrt(cs.gamma) * np.conj(u))
    return np.linalg.solve(m, rhs)


def test_b_matches_grid_search_over_multiplier():
    cs = instance(7)
    pm = PowerModel(4)
    b0 = initial_precoder(cs, 10.0)
    u, w = update_u(cs, b0), update_w(cs, b0, update_u(cs, b0))
    b, a = update_b(cs, u, w, 0.0, pm, BW, 10.0, return_multiplier=True)
    assert a > 0

    def power(x):
        return float(np.sum(np.abs(_solve_with(cs, u, w, 0.0, pm, x)) ** 2))

    # coarse grid brackets the crossing, a fine grid inside it pins it down
    grid = np.geomspace(1e-6, 1e12, 10_000)
    feas = np.array([power(x) <= 10.0 for x in grid])
    i = int(np.argmax(feas))
    fine = np.linspace(grid[i - 1], grid[i], 10_000)
    j = int(np.argmax([power(x) <= 10.0 for x in fine]))
    a_grid = fine[j]
    assert power(a_grid) == pytest.approx(np.sum(np.abs(b) ** 2), rel=1e-6)
    np.testing.assert_allclose(_solve_with(cs, u, w, 0.0, pm, a_grid), b, atol=1e-6 * np.linalg.norm(b))


def test_bisection_cap_raises():
    cs = instance(3)
    pm = PowerModel(4)
    b0 = initial_precoder(cs, 10.0)
    u, w = update_u(cs, b0), update_w(cs, b0, update_u(cs, b0))
    with pytest.raises(BisectionError):
        update_b(cs, u, w, 0.0, pm, BW, 10.0, max_iter=2)
    with pytest.raises(ValueError):
        update_b(cs, u, w, -1.0, pm, BW, 10.0)


@given(st.integers(0, 10**5))
def test_inner_objective_monotone_and_surrogate_decreasing(seed):
    cs = instance(seed, 2, 2, 3)
    pm = PowerModel(4)
    rho = [0.0, 1e6, 3e6][seed % 3]
    res = wmmse_solve(cs, rho, initial_precoder(cs, 10.0), pm, BW, 10.0)
    obj = [t["objective"] for t in res.trace]
    sur = [t["surrogate"] for t in res.trace]
    assert all(b >= a - 1e-9 for a, b in zip(obj, obj[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(sur, sur[1:]))
    assert res.converged


def test_reentering_fixed_point_exits_immediately():
    cs = instance(5)
    pm = PowerModel(4)
    first = wmmse_solve(cs, 1e6, initial_precoder(cs, 10.0), pm, BW, 10.0, eps2=1e-12)
    again = wmmse_solve(cs, 1e6, first.b, pm, BW, 10.0)
    assert again.converged and again.iterations == 1


def test_iteration_cap_returns_best_unconverged():
    cs = instance(6, 2, 2, 3)
    pm = PowerModel(4)
    res = wmmse_solve(cs, 0.0, initial_precoder(cs, 10.0), pm, BW, 10.0, eps2=1e-300, max_iter=3)
    assert not res.converged and res.iterations == 3
    best = max(t["objective"] for t in res.trace[1:])
    assert subproblem_objective(cs, res.b, 0.0, pm, BW) == pytest.approx(best, rel=1e-15)


def test_scalar_subproblem_matches_grid():
    cs = draw_channel_set(ArrayGeometry(1, 1), 1, 0, n0=0.5)
    pm = PowerModel(1)
    rho = 2e6
    res = wmmse_solve(cs, rho, initial_precoder(cs, 10.0), pm, BW, 10.0, eps2=1e-12)
    p = np.linspace(0, 10.0, 200_001)
    f = np.log2(1 + p / 0.5) - rho * (pm.xi * p + pm.p_t) / BW
    assert subproblem_objective(cs, res.b, rho, pm, BW) >= f.max() - 1e-6


def test_scalar_dinkelbach_matches_golden_section():
    for n0, p_max in [(0.5, 10.0), (0.05, 1.0), (3.0, 10.0)]:
        cs = draw_channel_set(ArrayGeometry(1, 1), 1, 0, n0=n0)
        pm = PowerModel(1)

        def ee(p):
            return BW * math.log2(1 + p / n0) / (pm.xi * p + pm.p_t)

        p_star = golden_max(ee, 0.0, p_max)
        res = dinkelbach_solve(cs, pm, BW, p_max)
        assert res.converged
        assert energy_efficiency(cs, res.b, pm, BW).ee == pytest.approx(ee(p_star), rel=1e-6)


@given(st.integers(0, 10**5))
def test_dinkelbach_trace_properties(seed):
    cs = instance(seed, 2, 4, 3)
    pm = PowerModel(8)
    res = dinkelbach_solve(cs, pm, BW, 10.0)
    rho = [s.rho for s in res.trace]
    f = [s.f_value for s in res.trace]
    assert res.converged and len(rho) <= 100
    assert all(b >= a for a, b in zip(rho, rho[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(f[1:], f[2:]))
    assert f[-1] <= 1e-5
    assert is_feasible(res.b, 10.0)
    # the last ratio is the EE of the returned precoder
    assert rho[-1] == pytest.approx(energy_efficiency(cs, res.b, pm, BW).ee, rel=1e-4)


def test_antenna_permutation_invariance():
    cs = instance(8, 2, 4, 3)
    pm = PowerModel(8)
    b = dinkelbach_solve(cs, pm, BW, 10.0).b
    perm = np.random.default_rng(0).permutation(8)
    bp = dinkelbach_solve(cs.permute_antennas(perm), pm, BW, 10.0).b
    np.testing.assert_allclose(bp, b[perm], atol=1e-9)


def test_initial_precoder_power_split():
    cs = instance(9, 2, 2, 3)
    b = initial_precoder(cs, 9.0)
    np.testing.assert_allclose(np.sum(np.abs(b) ** 2, axis=0), 3.0)
    assert total_power(PowerModel(4), b) == pytest.approx(2 * 9.0 + PowerModel(4).p_t)


def test_trace_export(tmp_path):
    cs = instance(10)
    res = dinkelbach_solve(cs, PowerModel(4), BW, 10.0)
    trace_to_jsonl(res, tmp_path / "t.jsonl")
    rows = [json.loads(x) for x in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert len(rows) == sum(len(r.trace) for r in res.inner)
    assert {"outer", "rho", "iteration", "objective", "sum_log_w", "power"} <= set(rows[0])


def test_invalid_thresholds():
    with pytest.raises(ValueError):
        dinkelbach_solve(instance(0), PowerModel(4), BW, 10.0, eps1=0.0)


def test_mse_nonnegative():
    cs = instance(11)
    b = rand_b(1, 4, 2)
    assert np.all(mse(cs, b, update_u(cs, b)) > 0)
