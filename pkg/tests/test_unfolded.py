import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import BW, random_hpd
from leo_precoding.channel import ArrayGeometry, ChannelDistributionSpec, draw_channel_set
from leo_precoding.models import UnfoldedModel, load_checkpoint, save_checkpoint
from leo_precoding.system import PowerModel, energy_efficiency, energy_efficiency_grad, is_feasible, project_power
from leo_precoding.unfolded import (
    LowRankPlusRidge,
    UnfoldedParams,
    UnfoldingError,
    diag_inverse_init,
    init_scale,
    precode_unfolded,
    replay,
    taylor_step_exact,
    unfold_backward,
    unfold_forward,
    unfolded_ee_and_grad,
    unfolded_matrix,
)
from leo_precoding.wmmse import dinkelbach_solve, wmmse_rhs


def near_taylor(seed, n_layers, scale=0.05):
    rng = np.random.default_rng(seed)
    return UnfoldedParams(UnfoldedParams.exact_taylor(n_layers).values + scale * rng.standard_normal((n_layers, 6)))


def test_diag_inverse_examples():
    np.testing.assert_array_equal(diag_inverse_init(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(diag_inverse_init(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    with pytest.raises(UnfoldingError, match="1"):
        diag_inverse_init(np.diag([1.0, 0.0]))


@given(st.integers(0, 10**6))
def test_diag_inverse_contracts_on_dominant_matrices(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    a = (a + a.conj().T) / 2
    m = a + np.diag(np.sum(np.abs(a), axis=1) + 0.1)
    assert np.linalg.norm(np.eye(5) - diag_inverse_init(m) @ m, 2) < 1


def test_taylor_step_examples():
    f = taylor_step_exact(0.5 * np.eye(2), np.eye(2))
    np.testing.assert_allclose(f, 0.75 * np.eye(2))
    np.testing.assert_allclose(taylor_step_exact(f, np.eye(2)), 0.9375 * np.eye(2))
    p = random_hpd(np.random.default_rng(0), 4)
    inv = np.linalg.inv(p)
    np.testing.assert_allclose(taylor_step_exact(inv, p), inv, atol=1e-12)
    with pytest.raises(ValueError):
        taylor_step_exact(np.eye(2), np.eye(3))


def test_taylor_residual_decreases():
    rng = np.random.default_rng(1)
    for _ in range(10):
        p = random_hpd(rng, 6, ridge=20.0)
        f = diag_inverse_init(p) * init_scale(p)
        res = []
        for _ in range(8):
            f = taylor_step_exact(f, p)
            res.append(np.linalg.norm(np.eye(6) - f @ p))
        assert all(b < a or b < 1e-13 for a, b in zip(res, res[1:]))


@given(st.integers(0, 10**6), st.integers(1, 6))
def test_exact_taylor_embedding(seed, n_layers):
    m = random_hpd(np.random.default_rng(seed), 5, ridge=5.0)
    for init in ("diag", "scaled"):
        out, tape = unfold_forward(m, UnfoldedParams.exact_taylor(n_layers), "identity", init)
        f = tape.f0
        for _ in range(n_layers):
            f = taylor_step_exact(f, m)
        np.testing.assert_allclose(out, f, rtol=0, atol=1e-12 * max(1.0, np.abs(f).max()))


def test_zero_params_give_zero():
    m = random_hpd(np.random.default_rng(2), 4)
    out, _ = unfold_forward(m, UnfoldedParams.zeros(1), "identity")
    np.testing.assert_array_equal(out, 0)


def test_scaled_identity_stays_diagonal():
    out, _ = unfold_forward(3.0 * np.eye(4), UnfoldedParams.exact_taylor(4), "identity", "diag")
    np.testing.assert_allclose(out, np.eye(4) / 3.0, atol=1e-15)
    # from a 0.25 start on 2I the diagonal follows x -> 2x - 2x^2
    out, tape = unfold_forward(2.0 * np.eye(3), UnfoldedParams.exact_taylor(3), "identity", "scaled")
    x = tape.f0[0, 0].real
    for _ in range(3):
        x = 2 * x - 2 * x * x
    assert np.count_nonzero(out - np.diag(np.diag(out))) == 0
    np.testing.assert_allclose(np.diag(out), x, rtol=1e-15)


def test_bad_inputs():
    with pytest.raises(ValueError):
        unfold_forward(np.ones((2, 3)), UnfoldedParams.zeros(1))
    with pytest.raises(ValueError):
        unfold_forward(np.eye(2), UnfoldedParams.zeros(1), "relu")
    with pytest.raises(ValueError):
        UnfoldedParams(np.zeros((0, 6)))
    with pytest.raises(ValueError):
        UnfoldedParams([[np.nan] * 6])
    with pytest.raises(UnfoldingError):
        unfold_forward(np.eye(2), UnfoldedParams(np.full((40, 6), 1e10)))


@given(st.integers(0, 10**6))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = random_hpd(rng, 6, ridge=3.0)
    perm = rng.permutation(6)
    params = near_taylor(seed, 3)
    for act in ("identity", "leaky_relu"):
        out, _ = unfold_forward(m, params, act, "scaled")
        outp, _ = unfold_forward(m[np.ix_(perm, perm)], params, act, "scaled")
        np.testing.assert_allclose(outp, out[np.ix_(perm, perm)], atol=1e-9)


def test_replay_is_bitwise():
    m = random_hpd(np.random.default_rng(3), 5)
    for act in ("identity", "leaky_relu"):
        out, tape = unfold_forward(m, near_taylor(3, 4), act)
        assert np.array_equal(replay(tape), out)


def test_factored_operator_matches_dense():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    op = LowRankPlusRidge(v, rng.uniform(0.5, 2, 3), 0.7)
    params = near_taylor(4, 3)
    a, _ = unfold_forward(op, params, "leaky_relu")
    b, _ = unfold_forward(op.dense(), params, "leaky_relu")
    np.testing.assert_allclose(a, b, atol=1e-13)
    x = rng.standard_normal((6, 2))
    np.testing.assert_allclose(op.matmul(x), op.dense() @ x, atol=1e-13)


def _fd_check(m, params, act, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(m.shape) + 1j * rng.standard_normal(m.shape)

    def loss(p):
        return float(np.real(np.vdot(w, unfold_forward(m, UnfoldedParams(p), act)[0])))

    _, tape = unfold_forward(m, params, act)
    grads = unfold_backward(tape, w)
    h = 1e-5
    for idx in np.ndindex(params.values.shape):
        up, dn = params.values.copy(), params.values.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (loss(up) - loss(dn)) / (2 * h)
        assert grads[idx] == pytest.approx(fd, rel=1e-4, abs=1e-7), idx
    return grads


@given(st.integers(0, 10**6))
def test_gradients_match_finite_differences(seed):
    m = random_hpd(np.random.default_rng(seed), 4, ridge=4.0)
    _fd_check(m, near_taylor(seed, 2), "identity", seed)
    _fd_check(m, near_taylor(seed, 2), "leaky_relu", seed)


def test_zero_output_grad_gives_zero():
    m = random_hpd(np.random.default_rng(5), 4)
    _, tape = unfold_forward(m, near_taylor(5, 3))
    np.testing.assert_array_equal(unfold_backward(tape, np.zeros((4, 4))), 0)
    with pytest.raises(ValueError):
        unfold_backward(tape, np.zeros((3, 3)))


def test_single_antenna_aggregations_collapse():
    # with one antenna both neighbour sums reduce to the edge itself,
    # so the s and d parameters act exactly like the matching c parameter
    m = np.array([[2.5 + 0j]])
    grads = _fd_check(m, near_taylor(6, 2), "identity", 6)
    for row in grads:
        assert row[0] == row[2] == row[4]
        assert row[1] == pytest.approx(row[3], rel=1e-15)
        assert row[1] == pytest.approx(row[5], rel=1e-15)


def test_truncated_gradient_matches_finite_differences():
    cs = draw_channel_set(ArrayGeometry(2, 2), 2, 7, ChannelDistributionSpec(gamma="uniform"))
    pm = PowerModel(4)
    params = near_taylor(7, 3, 0.02)
    res = precode_unfolded(cs, pm, BW, 10.0, params, return_result=True)
    ee, g = unfolded_ee_and_grad(cs, res, params, pm, BW, 10.0)
    assert ee == pytest.approx(energy_efficiency(cs, res.b, pm, BW).ee, rel=1e-9)
    last = res.last_inner
    m = unfolded_matrix(cs, last.u, last.w, last.rho, pm, BW, 10.0)
    rhs = wmmse_rhs(cs, last.u, last.w, BW)

    def ee_of(p):
        f, _ = unfold_forward(m, UnfoldedParams(p), "identity", "scaled")
        return energy_efficiency_grad(cs, project_power(f @ rhs, 10.0), pm, BW)[0]

    h = 1e-6
    for idx in np.ndindex(params.values.shape):
        up, dn = params.values.copy(), params.values.copy()
        up[idx] += h
        dn[idx] -= h
        assert g[idx] == pytest.approx((ee_of(up) - ee_of(dn)) / (2 * h), rel=1e-4, abs=1e-3 * abs(ee))


def test_precode_close_to_exact_solver():
    pm = PowerModel(8)
    for seed in range(5):
        cs = draw_channel_set(ArrayGeometry(2, 4), 3, seed)
        b = precode_unfolded(cs, pm, BW, 10.0, UnfoldedParams.exact_taylor(12))
        exact = dinkelbach_solve(cs, pm, BW, 10.0).b
        ee = energy_efficiency(cs, b, pm, BW).ee
        assert ee >= 0.98 * energy_efficiency(cs, exact, pm, BW).ee
        assert is_feasible(b, 10.0)


@given(st.integers(0, 10**5))
def test_precode_feasible_and_equivariant(seed):
    cs = draw_channel_set(ArrayGeometry(2, 3), 2, seed)
    pm = PowerModel(6)
    params = near_taylor(seed, 3, 0.1)
    b = precode_unfolded(cs, pm, BW, 10.0, params)
    assert is_feasible(b, 10.0)
    perm = np.random.default_rng(seed).permutation(6)
    bp = precode_unfolded(cs.permute_antennas(perm), pm, BW, 10.0, params)
    np.testing.assert_allclose(bp, b[perm], atol=1e-6 * max(1.0, np.abs(b).max()))


def test_checkpoint_round_trip(tmp_path):
    model = UnfoldedModel(n_layers=2, activation="leaky_relu", params={"theta": near_taylor(8, 2).values})
    save_checkpoint(model, tmp_path / "u.json")
    back = load_checkpoint(tmp_path / "u.json")
    assert back.config() == model.config()
    np.testing.assert_array_equal(back.params["theta"], model.params["theta"])
    cs = draw_channel_set(ArrayGeometry(2, 2), 2, 0)
    pm = PowerModel(4)
    np.testing.assert_array_equal(back.precode(cs, pm, BW, 10.0), model.precode(cs, pm, BW, 10.0))
    doc = (tmp_path / "u.json").read_text().replace("t=M@f per layer", "t=D^-1 M")
    (tmp_path / "bad.json").write_text(doc)
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.json")
