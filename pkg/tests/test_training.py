import numpy as np
import pytest

from leo_precoding.e2e import E2EConfig
from leo_precoding.models import E2EModel, UnfoldedModel
from leo_precoding.system import SystemConfig, energy_efficiency
from leo_precoding.training import (
    AdamState,
    TrainConfig,
    TrainingError,
    batch_loss,
    batch_loss_and_grad,
    evaluate,
    make_dataset,
    train,
)

SMALL = SystemConfig(nx=2, ny=2, k=2)
PM, BW, PMAX = SMALL.power_model, SMALL.bandwidth, SMALL.p_max
TINY_E2E = E2EConfig(n_layers=2, edge_dim=4, mlp_hidden=8)


@pytest.fixture(scope="module")
def data():
    return make_dataset(SMALL, 40, 10, 0)


def ee(model, cs):
    return energy_efficiency(cs, model.precode(cs, PM, BW, PMAX), PM, BW).ee


def test_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.train_draws, cfg.test_draws) == (0.01, 64, 10000, 1000)
    assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_datasets_use_disjoint_seeds(data):
    train_set, test_set = data
    assert not {cs.seed for cs in train_set} & {cs.seed for cs in test_set}
    again, _ = make_dataset(SMALL, 40, 10, 0)
    assert all(np.array_equal(a.v, b.v) for a, b in zip(train_set, again))


def test_batch_loss_examples(data):
    train_set, _ = data
    model = E2EModel(TINY_E2E, seed=1)
    cs = train_set[0]
    assert batch_loss(model, [cs], PM, BW, PMAX) == -ee(model, cs)
    assert batch_loss(model, [cs, cs], PM, BW, PMAX) == pytest.approx(-ee(model, cs), rel=1e-15)
    batch = train_set[:7]
    oracle = -sum(ee(model, c) for c in batch) / len(batch)
    assert batch_loss(model, batch, PM, BW, PMAX) == pytest.approx(oracle, rel=1e-12)
    loss, _ = batch_loss_and_grad(model, batch, PM, BW, PMAX)
    assert loss == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ValueError):
        batch_loss(model, [], PM, BW, PMAX)


def test_gradients_nonzero_at_start(data):
    batch = data[0][:4]
    for model in (E2EModel(TINY_E2E, seed=0), UnfoldedModel(n_layers=2)):
        _, g = batch_loss_and_grad(model, batch, PM, BW, PMAX)
        assert sum(float(np.sum(v * v)) for v in g.values()) > 0


def test_adam_step_by_hand():
    p = {"x": np.array([1.0, -2.0])}
    g = {"x": np.array([0.5, -4.0])}
    st = AdamState.like(p)
    out = st.update(p, g, 0.1)
    # after one step the bias-corrected moments are g and g^2
    np.testing.assert_allclose(out["x"], p["x"] - 0.1 * g["x"] / (np.abs(g["x"]) + 1e-8), rtol=1e-15)
    out2 = st.update(out, g, 0.1)
    m = (0.9 * 0.1 * g["x"] + 0.1 * g["x"]) / (1 - 0.9**2)
    v = (0.999 * 0.001 * g["x"] ** 2 + 0.001 * g["x"] ** 2) / (1 - 0.999**2)
    np.testing.assert_allclose(out2["x"], out["x"] - 0.1 * m / (np.sqrt(v) + 1e-8), rtol=1e-14)
    assert st.step == 2


def test_zero_learning_rate_is_a_no_op(data):
    train_set, _ = data
    model = E2EModel(TINY_E2E, seed=2)
    before = {k: v.copy() for k, v in model.params.items()}
    cfg = TrainConfig(learning_rate=0.0, batch_size=len(train_set), epochs=3)
    res = train(model, cfg, train_set, [], PM, BW, PMAX)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)
    assert len(res.loss_curve) == 3 and len(set(res.loss_curve)) == 1


def test_training_is_deterministic(data):
    train_set, test_set = data
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=2, seed=4)
    runs = [train(E2EModel(TINY_E2E, seed=3), cfg, train_set, test_set, PM, BW, PMAX) for _ in range(2)]
    assert runs[0].loss_curve == runs[1].loss_curve
    assert runs[0].test_curve == runs[1].test_curve
    assert all(np.array_equal(runs[0].params[k], runs[1].params[k]) for k in runs[0].params)


def test_best_parameters_kept_and_early_stop(data):
    train_set, test_set = data
    model = E2EModel(TINY_E2E, seed=5)
    saved = []
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=6, patience=2)
    res = train(model, cfg, train_set, test_set, PM, BW, PMAX, checkpoint=lambda m: saved.append(1))
    assert res.test_curve[res.best_epoch] == max(res.test_curve)
    mean = float(np.mean([ee(model, cs) for cs in test_set]))
    assert mean == pytest.approx(max(res.test_curve), rel=1e-12)
    assert len(saved) == sum(1 for i in range(1, len(res.test_curve)) if res.test_curve[i] > max(res.test_curve[:i]))
    if res.stopped_early:
        assert len(res.test_curve) - 1 - res.best_epoch == 2


def test_warm_started_unfolded_training_lowers_smoothed_loss():
    train_set, _ = make_dataset(SMALL, 100, 0, 1)
    model = UnfoldedModel(n_layers=2)
    cfg = TrainConfig(learning_rate=0.01, batch_size=4, epochs=4)
    res = train(model, cfg, train_set, [], PM, BW, PMAX)
    curve = np.array(res.loss_curve)
    assert len(curve) == 100
    # each 50-step window covers the same 100 draws twice
    assert curve[-50:].mean() <= curve[:50].mean()


class _Broken:
    arch = "broken"
    params = {"x": np.zeros(1)}

    def ee_and_grad(self, cs, pm, bw, p_max):
        return float("nan"), {"x": np.zeros(1)}


def test_non_finite_loss_aborts_with_step_and_seed(data):
    cs = data[0][3]
    with pytest.raises(TrainingError) as err:
        batch_loss_and_grad(_Broken(), [cs], PM, BW, PMAX, step=7)
    assert err.value.step == 7 and err.value.seed == cs.seed
    assert str(cs.seed) in str(err.value)


def test_evaluate_examples(data):
    _, test_set = data
    model = E2EModel(TINY_E2E, seed=6)
    one = evaluate(model, test_set[:1], PM, BW, PMAX)
    assert one.mean == ee(model, test_set[0])
    a = evaluate(model, test_set, PM, BW, PMAX, bin_width=1e4)
    b = evaluate(model, test_set, PM, BW, PMAX, bin_width=1e4)
    np.testing.assert_array_equal(a.ees, b.ees)
    np.testing.assert_array_equal(a.hist_counts, b.hist_counts)
    assert a.hist_counts.sum() == len(test_set)
    assert len(a.records) == len(test_set)
    assert all(r.method == "e2e" and r.wall_time_s > 0 for r in a.records)
    assert a.mean == pytest.approx(np.mean([ee(model, cs) for cs in test_set]), rel=1e-12)
