import numpy as np
import pytest

import oracles
from conftest import tiny_setup
from rtn import autodiff as ad
from rtn.metrics import mse_loss
from rtn.model import init_params
from rtn.training import (
    ConfigError,
    TrainConfig,
    amsgrad_step,
    dump_config,
    parse_config,
    select_prev_frame,
    teacher_masks,
    teacher_probability,
    train,
    train_step,
)


def test_mse_constant_offset():
    truth = np.zeros((5, 4, 9))
    assert mse_loss(truth + 0.5, truth) == pytest.approx(9 * 0.25, abs=1e-15)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    assert abs(mse_loss(a, b) - oracles.mse(a.tolist(), b.tolist())) < 1e-12
    with pytest.raises(ValueError):
        mse_loss(a, b[:5])


def test_select_prev_frame_extremes():
    rng = np.random.default_rng(0)
    assert all(select_prev_frame("gt", "pred", 1.0, rng) == "gt" for _ in range(100))
    assert all(select_prev_frame("gt", "pred", 0.0, rng) == "pred" for _ in range(100))


def test_select_prev_frame_rate():
    rng = np.random.default_rng(123)
    hits = sum(select_prev_frame(1, 0, 0.2, rng) for _ in range(10_000))
    assert 1880 <= hits <= 2120


def test_select_prev_frame_consumes_one_draw():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    select_prev_frame(1, 0, 1.0, a)
    b.random()
    assert a.random() == b.random()


def test_teacher_modes():
    rng = np.random.default_rng(0)
    assert teacher_masks(TrainConfig(teacher_mode="always"), 1, 30, 4, rng).all()
    assert not teacher_masks(TrainConfig(teacher_mode="never"), 1, 30, 4, rng).any()
    sched = TrainConfig(teacher_mode="scheduled-linear", epochs=11)
    assert teacher_probability(sched, 1) == 1.0 and teacher_probability(sched, 11) == 0.0
    assert teacher_probability(sched, 6) == pytest.approx(0.5)
    ac = teacher_masks(TrainConfig(teacher_mode="windowed-ac", ac_window=(2, 3)), 1, 10, 2, rng)
    np.testing.assert_array_equal(ac[:, 0], [1, 1, 0, 0, 0, 1, 1, 0, 0, 0])
    assert ac.shape == (10, 2)


def _store(value):
    store = ad.ParamStore()
    store.add("w", np.array([[value]]))
    return store


def test_amsgrad_matches_hand_computed_steps():
    grads = [0.5, -2.0, 0.1, 3.0, -0.3]
    ref = oracles.amsgrad(1.0, grads, 0.01)
    store = _store(1.0)
    vmaxes = []
    for g, want in zip(grads, ref):
        assert amsgrad_step(store, {"w": np.array([[g]])}, 0.01)
        assert abs(store.params["w"][0, 0] - want) < 1e-15
        vmaxes.append(store.vmax["w"][0, 0])
    assert all(b >= a for a, b in zip(vmaxes, vmaxes[1:]))
    assert store.step == len(grads)


def test_amsgrad_skips_nonfinite_and_checks_shape():
    store = _store(2.0)
    assert not amsgrad_step(store, {"w": np.array([[np.nan]])}, 0.1)
    assert store.params["w"][0, 0] == 2.0 and store.step == 0 and store.m["w"][0, 0] == 0.0
    with pytest.raises(ValueError):
        amsgrad_step(store, {"w": np.zeros((2, 1))}, 0.1)


def test_overfits_single_window():
    wide = dict(encoder=(32, 32), lstm=32, decoder=(32, 32), init_hidden=32)
    windows, stats, cfg = tiny_setup(terrain_aware=False, batch=1, seed=4, **wide)
    store = init_params(cfg, 0)
    tconf = TrainConfig(batch_size=1, lr=5e-3, teacher_mode="never", augment=False)
    rng = np.random.default_rng(0)
    for _ in range(500):
        loss = train_step(store, cfg, stats, windows, tconf, 1, rng)
    assert loss < 1e-3


def _small_run(seed, epochs=20):
    windows, stats, cfg = tiny_setup(terrain_aware=False, batch=12, seed=2, p=4)
    tconf = TrainConfig(batch_size=4, lr=3e-3, epochs=epochs, seed=seed)
    return train(windows[:8], windows[8:], cfg, tconf, stats=stats)


def test_training_smoke_run():
    report, best, _ = _small_run(0)
    losses = [r[1] for r in report.rows[1:]]
    assert len(report.rows) == 21 and np.isnan(report.rows[0][1])
    assert all(np.isfinite(losses)) and all(v > 0 for v in losses)
    assert report.best_val_mse < report.rows[0][2]
    assert report.best_val_mse == min(report.val_mse)
    assert "val MSE" in report.to_table() and report.to_rows().startswith("epoch,")


def test_identical_seeds_identical_curves():
    a, sa, _ = _small_run(3, epochs=5)
    b, sb, _ = _small_run(3, epochs=5)
    assert a.to_rows() == b.to_rows()
    for k in sa.params:
        np.testing.assert_array_equal(sa.params[k], sb.params[k])


def test_train_rejects_empty_sets():
    windows, stats, cfg = tiny_setup(terrain_aware=False)
    with pytest.raises(ValueError):
        train(windows, [], cfg, TrainConfig(epochs=1))


def test_config_round_trip_and_errors():
    tconf, model = parse_config("lr = 0.001\nteacher_mode = never\nmodel.lstm = 64\nac_window = 3 4\n")
    assert tconf.lr == 0.001 and tconf.teacher_mode == "never" and model == {"lstm": 64}
    assert tconf.ac_window == (3, 4)
    again, model2 = parse_config(dump_config(tconf, model))
    assert again == tconf and model2 == model
    for bad in ("lr = fast\n", "unknown = 1\n", "model.depth = 3\n", "teacher_p = 1.5\n",
                "teacher_mode = sometimes\n", "this is not a config\n", "augment = maybe\n"):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_amsgrad_zero_gradient_and_two_unit_steps():
    store = _store(0.5)
    amsgrad_step(store, {"w": np.zeros((1, 1))}, 0.1)
    assert store.params["w"][0, 0] == 0.5
    store = _store(0.0)
    lr = 0.0005
    # step 1: m = 0.1, v = 0.001; step 2: m = 0.19, v = 0.001999
    want1 = -lr * 0.1 / (np.sqrt(0.001) + 1e-8)
    want2 = want1 - lr * 0.19 / (np.sqrt(0.001999) + 1e-8)
    amsgrad_step(store, {"w": np.ones((1, 1))}, lr)
    assert store.params["w"][0, 0] == pytest.approx(want1, abs=1e-15)
    amsgrad_step(store, {"w": np.ones((1, 1))}, lr)
    assert store.params["w"][0, 0] == pytest.approx(want2, abs=1e-15)


def test_defaults():
    t = TrainConfig()
    assert (t.beta1, t.beta2, t.lr, t.teacher_p, t.batch_size) == (0.9, 0.999, 0.0005, 0.2, 32)
