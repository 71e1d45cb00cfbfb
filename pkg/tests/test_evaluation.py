import numpy as np
import pytest

import oracles
from conftest import tiny_config
from rtn import evaluation as ev
from rtn.metrics import aco, offset_profile
from rtn.model import ModelConfig, init_params
from rtn.motion import window_dataset
from rtn.training import TrainConfig, prepare_stats


def test_aco_examples():
    a = np.random.default_rng(0).normal(size=(31, 22, 3))
    assert aco(a, a) == 0.0
    assert aco(a + 0.01, a) == pytest.approx(1.0, abs=1e-12)
    assert abs(aco(a, a * 1.1) - oracles.aco(a.ravel().tolist(), (a * 1.1).ravel().tolist())) < 1e-12


def test_profile_mean_equals_aco():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(30, 5, 3)), rng.normal(size=(30, 5, 3))
    assert abs(offset_profile(a, b).mean() - aco(a, b)) < 1e-12


def test_error_only_at_last_frame():
    a = np.zeros((10, 2, 3))
    b = a.copy()
    b[-1] = 0.3
    prof = offset_profile(a, b)
    assert np.all(prof[:-1] == 0.0) and prof[-1] == pytest.approx(30.0)
    assert aco(a, b) == pytest.approx(3.0)


@pytest.fixture(scope="module")
def val_setup(small_corpus):
    tr, va = window_dataset(small_corpus, 30, held_out_actor=2)
    return tr, va, prepare_stats(tr, False)


def test_ground_truth_scores_zero(val_setup, skel):
    _, va, stats = val_setup
    rep = ev.run_comparison(va, {"GT": ev.ground_truth_method}, stats)
    assert rep.rows["GT"] == (0.0, 0.0)
    assert rep.curves["GT"].shape == (30,)


def test_comparison_report(val_setup, skel):
    _, va, stats = val_setup
    store = init_params(tiny_config(d=66), 0)
    methods = {"INT": ev.interpolation_method(skel), "RTN": ev.network_method(store, tiny_config(d=66), stats)}
    rep = ev.run_comparison(va, methods, stats)
    assert list(rep.rows) == ["INT", "RTN"]
    for m, a in rep.rows.values():
        assert m > 0 and a > 0
    for curve in rep.curves.values():
        # the curve covers s..T-1 where T itself is exact for interpolation
        assert len(curve) == 30
    table = rep.to_table()
    assert "0.210" in table and "0.087" in table
    assert rep.to_rows().splitlines()[0] == "method,mse,aco"
    assert rep.curve_rows().count("\n") == 1 + 60
    assert rep.worst() in ("INT", "RTN")


def test_missing_checkpoint_and_empty_windows(val_setup):
    _, va, stats = val_setup
    with pytest.raises(FileNotFoundError, match="RTN"):
        ev.run_comparison(va, {"GT": ev.ground_truth_method, "RTN": None}, stats)
    with pytest.raises(ValueError):
        ev.run_comparison([], {"GT": ev.ground_truth_method}, stats)


def test_translation_changes_score(val_setup):
    _, va, stats = val_setup
    pred = ev.ground_truth_method(va)
    shifted = pred + np.array([0.05, 0.0, 0.0])
    m, a, _ = ev.score_predictions(va, shifted, stats)
    assert m > 0 and a == pytest.approx(5.0 / 3.0)


def test_variant_configs():
    model, tconf = ModelConfig(), TrainConfig()
    assert not ev.variant_configs("no-future", model, tconf)[0].future
    assert ev.variant_configs("h0", model, tconf)[0].hidden_init == "zero"
    assert ev.variant_configs("ptf=0.0", model, tconf)[1].teacher_mode == "never"
    assert ev.variant_configs("full", model, tconf) == (model, tconf)
    with pytest.raises(ValueError):
        ev.variant_configs("no-decoder", model, tconf)
    assert set(ev.ABLATION_VARIANTS) >= {"full", "no-future", "h0", "hcommon", "no-resnet"} | set(ev.TEACHER_VARIANTS)


def test_run_ablation_small(val_setup):
    tr, va, stats = val_setup
    cfg = tiny_config(d=66)
    rep, runs = ev.run_ablation(tr[:6], va[:4], ["full", "h0"], cfg, TrainConfig(epochs=1, batch_size=3), stats)
    assert set(rep.rows) == {"full", "h0"} and set(runs) == {"full", "h0"}
    assert rep.rows["full"][0] == runs["full"].best_val_mse
    with pytest.raises(ValueError):
        ev.run_ablation(tr[:6], va[:4], ["bogus"], cfg, TrainConfig(epochs=1), stats)


def test_reference_constants():
    assert ev.REFERENCE_COMPARISON["INT"] == (0.210, 6.726)
    assert ev.REFERENCE_COMPARISON["RTN"] == (0.087, 4.751)
    ref = ev.REFERENCE_ABLATION
    assert max(ref, key=ref.get) == "no-future" and min(ref, key=ref.get) == "full"
