import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsr.autodiff import Tensor
from dualsr.checkpoint import load_checkpoint
from dualsr.errors import ConfigurationError, NumericError
from dualsr.layers import ParamStore
from dualsr.training import (CLIP_LIMIT, MOMENTUM, PlateauSchedule, RunConfig,
                             SgdMomentum, Trainer, clip_gradients, load_config,
                             load_model_for_eval, parse_config_text)


def _store_with(*arrays):
    store = ParamStore()
    for i, a in enumerate(arrays):
        store.register(f"p{i}", Tensor(np.asarray(a, dtype=np.float64),
                                       requires_grad=True))
    return store


# -- gradient clipping -------------------------------------------------------


def test_value_clip_oracle():
    store = _store_with([3.2, -7.0, 0.1])
    store["p0"].grad[...] = [3.2, -7.0, 0.1]
    clip_gradients(store, "value")
    assert np.array_equal(store["p0"].grad, [0.5, -0.5, 0.1])


def test_norm_clip_scales_to_limit():
    store = _store_with([0.0, 0.0], [0.0])
    store["p0"].grad[...] = [3.0, 4.0]
    store["p1"].grad[...] = [12.0]
    clip_gradients(store, "norm")
    total = np.sqrt(np.sum(store["p0"].grad ** 2) + np.sum(store["p1"].grad ** 2))
    assert abs(total - CLIP_LIMIT) < 1e-12
    assert abs(store["p0"].grad[0] / store["p0"].grad[1] - 0.75) < 1e-12


def test_norm_clip_leaves_small_gradients_alone():
    store = _store_with([0.0])
    store["p0"].grad[...] = [0.3]
    clip_gradients(store, "norm")
    assert store["p0"].grad[0] == 0.3


def test_clip_unknown_mode():
    with pytest.raises(ConfigurationError, match="clip mode"):
        clip_gradients(_store_with([0.0]), "quantile")


# -- momentum sgd -------------------------------------------------------------


def test_momentum_two_step_oracle():
    store = _store_with([0.0])
    opt = SgdMomentum(store, lr=0.1)
    store["p0"].grad[...] = [1.0]
    opt.step()
    assert abs(store["p0"].data[0] + 0.1) < 1e-15
    store["p0"].grad[...] = [1.0]
    opt.step()
    assert abs(store["p0"].data[0] + 0.295) < 1e-15
    assert np.array_equal(store["p0"].grad, [0.0])


def test_zero_lr_is_fixed_point():
    store = _store_with([1.5, -2.0])
    opt = SgdMomentum(store, lr=0.0)
    for _ in range(3):
        store["p0"].grad[...] = [5.0, -5.0]
        opt.step()
    assert np.array_equal(store["p0"].data, [1.5, -2.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=8),
       st.floats(0.0, 0.2), st.floats(0.0, 0.99))
def test_momentum_matches_scalar_recurrence(grads, lr, momentum):
    store = _store_with([0.25])
    opt = SgdMomentum(store, lr=lr, momentum=momentum)
    v, p = 0.0, 0.25
    for g in grads:
        store["p0"].grad[...] = [g]
        opt.step()
        v = momentum * v - lr * g
        p = p + v
        assert abs(store["p0"].data[0] - p) < 1e-12


def test_step_movement_bounded_by_clip(rng):
    store = _store_with(rng.uniform(-1, 1, size=(4, 4)))
    opt = SgdMomentum(store, lr=0.1)
    bound = 0.0
    for _ in range(10):
        before = store["p0"].data.copy()
        store["p0"].grad[...] = rng.uniform(-30, 30, size=(4, 4))
        clip_gradients(store, "value")
        bound = MOMENTUM * bound + 0.1 * CLIP_LIMIT
        opt.step()
        assert np.max(np.abs(store["p0"].data - before)) <= bound + 1e-12


def test_non_finite_update_raises():
    store = _store_with([1.0])
    opt = SgdMomentum(store, lr=1.0)
    store["p0"].grad[...] = [np.inf]
    with pytest.raises(NumericError, match="p0"):
        opt.step(7)


def test_optimizer_state_round_trip():
    store = _store_with([1.0, 2.0])
    opt = SgdMomentum(store, lr=0.1)
    store["p0"].grad[...] = [1.0, -1.0]
    opt.step()
    arrays = opt.state_arrays()
    assert set(arrays) == {"opt.p0"}
    other = SgdMomentum(_store_with([0.0, 0.0]), lr=0.1)
    other.load_state_arrays({k: v.copy() for k, v in arrays.items()})
    assert np.array_equal(other.velocity["p0"], opt.velocity["p0"])
    with pytest.raises(ConfigurationError, match="opt.p0"):
        other.load_state_arrays({})


# -- plateau schedule ----------------------------------------------------------


def test_schedule_decays_exactly_three_times():
    sched = PlateauSchedule(0.01, patience=2, min_improvement=1e-5)
    lrs = []
    for _ in range(20):
        sched.observe(1.0)
        lrs.append(sched.lr)
    assert lrs[-1] == pytest.approx(1e-5)
    assert sched.decays == 3
    decay_points = [i for i in range(1, len(lrs)) if lrs[i] != lrs[i - 1]]
    assert decay_points == [2, 4, 6]


def test_schedule_improvement_resets_patience():
    sched = PlateauSchedule(0.1, patience=2)
    assert not sched.observe(1.0)
    assert not sched.observe(1.0)
    assert not sched.observe(0.5)
    assert not sched.observe(0.5)
    assert sched.observe(0.5)
    assert sched.lr == pytest.approx(0.01)


def test_schedule_ignores_sub_threshold_improvement():
    sched = PlateauSchedule(0.1, patience=1, min_improvement=0.1)
    sched.observe(1.0)
    assert sched.observe(0.95)
    assert sched.lr == pytest.approx(0.01)


def test_schedule_state_round_trip():
    sched = PlateauSchedule(0.1, patience=2)
    sched.observe(1.0)
    sched.observe(1.0)
    sched.observe(1.0)
    clone = PlateauSchedule(0.1)
    clone.load_state(sched.state())
    assert clone.lr == sched.lr
    assert clone.decays == sched.decays
    assert clone.best == sched.best


# -- config ---------------------------------------------------------------------


def test_parse_config_text_with_aliases_and_comments():
    text = "# run\nT=5\nwidth = 8\nlr0=0.05\ntied=false\nmodel=drrn\n\n"
    values = parse_config_text(text)
    assert values == {"t_steps": 5, "width": 8, "lr0": 0.05, "tied": False,
                      "model": "drrn"}


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ConfigurationError, match="optimiser"):
        parse_config_text("optimiser=adam\n")


def test_parse_config_rejects_bad_syntax():
    with pytest.raises(ConfigurationError, match="line 2"):
        parse_config_text("width=4\njust words\n")


def test_parse_config_rejects_bad_values():
    with pytest.raises(ConfigurationError, match="width"):
        parse_config_text("width=lots\n")
    with pytest.raises(ConfigurationError, match="boolean"):
        parse_config_text("feedback=maybe\n")


def test_load_config_overrides_and_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("width=8\nsteps=50\n")
    cfg = load_config(path, overrides={"T": 3, "steps": 75})
    assert cfg.width == 8
    assert cfg.t_steps == 3
    assert cfg.steps == 75
    with pytest.raises(ConfigurationError, match="wat"):
        load_config(path, overrides={"wat": 1})
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_run_config_validation_errors():
    with pytest.raises(ConfigurationError, match="model"):
        RunConfig(model="waifu2x").validate()
    with pytest.raises(ConfigurationError, match="scale"):
        RunConfig(scale=0).validate()
    with pytest.raises(ConfigurationError, match="lr0"):
        RunConfig(lr0=0.0).validate()
    with pytest.raises(ConfigurationError, match="clip_mode"):
        RunConfig(clip_mode="soft").validate()
    with pytest.raises(ConfigurationError, match="dtype"):
        RunConfig(dtype="float16").validate()
    with pytest.raises(ConfigurationError, match="patch"):
        RunConfig(patch=0).validate()


def test_config_hash_tracks_content():
    a = RunConfig(width=8)
    b = RunConfig(width=8)
    c = RunConfig(width=9)
    assert a.hash() == b.hash()
    assert a.hash() != c.hash()


# -- trainer end to end -----------------------------------------------------------


def _tiny_config(corpus_dir, out_dir, **kw):
    base = dict(model="dsrn", scale=2, t_steps=1, width=4, batch=2, patch=12,
                steps=20, seed=11, lr0=0.01, val_batch=2, val_interval=10,
                data_root=str(corpus_dir), out_dir=str(out_dir))
    base.update(kw)
    return RunConfig(**base)


def test_training_reduces_validation_loss(corpus_dir, tmp_path):
    cfg = _tiny_config(corpus_dir, tmp_path / "run", steps=60, width=6,
                       lr0=0.05, val_interval=20)
    trainer = Trainer(cfg)
    from dualsr.data import Corpus, batch_arrays, sample_pairs
    from dualsr.training import _validate_model
    corpus = Corpus.from_dir(cfg.data_root)
    val_pairs = sample_pairs(corpus, 2, cfg.patch, cfg.val_batch,
                             np.random.default_rng(0))
    arrays = batch_arrays(val_pairs, trainer.dtype)
    before, _ = _validate_model(trainer.model, arrays, crop=2)
    summary = trainer.train()
    after, _ = _validate_model(trainer.model, arrays, crop=2)
    assert after < before
    assert summary["step"] == 60
    assert np.isfinite(summary["val_psnr"])


def test_training_is_deterministic(corpus_dir, tmp_path):
    a = Trainer(_tiny_config(corpus_dir, tmp_path / "a")).train()
    b = Trainer(_tiny_config(corpus_dir, tmp_path / "b")).train()
    assert a["train_loss"] == b["train_loss"]
    assert a["val_psnr"] == b["val_psnr"]
    arr_a, _ = load_checkpoint(tmp_path / "a" / "last.ckpt")
    arr_b, _ = load_checkpoint(tmp_path / "b" / "last.ckpt")
    for name in arr_a:
        assert np.array_equal(arr_a[name], arr_b[name]), name


def test_resume_matches_uninterrupted_run(corpus_dir, tmp_path):
    full = Trainer(_tiny_config(corpus_dir, tmp_path / "full", steps=40))
    full.train()
    Trainer(_tiny_config(corpus_dir, tmp_path / "part", steps=20)).train()
    resumed = Trainer(_tiny_config(
        corpus_dir, tmp_path / "part", steps=40,
        resume=str(tmp_path / "part" / "last.ckpt")))
    resumed.train()
    arr_full, man_full = load_checkpoint(tmp_path / "full" / "last.ckpt")
    arr_part, man_part = load_checkpoint(tmp_path / "part" / "last.ckpt")
    assert man_full["step"] == man_part["step"] == 40
    for name in arr_full:
        assert np.array_equal(arr_full[name], arr_part[name]), name
    csv_full = (tmp_path / "full" / "metrics.csv").read_text()
    csv_part = (tmp_path / "part" / "metrics.csv").read_text()
    assert csv_full == csv_part


def test_metrics_csv_schema(corpus_dir, tmp_path):
    Trainer(_tiny_config(corpus_dir, tmp_path / "m", steps=20)).train()
    lines = (tmp_path / "m" / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == "step,lr,train_loss,val_psnr"
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "10"


def test_divergence_raises_and_preserves_checkpoint(corpus_dir, tmp_path):
    cfg = _tiny_config(corpus_dir, tmp_path / "boom", steps=50, lr0=1e9)
    with pytest.raises(NumericError), np.errstate(over="ignore", invalid="ignore"):
        Trainer(cfg).train()
    assert os.path.exists(tmp_path / "boom" / "last.ckpt")


def test_load_model_for_eval_round_trip(corpus_dir, tmp_path):
    cfg = _tiny_config(corpus_dir, tmp_path / "r", steps=10, dtype="float32")
    trainer = Trainer(cfg)
    trainer.train()
    model, manifest = load_model_for_eval(tmp_path / "r" / "last.ckpt")
    assert manifest["step"] == 10
    assert model.scale == 2
    for name, t in model.params.items():
        assert t.data.dtype == np.float32
        assert np.array_equal(t.data, trainer.model.params[name].data)


def test_trainer_dtype_selection(corpus_dir, tmp_path):
    from dualsr.autodiff import get_default_dtype
    prev = get_default_dtype()
    t32 = Trainer(_tiny_config(corpus_dir, tmp_path / "d", dtype="float32"))
    assert get_default_dtype() == prev
    assert all(t.data.dtype == np.float32 for t in t32.model.params.tensors())
    t64 = Trainer(_tiny_config(corpus_dir, tmp_path / "d2", dtype="float64"))
    assert all(t.data.dtype == np.float64 for t in t64.model.params.tensors())
