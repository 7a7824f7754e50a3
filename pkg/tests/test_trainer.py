import json
import math

import numpy as np
import pytest

from envtricascade import head, pipeline, trainer
from envtricascade.embeddings import read_manifest
from envtricascade.errors import InvalidConfig, InvalidLabel
from envtricascade.head import HeadConfig
from envtricascade.trainer import OptimizerState, TrainConfig


def test_cross_entropy_values():
    assert trainer.cross_entropy(np.zeros(5), 3) == pytest.approx(math.log(5), abs=1e-12)
    assert trainer.cross_entropy([30.0, 0, 0, 0, 0], 0) < 1e-12
    assert trainer.cross_entropy([1.0, 0.0], 0) == pytest.approx(math.log(1 + math.exp(-1)))
    with pytest.raises(InvalidLabel):
        trainer.cross_entropy([1.0, 0.0], 2)
    with pytest.raises(InvalidLabel):
        trainer.mean_cross_entropy(np.zeros((2, 5)), [0, 5])


def test_mean_cross_entropy_gradient_matches_softmax():
    lg = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
    loss, d = trainer.mean_cross_entropy(lg, [1, 2])
    want = (trainer.cross_entropy(lg[0], 1) + trainer.cross_entropy(lg[1], 2)) / 2
    assert loss == pytest.approx(want)
    np.testing.assert_allclose(d.sum(axis=1), 0, atol=1e-15)


TINY = HeadConfig(spec_dim=5, spec_layers=2, wave_dim=4, hidden=6, fused_dim=3, dropout=0.0)


def tiny_batch(seed=0, B=3):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((B, 1, 4, 4)), rng.standard_normal((B, 2, 3, 5)),
            np.arange(B) % 5)


def test_gradient_check_tiny_every_entry():
    p = head.init_params(TINY, 0, dtype=np.float64)
    wave, spec, y = tiny_batch()
    rep = trainer.gradient_check(p, TINY, wave, spec, y)
    assert set(rep) == set(p)
    for name, r in rep.items():
        assert r["rel_error"] < 1e-4, name
        assert r["max_entry_rel_error"] < 1e-4, name


def test_gradient_check_binary_head():
    from envtricascade.stage1 import binary_config
    cfg = binary_config(4, hidden=6, dropout=0.0)
    p = head.init_params(cfg, 1, dtype=np.float64)
    wave, _, _ = tiny_batch(1, B=4)
    rep = trainer.gradient_check(p, cfg, wave, None, np.array([0, 1, 1, 0]))
    assert all(r["rel_error"] < 1e-4 for r in rep.values())


def test_zero_loss_batch_has_tiny_gradients():
    p = head.zero_params(TINY, dtype=np.float64)
    p["cls.fc2.b"] = np.array([60.0, 0, 0, 0, 0])
    wave, spec, _ = tiny_batch()
    loss, grads, _ = trainer.loss_and_grads(p, TINY, wave, spec, np.zeros(3, int))
    assert loss < 1e-20
    assert trainer.global_norm(grads) < 1e-20


def test_duplicated_batch_same_mean_gradient():
    p = head.init_params(TINY, 2, dtype=np.float64)
    wave, spec, y = tiny_batch(3)
    _, g1, _ = trainer.loss_and_grads(p, TINY, wave, spec, y)
    _, g2, _ = trainer.loss_and_grads(p, TINY, np.concatenate([wave, wave]),
                                      np.concatenate([spec, spec]), np.concatenate([y, y]))
    for k in g1:
        np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-14)


def test_clipping():
    g = {"a": np.array([0.3, 0.4])}
    out, norm = trainer.clip_gradients(g, 1.0)
    assert norm == pytest.approx(0.5)
    np.testing.assert_array_equal(out["a"], g["a"])
    g = {"a": np.array([2.0, 0.0]), "b": np.array([[0.0, 2.0 * math.sqrt(3)]])}
    out, norm = trainer.clip_gradients(g, 1.0)
    assert norm == pytest.approx(4.0)
    np.testing.assert_allclose(out["a"], [0.5, 0.0])
    assert trainer.global_norm(out) == pytest.approx(1.0)


def test_lr_schedule():
    c = TrainConfig()
    assert trainer.lr_at(2500, c) == pytest.approx(0.5e-4)
    assert trainer.lr_at(0, c) == 0.0
    assert trainer.lr_at(5000, c) == trainer.lr_at(9000, c) == pytest.approx(1e-4)
    lrs = [trainer.lr_at(s, c) for s in range(0, 6000, 50)]
    assert all(b >= a for a, b in zip(lrs, lrs[1:]))
    assert trainer.lr_at(1, TrainConfig(warmup_steps=0)) == 1e-4


def test_adamw_first_step_matches_closed_form():
    # with bias correction the first Adam step moves each weight by lr * sign(g)
    c = TrainConfig(lr=0.1, warmup_steps=0, weight_decay=0.5, clip_norm=100.0)
    p = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    g = {"w": np.array([0.3, -0.01])}
    trainer.clip_and_step(p, g, OptimizerState(), c)
    want = np.array([1.0, -2.0]) * (1 - 0.1 * 0.5) - 0.1 * np.array([0.3, -0.01]) / (
        np.abs([0.3, -0.01]) + 1e-8)
    np.testing.assert_allclose(p["w"], want.astype(np.float32), rtol=1e-6)


def test_post_clip_norm_bound():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = {"a": rng.standard_normal(7) * rng.uniform(0, 50), "b": rng.standard_normal((2, 3))}
        out, _ = trainer.clip_gradients(g, 1.0)
        assert trainer.global_norm(out) <= 1.0 + 1e-6


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"learning_rate": 1.0})


@pytest.fixture
def synth(small_config):
    pipeline.run_synth(small_config)
    return small_config


def _train(cfg, system, **over):
    c = TrainConfig(**{**cfg.raw["train"], "seed": cfg.seed, **over})
    base = cfg.manifest(system, "train").parent
    return trainer.train(system, read_manifest(cfg.manifest(system, "train")), c,
                         val_records=read_manifest(cfg.manifest(system, "val")), base=base)


def test_loss_decreases_on_separable_data(synth):
    res = _train(synth, "B1", epochs=5)
    losses = [h["train_loss"] for h in res.history]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_zero_lr_keeps_params(synth):
    init = head.init_params(trainer.head_config_for(
        "B1", trainer.load_dataset(read_manifest(synth.manifest("B1", "train")), "B1",
                                   synth.manifest("B1", "train").parent),
        TrainConfig(**{**synth.raw["train"]})), synth.seed)
    res = _train(synth, "B1", lr=0.0, weight_decay=0.0, epochs=1)
    for k in init:
        assert res.params[k].tobytes() == init[k].tobytes()


def test_same_seed_same_checkpoint(synth, tmp_path):
    c = TrainConfig(**{**synth.raw["train"], "seed": 3, "epochs": 2})
    recs = read_manifest(synth.manifest("B2", "train"))
    base = synth.manifest("B2", "train").parent
    trainer.train("B2", recs, c, base=base, out_dir=tmp_path / "r1")
    trainer.train("B2", recs, c, base=base, out_dir=tmp_path / "r2")
    assert (tmp_path / "r1/best.ckpt").read_bytes() == (tmp_path / "r2/best.ckpt").read_bytes()
    assert (tmp_path / "r1/train_log.jsonl").read_text() == \
        (tmp_path / "r2/train_log.jsonl").read_text()


def test_system_a_sees_only_classes_0_and_1(synth):
    seen = set()
    c = TrainConfig(**{**synth.raw["train"], "epochs": 2})
    trainer.train("A", read_manifest(synth.manifest("A", "train")), c,
                  base=synth.manifest("A", "train").parent,
                  batch_hook=lambda step, classes: seen.update(classes))
    assert seen == {0, 1}


def test_logs_and_telemetry(synth, tmp_path):
    c = TrainConfig(**{**synth.raw["train"], "epochs": 2})
    trainer.train("B1", read_manifest(synth.manifest("B1", "train")), c,
                  base=synth.manifest("B1", "train").parent, out_dir=tmp_path,
                  layer_ids=[5, 6, 7])
    steps = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [s["step"] for s in steps] == list(range(1, len(steps) + 1))
    assert set(steps[0]) == {"step", "lr", "loss", "grad_norm"}
    rows = (tmp_path / "telemetry.csv").read_text().splitlines()
    assert rows[0] == "step,layer_5,layer_6,layer_7"
    vals = np.array([[float(x) for x in r.split(",")] for r in rows[1:]])
    assert np.all(np.diff(vals[:, 0]) > 0)
    np.testing.assert_allclose(vals[:, 1:].sum(axis=1), 1.0, atol=1e-5)


def test_layer_weight_row():
    np.testing.assert_allclose(trainer.layer_weight_row(np.full((2, 4, 3), 0.25)), 0.25)
    np.testing.assert_array_equal(trainer.layer_weight_row(np.ones((2, 1, 3))), [1.0])


def test_relu_margin():
    p = head.zero_params(TINY, dtype=np.float64)
    wave, spec, _ = tiny_batch()
    assert trainer.relu_margin(p, TINY, wave, spec) == 0.0
    p = head.init_params(TINY, 0, dtype=np.float64)
    assert trainer.relu_margin(p, TINY, wave, spec) > 0.0
