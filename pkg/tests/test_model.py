from __future__ import annotations

import numpy as np
import pytest

from stegadapt.corpus import TextSample
from stegadapt.encoder import EncoderConfig
from stegadapt.head import AdamState, HeadConfig
from stegadapt.model import (
    Classifier,
    load_checkpoint,
    models_equal,
    predicted_labels,
    save_checkpoint,
)


def _samples(n, seed=0, vocab_size=20):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        tokens = tuple(int(t) for t in rng.integers(4, vocab_size, int(rng.integers(2, 9))))
        out.append(TextSample(id=f"s{i}", tokens=tokens, label=None, domain="M"))
    return out


def _model(seed=0, **head_kwargs):
    return Classifier.build(
        EncoderConfig(d_h=12, seed=seed),
        HeadConfig(d_h=12, hidden=5, **head_kwargs),
        seed=seed,
        vocab_size=20,
    )


def test_build_checks_dimension_agreement():
    with pytest.raises(ValueError):
        Classifier.build(EncoderConfig(d_h=8), HeadConfig(d_h=16, hidden=4), seed=0, vocab_size=20)


def test_predict_is_order_stable_and_batch_invariant():
    model = _model()
    samples = _samples(23)
    full = model.predict(samples, batch_size=256)
    chunked = model.predict(samples, batch_size=5)
    np.testing.assert_allclose(full, chunked, atol=1e-12)
    assert full.shape == (23, 2)
    np.testing.assert_allclose(full.sum(axis=1), 1.0, atol=1e-9)


def test_predicted_labels_tie_breaks_to_cover():
    probs = np.array([[0.5, 0.5], [0.4, 0.6], [0.7, 0.3]])
    np.testing.assert_array_equal(predicted_labels(probs), [0, 1, 0])


def test_clone_is_independent():
    model = _model()
    twin = model.clone()
    assert models_equal(model, twin)
    twin.head.tensors["cls.b"][:] += 1.0
    assert not models_equal(model, twin)


def test_trainable_tensors_respect_stage():
    model = _model()
    pretrain = model.trainable_tensors("pretrain")
    finetune = model.trainable_tensors("finetune")
    assert "encoder.embedding" in pretrain
    assert "encoder.embedding" not in finetune
    assert any(k.startswith("head.") for k in finetune)


def test_checkpoint_roundtrip_restores_bit_identical_outputs(tmp_path):
    model = _model(seed=4)
    samples = _samples(9, seed=1)
    optimizer = AdamState(step=7)
    optimizer.m["head.cls.b"] = np.array([0.1, -0.2])
    optimizer.v["head.cls.b"] = np.array([0.01, 0.02])
    before = model.predict(samples)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, model, optimizer, extra={"stage": "pretrain", "val_acc": 0.75})
    restored, opt, meta = load_checkpoint(path)
    after = restored.predict(samples)
    assert before.tobytes() == after.tobytes()
    assert models_equal(model, restored)
    assert opt.step == 7
    np.testing.assert_array_equal(opt.m["head.cls.b"], optimizer.m["head.cls.b"])
    assert meta["extra"]["stage"] == "pretrain"
    assert meta["hashes"] == model.component_hashes()


def test_checkpoint_without_optimizer(tmp_path):
    model = _model(seed=2)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, model)
    _, opt, meta = load_checkpoint(path)
    assert opt is None and meta["adam_step"] is None


def test_component_hashes_isolate_ablated_field():
    base = _model(seed=0)
    gated_off = _model(seed=0, gate_bypass=True)
    assert base.component_hashes()["encoder"] == gated_off.component_hashes()["encoder"]
    assert base.component_hashes()["head"] != gated_off.component_hashes()["head"]
