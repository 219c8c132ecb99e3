import json
from pathlib import Path

import numpy as np
import pytest

import asa_lab

ROOT = Path(__file__).resolve().parents[2]


def small_config(**strategy):
    return {
        "task": "spurious",
        "seed": 3,
        "strategy": strategy or {"kind": "asa"},
        "model": {"vocab_size": 60, "max_seq_len": 12, "d_model": 16, "n_heads": 2, "n_layers": 2, "d_ff": 32},
        "optimizer": {"steps": 20, "batch_size": 8},
        "spurious": {"vocab_size": 60, "seq_len": 12, "train_size": 64, "test_id_size": 32, "test_ood_size": 32},
    }


def test_normalize_fills_defaults():
    cfg = asa_lab.normalize_config(small_config())
    assert cfg["asa"]["tau"] == pytest.approx(0.3)
    assert cfg["strategy"]["kind"] == "asa"


def test_unknown_key_is_rejected():
    bad = small_config()
    bad["optimizer"]["lrr"] = 1.0
    with pytest.raises(ValueError, match="optimizer.lrr"):
        asa_lab.normalize_config(bad)


def test_shipped_configs_parse():
    for path in sorted((ROOT / "configs").glob("*.json")):
        asa_lab.normalize_config(path.read_text())


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 7))
    y = asa_lab.softmax(x)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    ref = np.exp(x - x.max(axis=-1, keepdims=True))
    np.testing.assert_allclose(y, ref / ref.sum(axis=-1, keepdims=True), rtol=1e-12)


def test_binary_concrete_hard_is_binary_and_seeded():
    logits = np.linspace(-3, 3, 50)
    a = asa_lab.binary_concrete(logits, 1.0, 5, True)
    b = asa_lab.binary_concrete(logits, 1.0, 5, True)
    assert set(np.unique(a)) <= {0.0, 1.0}
    np.testing.assert_array_equal(a, b)


def test_grad_reverse_contract():
    x = np.arange(6.0).reshape(2, 3)
    up = np.full((2, 3), 0.5)
    y, g = asa_lab.grad_reverse_vjp(x, up, 2.0)
    np.testing.assert_array_equal(y, x)
    np.testing.assert_array_equal(g, -2.0 * up)


def test_train_eval_roundtrip(tmp_path):
    summary = asa_lab.train(small_config(), tmp_path / "run")
    assert summary["steps"] == 20
    assert 0.0 <= summary["accuracy"]["test_ood"] <= 1.0
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 20
    assert all("total" in json.loads(line) for line in lines)
    ev = asa_lab.evaluate(tmp_path / "run" / "checkpoint.bin", tmp_path / "eval")
    assert ev["accuracy"]["test_id"] == pytest.approx(summary["accuracy"]["test_id"])
    report = asa_lab.report_masks(tmp_path / "run" / "metrics.jsonl", 1.0)
    assert report["n_aggregated"] == 20 and len(report["per_layer"]) == 2
    att = asa_lab.export_attention(tmp_path / "run" / "checkpoint.bin", [1, 5, 6, 7], 1, 1, 0)
    assert att["adversary_present"]
    np.testing.assert_allclose(np.asarray(att["clean"]).sum(axis=1), 1.0, atol=1e-9)


def test_training_is_deterministic(tmp_path):
    cfg = small_config(kind="bernoulli", p=0.1)
    asa_lab.train(cfg, tmp_path / "a", write_checkpoint=False)
    asa_lab.train(cfg, tmp_path / "b", write_checkpoint=False)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_dataset_shapes():
    d = asa_lab.spurious_dataset(small_config())
    assert len(d["train"]) == 64 and len(d["test_ood"]) == 32
    tokens, label = d["train"][0]
    assert label in (0, 1) and len(tokens) <= 12
