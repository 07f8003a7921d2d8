import json
import math

import pytest

import gliclass as gc

CONFIG = json.dumps(
    {
        "variant": "uni",
        "encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32, "max_seq_len": 64},
        "max_len": 32,
    }
)


@pytest.fixture(scope="module")
def corpus():
    return gc.generate(
        total_texts=24, n_themes=2, max_positives=1, max_negatives=1,
        bucket_edges=[0, 4, 8], seed=3,
    )


@pytest.fixture(scope="module")
def model(corpus):
    docs = [ex["text"] for ex in corpus]
    for ex in corpus:
        docs.extend(ex["all_labels"])
    return gc.Model.init(CONFIG, docs, seed=5)


def test_generate_shape(corpus):
    assert len(corpus) == 48  # every text appears twice
    for ex in corpus:
        assert set(ex["true_labels"]) <= set(ex["all_labels"])
        assert len(ex["true_labels"]) >= 1


def test_predict_is_probabilities(model, corpus):
    ex = corpus[0]
    probs = model.predict(ex["text"], ex["all_labels"])
    assert len(probs) == len(ex["all_labels"])
    assert all(0.0 <= p <= 1.0 for p in probs)


def test_supervised_training_reduces_loss(model, corpus):
    report = gc.train_supervised(
        model, corpus, steps=30, batch_size=4, encoder_lr=1e-3, head_lr=3e-3, seed=0
    )
    losses = report["losses"]
    assert len(losses) == 30
    assert sum(losses[-5:]) < sum(losses[:5])
    assert 0.0 <= report["test_macro_f1"] <= 1.0


def test_checkpoint_round_trip(model, corpus, tmp_path):
    path = str(tmp_path / "model.glcf")
    model.save(path)
    loaded = gc.Model.load(path)
    ex = corpus[1]
    assert loaded.predict(ex["text"], ex["all_labels"]) == model.predict(
        ex["text"], ex["all_labels"]
    )


def test_dataset_round_trip(corpus, tmp_path):
    path = str(tmp_path / "data.jsonl")
    gc.save_dataset(path, corpus)
    loaded = gc.load_dataset(path)
    assert loaded == corpus


def test_evaluate_reports_metrics(model, corpus):
    report = gc.evaluate(model, corpus[:8])
    assert report["n_examples"] == 8
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert report["per_label"]


def test_ppo_runs(model, corpus):
    report = gc.train_ppo(
        model, corpus, steps=4, batch_size=4, encoder_lr=1e-4, head_lr=3e-4, seed=0
    )
    assert len(report["rewards"]) == 4
    assert all(math.isfinite(r) for r in report["rewards"])


def test_lora_cycle(model):
    n = gc.apply_lora(model, r=2, alpha=4.0, target_patterns=["attn."], seed=1)
    assert n > 0
    assert gc.merge_lora(model) == n


def test_invalid_example_rejected(model):
    with pytest.raises(gc.DataError):
        gc.save_dataset("/tmp/never.jsonl", [{"text": "x", "all_labels": ["a"], "true_labels": ["b"]}])


def test_bad_config_rejected():
    with pytest.raises(gc.ConfigError):
        gc.Model.init(json.dumps({"encoder": {"d_model": -1}}), ["doc"], seed=0)
