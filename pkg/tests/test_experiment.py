from __future__ import annotations

import numpy as np
import pytest

from stegadapt.adapt import evaluate_model
from stegadapt.config import config_from_dict
from stegadapt.corpus import TextSample
from stegadapt.encoder import EncoderConfig
from stegadapt.head import HeadConfig
from stegadapt.model import Classifier, models_equal
from stegadapt.experiment import (
    TaskSpec,
    ablation_component_hashes,
    export_projection,
    prepare_data,
    run_ablation,
    run_matrix,
    run_seed,
    run_task,
    task_pairs,
    write_markdown_summary,
    write_rows_csv,
)


@pytest.fixture(scope="module")
def tiny_cfg(tiny_config_dict):
    return config_from_dict(tiny_config_dict)


@pytest.fixture(scope="module")
def tiny_data(tiny_cfg):
    return prepare_data(tiny_cfg)


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(source="S", target="S")
    with pytest.raises(ValueError):
        TaskSpec(source="S", target="F", ablation="nope")


def test_task_pairs_orders_all_directed_pairs():
    assert task_pairs(["N", "M", "T"]) == [
        ("M", "N"), ("M", "T"), ("N", "M"), ("N", "T"), ("T", "M"), ("T", "N"),
    ]


def test_prepare_data_builds_shared_vocab_and_all_domains(tiny_cfg, tiny_data):
    assert set(tiny_data.datasets) == {"S", "F"}
    assert tiny_data.vocab is not None
    for ds in tiny_data.datasets.values():
        assert ds.n_train == 24
        ids = {t for s in ds.train for t in s.tokens}
        assert max(ids) < tiny_data.vocab.size


def test_prepare_data_cache_roundtrip(tiny_cfg, tmp_path):
    first = prepare_data(tiny_cfg, tmp_path)
    again = prepare_data(tiny_cfg, tmp_path)
    assert first.datasets == again.datasets
    assert first.vocab.id_to_token == again.vocab.id_to_token


def test_run_seed_wpl_skips_finetune(tiny_cfg, tiny_data):
    spec = TaskSpec(source="S", target="F", ablation="w-PL")
    outcome = run_seed(tiny_cfg, tiny_data, spec, seed=0)
    assert outcome.adapt_result is None
    assert models_equal(outcome.final_model, outcome.pretrain_result.model)


def test_run_seed_full_method_adapts(tiny_cfg, tiny_data):
    spec = TaskSpec(source="S", target="F")
    outcome = run_seed(tiny_cfg, tiny_data, spec, seed=0)
    assert outcome.adapt_result is not None
    assert len(outcome.adapt_result.log) == tiny_cfg.train.finetune_rounds
    assert 0.0 <= outcome.test_metrics.acc <= 1.0


def test_run_task_aggregates_over_seeds(tiny_cfg, tiny_data):
    result = run_task(tiny_cfg, TaskSpec(source="S", target="F"), data=tiny_data, seeds=[0, 1])
    assert len(result.rows) == 2
    accs = [r["acc"] for r in result.rows]
    assert result.mean_acc == pytest.approx(np.mean(accs))
    assert result.std_acc == pytest.approx(np.std(accs))
    assert {r["seed"] for r in result.rows} == {0, 1}


def test_run_ablation_shapes_and_shared_pretrain(tiny_cfg, tiny_data):
    results = run_ablation(tiny_cfg, "S", "F", data=tiny_data, seeds=[0])
    assert list(results) == ["none", "w-PL", "w-FF", "w-SLB"]
    for result in results.values():
        assert len(result.rows) == 1
        assert set(result.rows[0]) >= {"acc", "f1", "variant", "seed"}
    # 4 variants x (ACC, F1) table shape
    table = [(r.rows[0]["acc"], r.rows[0]["f1"]) for r in results.values()]
    assert len(table) == 4 and all(len(cell) == 2 for cell in table)


def test_ablation_isolation_hashes(tiny_cfg):
    hashes = ablation_component_hashes(tiny_cfg, "S", "F")
    assert hashes["none"]["encoder"] == hashes["w-FF"]["encoder"] == hashes["w-SLB"]["encoder"]
    assert hashes["none"]["head"] == hashes["w-PL"]["head"]
    assert hashes["w-FF"]["head"] != hashes["none"]["head"]
    assert hashes["w-SLB"]["head"] != hashes["none"]["head"]
    assert hashes["w-PL"]["adapts"] == "False"
    changed = [v for v in ("w-FF", "w-SLB") if hashes[v]["head"] != hashes["none"]["head"]]
    assert changed == ["w-FF", "w-SLB"]


def test_run_matrix_emits_all_pairs_with_rows(tiny_cfg):
    results = run_matrix(tiny_cfg, seeds=[0])
    assert set(results) == {("F", "S"), ("S", "F")}
    rows = [row for r in results.values() for row in r.rows]
    assert len(rows) == 2


def test_write_rows_csv_format(tmp_path, tiny_cfg, tiny_data):
    result = run_task(tiny_cfg, TaskSpec(source="S", target="F"), data=tiny_data, seeds=[0])
    path = tmp_path / "rows.csv"
    write_rows_csv(result.rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "source,target,bpw,coding,variant,seed,acc,f1,tp,fp,tn,fn,n"
    assert lines[1].startswith("S,F,1,flc,none,0,")
    assert len(lines) == 2


def test_write_markdown_summary(tmp_path, tiny_cfg, tiny_data):
    result = run_task(tiny_cfg, TaskSpec(source="S", target="F"), data=tiny_data, seeds=[0])
    path = tmp_path / "summary.md"
    write_markdown_summary({"full": {("S", "F"): result}}, path, "demo")
    text = path.read_text()
    assert "| Model | S=>F ACC | S=>F F1 | Avg ACC | Avg F1 |" in text
    assert "| full |" in text


def test_markdown_average_column_is_mean_of_task_means(tmp_path, tiny_cfg, tiny_data):
    a = run_task(tiny_cfg, TaskSpec(source="S", target="F"), data=tiny_data, seeds=[0])
    b = run_task(tiny_cfg, TaskSpec(source="F", target="S"), data=tiny_data, seeds=[0])
    path = tmp_path / "summary.md"
    write_markdown_summary({"full": {("S", "F"): a, ("F", "S"): b}}, path, "demo")
    row = [l for l in path.read_text().splitlines() if l.startswith("| full")][0]
    cells = [c.strip() for c in row.strip("|").split("|")]
    avg_acc = float(cells[-2])
    assert avg_acc == pytest.approx(np.mean([a.mean_acc, b.mean_acc]), abs=5e-5)


# ---------------------------------------------------------------------------
# projection export
# ---------------------------------------------------------------------------


def _projection_model(d_h=6, hidden=3, seed=0):
    return Classifier.build(
        EncoderConfig(d_h=d_h, seed=seed), HeadConfig(d_h=d_h, hidden=hidden), seed=seed, vocab_size=16
    )


def _id_samples(n, label=None):
    return [TextSample(id=f"p{i}", tokens=(4 + (i % 5),), label=label, domain="M") for i in range(n)]


def test_projection_rejects_too_few_samples(tmp_path):
    model = _projection_model()
    with pytest.raises(ValueError):
        export_projection(model, _id_samples(2), tmp_path / "p.csv")


def test_projection_identical_features_land_at_origin(tmp_path):
    model = _projection_model()
    samples = [TextSample(id=f"p{i}", tokens=(4,), label=None, domain="M") for i in range(5)]
    coords = export_projection(model, samples, tmp_path / "p.csv")
    np.testing.assert_allclose(coords, 0.0, atol=1e-12)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "id,x,y,label"
    assert len(lines) == 6


def test_projection_separates_two_clusters(tmp_path, monkeypatch):
    model = _projection_model()
    samples = _id_samples(8)

    def fake_predict(samples, batch_size=256, return_pooled=False):
        n = len(samples)
        pooled = np.zeros((n, 6))
        pooled[: n // 2, 0] = 1.0
        pooled[n // 2 :, 0] = -1.0
        return np.full((n, 2), 0.5), pooled

    monkeypatch.setattr(model, "predict", fake_predict)
    coords = export_projection(model, samples, tmp_path / "p.csv")
    first, second = coords[:4, 0], coords[4:, 0]
    assert np.all(np.sign(first) == np.sign(first[0]))
    assert np.all(np.sign(second) == -np.sign(first[0]))


def test_projection_beats_random_2d_projections(tmp_path, monkeypatch):
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(40, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.1])
    model = _projection_model(d_h=5)
    samples = _id_samples(40)
    monkeypatch.setattr(
        model, "predict", lambda s, batch_size=256, return_pooled=False: (np.full((40, 2), 0.5), feats)
    )
    coords = export_projection(model, samples, tmp_path / "p.csv")
    pca_var = coords.var(axis=0, ddof=1).sum()
    centered = feats - feats.mean(axis=0)
    for trial in range(100):
        basis, _ = np.linalg.qr(np.random.default_rng(trial).normal(size=(5, 2)))
        other = (centered @ basis).var(axis=0, ddof=1).sum()
        assert pca_var >= other - 1e-9


def test_evaluate_model_smoke(tiny_cfg, tiny_data):
    spec = TaskSpec(source="S", target="F", ablation="w-PL")
    outcome = run_seed(tiny_cfg, tiny_data, spec, seed=0)
    metrics = evaluate_model(outcome.final_model, tiny_data.datasets["F"].val)
    assert metrics.n == 8


def test_precomputed_feature_pipeline_end_to_end(tiny_cfg, tiny_data, tmp_path):
    """Pregenerated datasets plus an external feature store drive a full task."""
    import numpy as np

    from stegadapt.corpus import dataset_to_jsonl
    from stegadapt.encoder import save_precomputed

    d_h = 8
    rng = np.random.default_rng(0)
    store = {}
    dataset_dirs = {}
    for tag, ds in tiny_data.datasets.items():
        directory = tmp_path / tag
        directory.mkdir()
        dataset_to_jsonl(ds, directory / "samples.jsonl", directory / "splits.jsonl")
        dataset_dirs[tag] = str(directory)
        for sample in ds.train + ds.val + ds.test:
            offset = 0.5 if sample.label == 1 else -0.5
            store[sample.id] = rng.normal(offset, 0.3, size=(len(sample.tokens), d_h))
    features_path = tmp_path / "features.jsonl"
    save_precomputed(store, d_h=d_h, path=features_path)

    cfg = config_from_dict(
        {
            "data": {"dataset_dirs": dataset_dirs},
            "encoder": {"kind": "precomputed", "d_h": d_h, "freeze_policy": "always",
                        "features_path": str(features_path)},
            "head": {"hidden": 4},
            "train": {"lr": 0.01, "batch_size": 8, "pretrain_epochs": 3, "finetune_rounds": 1},
            "schedule": {"p": 0.5},
            "eval": {"seeds": [0]},
        }
    )
    data = prepare_data(cfg)
    assert data.store is not None and len(data.store) == len(store)
    result = run_task(cfg, TaskSpec(source="S", target="F"), data=data, seeds=[0])
    # Linearly separated synthetic features make this trivially learnable.
    assert result.mean_acc > 0.9
