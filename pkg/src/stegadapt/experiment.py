"""Cross-domain task runner: datasets, training runs, ablations, exports.

A task is one ordered (source, target) domain pair. Every run builds or
loads the shared datasets (one vocabulary across all configured domains, one
generated dataset per domain), pretrains on the labeled source, optionally
adapts to the unlabeled target, and scores the target test split. Variants
reuse identical data and seeds so comparisons isolate the ablated component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .adapt import TrainResult, evaluate_model, finetune, pretrain
from .config import ExperimentConfig
from .corpus import DomainDataset, TextSample, Vocab, dataset_from_jsonl, dataset_to_jsonl, strip_labels
from .encoder import load_precomputed
from .errors import CorpusError
from .head import HeadConfig
from .metrics import Metrics, mean_std
from .model import Classifier, config_hash, save_checkpoint
from .stegogen import build_domain_dataset, write_manifest

ABLATIONS = ("none", "w-PL", "w-FF", "w-SLB")
CSV_COLUMNS = ("source", "target", "bpw", "coding", "variant", "seed", "acc", "f1", "tp", "fp", "tn", "fn", "n")


@dataclass(frozen=True)
class TaskSpec:
    source: str
    target: str
    ablation: str = "none"
    slb_layers: int = 2

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError("source and target domains must differ")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.slb_layers < 2:
            raise ValueError("the stacked-LSTM variant needs at least 2 layers")

    @property
    def name(self) -> str:
        return f"{self.source}__{self.target}"


@dataclass
class TaskData:
    vocab: Vocab | None
    datasets: dict[str, DomainDataset]
    store: dict[str, np.ndarray] | None = None


@dataclass
class SeedOutcome:
    seed: int
    pretrain_result: TrainResult
    adapt_result: TrainResult | None
    final_model: Classifier
    test_metrics: Metrics


@dataclass
class TaskResult:
    spec: TaskSpec
    rows: list[dict]
    mean_acc: float
    std_acc: float
    mean_f1: float
    std_f1: float


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def prepare_data(cfg: ExperimentConfig, cache_dir: str | Path | None = None) -> TaskData:
    """Build (or load from cache) every configured domain dataset.

    One vocabulary is built over the union of all domain corpora so token
    ids mean the same thing on both sides of every task; each domain then
    gets its own language model and generated dataset.
    """
    from .corpus import build_vocab, tokenize

    tags = cfg.data.domain_tags()
    cache_root = None
    if cache_dir is not None:
        cache_root = Path(cache_dir) / "data" / config_hash(cfg.data_fingerprint())[:16]

    if cache_root is not None and (cache_root / "COMPLETE").exists():
        return _load_cached(cfg, cache_root, tags)

    datasets: dict[str, DomainDataset] = {}
    vocab: Vocab | None = None
    preloaded: dict[str, DomainDataset] = {}
    for tag in tags:
        if tag in cfg.data.dataset_dirs:
            directory = Path(cfg.data.dataset_dirs[tag])
            preloaded[tag] = dataset_from_jsonl(directory / "samples.jsonl", directory / "splits.jsonl")
            vocab_file = directory / "vocab.json"
            if vocab_file.exists():
                loaded = Vocab.from_json(vocab_file.read_text(encoding="utf-8"))
                if vocab is not None and loaded.id_to_token != vocab.id_to_token:
                    raise CorpusError("dataset_dirs disagree on the vocabulary")
                vocab = loaded

    generated_tags = [t for t in tags if t not in preloaded]
    if generated_tags:
        if vocab is None:
            texts = []
            for tag in generated_tags:
                lines = Path(cfg.data.domains[tag]).read_text(encoding="utf-8").splitlines()
                texts.extend(toks for toks in (tokenize(line) for line in lines) if toks)
            vocab = build_vocab(texts, min_freq=cfg.data.min_freq)
        manifests = {}
        for index, tag in enumerate(generated_tags):
            seed = int(np.random.SeedSequence([cfg.data.seed, 0xD0, index]).generate_state(1)[0])
            result = build_domain_dataset(
                cfg.data.domains[tag],
                domain=tag,
                sizes=cfg.data.sizes,
                bpw=cfg.data.bpw,
                coding=cfg.data.coding,
                seed=seed,
                lm_order=cfg.data.lm_order,
                alpha=cfg.data.alpha,
                vocab=vocab,
                max_len=cfg.data.max_len,
                payload_bits=cfg.data.payload_bits,
            )
            datasets[tag] = result.dataset
            manifests[tag] = result.manifest
        if cache_root is not None:
            cache_root.mkdir(parents=True, exist_ok=True)
            (cache_root / "vocab.json").write_text(vocab.to_json() + "\n", encoding="utf-8")
            for tag in generated_tags:
                tag_dir = cache_root / tag
                tag_dir.mkdir(exist_ok=True)
                dataset_to_jsonl(datasets[tag], tag_dir / "samples.jsonl", tag_dir / "splits.jsonl")
                write_manifest(manifests[tag], tag_dir / "manifest.json")
            (cache_root / "COMPLETE").write_text("ok\n", encoding="utf-8")

    datasets.update(preloaded)
    store = None
    if cfg.features_path is not None:
        store, d_h = load_precomputed(cfg.features_path)
        if d_h is not None and d_h != cfg.encoder.d_h:
            raise CorpusError(f"feature store width {d_h} != configured d_h {cfg.encoder.d_h}")
    return TaskData(vocab=vocab, datasets=datasets, store=store)


def _load_cached(cfg: ExperimentConfig, cache_root: Path, tags: Sequence[str]) -> TaskData:
    vocab = Vocab.from_json((cache_root / "vocab.json").read_text(encoding="utf-8"))
    datasets = {}
    for tag in tags:
        if tag in cfg.data.dataset_dirs:
            directory = Path(cfg.data.dataset_dirs[tag])
        else:
            directory = cache_root / tag
        datasets[tag] = dataset_from_jsonl(directory / "samples.jsonl", directory / "splits.jsonl")
    store = None
    if cfg.features_path is not None:
        store, _ = load_precomputed(cfg.features_path)
    return TaskData(vocab=vocab, datasets=datasets, store=store)


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------


def head_config_for(cfg: ExperimentConfig, spec: TaskSpec) -> HeadConfig:
    if spec.ablation == "w-FF":
        return replace(cfg.head, gate_bypass=True)
    if spec.ablation == "w-SLB":
        return replace(cfg.head, layers=spec.slb_layers)
    return cfg.head


def build_model(cfg: ExperimentConfig, data: TaskData, spec: TaskSpec, seed: int) -> Classifier:
    encoder_cfg = replace(cfg.encoder, seed=seed)
    vocab_size = data.vocab.size if data.vocab is not None else None
    return Classifier.build(
        encoder_cfg, head_config_for(cfg, spec), seed=seed, vocab_size=vocab_size, store=data.store
    )


def run_seed(
    cfg: ExperimentConfig,
    data: TaskData,
    spec: TaskSpec,
    seed: int,
    artifacts_dir: str | Path | None = None,
) -> SeedOutcome:
    source = data.datasets[spec.source]
    target = data.datasets[spec.target]
    train_cfg = replace(cfg.train, seed=seed)
    model = build_model(cfg, data, spec, seed)
    pre = pretrain(model, source.train, source.val, train_cfg)
    if spec.ablation == "w-PL":
        adapt_result = None
        final = pre.model
    else:
        adapt_result = finetune(pre.model, strip_labels(target.train), target.val, train_cfg)
        final = adapt_result.model
    test_metrics = evaluate_model(final, target.test, cfg.train.eval_batch_size)
    outcome = SeedOutcome(
        seed=seed,
        pretrain_result=pre,
        adapt_result=adapt_result,
        final_model=final,
        test_metrics=test_metrics,
    )
    if artifacts_dir is not None:
        _write_run_artifacts(Path(artifacts_dir), cfg, spec, outcome)
    return outcome


def _write_run_artifacts(root: Path, cfg: ExperimentConfig, spec: TaskSpec, outcome: SeedOutcome) -> None:
    run_dir = root / "runs" / spec.name / spec.ablation / f"seed{outcome.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        run_dir / "pretrain.npz",
        outcome.pretrain_result.model,
        extra={"stage": "pretrain", "seed": outcome.seed, "variant": spec.ablation},
    )
    _write_jsonl(run_dir / "pretrain_log.jsonl", outcome.pretrain_result.log)
    if outcome.adapt_result is not None:
        save_checkpoint(
            run_dir / "adapted.npz",
            outcome.adapt_result.model,
            extra={"stage": "adapted", "seed": outcome.seed, "variant": spec.ablation},
        )
        _write_jsonl(run_dir / "rounds.jsonl", outcome.adapt_result.log)


def _write_jsonl(path: Path, records: Sequence[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _row(cfg: ExperimentConfig, spec: TaskSpec, seed: int, metrics: Metrics) -> dict:
    return {
        "source": spec.source,
        "target": spec.target,
        "bpw": cfg.data.bpw,
        "coding": cfg.data.coding,
        "variant": spec.ablation,
        "seed": seed,
        **metrics.as_dict(),
    }


def _aggregate(spec: TaskSpec, rows: list[dict]) -> TaskResult:
    mean_acc, std_acc = mean_std([r["acc"] for r in rows])
    mean_f1, std_f1 = mean_std([r["f1"] for r in rows])
    return TaskResult(spec=spec, rows=rows, mean_acc=mean_acc, std_acc=std_acc, mean_f1=mean_f1, std_f1=std_f1)


# ---------------------------------------------------------------------------
# Task, ablation, matrix
# ---------------------------------------------------------------------------


def run_task(
    cfg: ExperimentConfig,
    spec: TaskSpec,
    out_dir: str | Path | None = None,
    data: TaskData | None = None,
    seeds: Sequence[int] | None = None,
) -> TaskResult:
    """Train and score one task over the configured seeds; mean and std reported."""
    if data is None:
        data = prepare_data(cfg, out_dir)
    seeds = list(cfg.eval.seeds if seeds is None else seeds)
    rows = []
    for seed in seeds:
        outcome = run_seed(cfg, data, spec, seed, artifacts_dir=out_dir)
        rows.append(_row(cfg, spec, seed, outcome.test_metrics))
    return _aggregate(spec, rows)


def run_ablation(
    cfg: ExperimentConfig,
    source: str,
    target: str,
    out_dir: str | Path | None = None,
    data: TaskData | None = None,
    seeds: Sequence[int] | None = None,
) -> dict[str, TaskResult]:
    """All four variants on one task with shared data and seeds.

    The no-adaptation variant reuses the full run's pretraining checkpoint:
    with identical seeds the two pretraining stages are identical by
    construction, so training it twice would only burn time.
    """
    if data is None:
        data = prepare_data(cfg, out_dir)
    seeds = list(cfg.eval.seeds if seeds is None else seeds)
    specs = {name: TaskSpec(source=source, target=target, ablation=name) for name in ABLATIONS}
    rows: dict[str, list[dict]] = {name: [] for name in ABLATIONS}
    for seed in seeds:
        full = run_seed(cfg, data, specs["none"], seed, artifacts_dir=out_dir)
        rows["none"].append(_row(cfg, specs["none"], seed, full.test_metrics))

        wpl_model = full.pretrain_result.model
        wpl_metrics = evaluate_model(wpl_model, data.datasets[target].test, cfg.train.eval_batch_size)
        rows["w-PL"].append(_row(cfg, specs["w-PL"], seed, wpl_metrics))
        if out_dir is not None:
            _write_run_artifacts(
                Path(out_dir),
                cfg,
                specs["w-PL"],
                SeedOutcome(seed, full.pretrain_result, None, wpl_model, wpl_metrics),
            )

        for name in ("w-FF", "w-SLB"):
            outcome = run_seed(cfg, data, specs[name], seed, artifacts_dir=out_dir)
            rows[name].append(_row(cfg, specs[name], seed, outcome.test_metrics))
    return {name: _aggregate(specs[name], rows[name]) for name in ABLATIONS}


def task_pairs(tags: Sequence[str]) -> list[tuple[str, str]]:
    ordered = sorted(tags)
    return [(s, t) for s in ordered for t in ordered if s != t]


def run_matrix(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    seeds: Sequence[int] | None = None,
) -> dict[tuple[str, str], TaskResult]:
    """The full cross-domain matrix: every ordered domain pair, full method."""
    data = prepare_data(cfg, out_dir)
    results = {}
    for source, target in task_pairs(cfg.data.domain_tags()):
        spec = TaskSpec(source=source, target=target)
        results[(source, target)] = run_task(cfg, spec, out_dir=out_dir, data=data, seeds=seeds)
    return results


def ablation_component_hashes(cfg: ExperimentConfig, source: str, target: str) -> dict[str, dict[str, str]]:
    """Per-variant component config hashes; variants differ only in their own knob."""
    hashes = {}
    for name in ABLATIONS:
        spec = TaskSpec(source=source, target=target, ablation=name)
        hashes[name] = {
            "head": config_hash(head_config_for(cfg, spec).to_dict()),
            "encoder": config_hash(
                {"kind": cfg.encoder.kind, "d_h": cfg.encoder.d_h, "freeze_policy": cfg.encoder.freeze_policy}
            ),
            "adapts": str(name != "w-PL"),
        }
    return hashes


# ---------------------------------------------------------------------------
# Result files
# ---------------------------------------------------------------------------


def write_rows_csv(rows: Sequence[Mapping], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        cells = []
        for col in CSV_COLUMNS:
            value = row[col]
            cells.append(f"{value:.6f}" if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_markdown_summary(
    results: Mapping[str, Mapping[tuple[str, str], TaskResult]],
    path: str | Path,
    title: str,
) -> None:
    """Variant rows by task columns (ACC and F1), with a trailing average.

    ``results`` maps variant name to {(source, target): TaskResult}.
    """
    tasks = sorted({pair for per_task in results.values() for pair in per_task})
    header = ["Model"]
    for source, target in tasks:
        header += [f"{source}=>{target} ACC", f"{source}=>{target} F1"]
    header += ["Avg ACC", "Avg F1"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for variant, per_task in results.items():
        cells = [variant]
        accs, f1s = [], []
        for pair in tasks:
            result = per_task.get(pair)
            if result is None:
                cells += ["-", "-"]
                continue
            cells += [f"{result.mean_acc:.4f}±{result.std_acc:.4f}", f"{result.mean_f1:.4f}±{result.std_f1:.4f}"]
            accs.append(result.mean_acc)
            f1s.append(result.mean_f1)
        cells += [f"{np.mean(accs):.4f}" if accs else "-", f"{np.mean(f1s):.4f}" if f1s else "-"]
        lines.append("| " + " | ".join(cells) + " |")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"## {title}\n\n" + "\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Feature projection export
# ---------------------------------------------------------------------------


def export_projection(model: Classifier, samples: Sequence[TextSample], path: str | Path) -> np.ndarray:
    """Project pooled gated features onto their top-2 principal components.

    Writes ``id,x,y,label`` rows (label empty for unlabeled samples) and
    returns the coordinates. Components come from a deterministic
    eigendecomposition of the feature covariance with a fixed sign rule.
    """
    if len(samples) < 3:
        raise ValueError("projection needs at least 3 samples")
    _, pooled = model.predict(samples, return_pooled=True)
    centered = pooled - pooled.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (centered.shape[0] - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:2]
    components = eigenvectors[:, order].T
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    coords = centered @ components.T
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id,x,y,label"]
    for sample, (x, y) in zip(samples, coords):
        label = "" if sample.label is None else str(sample.label)
        lines.append(f"{sample.id},{x:.8f},{y:.8f},{label}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return coords
