"""Command-line entry point.

Every command reads the same JSON config; ``--seed`` and ``--out-dir``
override the config's seed list and artifact root. Metrics land in CSV files
(one row per task, variant, and seed) plus a Markdown summary table, and all
outputs are byte-stable for identical configs and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .adapt import evaluate_model, finetune, pretrain
from .config import ExperimentConfig, load_config
from .corpus import strip_labels
from .errors import StegadaptError
from .experiment import (
    TaskSpec,
    build_model,
    export_projection,
    prepare_data,
    run_ablation,
    run_matrix,
    write_markdown_summary,
    write_rows_csv,
)
from .model import load_checkpoint, save_checkpoint


def _base_parser(sub, name, help_text, task=True):
    cmd = sub.add_parser(name, help=help_text)
    cmd.add_argument("-c", "--config", required=True, help="path to the JSON experiment config")
    cmd.add_argument("--out-dir", default="out", help="artifact root (default: ./out)")
    cmd.add_argument("--seed", type=int, default=None, help="override the config's seed list with one seed")
    if task:
        cmd.add_argument("--source", required=True, help="source domain tag")
        cmd.add_argument("--target", required=True, help="target domain tag")
    return cmd


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stegadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _base_parser(sub, "gen-data", "generate or refresh every configured domain dataset", task=False)

    _base_parser(sub, "pretrain", "stage 1: train on the labeled source domain")

    adapt = _base_parser(sub, "adapt", "stage 2: pseudo-label self-training on the target domain")
    adapt.add_argument("--checkpoint", default=None, help="pretraining checkpoint to start from")

    ev = _base_parser(sub, "evaluate", "score a checkpoint on a target split")
    ev.add_argument("--checkpoint", default=None, help="checkpoint file (default: adapted, else pretrain)")
    ev.add_argument("--split", choices=("val", "test"), default="test")
    ev.add_argument("--variant", default="none", help="variant label used for artifact paths")

    _base_parser(sub, "ablate", "run the full method and the three ablations")

    ex = _base_parser(sub, "export-features", "write a 2-D feature projection CSV")
    ex.add_argument("--checkpoint", default=None)
    ex.add_argument("--domain", default=None, help="domain to project (default: the target)")
    ex.add_argument("--split", choices=("train", "val", "test"), default="test")
    ex.add_argument("--out", default=None, help="output CSV path")

    _base_parser(sub, "matrix", "run every ordered cross-domain task", task=False)
    return parser


def _seeds(cfg: ExperimentConfig, args) -> list[int]:
    return [args.seed] if args.seed is not None else list(cfg.eval.seeds)


def _run_dir(out_dir: str, spec: TaskSpec, seed: int, variant: str | None = None) -> Path:
    return Path(out_dir) / "runs" / spec.name / (variant or spec.ablation) / f"seed{seed}"


def _default_checkpoint(run_dir: Path) -> Path:
    adapted = run_dir / "adapted.npz"
    return adapted if adapted.exists() else run_dir / "pretrain.npz"


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg, args.out_dir)
    for tag in sorted(data.datasets):
        ds = data.datasets[tag]
        print(f"domain {tag}: train {ds.n_train}, val {len(ds.val)}, test {len(ds.test)}")
    if data.vocab is not None:
        print(f"vocab size {data.vocab.size}")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg, args.out_dir)
    spec = TaskSpec(source=args.source, target=args.target)
    for seed in _seeds(cfg, args):
        model = build_model(cfg, data, spec, seed)
        result = pretrain(model, data.datasets[spec.source].train, data.datasets[spec.source].val, replace(cfg.train, seed=seed))
        run_dir = _run_dir(args.out_dir, spec, seed)
        save_checkpoint(run_dir / "pretrain.npz", result.model, extra={"stage": "pretrain", "seed": seed})
        _write_jsonl(run_dir / "pretrain_log.jsonl", result.log)
        print(f"seed {seed}: best source-val {cfg.train.selection_metric.upper()} {result.best_val_score:.4f} at epoch {result.best_index}")
    return 0


def cmd_adapt(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg, args.out_dir)
    spec = TaskSpec(source=args.source, target=args.target)
    target = data.datasets[spec.target]
    for seed in _seeds(cfg, args):
        run_dir = _run_dir(args.out_dir, spec, seed)
        ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "pretrain.npz"
        model, _, _ = load_checkpoint(ckpt, store=data.store)
        result = finetune(model, strip_labels(target.train), target.val, replace(cfg.train, seed=seed))
        save_checkpoint(run_dir / "adapted.npz", result.model, extra={"stage": "adapted", "seed": seed})
        _write_jsonl(run_dir / "rounds.jsonl", result.log)
        best = "n/a" if result.best_val_score is None else f"{result.best_val_score:.4f}"
        print(f"seed {seed}: best target-val {cfg.train.selection_metric.upper()} {best} at round {result.best_index}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg, args.out_dir)
    spec = TaskSpec(source=args.source, target=args.target)
    target = data.datasets[spec.target]
    samples = target.val if args.split == "val" else target.test
    rows = []
    for seed in _seeds(cfg, args):
        run_dir = _run_dir(args.out_dir, spec, seed, variant=args.variant)
        ckpt = Path(args.checkpoint) if args.checkpoint else _default_checkpoint(run_dir)
        model, _, _ = load_checkpoint(ckpt, store=data.store)
        metrics = evaluate_model(model, samples, cfg.train.eval_batch_size)
        rows.append(
            {
                "source": spec.source,
                "target": spec.target,
                "bpw": cfg.data.bpw,
                "coding": cfg.data.coding,
                "variant": args.variant,
                "seed": seed,
                **metrics.as_dict(),
            }
        )
        print(f"seed {seed}: {args.split} ACC {metrics.acc:.4f} F1 {metrics.f1:.4f}")
    out = Path(args.out_dir) / "results" / f"evaluate_{spec.name}_{args.variant}_{args.split}.csv"
    write_rows_csv(rows, out)
    print(f"wrote {out}")
    return 0


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    seeds = _seeds(cfg, args)
    results = run_ablation(cfg, args.source, args.target, out_dir=args.out_dir, seeds=seeds)
    rows = [row for result in results.values() for row in result.rows]
    csv_path = Path(args.out_dir) / "results" / f"ablation_{args.source}__{args.target}.csv"
    write_rows_csv(rows, csv_path)
    summary = {variant: {(args.source, args.target): result} for variant, result in results.items()}
    md_path = Path(args.out_dir) / "results" / f"ablation_{args.source}__{args.target}.md"
    write_markdown_summary(summary, md_path, f"Ablations {args.source}=>{args.target}")
    for variant, result in results.items():
        print(f"{variant}: ACC {result.mean_acc:.4f}±{result.std_acc:.4f} F1 {result.mean_f1:.4f}±{result.std_f1:.4f}")
    print(f"wrote {csv_path} and {md_path}")
    return 0


def cmd_export_features(cfg: ExperimentConfig, args) -> int:
    data = prepare_data(cfg, args.out_dir)
    spec = TaskSpec(source=args.source, target=args.target)
    seed = args.seed if args.seed is not None else cfg.eval.seeds[0]
    run_dir = _run_dir(args.out_dir, spec, seed)
    ckpt = Path(args.checkpoint) if args.checkpoint else _default_checkpoint(run_dir)
    model, _, _ = load_checkpoint(ckpt, store=data.store)
    domain = args.domain or spec.target
    dataset = data.datasets[domain]
    samples = {"train": dataset.train, "val": dataset.val, "test": dataset.test}[args.split]
    out = Path(args.out) if args.out else Path(args.out_dir) / "results" / f"projection_{domain}_{args.split}.csv"
    export_projection(model, samples, out)
    print(f"wrote {out} ({len(samples)} points)")
    return 0


def cmd_matrix(cfg: ExperimentConfig, args) -> int:
    seeds = _seeds(cfg, args)
    results = run_matrix(cfg, out_dir=args.out_dir, seeds=seeds)
    rows = [row for result in results.values() for row in result.rows]
    csv_path = Path(args.out_dir) / "results" / "matrix.csv"
    write_rows_csv(rows, csv_path)
    md_path = Path(args.out_dir) / "results" / "matrix.md"
    write_markdown_summary({"full": results}, md_path, "Cross-domain matrix")
    for (source, target), result in results.items():
        print(f"{source}=>{target}: ACC {result.mean_acc:.4f}±{result.std_acc:.4f} F1 {result.mean_f1:.4f}±{result.std_f1:.4f}")
    print(f"wrote {csv_path} and {md_path}")
    return 0


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "export-features": cmd_export_features,
    "matrix": cmd_matrix,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _HANDLERS[args.command](cfg, args)
    except (StegadaptError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
