"""Two-stage training: source pretraining, then pseudo-label self-training.

Stage one fits the detector on labeled source data with per-epoch validation
checkpointing. Stage two adapts it to an unlabeled target pool: each round
re-estimates pseudo-labels with the current model, keeps the ``m_t`` most
confident ones under a progressively growing schedule, trains one epoch on
them, and tracks the best target-validation checkpoint. Labels on the target
validation split are used for model selection and reporting only, never for
gradient updates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import TextSample
from .encoder import STAGE_FINETUNE, STAGE_PRETRAIN
from .head import AdamState, adam_step, backward_batch, batch_loss_ce
from .metrics import Metrics, compute_metrics
from .model import Classifier, predicted_labels


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 16
    pretrain_epochs: int = 50
    finetune_rounds: int = 10
    expansion: float = 0.1
    seed: int = 0
    eval_batch_size: int = 256
    reestimate_pseudo_labels: bool = True
    keep_initial_candidate: bool = True
    selection_metric: str = "acc"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pretrain_epochs < 0 or self.finetune_rounds < 0:
            raise ValueError("epoch and round counts must be >= 0")
        if self.selection_metric not in ("acc", "f1"):
            raise ValueError("selection_metric must be 'acc' or 'f1'")

    def metric_value(self, metrics: "Metrics") -> float:
        return metrics.acc if self.selection_metric == "acc" else metrics.f1


@dataclass(frozen=True)
class PseudoLabel:
    sample_id: str
    label: int
    confidence: float


@dataclass(frozen=True)
class PseudoPool:
    """One pseudo-label entry per target-train sample."""

    entries: tuple[PseudoLabel, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def labels_by_id(self) -> dict[str, int]:
        return {e.sample_id: e.label for e in self.entries}


@dataclass(frozen=True)
class Schedule:
    expansion: float
    base: int
    rounds: int
    sizes: tuple[int, ...]


@dataclass
class TrainResult:
    model: Classifier
    log: list[dict]
    best_index: int | None
    best_val_score: float | None


def schedule_sizes(expansion: float, n_target: int, rounds: int) -> Schedule:
    """Progressive pseudo-label budget: grow by ceil(expansion * n_target), capped.

    The per-round step snaps float noise away before the ceiling so exact
    products like 0.1 * 2000 stay at 200.
    """
    if not 0.0 < expansion < 1.0:
        raise ValueError(f"expansion factor must be in (0, 1), got {expansion}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    step = max(1, math.ceil(expansion * n_target - 1e-9))
    sizes = []
    m = 0
    for _ in range(rounds):
        m = min(n_target, m + step)
        sizes.append(m)
    return Schedule(expansion=expansion, base=n_target, rounds=rounds, sizes=tuple(sizes))


def estimate_pseudo_labels(model: Classifier, samples: Sequence[TextSample], batch_size: int = 256) -> PseudoPool:
    """Argmax prediction and its probability for every sample, in input order."""
    probs = model.predict(samples, batch_size=batch_size)
    labels = predicted_labels(probs)
    confidence = probs.max(axis=1)
    entries = tuple(
        PseudoLabel(sample_id=s.id, label=int(l), confidence=float(c))
        for s, l, c in zip(samples, labels, confidence)
    )
    return PseudoPool(entries)


def select_candidates(pool: PseudoPool, m: int) -> tuple[PseudoLabel, ...]:
    """Top-m entries by confidence descending, ties by sample id ascending."""
    if m > len(pool):
        warnings.warn(f"requested {m} candidates from a pool of {len(pool)}; clipping")
        m = len(pool)
    ranked = sorted(pool.entries, key=lambda e: (-e.confidence, e.sample_id))
    return tuple(ranked[:m])


def _train_one_epoch(
    model: Classifier,
    pairs: Sequence[tuple[TextSample, int]],
    stage: str,
    cfg: TrainConfig,
    optimizer: AdamState,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> float:
    order = shuffle_rng.permutation(len(pairs))
    trainable = model.trainable_tensors(stage)
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [pairs[i] for i in order[start : start + cfg.batch_size]]
        samples = [s for s, _ in batch]
        labels = [y for _, y in batch]
        trace, ids = model.forward_samples(samples, mode="train", dropout_rng=dropout_rng)
        losses.append(batch_loss_ce(trace.probs, labels))
        head_grads, d_features = backward_batch(trace, labels, model.head)
        grads = {f"head.{k}": g for k, g in head_grads.items()}
        if "encoder.embedding" in trainable:
            grads.update(model.encoder.gradient_tensors(ids, d_features, trace.lengths))
        adam_step(trainable, grads, optimizer, lr=cfg.lr)
    return float(np.mean(losses)) if losses else 0.0


def evaluate_model(model: Classifier, samples: Sequence[TextSample], batch_size: int = 256) -> Metrics:
    labels = [s.label for s in samples]
    if any(l is None for l in labels):
        raise ValueError("evaluation samples must be labeled")
    probs = model.predict(samples, batch_size=batch_size)
    return compute_metrics(predicted_labels(probs), labels)


def _labeled_pairs(samples: Sequence[TextSample]) -> list[tuple[TextSample, int]]:
    pairs = []
    for s in samples:
        if s.label is None:
            raise ValueError(f"sample {s.id!r} is unlabeled but labeled training data is required")
        pairs.append((s, s.label))
    return pairs


def pretrain(
    model: Classifier,
    train_samples: Sequence[TextSample],
    val_samples: Sequence[TextSample],
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch Adam over shuffled epochs; returns the best-val-ACC checkpoint.

    Ties keep the earliest epoch. The input model is never mutated; with zero
    epochs the result is an untouched copy and an empty log.
    """
    pairs = _labeled_pairs(train_samples)
    if not pairs:
        raise ValueError("source training data is empty")
    work = model.clone()
    best = work.clone()
    best_acc = None
    best_epoch = None
    optimizer = AdamState()
    log: list[dict] = []
    for epoch in range(1, cfg.pretrain_epochs + 1):
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11, epoch]))
        dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 12, epoch]))
        train_loss = _train_one_epoch(work, pairs, STAGE_PRETRAIN, cfg, optimizer, shuffle_rng, dropout_rng)
        val = evaluate_model(work, val_samples, cfg.eval_batch_size)
        log.append({"epoch": epoch, "train_loss": train_loss, "val_acc": val.acc, "val_f1": val.f1})
        if best_acc is None or cfg.metric_value(val) > best_acc:
            best = work.clone()
            best_acc = cfg.metric_value(val)
            best_epoch = epoch
    return TrainResult(model=best, log=log, best_index=best_epoch, best_val_score=best_acc)


def finetune(
    model: Classifier,
    target_pool: Sequence[TextSample],
    target_val: Sequence[TextSample],
    cfg: TrainConfig,
) -> TrainResult:
    """Progressive pseudo-label self-training on an unlabeled target pool.

    The returned checkpoint is the best target-validation model seen across
    the whole stage; by default the stage's starting checkpoint competes too
    (round index 0), so a run whose self-training rounds all degrade falls
    back to where it started. With zero rounds the input checkpoint comes
    back unchanged (the no-adaptation ablation). Set
    ``cfg.reestimate_pseudo_labels`` False to freeze the first round's
    pseudo-labels instead of refreshing them.
    """
    if not target_pool:
        raise ValueError("target pool is empty")
    if any(s.label is not None for s in target_pool):
        raise ValueError("target pool must be unlabeled; strip labels first")
    work = model.clone()
    if cfg.finetune_rounds == 0:
        return TrainResult(model=work, log=[], best_index=None, best_val_score=None)
    samples_by_id = {s.id: s for s in target_pool}
    schedule = schedule_sizes(cfg.expansion, len(target_pool), cfg.finetune_rounds)
    optimizer = AdamState()
    best = work.clone()
    best_acc = None
    best_round = None
    if cfg.keep_initial_candidate:
        initial_val = evaluate_model(work, target_val, cfg.eval_batch_size)
        best_acc = cfg.metric_value(initial_val)
        best_round = 0
    previous_labels: dict[str, int] | None = None
    first_pool: PseudoPool | None = None
    log: list[dict] = []
    for round_idx, m_t in enumerate(schedule.sizes, start=1):
        if cfg.reestimate_pseudo_labels or first_pool is None:
            pool = estimate_pseudo_labels(work, target_pool, cfg.eval_batch_size)
            if first_pool is None:
                first_pool = pool
        else:
            pool = first_pool
        current_labels = pool.labels_by_id()
        if previous_labels is None:
            churn = 0.0
        else:
            changed = sum(previous_labels[sid] != lab for sid, lab in current_labels.items())
            churn = changed / len(current_labels)
        previous_labels = current_labels

        selected = select_candidates(pool, m_t)
        pairs = [(samples_by_id[e.sample_id], e.label) for e in selected]
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 21, round_idx]))
        dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 22, round_idx]))
        train_loss = _train_one_epoch(work, pairs, STAGE_FINETUNE, cfg, optimizer, shuffle_rng, dropout_rng)
        val = evaluate_model(work, target_val, cfg.eval_batch_size)
        log.append(
            {
                "round": round_idx,
                "m": m_t,
                "mean_confidence": float(np.mean([e.confidence for e in selected])),
                "churn": churn,
                "train_loss": train_loss,
                "val_acc": val.acc,
                "val_f1": val.f1,
            }
        )
        if best_acc is None or cfg.metric_value(val) > best_acc:
            best = work.clone()
            best_acc = cfg.metric_value(val)
            best_round = round_idx
    return TrainResult(model=best, log=log, best_index=best_round, best_val_score=best_acc)
