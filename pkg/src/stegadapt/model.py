"""Encoder + head bundle, batched inference, and checkpoint files.

Checkpoints are numpy ``.npz`` archives holding every head tensor, the
builtin encoder's embedding table, the optimizer moments, and a JSON metadata
record with the component configs and their hashes. Restoring a checkpoint
reproduces eval-mode forward outputs bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import TextSample
from .encoder import BuiltinEncoder, EncoderConfig, PrecomputedEncoder, make_encoder
from .head import AdamState, HeadConfig, HeadParams, forward_batch, init_params

CHECKPOINT_VERSION = 1


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class Classifier:
    """A steganalysis detector: frozen-or-trainable encoder plus the head."""

    encoder: BuiltinEncoder | PrecomputedEncoder
    head: HeadParams

    @classmethod
    def build(
        cls,
        encoder_config: EncoderConfig,
        head_config: HeadConfig,
        seed: int,
        vocab_size: int | None = None,
        store: dict | None = None,
    ) -> "Classifier":
        if head_config.d_h != encoder_config.d_h:
            raise ValueError("encoder and head disagree on d_h")
        enc_cfg = EncoderConfig(
            kind=encoder_config.kind,
            d_h=encoder_config.d_h,
            freeze_policy=encoder_config.freeze_policy,
            seed=seed,
        )
        encoder = make_encoder(enc_cfg, vocab_size=vocab_size, store=store)
        head = init_params(
            head_config.d_h,
            head_config.hidden,
            seed=np.random.SeedSequence([seed, 0x4EAD]),
            layers=head_config.layers,
            config=head_config,
        )
        return cls(encoder=encoder, head=head)

    def clone(self) -> "Classifier":
        return Classifier(encoder=self.encoder.clone(), head=self.head.clone())

    def trainable_tensors(self, stage: str) -> dict[str, np.ndarray]:
        tensors = dict(self.encoder.trainable_tensors(stage))
        tensors.update({f"head.{k}": v for k, v in self.head.tensors.items()})
        return tensors

    def forward_samples(
        self,
        samples: Sequence[TextSample],
        mode: str = "eval",
        dropout_rng: np.random.Generator | None = None,
    ):
        """Encode and run one batch; returns the trace plus the padded id matrix."""
        feats, lengths, ids = self.encoder.encode_batch(samples)
        trace = forward_batch(feats, lengths, self.head, mode=mode, dropout_rng=dropout_rng)
        return trace, ids

    def predict(
        self, samples: Sequence[TextSample], batch_size: int = 256, return_pooled: bool = False
    ):
        """Eval-mode class probabilities for many samples, in input order."""
        if not samples:
            raise ValueError("predict needs at least one sample")
        probs = []
        pooled = []
        for start in range(0, len(samples), batch_size):
            trace, _ = self.forward_samples(samples[start : start + batch_size], mode="eval")
            probs.append(trace.probs)
            pooled.append(trace.pooled_raw)
        probs = np.concatenate(probs, axis=0)
        if return_pooled:
            return probs, np.concatenate(pooled, axis=0)
        return probs

    def component_hashes(self) -> dict[str, str]:
        enc = self.encoder.config
        return {
            "encoder": config_hash(
                {"kind": enc.kind, "d_h": enc.d_h, "freeze_policy": enc.freeze_policy}
            ),
            "head": config_hash(self.head.config.to_dict()),
        }


def predicted_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax with the fixed tie rule: equal probabilities resolve to cover."""
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: Classifier,
    optimizer: AdamState | None = None,
    extra: dict | None = None,
) -> None:
    enc = model.encoder
    meta = {
        "version": CHECKPOINT_VERSION,
        "head_config": model.head.config.to_dict(),
        "encoder_config": {
            "kind": enc.config.kind,
            "d_h": enc.config.d_h,
            "freeze_policy": enc.config.freeze_policy,
            "seed": enc.config.seed,
        },
        "vocab_size": getattr(enc, "vocab_size", None),
        "hashes": model.component_hashes(),
        "adam_step": optimizer.step if optimizer else None,
        "extra": extra or {},
    }
    arrays: dict[str, np.ndarray] = {f"head.{k}": v for k, v in model.head.tensors.items()}
    if isinstance(enc, BuiltinEncoder):
        arrays["encoder.embedding"] = enc.table
    if optimizer is not None:
        arrays.update({f"adam.m.{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam.v.{k}": v for k, v in optimizer.v.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path, store: dict | None = None) -> tuple[Classifier, AdamState | None, dict]:
    """Rebuild the model (and optimizer state if it was saved) from a file.

    ``store`` supplies the feature store for precomputed-encoder checkpoints;
    the store itself is never serialized.
    """
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(bytes(archive["meta"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        head_config = HeadConfig(**meta["head_config"])
        enc_config = EncoderConfig(**meta["encoder_config"])
        head_tensors = {
            k[len("head.") :]: archive[k].copy() for k in archive.files if k.startswith("head.")
        }
        if enc_config.kind == "builtin":
            encoder = BuiltinEncoder(enc_config, meta["vocab_size"], table=archive["encoder.embedding"].copy())
        else:
            encoder = PrecomputedEncoder(enc_config, store or {})
        optimizer = None
        if meta["adam_step"] is not None:
            optimizer = AdamState(
                step=meta["adam_step"],
                m={k[len("adam.m.") :]: archive[k].copy() for k in archive.files if k.startswith("adam.m.")},
                v={k[len("adam.v.") :]: archive[k].copy() for k in archive.files if k.startswith("adam.v.")},
            )
    model = Classifier(encoder=encoder, head=HeadParams(head_config, head_tensors))
    return model, optimizer, meta


def models_equal(a: Classifier, b: Classifier) -> bool:
    """Bitwise equality of every parameter tensor."""
    if a.head.tensors.keys() != b.head.tensors.keys():
        return False
    for key in a.head.tensors:
        if a.head.tensors[key].tobytes() != b.head.tensors[key].tobytes():
            return False
    ta = getattr(a.encoder, "table", None)
    tb = getattr(b.encoder, "table", None)
    if (ta is None) != (tb is None):
        return False
    if ta is not None and ta.tobytes() != tb.tobytes():
        return False
    return True
