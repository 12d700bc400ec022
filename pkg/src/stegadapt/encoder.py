"""Domain-common contextual features, frozen with respect to adaptation.

Two encoders satisfy the same contract: ``builtin`` sums a trainable token
embedding table with fixed sinusoidal position codes (trained during source
pretraining, frozen afterwards), and ``precomputed`` serves per-sample
feature matrices loaded from a file, standing in for features exported by a
large pretrained model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import PAD, UNK, TextSample
from .errors import CorpusError, FeatureLookupError, IntegrityError

FREEZE_POLICIES = ("always", "after_pretrain")
STAGE_PRETRAIN = "pretrain"
STAGE_FINETUNE = "finetune"


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "builtin"
    d_h: int = 64
    freeze_policy: str = "after_pretrain"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("builtin", "precomputed"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.d_h < 2:
            raise ValueError(f"d_h must be >= 2, got {self.d_h}")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}")
        if self.kind == "precomputed" and self.freeze_policy != "always":
            raise ValueError("precomputed features are always frozen")


def sinusoidal_positions(length: int, d_h: int) -> np.ndarray:
    """Classic sin/cos position codes, shape (length, d_h)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dims = np.arange(d_h, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(dims / 2.0) / d_h)
    codes = np.where(dims % 2 == 0, np.sin(angles), np.cos(angles))
    return codes


class BuiltinEncoder:
    """Embedding table plus positions; the trainable half of the frozen contract."""

    kind = "builtin"

    def __init__(self, config: EncoderConfig, vocab_size: int, table: np.ndarray | None = None):
        if config.kind != "builtin":
            raise ValueError("config.kind must be 'builtin'")
        if vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved ids plus one token")
        self.config = config
        self.vocab_size = vocab_size
        if table is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE4B]))
            table = rng.uniform(-0.5, 0.5, size=(vocab_size, config.d_h))
        if table.shape != (vocab_size, config.d_h):
            raise ValueError(f"embedding table shape {table.shape} != {(vocab_size, config.d_h)}")
        self.table = np.asarray(table, dtype=np.float64)
        self._positions = sinusoidal_positions(512, config.d_h)

    @property
    def d_h(self) -> int:
        return self.config.d_h

    def _position_rows(self, length: int) -> np.ndarray:
        if length > self._positions.shape[0]:
            self._positions = sinusoidal_positions(length, self.config.d_h)
        return self._positions[:length]

    def _clean_ids(self, tokens: Sequence[int]) -> np.ndarray:
        ids = np.asarray(tokens)
        if ids.size == 0:
            raise ValueError("cannot encode an empty token sequence")
        if ids.dtype.kind not in "iu":
            raise TypeError("builtin encoder needs token ids; encode samples with a vocab first")
        ids = ids.astype(np.int64)
        return np.where((ids < 0) | (ids >= self.vocab_size), UNK, ids)

    def encode(self, sample: TextSample) -> np.ndarray:
        """Feature matrix of shape (len(tokens), d_h)."""
        ids = self._clean_ids(sample.tokens)
        return self.table[ids] + self._position_rows(len(ids))

    def encode_batch(self, samples: Sequence[TextSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded feature tensor (B, T, d_h), lengths, and the padded id matrix."""
        ids_list = [self._clean_ids(s.tokens) for s in samples]
        lengths = np.array([len(i) for i in ids_list], dtype=np.int64)
        width = int(lengths.max())
        ids = np.full((len(samples), width), PAD, dtype=np.int64)
        for row, seq in enumerate(ids_list):
            ids[row, : len(seq)] = seq
        feats = self.table[ids] + self._position_rows(width)[None, :, :]
        mask = np.arange(width)[None, :] < lengths[:, None]
        feats[~mask] = 0.0
        return feats, lengths, ids

    # -- training hooks ----------------------------------------------------

    def trainable_tensors(self, stage: str) -> dict[str, np.ndarray]:
        if stage == STAGE_PRETRAIN and self.config.freeze_policy == "after_pretrain":
            return {"encoder.embedding": self.table}
        return {}

    def gradient_tensors(self, ids: np.ndarray, d_features: np.ndarray, lengths: np.ndarray) -> dict[str, np.ndarray]:
        """Accumulate feature gradients into embedding-row gradients."""
        grad = np.zeros_like(self.table)
        mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
        np.add.at(grad, ids[mask], d_features[mask])
        grad[PAD] = 0.0
        return {"encoder.embedding": grad}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(str(self.table.shape).encode())
        digest.update(np.ascontiguousarray(self.table).tobytes())
        return digest.hexdigest()

    def clone(self) -> "BuiltinEncoder":
        return BuiltinEncoder(self.config, self.vocab_size, table=self.table.copy())


class PrecomputedEncoder:
    """Serves stored per-sample feature matrices, keyed by sample id."""

    kind = "precomputed"

    def __init__(self, config: EncoderConfig, store: dict[str, np.ndarray]):
        if config.kind != "precomputed":
            raise ValueError("config.kind must be 'precomputed'")
        self.config = config
        self.store = store
        for sid, matrix in store.items():
            if matrix.ndim != 2 or matrix.shape[1] != config.d_h:
                raise ValueError(f"stored matrix for {sid!r} has width {matrix.shape}, expected d_h={config.d_h}")

    @property
    def d_h(self) -> int:
        return self.config.d_h

    def encode(self, sample: TextSample) -> np.ndarray:
        if sample.id not in self.store:
            raise FeatureLookupError(f"no precomputed features for sample id {sample.id!r}")
        return self.store[sample.id]

    def encode_batch(self, samples: Sequence[TextSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        matrices = [self.encode(s) for s in samples]
        lengths = np.array([m.shape[0] for m in matrices], dtype=np.int64)
        width = int(lengths.max())
        feats = np.zeros((len(samples), width, self.config.d_h))
        for row, m in enumerate(matrices):
            feats[row, : m.shape[0]] = m
        ids = np.full((len(samples), width), PAD, dtype=np.int64)
        return feats, lengths, ids

    def trainable_tensors(self, stage: str) -> dict[str, np.ndarray]:
        return {}

    def gradient_tensors(self, ids, d_features, lengths) -> dict[str, np.ndarray]:
        return {}

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for sid in sorted(self.store):
            digest.update(sid.encode())
            digest.update(np.ascontiguousarray(self.store[sid]).tobytes())
        return digest.hexdigest()

    def clone(self) -> "PrecomputedEncoder":
        return PrecomputedEncoder(self.config, self.store)


def load_precomputed(path: str | Path) -> tuple[dict[str, np.ndarray], int | None]:
    """Read a line-delimited feature store.

    The first record is a header declaring ``d_h``; the rest carry
    ``{"id": ..., "h": [[...], ...]}`` with rows of exactly that width.
    Returns the store and the declared width (None for an empty file).
    """
    store: dict[str, np.ndarray] = {}
    d_h: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if d_h is None:
                if not isinstance(rec, dict) or "d_h" not in rec:
                    raise CorpusError("first record must be a header declaring d_h", line=lineno)
                d_h = int(rec["d_h"])
                if d_h < 2:
                    raise CorpusError("header d_h must be >= 2", line=lineno)
                continue
            if "id" not in rec or "h" not in rec:
                raise CorpusError("feature records need 'id' and 'h'", line=lineno)
            sid = str(rec["id"])
            if sid in store:
                raise IntegrityError(f"duplicate feature id {sid!r} at line {lineno}")
            rows = rec["h"]
            if not rows or any(len(r) != d_h for r in rows):
                raise CorpusError(f"feature rows for {sid!r} are not uniformly d_h={d_h} wide", line=lineno)
            store[sid] = np.asarray(rows, dtype=np.float64)
    return store, d_h


def save_precomputed(store: dict[str, Iterable], d_h: int, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"d_h": d_h}) + "\n")
        for sid in store:
            rows = np.asarray(store[sid], dtype=np.float64)
            fh.write(json.dumps({"id": sid, "h": rows.tolist()}) + "\n")


def make_encoder(
    config: EncoderConfig,
    vocab_size: int | None = None,
    store: dict[str, np.ndarray] | None = None,
):
    if config.kind == "builtin":
        if vocab_size is None:
            raise ValueError("builtin encoder needs a vocab_size")
        return BuiltinEncoder(config, vocab_size)
    if store is None:
        raise ValueError("precomputed encoder needs a feature store")
    return PrecomputedEncoder(config, store)
