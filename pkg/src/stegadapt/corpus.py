"""Corpus ingestion, tokenization, vocabulary, and leak-free split assembly.

Samples flow through two representations: straight after ingesting raw text
their ``tokens`` are surface strings; once a :class:`Vocab` exists they are
encoded to integer ids, which is what every downstream stage consumes.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, CorpusError, IntegrityError

COVER = 0
STEGO = 1
UNLABELED = None

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<unk>", "<bos>", "<eos>")

_LABEL_NAMES = {COVER: "cover", STEGO: "stego"}
_NAME_LABELS = {"cover": COVER, "stego": STEGO}


@dataclass(frozen=True)
class TextSample:
    """One text with an optional cover/stego label and a domain tag."""

    id: str
    tokens: tuple
    label: int | None
    domain: str
    bpw: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError(f"sample {self.id!r}: tokens must be nonempty")
        if self.label not in (COVER, STEGO, UNLABELED):
            raise ValueError(f"sample {self.id!r}: label must be 0, 1, or None")
        if (self.bpw is not None) != (self.label == STEGO):
            raise ValueError(f"sample {self.id!r}: bpw must be present iff label is stego")
        if self.bpw is not None and not 1 <= self.bpw <= 5:
            raise ValueError(f"sample {self.id!r}: bpw must be in 1..5")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, detach punctuation characters.

    Each punctuation character becomes its own token, so the output of
    ``tokenize(" ".join(tokens))`` equals ``tokens`` for any tokenized input.
    """
    out: list[str] = []
    for chunk in text.lower().split():
        word: list[str] = []
        for ch in chunk:
            if unicodedata.category(ch).startswith("P"):
                if word:
                    out.append("".join(word))
                    word = []
                out.append(ch)
            else:
                word.append(ch)
        if word:
            out.append("".join(word))
    return out


@dataclass(frozen=True)
class Vocab:
    """Token <-> id maps with fixed reserved ids PAD=0, UNK=1, BOS=2, EOS=3."""

    id_to_token: tuple[str, ...]
    token_to_id: Mapping[str, int]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        return tuple(self.token_to_id.get(t, UNK) for t in tokens)

    def decode(self, ids: Iterable[int]) -> tuple[str, ...]:
        return tuple(self.id_to_token[i] for i in ids)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.id_to_token)}, sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "Vocab":
        tokens = json.loads(payload)["tokens"]
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise CorpusError("vocab file does not start with the reserved tokens")
        return cls(tuple(tokens), {t: i for i, t in enumerate(tokens)})


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 2) -> Vocab:
    """Build a vocabulary over tokenized texts.

    Tokens with frequency >= ``min_freq`` get ids from 4 upward, ordered by
    descending frequency and then lexicographically.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    freq: Counter[str] = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        freq.update(text)
    if n_texts == 0:
        raise ValueError("corpus must be nonempty")
    kept = sorted((t for t, c in freq.items() if c >= min_freq), key=lambda t: (-freq[t], t))
    id_to_token = RESERVED_TOKENS + tuple(kept)
    return Vocab(id_to_token, {t: i for i, t in enumerate(id_to_token)})


def load_corpus(path: str | Path, vocab: Vocab | None = None) -> list[TextSample]:
    """Read one JSONL sample record per line.

    Records need ``id``, ``domain``, and either ``text`` (raw string, run
    through :func:`tokenize`) or ``tokens`` (list of ids or surface strings).
    ``label`` may be "cover", "stego", or null/absent; stego records must
    carry ``bpw``. With a ``vocab``, surface tokens are encoded to ids.
    """
    samples: list[TextSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(rec, dict):
                raise CorpusError("record is not an object", line=lineno)
            for key in ("id", "domain"):
                if key not in rec:
                    raise CorpusError(f"missing required key {key!r}", line=lineno)
            if "text" not in rec and "tokens" not in rec:
                raise CorpusError("record needs a 'text' or 'tokens' key", line=lineno)
            sid = str(rec["id"])
            if sid in seen:
                raise IntegrityError(f"duplicate sample id {sid!r} at line {lineno}")
            seen.add(sid)
            if "tokens" in rec:
                tokens = tuple(rec["tokens"])
                if tokens and isinstance(tokens[0], str) and vocab is not None:
                    tokens = vocab.encode(tokens)
            else:
                toks = tokenize(rec["text"])
                tokens = vocab.encode(toks) if vocab is not None else tuple(toks)
            label = rec.get("label")
            if label is not None:
                if label not in _NAME_LABELS:
                    raise CorpusError(f"unknown label {label!r}", line=lineno)
                label = _NAME_LABELS[label]
            try:
                samples.append(
                    TextSample(
                        id=sid,
                        tokens=tokens,
                        label=label,
                        domain=str(rec["domain"]),
                        bpw=rec.get("bpw"),
                    )
                )
            except ValueError as exc:
                raise CorpusError(str(exc), line=lineno) from exc
    return samples


def save_corpus(samples: Iterable[TextSample], path: str | Path) -> None:
    """Write samples as JSONL in the format :func:`load_corpus` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "id": s.id,
                "tokens": list(s.tokens),
                "label": _LABEL_NAMES.get(s.label),
                "domain": s.domain,
            }
            if s.bpw is not None:
                rec["bpw"] = s.bpw
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def encode_samples(samples: Iterable[TextSample], vocab: Vocab, max_len: int | None = None) -> list[TextSample]:
    """Map surface-token samples to id samples, truncating tails past ``max_len``."""
    out = []
    for s in samples:
        tokens = vocab.encode(s.tokens) if s.tokens and isinstance(s.tokens[0], str) else tuple(s.tokens)
        if max_len is not None:
            tokens = tokens[:max_len]
        out.append(replace(s, tokens=tokens))
    return out


def strip_labels(samples: Iterable[TextSample]) -> list[TextSample]:
    """Drop labels (and generation metadata) to form an unlabeled target pool."""
    return [replace(s, label=UNLABELED, bpw=None) for s in samples]


@dataclass(frozen=True)
class DomainDataset:
    """Train/val/test cover and stego samples for one domain.

    Cover ids are pairwise disjoint across the three splits, and val/test are
    class balanced; both are checked at construction.
    """

    domain: str
    train_cover: tuple[TextSample, ...]
    train_stego: tuple[TextSample, ...]
    val_cover: tuple[TextSample, ...]
    val_stego: tuple[TextSample, ...]
    test_cover: tuple[TextSample, ...]
    test_stego: tuple[TextSample, ...]

    def __post_init__(self):
        for name in ("train_cover", "train_stego", "val_cover", "val_stego", "test_cover", "test_stego"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        cover_ids = [
            {s.id for s in self.train_cover},
            {s.id for s in self.val_cover},
            {s.id for s in self.test_cover},
        ]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = cover_ids[i] & cover_ids[j]
                if overlap:
                    raise IntegrityError(f"cover ids shared across splits: {sorted(overlap)[:5]}")
        if len(self.val_cover) != len(self.val_stego):
            raise IntegrityError("val split is not class balanced")
        if len(self.test_cover) != len(self.test_stego):
            raise IntegrityError("test split is not class balanced")
        all_ids = [s.id for part in self._parts() for s in part]
        if len(all_ids) != len(set(all_ids)):
            raise IntegrityError("duplicate sample ids inside the dataset")

    def _parts(self):
        return (
            self.train_cover,
            self.train_stego,
            self.val_cover,
            self.val_stego,
            self.test_cover,
            self.test_stego,
        )

    @property
    def train(self) -> tuple[TextSample, ...]:
        return self.train_cover + self.train_stego

    @property
    def val(self) -> tuple[TextSample, ...]:
        return self.val_cover + self.val_stego

    @property
    def test(self) -> tuple[TextSample, ...]:
        return self.test_cover + self.test_stego

    @property
    def n_train(self) -> int:
        """Labeled size when this domain is the source, pool size when target."""
        return len(self.train_cover) + len(self.train_stego)


def make_splits(
    cover_pool: Sequence[TextSample],
    stego_pool: Sequence[TextSample],
    sizes: Mapping[str, int],
    seed: int,
) -> DomainDataset:
    """Shuffle each pool by ``seed`` and cut train/val/test of ``sizes`` per class."""
    for key in ("train", "val", "test"):
        if key not in sizes:
            raise ValueError(f"sizes must contain {key!r}")
        if sizes[key] < 0:
            raise ValueError(f"sizes[{key!r}] must be >= 0")
    need = sizes["train"] + sizes["val"] + sizes["test"]
    for name, pool in (("cover", cover_pool), ("stego", stego_pool)):
        if len(pool) < need:
            raise CapacityError(
                f"{name} pool has {len(pool)} samples, need {need} (short by {need - len(pool)})"
            )
        ids = [s.id for s in pool]
        if len(ids) != len(set(ids)):
            raise IntegrityError(f"duplicate ids inside the {name} pool")
    domains = {s.domain for s in cover_pool} | {s.domain for s in stego_pool}
    if len(domains) != 1:
        raise ValueError(f"pools mix domains: {sorted(domains)}")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    cuts = (sizes["train"], sizes["train"] + sizes["val"], need)

    def cut(pool: Sequence[TextSample]):
        order = rng.permutation(len(pool))
        chosen = [pool[i] for i in order[: cuts[2]]]
        return chosen[: cuts[0]], chosen[cuts[0] : cuts[1]], chosen[cuts[1] :]

    train_c, val_c, test_c = cut(cover_pool)
    train_s, val_s, test_s = cut(stego_pool)
    return DomainDataset(
        domain=domains.pop(),
        train_cover=train_c,
        train_stego=train_s,
        val_cover=val_c,
        val_stego=val_s,
        test_cover=test_c,
        test_stego=test_s,
    )


_SPLIT_ROLES = (
    ("train", "cover", "train_cover"),
    ("train", "stego", "train_stego"),
    ("val", "cover", "val_cover"),
    ("val", "stego", "val_stego"),
    ("test", "cover", "test_cover"),
    ("test", "stego", "test_stego"),
)


def write_split_manifest(dataset: DomainDataset, path: str | Path) -> None:
    """Record which sample landed in which split, for reproducibility audits."""
    with open(path, "w", encoding="utf-8") as fh:
        for split, role, attr in _SPLIT_ROLES:
            for s in getattr(dataset, attr):
                fh.write(json.dumps({"id": s.id, "split": split, "role": role}, sort_keys=True) + "\n")


def dataset_to_jsonl(dataset: DomainDataset, samples_path: str | Path, manifest_path: str | Path) -> None:
    save_corpus([s for part in dataset._parts() for s in part], samples_path)
    write_split_manifest(dataset, manifest_path)


def dataset_from_jsonl(samples_path: str | Path, manifest_path: str | Path) -> DomainDataset:
    samples = {s.id: s for s in load_corpus(samples_path)}
    parts: dict[str, list[TextSample]] = {attr: [] for _, _, attr in _SPLIT_ROLES}
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            attr = f"{rec['split']}_{rec['role']}"
            if attr not in parts:
                raise CorpusError(f"unknown split/role {rec['split']}/{rec['role']}", line=lineno)
            if rec["id"] not in samples:
                raise CorpusError(f"manifest id {rec['id']!r} missing from samples", line=lineno)
            parts[attr].append(samples[rec["id"]])
    domain = next(iter(samples.values())).domain
    return DomainDataset(domain=domain, **parts)
