"""Cover and stego text generation over a Markov language model.

The language model is an order-k token chain with additive smoothing. Covers
are ancestral samples; stego texts hide payload bits in the choice among the
top-2^bpw next-token candidates at each step, using either fixed-length
indexing (FLC) or a Huffman code over the candidate pool (VLC). Extraction
replays the candidate construction, so embedding never needs randomness while
bits remain and round-trips are exact.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import BOS, EOS, PAD, TextSample, Vocab, make_splits, tokenize
from .corpus import COVER, STEGO, DomainDataset
from .errors import DesyncError

CODINGS = ("flc", "vlc")


@dataclass
class _CtxStats:
    """Frozen per-context arrays derived from raw counts."""

    ids: np.ndarray        # observed token ids, ascending
    counts: np.ndarray     # aligned with ids
    cum: np.ndarray        # cumulative counts, for sampling
    ranked: tuple[int, ...]  # ids by count desc, then id asc
    total: int


class MarkovLM:
    """Order-k conditional next-token distribution with additive smoothing.

    The distribution ranges over every vocab id except PAD and BOS; EOS is
    sampleable (it terminates sequences) but is excluded from embedding
    candidate pools. With ``alpha == 0`` only observed continuations have
    positive probability.
    """

    def __init__(self, order: int, alpha: float, vocab: Vocab):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        self.order = order
        self.alpha = float(alpha)
        self.vocab = vocab
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self._ctx: dict[tuple[int, ...], _CtxStats] = {}
        support = [i for i in range(vocab.size) if i not in (PAD, BOS)]
        self.support = np.array(support, dtype=np.int64)
        self._support_no_eos = np.array([i for i in support if i != EOS], dtype=np.int64)

    # -- fitting ---------------------------------------------------------

    def observe(self, sequence: Sequence[int]) -> None:
        ctx = (BOS,) * self.order
        for tok in tuple(sequence) + (EOS,):
            tok = int(tok)
            if tok in (PAD, BOS) or not 0 <= tok < self.vocab.size:
                raise ValueError(f"token id {tok} outside the generatable vocabulary")
            bucket = self.counts.setdefault(ctx, {})
            bucket[tok] = bucket.get(tok, 0) + 1
            ctx = ctx[1:] + (tok,)
        self._ctx.clear()

    def freeze(self) -> None:
        """Precompute per-context arrays; called lazily by the query methods."""
        for ctx, bucket in self.counts.items():
            ids = np.array(sorted(bucket), dtype=np.int64)
            counts = np.array([bucket[i] for i in ids], dtype=np.float64)
            ranked = tuple(sorted(bucket, key=lambda t: (-bucket[t], t)))
            self._ctx[ctx] = _CtxStats(
                ids=ids, counts=counts, cum=np.cumsum(counts), ranked=ranked, total=int(counts.sum())
            )

    def _stats(self, context: tuple[int, ...]) -> _CtxStats | None:
        if not self._ctx and self.counts:
            self.freeze()
        return self._ctx.get(context)

    def _context_key(self, history: Sequence[int]) -> tuple[int, ...]:
        ctx = ((BOS,) * self.order + tuple(int(t) for t in history))[-self.order :]
        return ctx

    # -- queries ---------------------------------------------------------

    def next_distribution(self, history: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Full smoothed distribution (ids, probs) given the last tokens."""
        stats = self._stats(self._context_key(history))
        total = stats.total if stats else 0
        denom = total + self.alpha * len(self.support)
        if denom <= 0:
            raise ValueError("context has no continuations and alpha is 0")
        probs = np.full(len(self.support), self.alpha / denom)
        if stats is not None:
            idx = np.searchsorted(self.support, stats.ids)
            probs[idx] += stats.counts / denom
        return self.support.copy(), probs

    def ranked_candidates(self, history: Sequence[int], n: int, exclude_eos: bool = True) -> list[int]:
        """Top-n next tokens by probability desc, ties by id asc.

        With smoothing every supported token is a candidate; with alpha == 0
        only observed continuations qualify.
        """
        stats = self._stats(self._context_key(history))
        ranked: list[int] = []
        observed: dict[int, int] = {}
        if stats is not None:
            observed = self.counts[self._context_key(history)]
            ranked = [t for t in stats.ranked if not (exclude_eos and t == EOS)]
        if self.alpha > 0 and len(ranked) < n:
            pool = self._support_no_eos if exclude_eos else self.support
            for tok in pool:
                tok = int(tok)
                if tok not in observed:
                    ranked.append(tok)
                    if len(ranked) >= n:
                        break
        return ranked[:n]

    def step_probs(self, history: Sequence[int], ids: Sequence[int]) -> np.ndarray:
        """Smoothed probabilities of specific ids in this context."""
        stats = self._stats(self._context_key(history))
        total = stats.total if stats else 0
        denom = total + self.alpha * len(self.support)
        bucket = self.counts.get(self._context_key(history), {})
        return np.array([(bucket.get(int(i), 0) + self.alpha) / denom for i in ids])

    def sample_next(self, history: Sequence[int], rng: np.random.Generator) -> int:
        stats = self._stats(self._context_key(history))
        total = stats.total if stats else 0
        weight = total + self.alpha * len(self.support)
        if weight <= 0:
            raise ValueError("context has no continuations and alpha is 0")
        u = rng.random() * weight
        if u < total:
            idx = int(np.searchsorted(stats.cum, u, side="right"))
            return int(stats.ids[min(idx, len(stats.ids) - 1)])
        j = int((u - total) // self.alpha)
        return int(self.support[min(j, len(self.support) - 1)])


def fit_lm(sequences: Iterable[Sequence[int]], vocab: Vocab, order: int = 2, alpha: float = 0.5) -> MarkovLM:
    """Count (context, next) transitions over id sequences, BOS padded, EOS terminated."""
    lm = MarkovLM(order=order, alpha=alpha, vocab=vocab)
    n = 0
    for seq in sequences:
        lm.observe(seq)
        n += 1
    if n == 0:
        raise ValueError("corpus must be nonempty")
    lm.freeze()
    return lm


def sample_cover(lm: MarkovLM, max_len: int, seed) -> tuple[int, ...]:
    """Ancestral sample until EOS or ``max_len`` tokens; deterministic by seed."""
    rng = np.random.default_rng(seed)
    out: list[int] = []
    while len(out) < max_len:
        tok = lm.sample_next(out, rng)
        if tok == EOS:
            break
        out.append(tok)
    return tuple(out)


# ---------------------------------------------------------------------------
# Coding layers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StegoResult:
    """Embedding output plus the metadata extraction and audits need."""

    tokens: tuple[int, ...]
    bits_consumed: int
    embed_steps: int
    degraded_steps: int


def _check_bpw(bpw: int) -> None:
    if not 1 <= bpw <= 5:
        raise ValueError(f"bpw must be in 1..5, got {bpw}")


def _floor_log2(n: int) -> int:
    return n.bit_length() - 1


class _Node:
    __slots__ = ("prob", "min_id", "token", "left", "right")

    def __init__(self, prob, min_id, token=None, left=None, right=None):
        self.prob = prob
        self.min_id = min_id
        self.token = token
        self.left = left
        self.right = right


def huffman_codebook(ids: Sequence[int], probs: Sequence[float]) -> dict[int, tuple[int, ...]]:
    """Deterministic Huffman codes over a candidate pool.

    Repeatedly merges the two lowest-probability nodes, breaking ties by the
    smallest contained token id. Within a merged pair the more probable node
    takes the left branch (ties again to the smaller contained id), and left
    edges are bit 0, so a two-symbol pool maps bit 0 to the top-ranked
    candidate exactly like fixed-length indexing does. A single-symbol pool
    gets the empty code.
    """
    if len(ids) != len(probs) or not ids:
        raise ValueError("ids and probs must be nonempty and aligned")
    nodes = [_Node(float(p), int(i), token=int(i)) for i, p in zip(ids, probs)]
    if len(nodes) == 1:
        return {nodes[0].token: ()}
    heap = [(n.prob, n.min_id, n) for n in nodes]
    heapq.heapify(heap)
    while len(heap) > 1:
        _, _, a = heapq.heappop(heap)
        _, _, b = heapq.heappop(heap)
        left, right = (a, b) if a.prob == b.prob else (b, a)
        parent = _Node(a.prob + b.prob, min(a.min_id, b.min_id), left=left, right=right)
        heapq.heappush(heap, (parent.prob, parent.min_id, parent))
    codes: dict[int, tuple[int, ...]] = {}
    stack = [(heap[0][2], ())]
    while stack:
        node, prefix = stack.pop()
        if node.token is not None:
            codes[node.token] = prefix
        else:
            stack.append((node.left, prefix + (0,)))
            stack.append((node.right, prefix + (1,)))
    return codes


def _pool_for_step(lm: MarkovLM, history: Sequence[int], bpw: int) -> tuple[list[int], int, bool]:
    """Candidate pool of power-of-two size.

    Returns (pool, pool_bits, degraded); ``degraded`` marks steps where fewer
    than 2^bpw candidates existed.
    """
    cands = lm.ranked_candidates(history, 1 << bpw, exclude_eos=True)
    if not cands:
        raise ValueError("no embedding candidates in this context")
    pool_bits = min(bpw, _floor_log2(len(cands)))
    return cands[: 1 << pool_bits], pool_bits, (len(cands) < (1 << bpw))


def embed_flc(lm: MarkovLM, payload: Sequence[int], bpw: int, max_len: int, seed) -> StegoResult:
    """Hide payload bits by indexing into the ranked candidate pool.

    Each step consumes the next ``pool_bits`` payload bits as a big-endian
    index; the final step narrows the pool so it consumes exactly the bits
    that remain. After the payload the walk continues as pure sampling until
    a natural stop.
    """
    _check_bpw(bpw)
    payload = [int(b) for b in payload]
    if any(b not in (0, 1) for b in payload):
        raise ValueError("payload must be 0/1 bits")
    rng = np.random.default_rng(seed)
    tokens: list[int] = []
    pos = 0
    steps = degraded = 0
    while len(tokens) < max_len and pos < len(payload):
        pool, pool_bits, was_degraded = _pool_for_step(lm, tokens, bpw)
        pool_bits = min(pool_bits, len(payload) - pos)
        pool = pool[: 1 << pool_bits]
        index = 0
        for b in payload[pos : pos + pool_bits]:
            index = (index << 1) | b
        tokens.append(pool[index])
        pos += pool_bits
        steps += 1
        degraded += was_degraded
    _continue_sampling(lm, tokens, max_len, rng)
    return StegoResult(tuple(tokens), bits_consumed=pos, embed_steps=steps, degraded_steps=degraded)


def embed_vlc(lm: MarkovLM, payload: Sequence[int], bpw: int, max_len: int, seed) -> StegoResult:
    """Hide payload bits by walking a Huffman tree over the candidate pool.

    The pool probabilities are the renormalized smoothed LM probabilities.
    If the payload runs out mid-walk the remaining edges default to 0, so the
    emitted token's code starts with the real bits and extraction can simply
    truncate.
    """
    _check_bpw(bpw)
    payload = [int(b) for b in payload]
    if any(b not in (0, 1) for b in payload):
        raise ValueError("payload must be 0/1 bits")
    rng = np.random.default_rng(seed)
    tokens: list[int] = []
    pos = 0
    steps = degraded = 0
    while len(tokens) < max_len and pos < len(payload):
        pool, _, was_degraded = _pool_for_step(lm, tokens, bpw)
        probs = lm.step_probs(tokens, pool)
        codes = huffman_codebook(pool, probs / probs.sum())
        by_prefix = {code: tok for tok, code in codes.items()}
        prefix: tuple[int, ...] = ()
        while prefix not in by_prefix:
            bit = payload[pos] if pos < len(payload) else 0
            pos = min(pos + 1, len(payload))
            prefix = prefix + (bit,)
        tokens.append(by_prefix[prefix])
        steps += 1
        degraded += was_degraded
    _continue_sampling(lm, tokens, max_len, rng)
    return StegoResult(tuple(tokens), bits_consumed=pos, embed_steps=steps, degraded_steps=degraded)


def _continue_sampling(lm: MarkovLM, tokens: list[int], max_len: int, rng: np.random.Generator) -> None:
    while len(tokens) < max_len:
        tok = lm.sample_next(tokens, rng)
        if tok == EOS:
            break
        tokens.append(tok)


def extract_bits(
    lm: MarkovLM, tokens: Sequence[int], coding: str, bpw: int, n_bits: int
) -> list[int]:
    """Replay candidate pools over stego tokens and invert the coding.

    Requires the same LM, coding, and bpw used at embedding time plus the
    payload length; raises :class:`DesyncError` when an emitted token falls
    outside its reconstructed pool or the text ends early.
    """
    _check_bpw(bpw)
    if coding not in CODINGS:
        raise ValueError(f"coding must be one of {CODINGS}, got {coding!r}")
    if n_bits < 0:
        raise ValueError("payload length must be >= 0")
    out: list[int] = []
    history: list[int] = []
    for step, tok in enumerate(tokens):
        if len(out) >= n_bits:
            break
        tok = int(tok)
        pool, pool_bits, _ = _pool_for_step(lm, history, bpw)
        if coding == "flc":
            pool_bits = min(pool_bits, n_bits - len(out))
            pool = pool[: 1 << pool_bits]
            if tok not in pool:
                raise DesyncError(f"token {tok} not in the reconstructed pool", step=step)
            index = pool.index(tok)
            out.extend((index >> (pool_bits - 1 - i)) & 1 for i in range(pool_bits))
        else:
            probs = lm.step_probs(history, pool)
            codes = huffman_codebook(pool, probs / probs.sum())
            if tok not in codes:
                raise DesyncError(f"token {tok} not in the reconstructed pool", step=step)
            out.extend(codes[tok])
        history.append(tok)
    if len(out) < n_bits:
        raise DesyncError(
            f"stego text ended after {len(out)} of {n_bits} bits", step=len(tuple(tokens))
        )
    return out[:n_bits]


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationResult:
    dataset: DomainDataset
    vocab: Vocab
    lm: MarkovLM
    manifest: dict


def build_domain_dataset(
    corpus_path: str | Path,
    *,
    domain: str,
    sizes: Mapping[str, int],
    bpw: int,
    coding: str,
    seed: int,
    lm_order: int = 2,
    alpha: float = 0.5,
    vocab: Vocab | None = None,
    min_freq: int = 2,
    max_len: int = 64,
    payload_bits: tuple[int, int] = (16, 48),
) -> GenerationResult:
    """Fit a domain LM on a text file and generate a full cover/stego dataset.

    One LM per domain produces the covers and the stego texts for every
    split. Per-sample RNG streams are derived from (seed, class, index) so
    generation is reproducible and order independent.
    """
    _check_bpw(bpw)
    if coding not in CODINGS:
        raise ValueError(f"coding must be one of {CODINGS}, got {coding!r}")
    lo, hi = payload_bits
    if not 1 <= lo <= hi:
        raise ValueError(f"payload_bits range must satisfy 1 <= lo <= hi, got {payload_bits}")
    if hi > max_len:
        raise ValueError(f"payload_bits upper bound {hi} exceeds max_len {max_len}")

    lines = Path(corpus_path).read_text(encoding="utf-8").splitlines()
    texts = [toks for toks in (tokenize(line) for line in lines) if toks]
    if not texts:
        raise ValueError(f"{corpus_path}: no usable text lines")
    if vocab is None:
        from .corpus import build_vocab

        vocab = build_vocab(texts, min_freq=min_freq)
    sequences = [vocab.encode(t) for t in texts]
    lm = fit_lm(sequences, vocab, order=lm_order, alpha=alpha)

    n_per_class = sizes["train"] + sizes["val"] + sizes["test"]
    embed = embed_flc if coding == "flc" else embed_vlc

    covers = []
    for i in range(n_per_class):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0, i]))
        tokens = ()
        for _ in range(100):
            tokens = sample_cover(lm, max_len, rng)
            if tokens:
                break
        if not tokens:
            raise ValueError("language model keeps producing empty covers")
        covers.append(TextSample(id=f"{domain}-cover-{i:05d}", tokens=tokens, label=COVER, domain=domain))

    stegos = []
    for i in range(n_per_class):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, i]))
        result = None
        for _ in range(100):
            n_bits = int(rng.integers(lo, hi + 1))
            payload = rng.integers(0, 2, n_bits).tolist()
            attempt = embed(lm, payload, bpw, max_len, rng)
            if attempt.bits_consumed == n_bits and attempt.tokens:
                result = attempt
                break
        if result is None:
            raise ValueError(
                f"could not embed a payload from {payload_bits} within max_len={max_len}"
            )
        stegos.append(
            TextSample(id=f"{domain}-stego-{i:05d}", tokens=result.tokens, label=STEGO, domain=domain, bpw=bpw)
        )

    split_seed = int(np.random.SeedSequence([seed, 2]).generate_state(1)[0])
    dataset = make_splits(covers, stegos, sizes, seed=split_seed)
    manifest = {
        "domain": domain,
        "lm_order": lm_order,
        "alpha": alpha,
        "bpw": bpw,
        "coding": coding,
        "seed": seed,
        "payload_len": [lo, hi],
        "max_len": max_len,
        "min_freq": min_freq,
        "vocab_size": vocab.size,
        "sizes": dict(sizes),
    }
    return GenerationResult(dataset=dataset, vocab=vocab, lm=lm, manifest=manifest)


def write_manifest(manifest: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dict(manifest), sort_keys=True, indent=2) + "\n", encoding="utf-8")
