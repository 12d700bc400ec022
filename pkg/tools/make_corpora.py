#!/usr/bin/env python3
"""Generate the two bundled benchmark corpora.

Writes ``data/corpora/harbor.txt`` and ``data/corpora/orchard.txt``: original
prose produced by a seeded sentence grammar, dedicated to the public domain
(see data/corpora/README.md). The two texts share one vocabulary and their
grammatical frame but mix three content-word pools (maritime, farmstead,
common) at opposite rates, giving a controlled domain shift: every token
occurs in both domains, while the topic statistics move substantially.

Run from the repository root:

    python3 tools/make_corpora.py [--lines 2400] [--out data/corpora]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

SHARED = {
    "det": ["the", "the", "a", "this", "that", "each", "one", "some"],
    "prep": ["of", "in", "on", "by", "with", "from", "near", "under", "over", "against"],
    "connector": ["and", "but", "while", "then", "so", "yet"],
    "aux_adv": ["slowly", "again", "at last", "all day", "all night", "for hours", "once more"],
    "time": ["at dawn", "by noon", "by evening", "after dark", "before first light", "in the cold hours"],
}

MARINE = {
    "noun": (
        "tide harbor mast sail gull rope deck wave storm anchor buoy channel pilot wharf "
        "hull keel rudder cargo hold lantern fog swell current chart compass crew captain "
        "mate watch bell galley spray reef shoal breaker pier quay mooring hawser winch "
        "capstan boom jib rigging shroud ballast bilge helm bow stern fathom sounding "
        "manifest crate herring mackerel salt berth beacon lighthouse headland cove inlet "
        "strait passage crossing voyage log squall gale calm gust halyard cleat gunwale "
        "oar skiff dinghy launch tender ferry packet schooner sloop ketch brig steamer tug"
    ).split(),
    "verb": (
        "hauled moored anchored steered trimmed reefed furled hoisted lowered stowed lashed "
        "sounded charted logged sighted hailed boarded launched beached careened caulked "
        "rigged spliced coiled belayed weighed drifted tacked pitched rolled shipped bailed "
        "pumped signaled piloted towed warped docked"
    ).split(),
    "adj": (
        "heavy slack taut weathered gray leaden squally brisk freshening onshore offshore "
        "leeward windward deep shallow foul laden seaworthy leaky trim listing becalmed "
        "stormbound fogbound overdue"
    ).split(),
    "opener": [
        "on the morning tide",
        "under a freshening wind",
        "off the headland",
        "inside the breakwater",
        "along the quay",
        "beyond the last buoy",
    ],
}

FARM = {
    "noun": (
        "orchard ladder basket bough blossom graft rootstock scion bark sap shears loam "
        "mulch compost furrow seedling sapling trunk canopy windfall cider press barrel "
        "cellar shelf jar preserve syrup honey hive bee swarm comb frame smoker veil fence "
        "gate hedge lane meadow pasture trough pail churn butter cream dairy hen coop "
        "rooster egg straw hay loft scythe sickle rake hoe spade barrow plough harrow "
        "grain wheat oats barley rye clover turnip cabbage carrot potato bean pea vine "
        "trellis frost thaw bud fruit apple pear plum cherry quince currant bramble thistle"
    ).split(),
    "verb": (
        "pruned grafted budded thinned picked gathered sorted graded stored pressed bottled "
        "sealed labeled shelved mulched hoed weeded raked mowed scythed stacked threshed "
        "winnowed milled churned skimmed strained fed watered penned herded mended thatched "
        "planted staked tied trained dug"
    ).split(),
    "adj": (
        "ripe green windfallen early late frostbitten sweet tart mellow russet golden "
        "speckled wormy sound bruised loamy chalky sour fallow seeded weedy overgrown "
        "neat budding flowering dormant"
    ).split(),
    "opener": [
        "in the lower orchard",
        "along the south wall",
        "behind the cider house",
        "under the old pear tree",
        "at the meadow gate",
        "between the hives",
    ],
}

COMMON = {
    "noun": (
        "morning evening night rain wind light shadow road path wall door roof floor "
        "table bench fire smoke water stone ground sky cloud sun moon star man woman "
        "child neighbor stranger letter book ledger coin bread cheese kettle lamp coat "
        "boot hat bundle sack box cart wheel horse dog cat bird"
    ).split(),
    "verb": (
        "held kept found moved took brought carried left set laid turned opened closed "
        "counted weighed measured watched waited called answered mended cleaned dried "
        "warmed cooled filled emptied covered crossed followed passed reached"
    ).split(),
    "adj": (
        "old new small great long short warm cold dry wet dark bright quiet loud plain "
        "fine rough smooth broken whole empty full heavy light near far early late"
    ).split(),
    "opener": [
        "after a long morning",
        "toward the end of the week",
        "in the gray light",
        "before the rain came",
    ],
}

# Mixture of (marine, farm, common) content pools per domain. Every word can
# occur in either domain; the topic balance is what shifts. The common pool
# carries enough mass that the most frequent continuations mostly coincide
# across domains, the way natural corpora overlap.
MIXTURES = {
    "harbor": (0.35, 0.20, 0.45),
    "orchard": (0.08, 0.47, 0.45),
}


def _zipf_weights(n: int, power: float = 0.85) -> np.ndarray:
    weights = 1.0 / np.arange(2, n + 2) ** power
    return weights / weights.sum()


class SentenceGrammar:
    """Seeded sentence sampler over mixed content pools plus the shared frame."""

    def __init__(self, mixture: tuple[float, float, float], seed: int):
        self.rng = np.random.default_rng(seed)
        self.mixture = np.asarray(mixture)
        self.pools = (MARINE, FARM, COMMON)
        self.shared_weights = {key: _zipf_weights(len(words)) for key, words in SHARED.items()}
        self.pool_weights = {
            (i, key): _zipf_weights(len(pool[key]))
            for i, pool in enumerate(self.pools)
            for key in ("noun", "verb", "adj")
        }

    def _shared(self, key: str) -> str:
        return str(self.rng.choice(SHARED[key], p=self.shared_weights[key]))

    def _content(self, key: str) -> str:
        pool_idx = int(self.rng.choice(3, p=self.mixture))
        words = self.pools[pool_idx][key]
        return str(self.rng.choice(words, p=self.pool_weights[(pool_idx, key)]))

    def _noun_phrase(self) -> str:
        det = str(self.rng.choice(SHARED["det"]))
        if self.rng.random() < 0.35:
            return f"{det} {self._content('adj')} {self._content('noun')}"
        return f"{det} {self._content('noun')}"

    def _clause(self) -> str:
        subject = self._noun_phrase()
        verb = self._content("verb")
        roll = self.rng.random()
        if roll < 0.45:
            return f"{subject} {verb} {self._shared('prep')} {self._noun_phrase()}"
        if roll < 0.75:
            return f"{subject} {verb} {self._noun_phrase()}"
        if roll < 0.9:
            return f"{subject} {verb} {self._shared('aux_adv')}"
        return f"{subject} {verb}"

    def _sentence(self) -> str:
        parts = []
        roll = self.rng.random()
        if roll < 0.15:
            pool_idx = int(self.rng.choice(3, p=self.mixture))
            parts.append(str(self.rng.choice(self.pools[pool_idx]["opener"])) + " ,")
        elif roll < 0.3:
            parts.append(self._shared("time") + " ,")
        parts.append(self._clause())
        if self.rng.random() < 0.3:
            parts.append(f"{self._shared('connector')} {self._clause()}")
        return " ".join(parts) + " ."

    def paragraph(self) -> str:
        # 2-3 sentences per line so "." is a mid-sequence token with rich
        # continuations; a language model fit on these never dead-ends.
        n = 2 + (self.rng.random() < 0.4)
        return " ".join(self._sentence() for _ in range(n))


def generate(mixture: tuple[float, float, float], seed: int, n_lines: int) -> str:
    grammar = SentenceGrammar(mixture, seed)
    return "\n".join(grammar.paragraph() for _ in range(n_lines)) + "\n"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--lines", type=int, default=2400, help="paragraphs per corpus")
    parser.add_argument("--out", default="data/corpora", help="output directory")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, seed in (("harbor", 101), ("orchard", 202)):
        text = generate(MIXTURES[name], seed, args.lines)
        path = out / f"{name}.txt"
        path.write_text(text, encoding="utf-8")
        n_tokens = sum(len(line.split()) for line in text.splitlines())
        print(f"{path}: {args.lines} lines, {n_tokens} whitespace tokens")


if __name__ == "__main__":
    main()
