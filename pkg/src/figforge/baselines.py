"""String-similarity exemplar model over token strings.

Distances are weighted sums of per-substring Levenshtein distances: part
ids (tokenized at primitive-id granularity), attachment items (one symbol
per item), and orientation (character level).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tokens import ParseError, TokenUniverse, parse_text


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class GcmWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise FormatError("weights must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])


def split_substrings(s: str, known_ids: Sequence[str] | None = None):
    """Token string -> (part-id symbols, attachment-item symbols,
    orientation characters)."""
    try:
        ids, items, orientation = parse_text(s, known_ids=known_ids)
    except ParseError as e:
        raise FormatError(str(e)) from e
    item_syms = tuple(
        str(pid) if i == 0 else f"{target}:{pid}"
        for i, (target, pid) in enumerate(items)
    )
    return ids, item_syms, tuple(str(orientation))


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Textbook dynamic-programming edit distance over symbol sequences."""
    la, lb = len(a), len(b)
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        for j in range(1, lb + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[lb]


def gcm_distance(y: str, x: str, w: GcmWeights, known_ids: Sequence[str] | None = None) -> float:
    sy = split_substrings(y, known_ids)
    sx = split_substrings(x, known_ids)
    d = [levenshtein(a, b) for a, b in zip(sy, sx)]
    return w.w1 * d[0] + w.w2 * d[1] + w.w3 * d[2]


def gcm_similarity(y: str, exemplars: Sequence[str], w: GcmWeights, known_ids=None) -> float:
    return math.fsum(math.exp(-gcm_distance(y, x, w, known_ids)) for x in exemplars)


def gcm_classify(
    y: str,
    exemplars: Sequence[str],
    w: GcmWeights,
    test_items: Sequence[str],
    known_ids: Sequence[str] | None = None,
) -> float:
    """Similarity to exemplars normalized by the trial's maximum over its
    test items; scores lie in [0, 1] with the max attaining 1."""
    if y not in test_items:
        test_items = list(test_items) + [y]
    sims = {t: gcm_similarity(t, exemplars, w, known_ids) for t in test_items}
    m = max(sims.values())
    if m == 0.0:
        return 0.0
    return sims[y] / m


class GcmGenerative:
    """Exemplar similarities normalized over the full token universe."""

    def __init__(self, universe: TokenUniverse, exemplars: Sequence[str], w: GcmWeights):
        self.universe = universe
        self.exemplars = tuple(exemplars)
        self.w = w
        ids = universe.bank_ids
        sims = np.array(
            [gcm_similarity(t.string, self.exemplars, w, ids) for t in universe.tokens]
        )
        self._z = float(sims.sum())
        self._probs = sims / self._z

    def prob(self, y: str | int) -> float:
        idx = y if isinstance(y, int) else self.universe.by_string[y]
        return float(self._probs[idx])

    def logprob(self, y: str | int) -> float:
        p = self.prob(y)
        return math.log(p) if p > 0 else -math.inf

    def probs(self) -> np.ndarray:
        return self._probs.copy()


def gcm_generative(y: str, exemplars: Sequence[str], w: GcmWeights, universe: TokenUniverse) -> float:
    return GcmGenerative(universe, exemplars, w).prob(y)
