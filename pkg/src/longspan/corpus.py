"""Multilingual corpus ingestion, statistics, and budget-capped sampling.

Sampling follows the capped-waterfill scheme: each language may contribute at
most ``epoch_cap`` epochs worth of tokens, and the remaining budget is split
as evenly as the caps allow, so head languages stop crowding out tail ones.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass

import numpy as np


class CorpusError(ValueError):
    """Malformed corpus input; message carries the offending line number."""


@dataclass(frozen=True)
class Document:
    lang: str
    text: str

    def __post_init__(self) -> None:
        if not self.lang or any(c.isspace() for c in self.lang):
            raise ValueError(f"bad lang {self.lang!r}: must be non-empty without whitespace")
        if not self.text:
            raise ValueError("empty text")


@dataclass
class LanguageStats:
    doc_count: int = 0
    token_count: int = 0


@dataclass(frozen=True)
class LengthSummary:
    mean: float
    p50: int
    p90: int


@dataclass(frozen=True)
class Allocation:
    lang: str
    budget_tokens: int
    probability: float


def ingest_jsonl(path: str) -> Iterator[Document]:
    """Yield Documents from a JSONL file of {"lang", "text"} objects.

    Unknown fields are ignored. Any malformed line raises CorpusError with
    its line number; nothing is skipped silently.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected an object")
            for field in ("lang", "text"):
                if field not in obj:
                    raise CorpusError(f"line {lineno}: missing field {field}")
                if not isinstance(obj[field], str):
                    raise CorpusError(f"line {lineno}: field {field} must be a string")
            try:
                yield Document(lang=obj["lang"], text=obj["text"])
            except ValueError as e:
                raise CorpusError(f"line {lineno}: {e}") from None


def _nearest_rank(sorted_values: list[int], pct: float) -> int:
    # nearest-rank percentile: value at 1-based index ceil(pct * N)
    rank = max(1, math.ceil(pct * len(sorted_values)))
    return sorted_values[rank - 1]


def corpus_stats(docs: Iterable[Document], tok) -> tuple[dict[str, LanguageStats], LengthSummary]:
    """Per-language doc/token counts plus a global token-length summary.

    ``tok`` is any vocabulary object with an ``encode(text) -> list[int]``
    method. Percentiles are nearest-rank. An empty corpus yields an empty
    map and an all-zero summary.
    """
    per_lang: dict[str, LanguageStats] = {}
    lengths: list[int] = []
    for doc in docs:
        n_tokens = len(tok.encode(doc.text))
        stats = per_lang.setdefault(doc.lang, LanguageStats())
        stats.doc_count += 1
        stats.token_count += n_tokens
        lengths.append(n_tokens)
    if not lengths:
        return per_lang, LengthSummary(mean=0.0, p50=0, p90=0)
    lengths.sort()
    summary = LengthSummary(
        mean=sum(lengths) / len(lengths),
        p50=_nearest_rank(lengths, 0.5),
        p90=_nearest_rank(lengths, 0.9),
    )
    return per_lang, summary


def unimax_allocate(
    stats: Mapping[str, LanguageStats],
    total_budget: int,
    epoch_cap: float,
) -> list[Allocation]:
    """Split a token budget across languages with a per-language epoch cap.

    Each language's budget is capped at ``floor(epoch_cap * token_count)``.
    Languages are processed in ascending cap order; each receives
    ``min(cap, remaining_budget // remaining_count)``, so floor losses flow
    forward and the largest-cap language absorbs the final remainder. All
    arithmetic is integer; the result respects every cap and sums exactly
    to ``min(total_budget, sum_of_caps)``.
    """
    if total_budget < 0:
        raise ValueError("total_budget must be non-negative")
    if epoch_cap <= 0:
        raise ValueError("epoch_cap must be positive")
    langs = list(stats)
    caps = [int(math.floor(epoch_cap * stats[lang].token_count)) for lang in langs]
    budgets = [0] * len(langs)
    if sum(caps) <= total_budget:
        budgets = list(caps)
    else:
        order = sorted(range(len(langs)), key=lambda i: (caps[i], i))
        remaining = total_budget
        for rank, i in enumerate(order):
            count_left = len(order) - rank
            budgets[i] = min(caps[i], remaining // count_left)
            remaining -= budgets[i]
    total = sum(budgets)
    return [
        Allocation(
            lang=lang,
            budget_tokens=b,
            probability=(b / total) if total > 0 else 0.0,
        )
        for lang, b in zip(langs, budgets)
    ]


def _shuffle_seed(seed: int, lang: str, epoch: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{lang}:{epoch}".encode("utf-8"), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def sample_stream(
    corpus: Mapping[str, Sequence[Document]],
    alloc: Sequence[Allocation],
    seed: int,
) -> Iterator[Document]:
    """Endless document stream following the allocation probabilities.

    Each draw picks a language from the allocation, then emits the next
    document of that language in a seeded shuffled order, reshuffled per
    (seed, lang, epoch). Deterministic for identical inputs.
    """
    active = [a for a in alloc if a.probability > 0.0]
    if not active:
        raise ValueError("allocation has no language with positive probability")
    for a in active:
        if a.lang not in corpus or not corpus[a.lang]:
            raise ValueError(f"allocation references absent language {a.lang!r}")
    probs = np.array([a.probability for a in active], dtype=np.float64)
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    orders = {}
    cursors = {}
    epochs = {}
    for a in active:
        epochs[a.lang] = 0
        cursors[a.lang] = 0
        docs = corpus[a.lang]
        order_rng = np.random.default_rng(_shuffle_seed(seed, a.lang, 0))
        orders[a.lang] = order_rng.permutation(len(docs))
    while True:
        lang = active[int(rng.choice(len(active), p=probs))].lang
        docs = corpus[lang]
        if cursors[lang] >= len(docs):
            epochs[lang] += 1
            cursors[lang] = 0
            order_rng = np.random.default_rng(_shuffle_seed(seed, lang, epochs[lang]))
            orders[lang] = order_rng.permutation(len(docs))
        yield docs[int(orders[lang][cursors[lang]])]
        cursors[lang] += 1
