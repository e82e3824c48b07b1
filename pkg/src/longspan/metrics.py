"""Summarization and QA evaluation.

ROUGE here is the standard clipped n-gram overlap (rouge-1/2) and LCS-based
rouge-L. Tokenization is language aware: Chinese, Japanese, and Thai lack
whitespace word boundaries, so candidates and references are segmented into
vocabulary pieces when a piece table is available and into single characters
otherwise; every other language lowercases and splits on Unicode whitespace
and punctuation.

QA scoring follows the usual extractive convention: exact match on
normalized strings, token-multiset F1 maximized over the gold answers, and
the unanswerable case where an empty prediction against an empty gold
counts as fully correct.
"""

from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Literal, Sequence

from longspan.vocab import Vocab

CHAR_SEGMENTED_LANGS = frozenset({"zh", "ja", "th"})


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, n_candidate: int, n_reference: int) -> "PRF":
        p = overlap / n_candidate if n_candidate else 0.0
        r = overlap / n_reference if n_reference else 0.0
        f = 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)
        return cls(precision=p, recall=r, f1=f)


@dataclass(frozen=True)
class RougeScore:
    rouge1: PRF
    rouge2: PRF
    rougeL: PRF


def _is_punctuation(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize_for_rouge(text: str, lang: str, piece_vocab: Vocab | None = None) -> list[str]:
    """Language-aware tokens for overlap metrics.

    zh/ja/th: pieces from ``piece_vocab`` when given, else single characters
    (whitespace dropped). Other languages: lowercase, split on Unicode
    whitespace and punctuation, empty tokens dropped.
    """
    if lang in CHAR_SEGMENTED_LANGS:
        if piece_vocab is not None:
            return [seg for seg in piece_vocab.segment(text) if not seg.isspace()]
        return [ch for ch in text if not ch.isspace()]
    tokens: list[str] = []
    current: list[str] = []
    for ch in text.lower():
        if ch.isspace() or _is_punctuation(ch):
            if current:
                tokens.append("".join(current))
                current = []
        else:
            current.append(ch)
    if current:
        tokens.append("".join(current))
    return tokens


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> PRF:
    """Clipped n-gram overlap; empty token lists score zero."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngram_counts(candidate, n)
    ref = _ngram_counts(reference, n)
    overlap = sum((cand & ref).values())
    return PRF.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(row[j - 1], prev[j]))
        prev = row
    return prev[len(b)]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PRF:
    """Longest-common-subsequence precision/recall/F1."""
    lcs = _lcs_length(candidate, reference)
    return PRF.from_counts(lcs, len(candidate), len(reference))


def evaluate_summarization(
    candidates: Sequence[str],
    references: Sequence[str],
    lang: str,
    piece_vocab: Vocab | None = None,
) -> RougeScore:
    """Mean rouge-1/2/L over aligned candidate/reference pairs."""
    if len(candidates) != len(references):
        raise ValueError(
            f"candidate/reference count mismatch: {len(candidates)} vs {len(references)}"
        )
    if not candidates:
        raise ValueError("nothing to evaluate")
    sums = {"rouge1": [0.0, 0.0, 0.0], "rouge2": [0.0, 0.0, 0.0], "rougeL": [0.0, 0.0, 0.0]}
    for cand_text, ref_text in zip(candidates, references):
        cand = tokenize_for_rouge(cand_text, lang, piece_vocab)
        ref = tokenize_for_rouge(ref_text, lang, piece_vocab)
        for key, prf in (
            ("rouge1", rouge_n(cand, ref, 1)),
            ("rouge2", rouge_n(cand, ref, 2)),
            ("rougeL", rouge_l(cand, ref)),
        ):
            sums[key][0] += prf.precision
            sums[key][1] += prf.recall
            sums[key][2] += prf.f1
    n = len(candidates)
    mean = {k: PRF(v[0] / n, v[1] / n, v[2] / n) for k, v in sums.items()}
    return RougeScore(rouge1=mean["rouge1"], rouge2=mean["rouge2"], rougeL=mean["rougeL"])


def normalize_answer(text: str) -> str:
    """Lowercase, collapse whitespace, strip punctuation at token edges."""
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punctuation(raw[start]):
            start += 1
        while end > start and _is_punctuation(raw[end - 1]):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return " ".join(tokens)


def _token_f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(pred)
    r = overlap / len(gold)
    return 2.0 * p * r / (p + r)


def qa_em_f1(
    prediction: str,
    golds: Sequence[str],
    lang: str = "en",
    piece_vocab: Vocab | None = None,
) -> tuple[float, float]:
    """(exact_match, f1) against one or more gold answers.

    EM is 1 when the normalized prediction equals any normalized gold. F1
    is the max token-multiset F1 over golds. Empty gold with empty
    prediction scores 1 on both (the unanswerable convention).
    """
    if not golds:
        raise ValueError("need at least one gold answer")
    pred_norm = normalize_answer(prediction)
    pred_tokens = tokenize_for_rouge(prediction, lang, piece_vocab)
    em = 0.0
    f1 = 0.0
    for gold in golds:
        if normalize_answer(gold) == pred_norm:
            em = 1.0
        gold_tokens = tokenize_for_rouge(gold, lang, piece_vocab)
        f1 = max(f1, _token_f1(pred_tokens, gold_tokens))
    return em, f1


@dataclass(frozen=True)
class QaRecord:
    id: str
    question: str
    context: str
    answer_kind: Literal["span", "yes", "no", "null"]
    answer_text: str = ""

    def __post_init__(self) -> None:
        if self.answer_kind not in ("span", "yes", "no", "null"):
            raise ValueError(f"bad answer_kind {self.answer_kind!r}")
        if self.answer_kind == "span" and not self.answer_text:
            raise ValueError("span answers need answer_text")


def tydiqa_to_seq2seq(record: QaRecord) -> tuple[str, str]:
    """Reshape extractive QA into text-to-text: the input is the question
    and context joined by a blank line, the target is the answer text, a
    literal yes/no, or the word "unanswerable"."""
    source = f"{record.question}\n\n{record.context}"
    target = {
        "span": record.answer_text,
        "yes": "yes",
        "no": "no",
        "null": "unanswerable",
    }[record.answer_kind]
    return source, target


def split_train_dev(
    records: Sequence[QaRecord],
    ratio: float = 0.9,
    seed: int = 0,
) -> tuple[list[QaRecord], list[QaRecord]]:
    """Deterministic order-independent split on the record id.

    A record lands in train iff the seeded 64-bit hash of its id, scaled to
    [0, 1), falls below ``ratio``; dev gets the rest.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be in [0, 1]")
    train: list[QaRecord] = []
    dev: list[QaRecord] = []
    for record in records:
        digest = hashlib.blake2b(f"{seed}:{record.id}".encode("utf-8"), digest_size=8)
        unit = int.from_bytes(digest.digest(), "big") / 2.0 ** 64
        (train if unit < ratio else dev).append(record)
    return train, dev


def format_rouge_report(score: RougeScore) -> str:
    """TSV report; values are percentages with two decimals."""
    lines = ["metric\tprecision\trecall\tf1"]
    for name, prf in (("rouge1", score.rouge1), ("rouge2", score.rouge2), ("rougeL", score.rougeL)):
        lines.append(
            f"{name}\t{prf.precision * 100:.2f}\t{prf.recall * 100:.2f}\t{prf.f1 * 100:.2f}"
        )
    return "\n".join(lines) + "\n"


def format_qa_report(em: float, f1: float) -> str:
    return f"metric\tvalue\nem\t{em * 100:.2f}\nf1\t{f1 * 100:.2f}\n"
