"""Mixture-of-denoisers pretraining data generation.

Three denoiser families share one example format:

* R: span corruption at a moderate rate with short-to-medium mean spans,
* X: extreme spans (long mean span) at the same moderate rate,
* S: a prefix-to-suffix split (sequential denoising, no sentinels).

Corrupted inputs replace each span with one sentinel (descending ids,
sentinel 0 first); targets interleave sentinels with the removed spans and
end with eos. A feasibility gate rejects mixture members whose expected
target length cannot fit the target budget, which is why high corruption
rates are refused when inputs are much longer than targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from longspan.corpus import Document
from longspan.vocab import NUM_SENTINELS, Vocab

KINDS = ("R", "S", "X")


@dataclass(frozen=True)
class DenoiserSpec:
    """One mixture member.

    For R/X, ``corruption_rate`` is the fraction of tokens corrupted and
    ``mean_span`` the requested mean span length. For S, ``corruption_rate``
    holds the target fraction of the split and ``mean_span`` is unused.
    """

    kind: str
    mean_span: float
    corruption_rate: float
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 < self.corruption_rate <= 1.0:
            raise ValueError(f"corruption_rate must be in (0, 1], got {self.corruption_rate}")
        if self.kind != "S" and self.mean_span <= 0:
            raise ValueError(f"mean_span must be positive for {self.kind}, got {self.mean_span}")
        if self.weight <= 0:
            raise ValueError(f"weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class LengthBudget:
    max_input: int = 4096
    max_target: int = 910

    def __post_init__(self) -> None:
        if self.max_input < 1 or self.max_target < 1:
            raise ValueError("budget lengths must be positive")


@dataclass(frozen=True)
class PretrainExample:
    inputs: list[int]
    targets: list[int]
    denoiser_kind: str


class Feasibility(NamedTuple):
    ok: bool
    reason: str | None = None


def default_mixture() -> list[DenoiserSpec]:
    """Equal-weight default mixture; all span corruption runs at rate 0.15.

    Rates high enough to overflow the target budget (such as 0.5 under the
    default 4096/910 budget) are deliberately absent; check_feasibility
    enforces the same restriction for custom mixtures.
    """
    return [
        DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=0.15),
        DenoiserSpec(kind="R", mean_span=8.0, corruption_rate=0.15),
        DenoiserSpec(kind="X", mean_span=32.0, corruption_rate=0.15),
        DenoiserSpec(kind="X", mean_span=64.0, corruption_rate=0.15),
        DenoiserSpec(kind="S", mean_span=0.0, corruption_rate=0.25),
    ]


def check_feasibility(spec: DenoiserSpec, budget: LengthBudget = LengthBudget()) -> Feasibility:
    """Decide whether a denoiser spec fits the length budget.

    For R/X the expected target is corrupted tokens plus one sentinel per
    expected span plus eos, evaluated at the full input budget. S targets
    are clamped to the budget by construction, so S only fails when the
    target budget cannot hold a single token plus eos.
    """
    if spec.kind == "S":
        if budget.max_target < 2:
            return Feasibility(
                ok=False,
                reason=f"target budget {budget.max_target} cannot hold a suffix token plus eos",
            )
        return Feasibility(ok=True)
    corrupted = spec.corruption_rate * budget.max_input
    n_spans = math.ceil(corrupted / spec.mean_span)
    expected_target = corrupted + n_spans + 1
    if expected_target > budget.max_target:
        return Feasibility(
            ok=False,
            reason=(
                f"corrupted tokens {corrupted:.0f} plus {n_spans + 1} sentinel/eos tokens "
                f"exceed target budget {budget.max_target}"
            ),
        )
    return Feasibility(ok=True)


def _round(x: float) -> int:
    # round-half-to-even, matching Python's round on floats
    return int(round(x))


def _composition(total: int, parts: int, min_part: int, rng: np.random.Generator) -> list[int]:
    """Seeded uniform composition of ``total`` into ``parts`` cells >= min_part."""
    extra = total - parts * min_part
    if extra < 0:
        raise ValueError(f"cannot split {total} into {parts} parts of at least {min_part}")
    if parts == 1:
        return [total]
    # stars and bars: place parts-1 dividers among extra stars
    slots = extra + parts - 1
    cuts = np.sort(rng.choice(slots, size=parts - 1, replace=False))
    cells = []
    prev = -1
    for c in cuts:
        cells.append(int(c - prev - 1))
        prev = int(c)
    cells.append(int(slots - prev - 1))
    return [c + min_part for c in cells]


def span_corrupt(
    tokens: list[int],
    mean_span: float,
    rate: float,
    rng: np.random.Generator,
    vocab: Vocab,
) -> tuple[list[int], list[int]]:
    """Replace seeded random spans with sentinels.

    The corrupted token count is ``max(1, round(len * rate))`` spread over
    ``max(1, round(len * rate / mean_span))`` spans of length >= 1, placed
    non-adjacently (spans are separated by at least one kept token). Inputs
    carry sentinels in descending-id order; targets pair each sentinel with
    its span and end with eos.
    """
    length = len(tokens)
    if length == 0:
        raise ValueError("cannot corrupt an empty sequence")
    n_corrupt = min(length, max(1, _round(length * rate)))
    n_spans = max(1, _round(length * rate / mean_span))
    # need spans >= 1 token each and >= 1 kept token between spans
    n_spans = min(n_spans, n_corrupt, length - n_corrupt + 1)
    if n_spans > NUM_SENTINELS:
        raise ValueError(f"{n_spans} spans exceed the {NUM_SENTINELS} available sentinels")
    span_lens = _composition(n_corrupt, n_spans, min_part=1, rng=rng)
    n_kept = length - n_corrupt
    # inner gaps need >= 1 kept token (non-adjacency); outer gaps may be 0
    gaps = _composition(n_kept - (n_spans - 1), n_spans + 1, min_part=0, rng=rng)
    for i in range(1, n_spans):
        gaps[i] += 1
    inputs: list[int] = []
    targets: list[int] = []
    pos = 0
    for s in range(n_spans):
        inputs.extend(tokens[pos : pos + gaps[s]])
        pos += gaps[s]
        sentinel = vocab.sentinel_id(s)
        inputs.append(sentinel)
        targets.append(sentinel)
        targets.extend(tokens[pos : pos + span_lens[s]])
        pos += span_lens[s]
    inputs.extend(tokens[pos:])
    targets.append(vocab.eos_id)
    return inputs, targets


def prefix_lm_split(
    tokens: list[int],
    target_fraction: float,
    budget: LengthBudget,
    vocab: Vocab,
) -> tuple[list[int], list[int]]:
    """Split a sequence into (prefix, suffix + eos).

    Suffix length is ``clamp(round(target_fraction * len), 1, len - 1)``,
    further capped so the target including eos fits the budget.
    """
    length = len(tokens)
    if length < 2:
        raise ValueError("need at least 2 tokens to split into prefix and suffix")
    n_target = _round(target_fraction * length)
    n_target = max(1, min(n_target, length - 1, budget.max_target - 1))
    inputs = list(tokens[: length - n_target])
    targets = list(tokens[length - n_target :]) + [vocab.eos_id]
    return inputs, targets


def make_pretrain_example(
    doc: Document,
    mixture: list[DenoiserSpec],
    tok: Vocab,
    budget: LengthBudget,
    rng: np.random.Generator,
    mode_prompts: bool = True,
) -> PretrainExample:
    """Draw a denoiser by weight and corrupt one document.

    The raw encoding is truncated so the finished input (including the mode
    prompt when enabled) fits ``budget.max_input``. Raises if any mixture
    member is infeasible, before any sampling happens.
    """
    if not mixture:
        raise ValueError("mixture is empty")
    for spec in mixture:
        feasibility = check_feasibility(spec, budget)
        if not feasibility.ok:
            raise ValueError(f"infeasible denoiser {spec.kind}: {feasibility.reason}")
    weights = np.array([s.weight for s in mixture], dtype=np.float64)
    spec = mixture[int(rng.choice(len(mixture), p=weights / weights.sum()))]
    ids = tok.encode(doc.text)
    if not ids:
        raise ValueError("document encodes to zero tokens")
    limit = budget.max_input - (1 if mode_prompts else 0)
    ids = ids[:limit]
    if spec.kind == "S":
        inputs, targets = prefix_lm_split(ids, spec.corruption_rate, budget, tok)
    else:
        inputs, targets = span_corrupt(ids, spec.mean_span, spec.corruption_rate, rng, tok)
    if mode_prompts:
        inputs = [tok.mode_ids[spec.kind]] + inputs
    if len(inputs) > budget.max_input or len(targets) > budget.max_target:
        raise ValueError(
            f"example exceeds budget: {len(inputs)}/{budget.max_input} input, "
            f"{len(targets)}/{budget.max_target} target"
        )
    return PretrainExample(inputs=inputs, targets=targets, denoiser_kind=spec.kind)


def splice_reconstruct(inputs: list[int], targets: list[int], vocab: Vocab) -> list[int]:
    """Invert span corruption: substitute each input sentinel with its span.

    A leading mode prompt on the input is stripped. Raises on sentinel
    mismatch in either direction. With no sentinels and an empty target the
    input is returned unchanged.
    """
    if inputs and inputs[0] in vocab.mode_ids.values():
        inputs = inputs[1:]
    body = list(targets)
    if body and body[-1] == vocab.eos_id:
        body = body[:-1]
    spans: dict[int, list[int]] = {}
    current: list[int] | None = None
    for t in body:
        if vocab.is_sentinel(t):
            if t in spans:
                raise ValueError(f"sentinel {vocab.sentinel_index(t)} repeated in target")
            current = spans.setdefault(t, [])
        else:
            if current is None:
                raise ValueError("target does not start with a sentinel")
            current.append(t)
    out: list[int] = []
    used: set[int] = set()
    for t in inputs:
        if vocab.is_sentinel(t):
            if t not in spans:
                raise ValueError(f"input sentinel {vocab.sentinel_index(t)} missing from target")
            out.extend(spans[t])
            used.add(t)
        else:
            out.append(t)
    unused = set(spans) - used
    if unused:
        k = min(vocab.sentinel_index(t) for t in unused)
        raise ValueError(f"target sentinel {k} missing from input")
    return out
