import numpy as np
import pytest

from longspan.corpus import Document
from longspan.denoise import (
    DenoiserSpec,
    LengthBudget,
    check_feasibility,
    default_mixture,
    make_pretrain_example,
    prefix_lm_split,
    span_corrupt,
    splice_reconstruct,
)
from longspan.vocab import byte_vocab

TOK = byte_vocab()
BUDGET = LengthBudget(max_input=4096, max_target=910)


def byte_ids(n: int) -> list[int]:
    # stay inside the plain byte range so spans can't collide with sentinels
    return [6 + (i % 250) for i in range(n)]


# --- specs and mixture --------------------------------------------------


def test_default_mixture_members():
    mix = default_mixture()
    assert [(s.kind, s.mean_span, s.corruption_rate) for s in mix] == [
        ("R", 3.0, 0.15),
        ("R", 8.0, 0.15),
        ("X", 32.0, 0.15),
        ("X", 64.0, 0.15),
        ("S", 0.0, 0.25),
    ]
    assert all(s.weight == 1.0 for s in mix)


def test_spec_validation():
    with pytest.raises(ValueError):
        DenoiserSpec(kind="Q", mean_span=3.0, corruption_rate=0.15)
    with pytest.raises(ValueError):
        DenoiserSpec(kind="R", mean_span=0.0, corruption_rate=0.15)
    with pytest.raises(ValueError):
        DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=0.0)
    with pytest.raises(ValueError):
        DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=1.5)
    with pytest.raises(ValueError):
        DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=0.15, weight=0.0)


def test_default_mixture_feasible_under_default_budget():
    for spec in default_mixture():
        result = check_feasibility(spec, BUDGET)
        assert result.ok, (spec, result.reason)


@pytest.mark.parametrize("mean_span", [3.0, 8.0, 32.0, 64.0])
@pytest.mark.parametrize("kind", ["R", "X"])
def test_half_rate_specs_rejected(kind, mean_span):
    spec = DenoiserSpec(kind=kind, mean_span=mean_span, corruption_rate=0.5)
    result = check_feasibility(spec, BUDGET)
    assert not result.ok
    assert "2048" in result.reason
    assert "910" in result.reason


def test_feasibility_boundary():
    # corrupted + spans + eos exactly at the budget is still feasible
    budget = LengthBudget(max_input=100, max_target=27)
    spec = DenoiserSpec(kind="R", mean_span=5.0, corruption_rate=0.2)
    # 20 corrupted + 4 sentinels + 1 eos = 25 <= 27
    assert check_feasibility(spec, budget).ok
    assert not check_feasibility(spec, LengthBudget(100, 24)).ok


def test_prefix_feasibility_only_needs_two_target_slots():
    spec = DenoiserSpec(kind="S", mean_span=0.0, corruption_rate=0.25)
    assert check_feasibility(spec, LengthBudget(4096, 2)).ok
    assert not check_feasibility(spec, LengthBudget(4096, 1)).ok


# --- span corruption ----------------------------------------------------


def test_span_corrupt_frozen_trace():
    # committed trace: 20 tokens, mean span 3, rate 0.15, seed 7
    rng = np.random.default_rng(7)
    inputs, targets = span_corrupt(list(range(6, 26)), 3.0, 0.15, rng, TOK)
    assert inputs == [6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 361]
    assert targets == [361, 23, 24, 25, 1]


def test_span_corrupt_counts():
    rng = np.random.default_rng(0)
    seq = byte_ids(200)
    inputs, targets = span_corrupt(seq, 3.0, 0.15, rng, TOK)
    n_sent_in = sum(TOK.is_sentinel(t) for t in inputs)
    n_sent_tgt = sum(TOK.is_sentinel(t) for t in targets)
    assert n_sent_in == n_sent_tgt == round(200 * 0.15 / 3.0)
    # corrupted token count: targets minus sentinels minus eos
    assert len(targets) - n_sent_tgt - 1 == round(200 * 0.15)
    # kept token count
    assert len(inputs) - n_sent_in == 200 - round(200 * 0.15)


def test_span_corrupt_sentinels_descend():
    rng = np.random.default_rng(1)
    inputs, targets = span_corrupt(byte_ids(300), 8.0, 0.15, rng, TOK)
    seen = [TOK.sentinel_index(t) for t in inputs if TOK.is_sentinel(t)]
    assert seen == list(range(len(seen)))
    assert targets[-1] == TOK.eos_id


def test_span_corrupt_spans_non_adjacent():
    rng = np.random.default_rng(2)
    for _ in range(50):
        inputs, _ = span_corrupt(byte_ids(64), 3.0, 0.3, rng, TOK)
        for a, b in zip(inputs, inputs[1:]):
            assert not (TOK.is_sentinel(a) and TOK.is_sentinel(b))


def test_span_corrupt_single_token():
    rng = np.random.default_rng(3)
    inputs, targets = span_corrupt([100], 3.0, 0.15, rng, TOK)
    assert inputs == [TOK.sentinel_id(0)]
    assert targets == [TOK.sentinel_id(0), 100, TOK.eos_id]


def test_span_corrupt_rejects_empty():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        span_corrupt([], 3.0, 0.15, rng, TOK)


def test_span_corrupt_full_rate():
    rng = np.random.default_rng(4)
    seq = byte_ids(10)
    inputs, targets = span_corrupt(seq, 3.0, 1.0, rng, TOK)
    # everything corrupted collapses into one span (no kept separators)
    assert inputs == [TOK.sentinel_id(0)]
    assert targets == [TOK.sentinel_id(0), *seq, TOK.eos_id]


def test_round_half_even_span_count():
    # 50 tokens, rate 0.15 -> 7.5 corrupted rounds to 8 (half-even)
    rng = np.random.default_rng(5)
    _, targets = span_corrupt(byte_ids(50), 3.0, 0.15, rng, TOK)
    n_sent = sum(TOK.is_sentinel(t) for t in targets)
    assert len(targets) - n_sent - 1 == 8


@pytest.mark.parametrize("mean_span", [3.0, 8.0, 32.0, 64.0])
def test_round_trip_many_lengths(mean_span):
    rng = np.random.default_rng(9)
    for n in [1, 2, 3, 5, 8, 13, 40, 100, 333, 512]:
        seq = byte_ids(n)
        inputs, targets = span_corrupt(seq, mean_span, 0.15, rng, TOK)
        assert splice_reconstruct(inputs, targets, TOK) == seq


def test_span_positions_vary_with_seed():
    a = span_corrupt(byte_ids(100), 3.0, 0.15, np.random.default_rng(0), TOK)
    b = span_corrupt(byte_ids(100), 3.0, 0.15, np.random.default_rng(1), TOK)
    assert a != b
    c = span_corrupt(byte_ids(100), 3.0, 0.15, np.random.default_rng(0), TOK)
    assert a == c


# --- prefix split -------------------------------------------------------


def test_prefix_split_basic():
    seq = byte_ids(20)
    inputs, targets = prefix_lm_split(seq, 0.25, BUDGET, TOK)
    assert inputs == seq[:15]
    assert targets == seq[15:] + [TOK.eos_id]


def test_prefix_split_clamps_to_budget():
    seq = byte_ids(100)
    inputs, targets = prefix_lm_split(seq, 0.9, LengthBudget(4096, 11), TOK)
    assert len(targets) == 11
    assert inputs + targets[:-1] == seq


def test_prefix_split_always_keeps_both_sides():
    seq = byte_ids(2)
    inputs, targets = prefix_lm_split(seq, 0.99, BUDGET, TOK)
    assert len(inputs) >= 1
    assert len(targets) >= 2
    inputs, targets = prefix_lm_split(seq, 0.01, BUDGET, TOK)
    assert len(targets) >= 2


def test_prefix_split_rejects_short():
    with pytest.raises(ValueError):
        prefix_lm_split([100], 0.25, BUDGET, TOK)


# --- full example assembly ----------------------------------------------


def doc_of(n_words: int) -> Document:
    return Document(lang="en", text=" ".join(f"w{i}" for i in range(n_words)))


def test_make_example_mode_prompt_leads():
    rng = np.random.default_rng(0)
    ex = make_pretrain_example(doc_of(100), default_mixture(), TOK, BUDGET, rng)
    assert ex.inputs[0] == TOK.mode_ids[ex.denoiser_kind]
    assert len(ex.inputs) <= BUDGET.max_input
    assert len(ex.targets) <= BUDGET.max_target
    assert ex.targets[-1] == TOK.eos_id


def test_make_example_without_mode_prompt():
    rng = np.random.default_rng(0)
    ex = make_pretrain_example(
        doc_of(100), default_mixture(), TOK, BUDGET, rng, mode_prompts=False
    )
    assert ex.inputs[0] not in TOK.mode_ids.values()


def test_make_example_truncates_long_document():
    rng = np.random.default_rng(0)
    budget = LengthBudget(max_input=64, max_target=32)
    mix = [DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=0.15)]
    ex = make_pretrain_example(doc_of(500), mix, TOK, budget, rng)
    assert len(ex.inputs) <= 64
    assert len(ex.targets) <= 32


def test_make_example_draw_follows_weights():
    rng = np.random.default_rng(0)
    mix = [
        DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=0.15, weight=1.0),
        DenoiserSpec(kind="S", mean_span=0.0, corruption_rate=0.25, weight=3.0),
    ]
    kinds = [
        make_pretrain_example(doc_of(40), mix, TOK, BUDGET, rng).denoiser_kind
        for _ in range(600)
    ]
    frac_s = kinds.count("S") / len(kinds)
    assert 0.68 <= frac_s <= 0.82


def test_make_example_rejects_infeasible_mixture_before_sampling():
    rng = np.random.default_rng(0)
    mix = default_mixture() + [
        DenoiserSpec(kind="X", mean_span=64.0, corruption_rate=0.5)
    ]
    with pytest.raises(ValueError, match="infeasible"):
        make_pretrain_example(doc_of(40), mix, TOK, BUDGET, rng)


def test_make_example_round_trip_for_span_kinds():
    rng = np.random.default_rng(6)
    mix = [s for s in default_mixture() if s.kind != "S"]
    doc = doc_of(80)
    for _ in range(20):
        ex = make_pretrain_example(doc, mix, TOK, BUDGET, rng)
        assert splice_reconstruct(ex.inputs, ex.targets, TOK) == TOK.encode(doc.text)


# --- reconstruction error paths ------------------------------------------


def test_splice_strips_mode_prompt():
    inputs = [TOK.mode_ids["R"], 10, TOK.sentinel_id(0), 12]
    targets = [TOK.sentinel_id(0), 11, TOK.eos_id]
    assert splice_reconstruct(inputs, targets, TOK) == [10, 11, 12]


def test_splice_rejects_missing_sentinel():
    inputs = [10, TOK.sentinel_id(0), 12]
    targets = [TOK.sentinel_id(1), 11, TOK.eos_id]
    with pytest.raises(ValueError):
        splice_reconstruct(inputs, targets, TOK)


def test_splice_rejects_unused_target_sentinel():
    inputs = [10, TOK.sentinel_id(0), 12]
    targets = [TOK.sentinel_id(0), 11, TOK.sentinel_id(1), 13, TOK.eos_id]
    with pytest.raises(ValueError):
        splice_reconstruct(inputs, targets, TOK)


def test_splice_rejects_target_not_starting_with_sentinel():
    inputs = [10, TOK.sentinel_id(0), 12]
    targets = [11, TOK.sentinel_id(0), TOK.eos_id]
    with pytest.raises(ValueError):
        splice_reconstruct(inputs, targets, TOK)
