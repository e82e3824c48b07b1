"""Corrupt text with each denoiser and reconstruct it.

Span corruption replaces random spans with numbered sentinels and asks
the model to emit the missing spans; the prefix variant just splits the
sequence. Splicing targets back into inputs must reproduce the original
text exactly, and rates that cannot fit the decoder budget are refused
up front.
"""

import numpy as np

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

tok = byte_vocab()
text = "the quick brown fox jumps over the lazy dog and naps in the sun"
tokens = tok.encode(text)
print(f"original ({len(tokens)} tokens): {text!r}")

for spec in default_mixture():
    rng = np.random.default_rng(4)
    if spec.kind == "S":
        inputs, targets = prefix_lm_split(tokens, spec.corruption_rate, LengthBudget(), tok)
    else:
        inputs, targets = span_corrupt(tokens, spec.mean_span, spec.corruption_rate, rng, tok)
    label = f"{spec.kind}(span={spec.mean_span:g}, rate={spec.corruption_rate:g})"
    print(f"\n{label}")
    print(f"  inputs:  {tok.decode(inputs)!r}")
    print(f"  targets: {tok.decode(targets)!r}")
    if spec.kind != "S":
        restored = splice_reconstruct(inputs, targets, tok)
        print(f"  reconstructs exactly: {restored == tokens}")

print("\nfeasibility under the default 4096-in / 910-out budget:")
for rate in (0.15, 0.5):
    spec = DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=rate)
    result = check_feasibility(spec)
    verdict = "ok" if result.ok else f"refused: {result.reason}"
    print(f"  R(3) at rate {rate}: {verdict}")

# the full pipeline: draw a denoiser, apply it, tag with a mode prompt
doc = Document("en", text)
example = make_pretrain_example(doc, default_mixture(), tok, LengthBudget(), np.random.default_rng(0))
print(f"\nsampled pretraining example ({example.denoiser_kind} denoiser):")
print(f"  inputs:  {tok.decode(example.inputs)!r}")
print(f"  targets: {tok.decode(example.targets)!r}")
