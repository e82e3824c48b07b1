"""Finetune a tiny model on three text pairs, decode, and score.

The desk-scale preset fits in a few seconds of numpy, which is enough to
memorize a toy mapping end to end: encode pairs, run the Adam loop,
greedy-decode, then report overlap and QA metrics on the decoded text.
"""

import numpy as np

from longspan.metrics import (
    evaluate_summarization,
    format_qa_report,
    format_rouge_report,
    qa_em_f1,
)
from longspan.model import generate, init_params, preset
from longspan.trainer import TrainConfig, encode_pairs, finetune
from longspan.vocab import byte_vocab

tok = byte_vocab()
pairs = [
    ("long article about felines and their many habits", "sleepy cats"),
    ("long article about canines and loyal companionship", "loyal dogs"),
    ("long article about parrots that mimic human speech", "loud parrots"),
]

cfg = preset("tiny")
params = init_params(cfg, seed=0)
tc = TrainConfig(steps=250, batch_size=3, learning_rate=0.05, warmup_steps=25)
print(f"training {sum(p.size for p in params.values())} parameters "
      f"for {tc.steps} steps...")
result = finetune(params, cfg, pairs, tok, tc, lengths="summarization")
print(f"loss: {result.trace[0][1]:.4f} (step 0) -> {result.trace[-1][1]:.6f} (final)")

encoded = encode_pairs(pairs, tok, "summarization")
predictions = []
for (source, target), (inputs, _) in zip(pairs, encoded):
    ids = generate(result.params, cfg, inputs, max_len=16)
    decoded = tok.decode(ids)
    predictions.append(decoded)
    print(f"  {source[:28]!r}... -> {decoded!r} (want {target!r})")

references = [t for _, t in pairs]
print("\nsummarization scores:")
print(format_rouge_report(evaluate_summarization(predictions, references, "en")))

ems, f1s = zip(*(qa_em_f1(p, [r]) for p, r in zip(predictions, references)))
print("treating the same outputs as QA answers:")
print(format_qa_report(float(np.mean(ems)), float(np.mean(f1s))))
