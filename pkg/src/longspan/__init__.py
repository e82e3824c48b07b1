"""Long-input sparse-attention seq2seq toolkit.

Pieces: multilingual corpus ingestion and budget-capped sampling, byte/piece
vocabularies, a mixture-of-denoisers pretraining data generator, banded
attention with per-block global tokens, a numpy encoder-decoder with
hand-written backprop, a small trainer, and summarization/QA metrics.
"""

from longspan import attention, corpus, denoise, metrics, model, trainer, vocab

__version__ = "0.1.0"

__all__ = [
    "attention",
    "corpus",
    "denoise",
    "metrics",
    "model",
    "trainer",
    "vocab",
    "__version__",
]
