"""Deterministic training loop: adaptive-moment updates on an inverse-sqrt
learning-rate schedule, with sequential batch cycling and pad-to-longest
batch assembly. Examples in a batch are processed one by one in index order,
so runs are reproducible on any BLAS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from longspan import model as model_lib
from longspan.model import ModelConfig, Params
from longspan.vocab import EOS_ID, PAD_ID, Vocab

# full-scale recipe default; desk-scale runs use the small default below
FULL_SCALE_BATCH_SIZE = 256

# finetuning length presets: (max_input, max_target)
LENGTH_PRESETS = {
    "summarization": (4096, 512),
    "qa-4k": (4096, 910),
    "qa-8k": (8192, 910),
    "qa-16k": (16384, 910),
}

_BETA1 = 0.9
_BETA2 = 0.999
_ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100
    batch_size: int = 8
    learning_rate: float = 0.01
    warmup_steps: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.warmup_steps <= self.steps:
            raise ValueError("need 0 <= warmup_steps <= steps")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


def lr_at(step: int, config: TrainConfig) -> float:
    """Inverse-sqrt schedule, constant during warmup:
    learning_rate / sqrt(max(step, warmup_steps, 1))."""
    return config.learning_rate / math.sqrt(max(step, config.warmup_steps, 1))


@dataclass
class TrainResult:
    params: Params
    trace: list[tuple[int, float, float]]  # (step, loss, lr)


def _pad_batch(batch: list[tuple[list[int], list[int]]]) -> list[tuple[np.ndarray, np.ndarray]]:
    max_in = max(len(ex[0]) for ex in batch)
    max_tgt = max(len(ex[1]) for ex in batch)
    out = []
    for inputs, targets in batch:
        pi = np.full(max_in, PAD_ID, dtype=np.int64)
        pi[: len(inputs)] = inputs
        pt = np.full(max_tgt, PAD_ID, dtype=np.int64)
        pt[: len(targets)] = targets
        out.append((pi, pt))
    return out


def train(
    params: Params,
    model_config: ModelConfig,
    data: list[tuple[list[int], list[int]]],
    config: TrainConfig = TrainConfig(),
    *,
    checkpoint_dir: str | None = None,
) -> TrainResult:
    """Adam-optimize a copy of ``params`` over (inputs, targets) id pairs.

    The input dict is left untouched. Data cycles in order when shorter
    than steps * batch_size. The traced loss is the batch mean over non-pad
    target tokens, measured before the update. Raises TrainingDiverged on a
    non-finite loss.
    """
    if not data:
        raise ValueError("no training data")
    model_lib.validate_params(params, model_config)
    params = {name: value.copy() for name, value in params.items()}
    moment1 = {k: np.zeros_like(v) for k, v in params.items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.items()}
    trace: list[tuple[int, float, float]] = []
    names = sorted(params)
    for step in range(config.steps):
        batch = [data[(step * config.batch_size + j) % len(data)] for j in range(config.batch_size)]
        nll_total = 0.0
        token_total = 0
        grad_total: Params | None = None
        for inputs, targets in _pad_batch(batch):
            nll, count, grads = model_lib.forward_backward(params, model_config, inputs, targets)
            nll_total += nll
            token_total += count
            if grad_total is None:
                grad_total = grads
            else:
                for name in names:
                    grad_total[name] += grads[name]
        assert grad_total is not None
        batch_loss = nll_total / token_total
        lr = lr_at(step, config)
        trace.append((step, batch_loss, lr))
        if not math.isfinite(batch_loss):
            raise TrainingDiverged(step)
        t = step + 1
        bc1 = 1.0 - _BETA1 ** t
        bc2 = 1.0 - _BETA2 ** t
        for name in names:
            g = grad_total[name] / token_total
            moment1[name] = _BETA1 * moment1[name] + (1.0 - _BETA1) * g
            moment2[name] = _BETA2 * moment2[name] + (1.0 - _BETA2) * g * g
            mhat = moment1[name] / bc1
            vhat = moment2[name] / bc2
            params[name] -= lr * mhat / (np.sqrt(vhat) + _ADAM_EPS)
        if checkpoint_dir and config.checkpoint_every and t % config.checkpoint_every == 0:
            model_lib.save_checkpoint(params, Path(checkpoint_dir) / f"step_{t:06d}.ckpt")
    if checkpoint_dir:
        model_lib.save_checkpoint(params, Path(checkpoint_dir) / "final.ckpt")
    return TrainResult(params=params, trace=trace)


def encode_pairs(
    pairs: list[tuple[str, str]],
    tok: Vocab,
    lengths: str | tuple[int, int] = "summarization",
) -> list[tuple[list[int], list[int]]]:
    """Encode (source, target) text pairs under a length preset.

    Inputs truncate to max_input; targets truncate to max_target - 1 and
    get eos appended.
    """
    if isinstance(lengths, str):
        if lengths not in LENGTH_PRESETS:
            raise ValueError(f"unknown length preset {lengths!r}; choose from {sorted(LENGTH_PRESETS)}")
        max_input, max_target = LENGTH_PRESETS[lengths]
    else:
        max_input, max_target = lengths
    data = []
    for source, target in pairs:
        inputs = tok.encode(source)[:max_input]
        targets = tok.encode(target)[: max_target - 1] + [EOS_ID]
        if not inputs:
            raise ValueError("pair with empty source text")
        data.append((inputs, targets))
    return data


def finetune(
    params: Params,
    model_config: ModelConfig,
    pairs: list[tuple[str, str]],
    tok: Vocab,
    config: TrainConfig = TrainConfig(),
    *,
    lengths: str | tuple[int, int] = "summarization",
    checkpoint_dir: str | None = None,
) -> TrainResult:
    """Supervised training on text pairs; same loop as train()."""
    data = encode_pairs(pairs, tok, lengths)
    return train(params, model_config, data, config, checkpoint_dir=checkpoint_dir)


def write_loss_trace(trace: list[tuple[int, float, float]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tloss\tlr\n")
        for step, batch_loss, lr in trace:
            fh.write(f"{step}\t{batch_loss!r}\t{lr!r}\n")
