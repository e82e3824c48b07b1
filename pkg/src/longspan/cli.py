"""Command-line pipeline: stats, pretrain-data, train, finetune, generate,
eval.

Settings resolve in three layers: built-in defaults, then an optional
``key=value`` config file, then ``--set key=value`` flags. Unknown keys are
rejected. Every command writes a ``manifest.json`` with the effective
settings into its ``--out`` directory, and writes nothing anywhere else
(reports go to stdout).

Exit codes: 0 success, 1 internal error, 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

import longspan
from longspan import corpus as corpus_lib
from longspan import denoise as denoise_lib
from longspan import metrics as metrics_lib
from longspan import model as model_lib
from longspan import trainer as trainer_lib
from longspan import vocab as vocab_lib
from longspan.attention import AttentionConfig

DEFAULTS: dict[str, object] = {
    "corpus.epoch_cap": 2.0,
    "corpus.budget": 20000,
    "denoise.max_input": 4096,
    "denoise.max_target": 910,
    "denoise.rate": 0.15,
    "denoise.s_fraction": 0.25,
    "denoise.mode_prompts": True,
    "model.preset": "tiny",
    "model.local_radius": 127,
    "model.block_size": 16,
    "model.d_model": 0,  # 0 keeps the preset value
    "model.n_enc_layers": 0,
    "model.n_dec_layers": 0,
    "model.n_heads": 0,
    "model.head_dim": 0,
    "model.d_ff": 0,
    "train.steps": 100,
    "train.batch_size": 8,
    "train.learning_rate": 0.01,
    "train.warmup_steps": 0,
    "train.checkpoint_every": 0,
    "finetune.lengths": "summarization",
    "generate.max_len": 64,
    "eval.lang": "en",
}


class UsageError(Exception):
    """Bad input or configuration; maps to exit code 2."""


def _coerce(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None


def _load_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve_config(config_path: str | None, sets: list[str]) -> dict[str, object]:
    cfg = dict(DEFAULTS)
    pairs: list[tuple[str, str]] = []
    if config_path:
        pairs.extend(_load_config_file(config_path).items())
    for item in sets:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value.strip()))
    for key, value in pairs:
        if key not in cfg:
            raise UsageError(f"unknown config key: {key}")
        cfg[key] = _coerce(key, value)
    return cfg


def version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=10,
        )
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except OSError:
        pass
    return f"v{longspan.__version__}"


def _out_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path("runs") / f"{args.command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, cfg: dict[str, object], extra: dict | None = None) -> None:
    manifest = {
        "command": args.command,
        "version": version_string(),
        "seed": args.seed,
        "config": cfg,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_vocab(args) -> vocab_lib.Vocab:
    if getattr(args, "vocab", None):
        try:
            return vocab_lib.load_piece_vocab(args.vocab)
        except (OSError, ValueError) as e:
            raise UsageError(f"bad piece vocabulary: {e}") from None
    return vocab_lib.byte_vocab()


def _read_docs(path: str) -> list[corpus_lib.Document]:
    try:
        return list(corpus_lib.ingest_jsonl(path))
    except OSError as e:
        raise UsageError(str(e)) from None
    except corpus_lib.CorpusError as e:
        raise UsageError(f"{path}: {e}") from None


def _read_jsonl(path: str, fields: dict[str, type]) -> list[dict]:
    rows = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise UsageError(str(e)) from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as e:
                raise UsageError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            for name, kind in fields.items():
                if name not in obj:
                    raise UsageError(f"{path}:{lineno}: missing field {name}")
                if not isinstance(obj[name], kind):
                    raise UsageError(f"{path}:{lineno}: field {name} must be {kind.__name__}")
            rows.append(obj)
    return rows


def _model_config(cfg: dict[str, object], vocab_size: int) -> model_lib.ModelConfig:
    att = AttentionConfig(
        local_radius=int(cfg["model.local_radius"]),
        block_size=int(cfg["model.block_size"]),
    )
    try:
        mc = model_lib.preset(str(cfg["model.preset"]), vocab_size=vocab_size, attention=att)
        overrides = {}
        for name in ("d_model", "n_enc_layers", "n_dec_layers", "n_heads", "head_dim", "d_ff"):
            value = int(cfg[f"model.{name}"])
            if value:
                overrides[name] = value
        if overrides:
            mc = replace(mc, **overrides)
    except ValueError as e:
        raise UsageError(str(e)) from None
    return mc


def _save_model_config(mc: model_lib.ModelConfig, out: Path) -> None:
    with open(out / "model_config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(mc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_model_config(path: Path) -> model_lib.ModelConfig:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        att = AttentionConfig(**obj.pop("attention"))
        return model_lib.ModelConfig(attention=att, **obj)
    except (OSError, ValueError, TypeError, KeyError) as e:
        raise UsageError(f"cannot load model config {path}: {e}") from None


def _mixture(cfg: dict[str, object]) -> list[denoise_lib.DenoiserSpec]:
    rate = float(cfg["denoise.rate"])
    return [
        denoise_lib.DenoiserSpec(kind="R", mean_span=3.0, corruption_rate=rate),
        denoise_lib.DenoiserSpec(kind="R", mean_span=8.0, corruption_rate=rate),
        denoise_lib.DenoiserSpec(kind="X", mean_span=32.0, corruption_rate=rate),
        denoise_lib.DenoiserSpec(kind="X", mean_span=64.0, corruption_rate=rate),
        denoise_lib.DenoiserSpec(
            kind="S", mean_span=0.0, corruption_rate=float(cfg["denoise.s_fraction"])
        ),
    ]


def cmd_stats(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    tok = _load_vocab(args)
    docs = _read_docs(args.corpus)
    per_lang, summary = corpus_lib.corpus_stats(docs, tok)
    lines = ["lang\tdoc_count\ttoken_count"]
    for lang in sorted(per_lang):
        stats = per_lang[lang]
        lines.append(f"{lang}\t{stats.doc_count}\t{stats.token_count}")
    lines.append(f"# length_summary\tmean={summary.mean:.2f}\tp50={summary.p50}\tp90={summary.p90}")
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    (out / "stats.tsv").write_text(report, encoding="utf-8")
    _write_manifest(out, args, cfg, {"corpus": args.corpus})
    return 0


def cmd_pretrain_data(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    tok = _load_vocab(args)
    docs = _read_docs(args.corpus)
    if not docs:
        raise UsageError("corpus is empty")
    budget = denoise_lib.LengthBudget(
        max_input=int(cfg["denoise.max_input"]),
        max_target=int(cfg["denoise.max_target"]),
    )
    mixture = _mixture(cfg)
    for spec in mixture:
        feasibility = denoise_lib.check_feasibility(spec, budget)
        if not feasibility.ok:
            raise UsageError(
                f"infeasible denoiser {spec.kind}(mean_span={spec.mean_span:g}, "
                f"rate={spec.corruption_rate:g}): {feasibility.reason}"
            )
    per_lang, _ = corpus_lib.corpus_stats(docs, tok)
    token_budget = int(args.budget if args.budget is not None else cfg["corpus.budget"])
    alloc = corpus_lib.unimax_allocate(per_lang, token_budget, float(cfg["corpus.epoch_cap"]))
    by_lang: dict[str, list[corpus_lib.Document]] = {}
    for doc in docs:
        by_lang.setdefault(doc.lang, []).append(doc)
    remaining = {a.lang: a.budget_tokens for a in alloc if a.budget_tokens > 0}
    if not remaining:
        raise UsageError("allocation is empty; increase --budget or corpus.epoch_cap")
    rng = np.random.default_rng(args.seed)
    stream = corpus_lib.sample_stream(by_lang, alloc, args.seed)
    n_written = 0
    max_draws = 1_000_000
    with open(out / "examples.jsonl", "w", encoding="utf-8") as fh:
        for _ in range(max_draws):
            if not remaining:
                break
            doc = next(stream)
            if doc.lang not in remaining:
                continue
            example = denoise_lib.make_pretrain_example(
                doc, mixture, tok, budget, rng,
                mode_prompts=bool(cfg["denoise.mode_prompts"]),
            )
            fh.write(json.dumps({
                "inputs": example.inputs,
                "targets": example.targets,
                "denoiser": example.denoiser_kind,
            }) + "\n")
            n_written += 1
            remaining[doc.lang] -= len(tok.encode(doc.text))
            if remaining[doc.lang] <= 0:
                del remaining[doc.lang]
        else:
            raise RuntimeError("sampling did not exhaust the budget; corpus too small?")
    _write_manifest(out, args, cfg, {
        "corpus": args.corpus,
        "token_budget": token_budget,
        "examples_written": n_written,
        "allocation": [asdict(a) for a in alloc],
        "mixture": [asdict(s) for s in mixture],
    })
    return 0


def _read_examples(path: str) -> list[tuple[list[int], list[int]]]:
    rows = _read_jsonl(path, {"inputs": list, "targets": list})
    data = []
    for row in rows:
        data.append(([int(t) for t in row["inputs"]], [int(t) for t in row["targets"]]))
    if not data:
        raise UsageError(f"{path}: no examples")
    return data


def _train_config(cfg: dict[str, object]) -> trainer_lib.TrainConfig:
    try:
        return trainer_lib.TrainConfig(
            steps=int(cfg["train.steps"]),
            batch_size=int(cfg["train.batch_size"]),
            learning_rate=float(cfg["train.learning_rate"]),
            warmup_steps=int(cfg["train.warmup_steps"]),
            checkpoint_every=int(cfg["train.checkpoint_every"]),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _init_params(args, mc: model_lib.ModelConfig) -> model_lib.Params:
    if getattr(args, "init", None):
        try:
            params = model_lib.load_checkpoint(args.init)
            model_lib.validate_params(params, mc)
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot load checkpoint {args.init}: {e}") from None
        return params
    return model_lib.init_params(mc, seed=args.seed)


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    tok = _load_vocab(args)
    data = _read_examples(args.data)
    mc = _model_config(cfg, tok.size)
    params = _init_params(args, mc)
    result = trainer_lib.train(params, mc, data, _train_config(cfg), checkpoint_dir=str(out))
    trainer_lib.write_loss_trace(result.trace, out / "loss_trace.tsv")
    _save_model_config(mc, out)
    _write_manifest(out, args, cfg, {"data": args.data, "final_loss": result.trace[-1][1]})
    return 0


def cmd_finetune(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    tok = _load_vocab(args)
    rows = _read_jsonl(args.pairs, {"source": str, "target": str})
    if not rows:
        raise UsageError(f"{args.pairs}: no pairs")
    pairs = [(row["source"], row["target"]) for row in rows]
    mc = _model_config(cfg, tok.size)
    params = _init_params(args, mc)
    lengths = str(cfg["finetune.lengths"])
    try:
        result = trainer_lib.finetune(
            params, mc, pairs, tok, _train_config(cfg),
            lengths=lengths, checkpoint_dir=str(out),
        )
    except ValueError as e:
        raise UsageError(str(e)) from None
    trainer_lib.write_loss_trace(result.trace, out / "loss_trace.tsv")
    _save_model_config(mc, out)
    _write_manifest(out, args, cfg, {
        "pairs": args.pairs,
        "lengths": lengths,
        "final_loss": result.trace[-1][1],
    })
    return 0


def cmd_generate(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    tok = _load_vocab(args)
    mc_path = Path(args.model_config) if args.model_config else Path(args.checkpoint).parent / "model_config.json"
    mc = _load_model_config(mc_path)
    try:
        params = model_lib.load_checkpoint(args.checkpoint)
        model_lib.validate_params(params, mc)
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {e}") from None
    rows = _read_jsonl(args.inputs, {"id": str, "text": str})
    max_len = int(cfg["generate.max_len"])
    with open(out / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            ids = tok.encode(row["text"])
            if not ids:
                raise UsageError(f"input {row['id']}: empty text")
            generated = model_lib.generate(params, mc, ids, max_len=max_len)
            fh.write(json.dumps({"id": row["id"], "text": tok.decode(generated)}) + "\n")
    _write_manifest(out, args, cfg, {"checkpoint": args.checkpoint, "inputs": args.inputs})
    return 0


def _pair_by_id(predictions: list[dict], references: list[dict]) -> list[tuple[str, str]]:
    by_id = {row["id"]: row["text"] for row in references}
    if len(by_id) != len(references):
        raise UsageError("duplicate ids in references")
    pairs = []
    seen = set()
    for row in predictions:
        if row["id"] not in by_id:
            raise UsageError(f"prediction id {row['id']!r} has no reference")
        if row["id"] in seen:
            raise UsageError(f"duplicate prediction id {row['id']!r}")
        seen.add(row["id"])
        pairs.append((row["text"], by_id[row["id"]]))
    if len(seen) != len(by_id):
        missing = sorted(set(by_id) - seen)
        raise UsageError(f"no prediction for reference id {missing[0]!r}")
    return pairs


def cmd_eval(args) -> int:
    cfg = resolve_config(args.config, args.set)
    out = _out_dir(args)
    lang = str(cfg["eval.lang"])
    piece_vocab = None
    if getattr(args, "vocab", None):
        piece_vocab = _load_vocab(args)
    predictions = _read_jsonl(args.predictions, {"id": str, "text": str})
    if args.task == "rouge":
        references = _read_jsonl(args.references, {"id": str, "text": str})
        pairs = _pair_by_id(predictions, references)
        try:
            score = metrics_lib.evaluate_summarization(
                [p for p, _ in pairs], [r for _, r in pairs], lang, piece_vocab
            )
        except ValueError as e:
            raise UsageError(str(e)) from None
        report = metrics_lib.format_rouge_report(score)
    else:
        rows = _read_jsonl(
            args.references,
            {"id": str, "question": str, "context": str, "answer_kind": str},
        )
        try:
            records = [
                metrics_lib.QaRecord(
                    id=row["id"], question=row["question"], context=row["context"],
                    answer_kind=row["answer_kind"], answer_text=row.get("answer_text", ""),
                )
                for row in rows
            ]
        except ValueError as e:
            raise UsageError(f"{args.references}: {e}") from None
        golds = {r.id: tydiqa_target(r) for r in records}
        if len(golds) != len(records):
            raise UsageError("duplicate ids in references")
        em_total = f1_total = 0.0
        n = 0
        for row in predictions:
            if row["id"] not in golds:
                raise UsageError(f"prediction id {row['id']!r} has no reference")
            em, f1 = metrics_lib.qa_em_f1(row["text"], [golds[row["id"]]], lang, piece_vocab)
            em_total += em
            f1_total += f1
            n += 1
        if n != len(golds):
            raise UsageError("prediction/reference id sets differ")
        report = metrics_lib.format_qa_report(em_total / n, f1_total / n)
    sys.stdout.write(report)
    (out / "report.tsv").write_text(report, encoding="utf-8")
    _write_manifest(out, args, cfg, {
        "task": args.task,
        "predictions": args.predictions,
        "references": args.references,
    })
    return 0


def tydiqa_target(record: metrics_lib.QaRecord) -> str:
    return metrics_lib.tydiqa_to_seq2seq(record)[1]


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", help="output directory (default runs/<cmd>-<timestamp>)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key (repeatable)")
    sub.add_argument("--vocab", help="piece vocabulary TSV (default: byte vocabulary)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longspan",
        description="Long-input seq2seq pipeline: data, training, generation, evaluation.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("stats", help="per-language corpus statistics")
    p.add_argument("corpus", help="corpus JSONL with lang/text fields")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = subs.add_parser("pretrain-data", help="generate denoising examples")
    p.add_argument("corpus")
    p.add_argument("--budget", type=int, help="total token budget (default corpus.budget)")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain_data)

    p = subs.add_parser("train", help="pretrain on denoising examples")
    p.add_argument("data", help="examples JSONL from pretrain-data")
    p.add_argument("--init", help="checkpoint to resume from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("finetune", help="supervised training on text pairs")
    p.add_argument("pairs", help="JSONL with source/target fields")
    p.add_argument("--init", help="checkpoint to start from")
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("generate", help="greedy decode inputs")
    p.add_argument("inputs", help="JSONL with id/text fields")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", help="model config JSON (default: next to checkpoint)")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = subs.add_parser("eval", help="score predictions")
    p.add_argument("--task", choices=("rouge", "qa"), default="rouge")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        return int(args.func(args))
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
