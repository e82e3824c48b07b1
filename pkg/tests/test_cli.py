import json

import pytest

from longspan.cli import DEFAULTS, UsageError, main, resolve_config

TINY_MODEL = [
    "--set", "model.d_model=16", "--set", "model.n_heads=2",
    "--set", "model.head_dim=8", "--set", "model.n_enc_layers=1",
    "--set", "model.n_dec_layers=1", "--set", "model.d_ff=32",
    "--set", "model.local_radius=8", "--set", "model.block_size=4",
]


@pytest.fixture()
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"lang": "en", "text": f"english document {i} with some words " * 3}
        for i in range(8)
    ] + [
        {"lang": "fi", "text": f"suomalainen dokumentti {i} sanoja " * 3}
        for i in range(4)
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


# --- configuration resolution ---------------------------------------------


def test_defaults_complete():
    cfg = resolve_config(None, [])
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_set_overrides_and_coerces():
    cfg = resolve_config(None, ["train.steps=7", "denoise.rate=0.2",
                                "denoise.mode_prompts=false"])
    assert cfg["train.steps"] == 7
    assert cfg["denoise.rate"] == 0.2
    assert cfg["denoise.mode_prompts"] is False


def test_config_file_then_set_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ntrain.steps = 11\ntrain.batch_size=4\n")
    cfg = resolve_config(str(f), ["train.steps=22"])
    assert cfg["train.steps"] == 22
    assert cfg["train.batch_size"] == 4


def test_unknown_key_rejected():
    with pytest.raises(UsageError, match="unknown config key"):
        resolve_config(None, ["train.stepz=7"])


def test_bad_value_rejected():
    with pytest.raises(UsageError, match="bad value"):
        resolve_config(None, ["train.steps=many"])


def test_config_file_syntax_error(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("just a line without equals\n")
    with pytest.raises(UsageError, match="run.cfg:1"):
        resolve_config(str(f), [])


# --- exit codes --------------------------------------------------------------


def test_missing_corpus_is_exit_2(tmp_path, capsys):
    rc = main(["stats", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_key_is_exit_2(corpus, tmp_path, capsys):
    rc = main(["stats", str(corpus), "--out", str(tmp_path / "o"),
               "--set", "bogus.key=1"])
    assert rc == 2


def test_malformed_corpus_line_is_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"lang": "en", "text": "ok"}\nnot json\n')
    rc = main(["stats", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "line 2" in capsys.readouterr().err


# --- stats ---------------------------------------------------------------------


def test_stats_report(corpus, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["stats", str(corpus), "--out", str(out)])
    assert rc == 0
    report = capsys.readouterr().out
    lines = report.splitlines()
    assert lines[0] == "lang\tdoc_count\ttoken_count"
    assert lines[1].startswith("en\t8\t")
    assert lines[2].startswith("fi\t4\t")
    assert lines[3].startswith("# length_summary\tmean=")
    assert (out / "stats.tsv").read_text() == report
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "stats"
    assert manifest["seed"] == 0
    assert "version" in manifest
    assert not any("time" in key.lower() or "date" in key.lower() for key in manifest)


# --- pretrain-data ----------------------------------------------------------------


def test_pretrain_data_examples_and_manifest(corpus, tmp_path):
    out = tmp_path / "run"
    rc = main(["pretrain-data", str(corpus), "--budget", "1500",
               "--out", str(out), "--seed", "5"])
    assert rc == 0
    rows = [json.loads(line) for line in (out / "examples.jsonl").read_text().splitlines()]
    assert rows
    for row in rows:
        assert row["denoiser"] in ("R", "S", "X")
        assert 1 <= len(row["inputs"]) <= 4096
        assert 1 <= len(row["targets"]) <= 910
        assert row["inputs"][0] in (3, 4, 5)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["examples_written"] == len(rows)
    assert {a["lang"] for a in manifest["allocation"]} == {"en", "fi"}
    assert len(manifest["mixture"]) == 5


def test_pretrain_data_deterministic(corpus, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["pretrain-data", str(corpus), "--budget", "900",
                     "--out", str(out), "--seed", "7"]) == 0
    assert (out_a / "examples.jsonl").read_bytes() == (out_b / "examples.jsonl").read_bytes()


def test_pretrain_data_seed_matters(corpus, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["pretrain-data", str(corpus), "--budget", "900", "--out", str(out_a), "--seed", "1"])
    main(["pretrain-data", str(corpus), "--budget", "900", "--out", str(out_b), "--seed", "2"])
    assert (out_a / "examples.jsonl").read_bytes() != (out_b / "examples.jsonl").read_bytes()


def test_pretrain_data_refuses_half_rate(corpus, tmp_path, capsys):
    rc = main(["pretrain-data", str(corpus), "--out", str(tmp_path / "o"),
               "--set", "denoise.rate=0.5"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "2048" in err
    assert "910" in err
    assert "infeasible" in err


# --- train / generate / eval ----------------------------------------------------


def run_data_and_train(corpus, tmp_path):
    data_dir = tmp_path / "data"
    train_dir = tmp_path / "train"
    assert main(["pretrain-data", str(corpus), "--budget", "600",
                 "--out", str(data_dir), "--seed", "1"]) == 0
    assert main(["train", str(data_dir / "examples.jsonl"), "--out", str(train_dir),
                 "--seed", "0", "--set", "train.steps=2", "--set", "train.batch_size=2",
                 *TINY_MODEL]) == 0
    return train_dir


def test_train_outputs(corpus, tmp_path):
    train_dir = run_data_and_train(corpus, tmp_path)
    assert (train_dir / "final.ckpt").exists()
    assert (train_dir / "model_config.json").exists()
    trace = (train_dir / "loss_trace.tsv").read_text().splitlines()
    assert trace[0] == "step\tloss\tlr"
    assert len(trace) == 3
    manifest = json.loads((train_dir / "manifest.json").read_text())
    assert manifest["final_loss"] > 0


def test_generate_and_eval_round_trip(corpus, tmp_path, capsys):
    train_dir = run_data_and_train(corpus, tmp_path)
    inputs = tmp_path / "inputs.jsonl"
    inputs.write_text(json.dumps({"id": "x1", "text": "english document"}) + "\n")
    gen_dir = tmp_path / "gen"
    rc = main(["generate", str(inputs), "--checkpoint", str(train_dir / "final.ckpt"),
               "--out", str(gen_dir), "--set", "generate.max_len=4"])
    assert rc == 0
    preds = [json.loads(line) for line in (gen_dir / "predictions.jsonl").read_text().splitlines()]
    assert preds[0]["id"] == "x1"
    assert isinstance(preds[0]["text"], str)
    capsys.readouterr()
    refs = tmp_path / "refs.jsonl"
    refs.write_text(json.dumps({"id": "x1", "text": "some reference"}) + "\n")
    rc = main(["eval", "--task", "rouge", "--predictions", str(gen_dir / "predictions.jsonl"),
               "--references", str(refs), "--out", str(tmp_path / "eval")])
    assert rc == 0
    report = capsys.readouterr().out
    assert report.splitlines()[0] == "metric\tprecision\trecall\tf1"


def test_eval_identical_files_score_100(tmp_path, capsys):
    rows = [{"id": "a", "text": "alpha beta gamma"}, {"id": "b", "text": "delta epsilon"}]
    path = tmp_path / "texts.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    rc = main(["eval", "--task", "rouge", "--predictions", str(path),
               "--references", str(path), "--out", str(tmp_path / "o")])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("100.00") >= 9  # rouge1/2/L x precision/recall/f1


def test_eval_rejects_mismatched_ids(tmp_path, capsys):
    preds = tmp_path / "p.jsonl"
    refs = tmp_path / "r.jsonl"
    preds.write_text(json.dumps({"id": "a", "text": "x"}) + "\n")
    refs.write_text(json.dumps({"id": "b", "text": "x"}) + "\n")
    rc = main(["eval", "--task", "rouge", "--predictions", str(preds),
               "--references", str(refs), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_eval_qa_task(tmp_path, capsys):
    refs = tmp_path / "refs.jsonl"
    refs.write_text("\n".join([
        json.dumps({"id": "q1", "question": "sky?", "context": "blue sky",
                    "answer_kind": "span", "answer_text": "blue"}),
        json.dumps({"id": "q2", "question": "ok?", "context": "yes it is",
                    "answer_kind": "yes"}),
        json.dumps({"id": "q3", "question": "missing?", "context": "nothing",
                    "answer_kind": "null"}),
    ]) + "\n")
    preds = tmp_path / "preds.jsonl"
    preds.write_text("\n".join([
        json.dumps({"id": "q1", "text": "Blue."}),
        json.dumps({"id": "q2", "text": "no"}),
        json.dumps({"id": "q3", "text": "unanswerable"}),
    ]) + "\n")
    rc = main(["eval", "--task", "qa", "--predictions", str(preds),
               "--references", str(refs), "--out", str(tmp_path / "o")])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "metric\tvalue"
    assert lines[1] == "em\t66.67"
    assert lines[2] == "f1\t66.67"


def test_finetune_command(tmp_path):
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("\n".join([
        json.dumps({"source": "hello there", "target": "hi"}),
        json.dumps({"source": "good morning", "target": "gm"}),
    ]) + "\n")
    out = tmp_path / "ft"
    rc = main(["finetune", str(pairs), "--out", str(out), "--seed", "0",
               "--set", "train.steps=2", "--set", "train.batch_size=2",
               "--set", "finetune.lengths=qa-4k", *TINY_MODEL])
    assert rc == 0
    assert (out / "final.ckpt").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["lengths"] == "qa-4k"


def test_generate_requires_model_config(tmp_path, capsys):
    ckpt = tmp_path / "orphan.ckpt"
    ckpt.write_bytes(b"junk")
    inputs = tmp_path / "in.jsonl"
    inputs.write_text(json.dumps({"id": "a", "text": "hi"}) + "\n")
    rc = main(["generate", str(inputs), "--checkpoint", str(ckpt),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_help_exits_zero(capsys):
    rc = main(["--help"])
    assert rc == 0
    assert "stats" in capsys.readouterr().out
