import json
import os

import numpy as np
import pytest

from skipdiff.cli import main
from tabledata import QQP_BLOCK, QQP_MEAN_RANK


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """A minimal but complete training run shared by the CLI tests."""
    out = str(tmp_path_factory.mktemp("run"))
    code = run_cli(
        "train", "--task", "copy", "--out", out, "--seed", "7",
        "--epochs", "2", "--T", "8",
        "--set", "model_dim=16", "--set", "heads=2", "--set", "layers=1",
        "--set", "max_len=10", "--set", "vocab_size=6", "--set", "len_min=1",
        "--set", "len_max=3", "--set", "train_size=16",
        "--set", "heldout_size=4", "--set", "total_batch=8",
        "--set", "exploration_epochs=2", "--set", "period=1",
        "--set", "gen_steps=4", "--set", "eval_every=0",
        "--set", "ffn_mult=2", "--set", "sched_hidden=8")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def src_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "src.jsonl"
    rows = [{"src": "w00 w01", "trg": "w00 w01"},
            {"src": "w02", "trg": "w02"},
            {"src": "w03 w04 w05", "trg": "w03 w04 w05"}]
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return str(path)


def test_train_epoch_zero_writes_init_checkpoints(tmp_path):
    out = str(tmp_path / "run0")
    code = run_cli(
        "train", "--task", "copy", "--out", out, "--seed", "1",
        "--epochs", "0", "--T", "8",
        "--set", "model_dim=16", "--set", "heads=2", "--set", "layers=1",
        "--set", "max_len=10", "--set", "vocab_size=6", "--set", "len_min=1",
        "--set", "len_max=3", "--set", "train_size=8",
        "--set", "heldout_size=2", "--set", "total_batch=8",
        "--set", "exploration_epochs=2", "--set", "ffn_mult=2",
        "--set", "sched_hidden=8")
    assert code == 0
    assert os.path.exists(os.path.join(out, "config.resolved"))
    assert os.path.exists(os.path.join(out, "checkpoints", "exploiter-0.bin"))
    assert os.path.exists(os.path.join(out, "checkpoints", "scheduler-0.bin"))
    assert os.path.exists(os.path.join(out, "log.jsonl"))


def test_train_determinism_same_seed(tmp_path):
    args = ["train", "--task", "reverse", "--seed", "3",
            "--epochs", "2", "--T", "8",
            "--set", "model_dim=16", "--set", "heads=2", "--set", "layers=1",
            "--set", "max_len=10", "--set", "vocab_size=6",
            "--set", "len_min=1", "--set", "len_max=3",
            "--set", "train_size=16", "--set", "heldout_size=4",
            "--set", "total_batch=8", "--set", "exploration_epochs=2",
            "--set", "period=1", "--set", "gen_steps=4",
            "--set", "eval_every=1", "--set", "eval_mbr=1",
            "--set", "ffn_mult=2", "--set", "sched_hidden=8"]
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli(*args, "--out", out_a) == 0
    assert run_cli(*args, "--out", out_b) == 0
    log_a = open(os.path.join(out_a, "log.jsonl"), "rb").read()
    log_b = open(os.path.join(out_b, "log.jsonl"), "rb").read()
    assert log_a == log_b
    cfg_a = open(os.path.join(out_a, "config.resolved"), "rb").read()
    assert cfg_a == open(os.path.join(out_b, "config.resolved"), "rb").read()


def test_train_from_config_file_deterministic(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "# toy settings\n"
        "task=sort\nmodel_dim=16\nheads=2\nlayers=1\nT=8\nmax_len=10\n"
        "vocab_size=6\nlen_min=1\nlen_max=3\ntrain_size=16\nheldout_size=4\n"
        "total_batch=8\nexploration_epochs=2\nperiod=1\ngen_steps=4\n"
        "eval_every=0\nffn_mult=2\nsched_hidden=8\nepochs=2\n")
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_cli("train", "--config", str(cfg), "--seed", "7", "--out", out_a) == 0
    assert run_cli("train", "--config", str(cfg), "--seed", "7", "--out", out_b) == 0
    log_a = open(os.path.join(out_a, "log.jsonl"), "rb").read()
    assert log_a == open(os.path.join(out_b, "log.jsonl"), "rb").read()
    resolved = open(os.path.join(out_a, "config.resolved")).read()
    assert "task=sort" in resolved and "seed=7" in resolved


def test_unknown_config_key_rejected(tmp_path):
    code = run_cli("train", "--task", "copy", "--out", str(tmp_path / "x"),
                   "--set", "nonsense_key=3")
    assert code == 2


def test_unknown_config_file_key_rejected(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("not_a_key=1\n")
    code = run_cli("train", "--config", str(cfg), "--out", str(tmp_path / "x"))
    assert code == 2


def test_generate_single_candidate_written_unchanged(tiny_run, src_file, tmp_path):
    out = str(tmp_path / "gen.jsonl")
    code = run_cli("generate",
                   "--exploiter", os.path.join(tiny_run, "checkpoints", "exploiter-final.bin"),
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--src", src_file, "--out", out, "--mbr", "1",
                   "--steps", "4", "--seed", "5")
    assert code == 0
    rows = [json.loads(line) for line in open(out)]
    assert len(rows) == 3
    for row in rows:
        assert row["candidates"] == [row["gen"]]


def test_generate_deterministic_output_file(tiny_run, src_file, tmp_path):
    outs = []
    for name in ("g1.jsonl", "g2.jsonl"):
        out = str(tmp_path / name)
        code = run_cli("generate",
                       "--exploiter", os.path.join(tiny_run, "checkpoints", "exploiter-final.bin"),
                       "--fixed-sqrt", "--src", src_file, "--out", out,
                       "--mbr", "3", "--steps", "4", "--seed", "9")
        assert code == 0
        outs.append(open(out, "rb").read())
    assert outs[0] == outs[1]


def test_generate_requires_schedule_choice(tiny_run, src_file, tmp_path, capsys):
    with pytest.raises(SystemExit):
        run_cli("generate",
                "--exploiter", os.path.join(tiny_run, "checkpoints", "exploiter-final.bin"),
                "--src", src_file, "--out", str(tmp_path / "x.jsonl"))


def test_evaluate_identity_scores_one(tmp_path, src_file):
    out = str(tmp_path / "report.json")
    code = run_cli("evaluate", "--gen", src_file.replace("src.jsonl", "src.jsonl"),
                   "--ref", src_file, "--out", out)
    assert code == 0
    report = json.loads(open(out).read())
    assert report["BLEU"] == pytest.approx(1.0)
    assert report["ROUGE-L"] == pytest.approx(1.0)


def test_evaluate_misaligned_rejected(tmp_path, src_file):
    short = tmp_path / "short.jsonl"
    short.write_text('{"src": "a", "trg": "a"}\n')
    assert run_cli("evaluate", "--gen", src_file, "--ref", str(short)) == 2


def test_evaluate_systems_reproduces_published_ranks(tmp_path, capsys):
    csv_path = tmp_path / "systems.csv"
    lines = ["method,metric,value"]
    for method, row in QQP_BLOCK.items():
        for metric, value in row.items():
            lines.append(f"{method},{metric},{'' if value is None else value}")
    csv_path.write_text("\n".join(lines) + "\n")
    rank_csv = tmp_path / "ranks.csv"
    code = run_cli("evaluate", "--systems", str(csv_path),
                   "--rank-csv", str(rank_csv))
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    for method, expected in QQP_MEAN_RANK.items():
        assert printed["Mean-Rank"][method] == pytest.approx(expected, abs=0.005)
    assert rank_csv.exists()


def test_evaluate_two_system_dominance(tmp_path, capsys):
    csv_path = tmp_path / "two.csv"
    csv_path.write_text("method,metric,value\n"
                        "good,BLEU,0.9\ngood,Self-BLEU,0.1\n"
                        "bad,BLEU,0.5\nbad,Self-BLEU,0.7\n")
    assert run_cli("evaluate", "--systems", str(csv_path)) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["Mean-Rank"]["good"] == pytest.approx(1.0)
    assert printed["Mean-Rank"]["bad"] == pytest.approx(2.0)


def test_analyze_difficulty(tiny_run, tmp_path, capsys):
    gen = tmp_path / "gen.jsonl"
    rows = [{"src": "w00 w01", "gen": "w00 w01", "ref": "w00 w01"},
            {"src": "w02 w03", "gen": "w05 w04", "ref": "w02 w03"},
            {"src": "w01 w02", "gen": "w01 w05", "ref": "w01 w02"},
            {"src": "w03", "gen": "w03", "ref": "w03"}]
    with open(gen, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    out = tmp_path / "difficulty.csv"
    code = run_cli("analyze-difficulty", "--gen", str(gen),
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--k", "1", "--out", str(out))
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,mean_beta_hard,mean_beta_easy"
    assert len(lines) == 9  # T=8 steps
    printed = capsys.readouterr().out
    summary = json.loads(printed[printed.index("{"):printed.rindex("}") + 1])
    # the hard bucket holds the zero-overlap generation
    assert summary["hard"]["mean_bleu"] < summary["easy"]["mean_bleu"]
    assert float(lines[1].split(",")[1]) > 0.0


def test_analyze_difficulty_k_too_large(tiny_run, tmp_path):
    gen = tmp_path / "gen.jsonl"
    gen.write_text('{"src": "w00", "gen": "w00", "ref": "w00"}\n'
                   '{"src": "w01", "gen": "w01", "ref": "w01"}\n')
    code = run_cli("analyze-difficulty", "--gen", str(gen),
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--k", "2", "--out", str(tmp_path / "x.csv"))
    assert code == 2


def test_plug_and_play_command(tiny_run, src_file, tmp_path, capsys):
    out = str(tmp_path / "pp.jsonl")
    report = str(tmp_path / "pp-report.json")
    code = run_cli("plug-and-play",
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--exploiter", os.path.join(tiny_run, "checkpoints", "exploiter-final.bin"),
                   "--src", src_file, "--ref", src_file, "--out", out,
                   "--report", report, "--steps", "4", "--seed", "3")
    assert code == 0
    data = json.loads(open(report).read())
    assert "scheduler" in data and "fixed-sqrt" in data
    assert "BLEU" in data["scheduler"]


def test_export_schedule_single_sentence_mean_equals_row(tiny_run, tmp_path):
    src = tmp_path / "one.jsonl"
    src.write_text('{"src": "w00 w01"}\n')
    out = tmp_path / "sched.csv"
    code = run_cli("export-schedule",
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--src", str(src), "--out", str(out))
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "sentence,t,pointer,beta_pointer,alpha_bar_x,beta_eff"
    rows = [line.split(",") for line in lines[1:]]
    sentence_rows = [r for r in rows if r[0] == "0"]
    mean_rows = [r for r in rows if r[0] == "mean"]
    assert len(sentence_rows) == len(mean_rows) == 8
    for a, b in zip(sentence_rows, mean_rows):
        assert float(a[2]) == pytest.approx(float(b[2]))
        assert float(a[3]) == pytest.approx(float(b[3]))


def test_export_schedule_mean_is_columnwise_average(tiny_run, src_file, tmp_path):
    out = tmp_path / "sched.csv"
    assert run_cli("export-schedule",
                   "--scheduler", os.path.join(tiny_run, "checkpoints", "scheduler-final.bin"),
                   "--src", src_file, "--out", str(out)) == 0
    lines = out.read_text().strip().splitlines()[1:]
    per_sentence = {}
    means = {}
    for line in lines:
        parts = line.split(",")
        t = int(parts[1])
        if parts[0] == "mean":
            means[t] = float(parts[3])
        else:
            per_sentence.setdefault(t, []).append(float(parts[3]))
    for t, vals in per_sentence.items():
        assert means[t] == pytest.approx(np.mean(vals))
