import json
import subprocess
import sys

import pytest

import synth
from rinser_mlm.cli import main


def _run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def workdir(tmp_path):
    records = [synth.make_example(api, i, __import__("random").Random(i))
               for api in ("apialpha", "apibravo", "apicharlie") for i in range(30)]
    (tmp_path / "corpus.jsonl").write_text(synth.corpus_text(records))
    return tmp_path


def _pretrain(workdir, capsys, steps=25):
    return _run(
        [
            "pretrain",
            "--corpus", str(workdir / "corpus.jsonl"),
            "--out", str(workdir / "ckpt"),
            "--vocab-size", "256",
            "--steps", str(steps),
            "--batch-size", "16",
            "--seed", "0",
        ],
        capsys,
    )


def test_no_arguments_is_a_usage_error(capsys):
    code, _, err = _run([], capsys)
    assert code == 1
    assert err.startswith("error:")


def test_unknown_subcommand_is_a_usage_error(capsys):
    code, _, _ = _run(["trainify"], capsys)
    assert code == 1


def test_missing_required_flag_is_a_usage_error(capsys):
    code, _, _ = _run(["pretrain", "--corpus", "x.jsonl"], capsys)
    assert code == 1


def test_help_exits_zero(capsys):
    code, out, _ = _run(["--help"], capsys)
    assert code == 0
    assert "pretrain" in out


def test_missing_corpus_file_is_an_input_error(tmp_path, capsys):
    code, _, err = _run(
        ["pretrain", "--corpus", str(tmp_path / "absent.jsonl"),
         "--out", str(tmp_path / "ckpt")],
        capsys,
    )
    assert code == 2
    assert err.startswith("error:")


def test_vocab_size_too_small_is_an_input_error(workdir, capsys):
    code, _, err = _run(
        ["pretrain", "--corpus", str(workdir / "corpus.jsonl"),
         "--out", str(workdir / "ckpt"), "--vocab-size", "5", "--steps", "1"],
        capsys,
    )
    assert code == 2
    assert "smaller than atomic" in err


def test_pretrain_writes_checkpoint_layout(workdir, capsys):
    code, out, _ = _pretrain(workdir, capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["command"] == "pretrain"
    assert summary["steps"] == 25
    assert summary["final_loss"] > 0
    for name in ("config.json", "tokenizer.json", "weights.pt", "log.json"):
        assert (workdir / "ckpt" / name).is_file()
    log = json.loads((workdir / "ckpt" / "log.json").read_text())
    assert len(log) == 25


def test_finetune_extends_the_log(workdir, capsys):
    assert _pretrain(workdir, capsys)[0] == 0
    code, out, _ = _run(
        ["finetune", "--ckpt", str(workdir / "ckpt"),
         "--corpus", str(workdir / "corpus.jsonl"),
         "--out", str(workdir / "tuned"), "--steps", "5"],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["command"] == "finetune"
    log = json.loads((workdir / "tuned" / "log.json").read_text())
    assert len(log) == 30
    assert log[-1]["phase"] == "finetune"


def test_fill_mask_emits_predictions_jsonl(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=60)[0] == 0
    code, out, _ = _run(
        ["fill-mask", "--ckpt", str(workdir / "ckpt"),
         "--corpus", str(workdir / "corpus.jsonl"),
         "--out", str(workdir / "pred.jsonl"), "--k", "3"],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["predictions"] == 90
    lines = [json.loads(l) for l in (workdir / "pred.jsonl").read_text().split("\n") if l]
    assert len(lines) == 90
    assert set(lines[0]) == {"truth", "topk", "param_count", "variant"}


def test_fill_mask_param_counts_flag(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=5)[0] == 0
    (workdir / "counts.txt").write_text("apialpha:a,b\napibravo:a\napicharlie:\n")
    code, _, _ = _run(
        ["fill-mask", "--ckpt", str(workdir / "ckpt"),
         "--corpus", str(workdir / "corpus.jsonl"),
         "--out", str(workdir / "pred.jsonl"), "--k", "1",
         "--param-counts", str(workdir / "counts.txt")],
        capsys,
    )
    assert code == 0
    lines = [json.loads(l) for l in (workdir / "pred.jsonl").read_text().split("\n") if l]
    by_truth = {l["truth"]: l["param_count"] for l in lines}
    assert by_truth == {"apialpha": 2, "apibravo": 1, "apicharlie": 0}


def test_embed_cli_writes_vectors(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=5)[0] == 0
    code, out, _ = _run(
        ["embed", "--ckpt", str(workdir / "ckpt"),
         "--api", "apialpha", "--api", "apibravo",
         "--out", str(workdir / "emb.jsonl")],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["apis"] == 2
    lines = [json.loads(l) for l in (workdir / "emb.jsonl").read_text().split("\n") if l]
    assert [l["api"] for l in lines] == ["apialpha", "apibravo"]


def test_embed_requires_some_name(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=5)[0] == 0
    code, _, err = _run(
        ["embed", "--ckpt", str(workdir / "ckpt"), "--out", str(workdir / "e.jsonl")],
        capsys,
    )
    assert code == 1
    assert "requires --api" in err


def test_loss_subcommand_reports_mean_loss(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=5)[0] == 0
    code, out, _ = _run(
        ["loss", "--ckpt", str(workdir / "ckpt"),
         "--corpus", str(workdir / "corpus.jsonl")],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["loss"] > 0


def test_no_stray_temp_files(workdir, capsys):
    assert _pretrain(workdir, capsys, steps=5)[0] == 0
    _run(
        ["fill-mask", "--ckpt", str(workdir / "ckpt"),
         "--corpus", str(workdir / "corpus.jsonl"),
         "--out", str(workdir / "pred.jsonl"), "--k", "1"],
        capsys,
    )
    stray = [p.name for p in workdir.iterdir()
             if p.is_file() and p.suffix not in (".jsonl", ".txt")]
    assert stray == []


def test_module_entrypoint_help():
    proc = subprocess.run(
        [sys.executable, "-m", "rinser_mlm", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "pretrain" in proc.stdout
