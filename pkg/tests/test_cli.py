import json
import re
import subprocess
import sys

import numpy as np
import pytest

from scanhmer import cli
from scanhmer.corpus import Vocabulary, load_expression
from scanhmer.inference import greedy
from scanhmer.model import featurize_for
from scanhmer.trainer import NumericError

CAPTION = re.compile(r'font-family="monospace">([^<]*)</text>')
ALPHA = re.compile(r'data-alpha="([0-9.e-]+)"')


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_config(path, data, **extra):
    lines = [f"data={data}", "preset=toy", "mode=single-on", "seed=0"] + [f"{k}={v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def nested_run(tmp_path_factory):
    """A toy single-on model overfit on the nested-fraction expression alone."""
    root = tmp_path_factory.mktemp("nested")
    assert run("synth", "--out", root / "data", "--n", 0, "--nested") == 0
    cfg = write_config(root / "run.cfg", root / "data", epochs=250)
    assert run("train", "--config", cfg, "--out", root / "m.ckpt") == 0
    return root


def test_synth_writes_corpus_and_vocab(nested_run):
    files = sorted(p.name for p in (nested_run / "data").iterdir())
    assert files == ["nested.txt", "vocab.txt"]
    assert len(Vocabulary.load(nested_run / "data" / "vocab.txt")) > 20


def test_train_outputs(nested_run):
    for suffix in ("", ".cfg", ".vocab", ".metrics.csv"):
        assert (nested_run / f"m.ckpt{suffix}").exists()
    rows = (nested_run / "m.ckpt.metrics.csv").read_text().splitlines()
    assert rows[0] == "epoch,objective,ce,guider,token_acc" and len(rows) == 251


def test_decode_beam_one_equals_greedy(nested_run):
    out = nested_run / "pred1.tsv"
    assert run("decode", "--ckpt", nested_run / "m.ckpt", "--in", nested_run / "data", "--beam", 1, "--out", out) == 0
    name, toks, score = out.read_text().rstrip("\n").split("\t")
    model, vocab, cfg = cli.load_bundle(nested_run / "m.ckpt")
    e = load_expression(nested_run / "data" / "nested.txt")
    g = greedy(model, featurize_for(model, e, vocab, cfg.raster), cfg.max_len, vocab.sos, vocab.eos)
    assert name == "nested"
    assert toks.split() == vocab.decode(g.output)
    assert float(score) == pytest.approx(g.score, abs=1e-6)


def test_decode_and_eval(nested_run):
    pred, rep, recs = nested_run / "pred.tsv", nested_run / "report.json", nested_run / "alpha.jsonl"
    assert run("decode", "--ckpt", nested_run / "m.ckpt", "--in", nested_run / "data", "--mode", "single-on",
               "--out", pred, "--records", recs) == 0
    assert pred.read_text().split("\t")[1] == r"\frac { 9 } { 9 + \sqrt { 9 } }"
    lines = [json.loads(ln) for ln in recs.read_text().splitlines()]
    assert lines[-1]["token"] == "<eos>" and all(len(r["alpha"]) == 7 for r in lines)
    assert run("eval", "--pred", pred, "--ref", nested_run / "data", "--out", rep,
               "--vocab", nested_run / "data" / "vocab.txt") == 0
    report = json.loads(rep.read_text())
    assert set(report) == {"exprate", "leq1", "leq2", "leq3", "strurate", "n"}
    assert report["exprate"] == 100.0 and report["n"] == 1


def test_viz_nested(nested_run):
    out = nested_run / "viz"
    assert run("viz", "--ckpt", nested_run / "m.ckpt", "--in", nested_run / "data" / "nested.txt", "--out", out) == 0
    svgs = sorted(out.glob("step_*.svg"))
    captions = [CAPTION.search(p.read_text()).group(1) for p in svgs]
    assert captions == r"\frac { 9 } { 9 + \sqrt { 9 } }".split()
    assert captions.count("9") == 3
    for p in svgs:
        alphas = [float(a) for a in ALPHA.findall(p.read_text())]
        assert len(alphas) == 7 and sum(alphas) == pytest.approx(1.0, abs=1e-5)
    assert len((out / "alpha.jsonl").read_text().splitlines()) == len(svgs) + 1


def test_preprocess_cache_feeds_training(nested_run, tmp_path):
    cfg = write_config(tmp_path / "pre.cfg", nested_run / "data")
    assert run("preprocess", "--in", nested_run / "data", "--out", tmp_path / "feat", "--config", cfg) == 0
    assert sorted(p.name for p in (tmp_path / "feat").iterdir()) == ["nested.feat", "vocab.txt"]
    assert (tmp_path / "feat" / "nested.feat").read_bytes().startswith(b"SCANFEAT1")
    cfg2 = write_config(tmp_path / "t.cfg", tmp_path / "feat", epochs=1)
    cfg3 = write_config(tmp_path / "r.cfg", nested_run / "data", epochs=1)
    assert run("train", "--config", cfg2, "--out", tmp_path / "a.ckpt") == 0
    assert run("train", "--config", cfg3, "--out", tmp_path / "b.ckpt") == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


# -- exit codes -------------------------------------------------------------

def test_usage_errors(nested_run, tmp_path, capsys):
    ckpt = nested_run / "m.ckpt"
    data = nested_run / "data"
    assert run("bogus") == cli.EXIT_USAGE
    assert run("decode", "--ckpt", ckpt) == cli.EXIT_USAGE
    assert run("decode", "--ckpt", ckpt, "--in", data, "--mode", "mm-e", "--out", tmp_path / "p") == cli.EXIT_USAGE
    assert run("decode", "--ckpt", ckpt, "--in", data, "--beam", 0, "--out", tmp_path / "p") == cli.EXIT_USAGE
    bad = tmp_path / "bad.cfg"
    bad.write_text("mode=nonsense\n")
    assert run("train", "--config", bad, "--out", tmp_path / "x.ckpt") == cli.EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_vocabulary_is_a_usage_error(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "a.txt").write_text("strokes 1 points 1\n0 0 0\nlabel x\n")
    cfg = write_config(tmp_path / "c.cfg", tmp_path / "d", epochs=1)
    assert run("train", "--config", cfg, "--out", tmp_path / "m.ckpt") == cli.EXIT_USAGE


def test_data_errors(nested_run, tmp_path):
    assert run("decode", "--ckpt", tmp_path / "none.ckpt", "--in", nested_run / "data",
               "--out", tmp_path / "p") == cli.EXIT_DATA
    (tmp_path / "broken").mkdir()
    (tmp_path / "broken" / "a.txt").write_text("strokes 1 points 1\n0 0\nlabel x\n")
    cfg = write_config(tmp_path / "c.cfg", tmp_path / "broken", vocab=nested_run / "data" / "vocab.txt")
    assert run("train", "--config", cfg, "--out", tmp_path / "m.ckpt") == cli.EXIT_DATA
    pred = tmp_path / "empty.tsv"
    pred.write_text("")
    assert run("eval", "--pred", pred, "--ref", nested_run / "data", "--out", tmp_path / "r.json") == cli.EXIT_DATA


def test_numeric_failure_exit_code(nested_run, tmp_path, monkeypatch):
    def explode(self):
        raise NumericError("nan objective")

    monkeypatch.setattr("scanhmer.trainer.Trainer.run_epoch", explode)
    cfg = write_config(tmp_path / "c.cfg", nested_run / "data", epochs=1)
    assert run("train", "--config", cfg, "--out", tmp_path / "m.ckpt") == cli.EXIT_NUMERIC


def test_selftest_quick(capsys):
    assert run("selftest", "--quick") == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 7 and "[FAIL]" not in out


def test_selftest_failure_exit_code(monkeypatch):
    from scanhmer import selftest

    monkeypatch.setattr(selftest, "run_all", lambda quick: [selftest.CheckResult("x", False, "broken")])
    assert run("selftest") == cli.EXIT_SELFTEST


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "scanhmer", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "selftest" in res.stdout
    res = subprocess.run([sys.executable, "-m", "scanhmer", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 1
