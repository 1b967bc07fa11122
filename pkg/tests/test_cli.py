import json
import subprocess
import sys

import pytest

from ethtlm.cli import main

TINY = """\
model: {max_len: 48, vocab_size: 300, layers: 1, heads: 2, dim: 16, ff_dim: 32, gnn_layers: 1, rel_dim: 8,
        max_nodes: 20}
train: {epochs: 2, ft_epochs: 2, lr: 0.003}
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.yaml").write_text(TINY)
    assert main(["synth", "--n", "80", "--rate", "0.1", "--seed", "1", "--out", str(d / "ds")]) == 0
    return d


def run(work, *args):
    return main([*args, "--config", str(work / "tiny.yaml")])


def test_synth_outputs(work):
    assert (work / "ds" / "dataset.json").exists()
    man = json.loads((work / "ds" / "manifest.json").read_text())
    assert man["seed"] == 1 and len(man["config_hash"]) == 64
    assert man["config"]["ingest"]["n_accounts"] == 80


def test_smoke_path(work):
    ds = str(work / "ds")
    assert run(work, "features", "--dataset", ds, "--out", str(work / "feat.csv")) == 0
    assert run(work, "build-kg", "--dataset", ds, "--features", str(work / "feat.csv"),
               "--out", str(work / "kg")) == 0
    assert run(work, "pretrain", "--dataset", ds, "--out", str(work / "pre")) == 0
    lines = (work / "pre" / "loss_report.csv").read_text().splitlines()
    assert lines[0] == "epoch,bmp_loss,tlp_loss,total,mask_rate" and len(lines) == 3
    assert (work / "pre" / "model.ckpt").exists()
    assert run(work, "finetune", "--model", str(work / "pre" / "model.ckpt"), "--dataset", ds,
               "--out", str(work / "ft")) == 0
    assert run(work, "eval", "--model", str(work / "ft" / "finetuned.ckpt"), "--dataset", ds,
               "--out", str(work / "metrics.json")) == 0
    m = json.loads((work / "metrics.json").read_text())
    assert {"f1", "auc", "fnr"} <= set(m)
    assert run(work, "len-hist", "--dataset", ds, "--out", str(work / "len")) == 0


def test_manifest_replay(work, tmp_path):
    man = work / "ds" / "manifest.json"
    assert main(["synth", "--n", "80", "--rate", "0.1", "--seed", "1", "--config", str(man),
                 "--out", str(tmp_path / "again")]) == 0
    a = (work / "ds" / "dataset.json").read_bytes()
    assert (tmp_path / "again" / "dataset.json").read_bytes() == a


def test_unknown_flag_is_usage_error_and_writes_nothing(tmp_path, capsys):
    out = tmp_path / "x"
    assert main(["synth", "--bogus", "--out", str(out)]) == 1
    assert not out.exists()
    assert main(["nosuchcommand"]) == 1


def test_bad_config_key_is_usage_error(tmp_path):
    assert main(["synth", "--set", "train.nope=1", "--out", str(tmp_path / "x")]) == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "none.ckpt"), "--dataset", str(tmp_path),
                 "--out", str(tmp_path / "m.json")]) == 2
    assert main(["features", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "f.csv"),
                 "--json"]) == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "DataError"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(work, tmp_path):
    rc = run(work, "pretrain", "--dataset", str(work / "ds"), "--out", str(tmp_path / "p"),
             "--set", "train.lr=1e300", "--set", "train.epochs=3")
    assert rc == 3


def test_bm25_hist(work, tmp_path):
    from ethtlm.ingest import load_dataset
    from ethtlm.textualize import build_corpus, write_corpus

    ds = load_dataset(work / "ds" / "dataset.json")
    corpus = tmp_path / "corpus.jsonl"
    write_corpus(corpus, build_corpus(ds.accounts[:20]))
    assert main(["bm25-hist", "--corpus", str(corpus), "--bins", "10", "--out", str(tmp_path / "h.csv")]) == 0
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 11


def test_sweep_tau_rows(work, tmp_path):
    out = tmp_path / "sweep.csv"
    assert run(work, "sweep-tau", "--values", "0.05,0.2", "--dataset", str(work / "ds"), "--out", str(out)) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "mask.tau,seed,f1,auc,fnr" and len(rows) == 3


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ethtlm.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "sweep-lmax" in r.stdout
