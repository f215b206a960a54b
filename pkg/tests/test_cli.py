import json
import subprocess
import sys

import numpy as np
import pytest

from kbca import cli, selfcheck
from kbca.data import read_embeddings, write_embeddings

TINY = {"n_items": 60, "dim": 8, "n_layers": 2, "vocab_size": 20, "emotional_per_class": 3, "words": [4, 8]}
CFG = {"d": 8, "heads": 2, "max_epochs": 2, "batch_size": 16}


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps(TINY))
    (root / "cfg.json").write_text(json.dumps(CFG))
    assert cli.main(["gen-data", "--config", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    return root


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_data_deterministic(files, tmp_path):
    for name in ("a", "b"):
        assert run("gen-data", "--config", files / "spec.json", "--seed", 3, "--out", tmp_path / name) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_train_byte_identical_reports(files, tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code = run("train", "--config", files / "cfg.json", "--data", files / "data", "--out", tmp_path / name,
                   "--variant", "bam", "--prior-source", "knowledge", "--kl-weight", 0.5, "--seed", 4)
        assert code == 0
        outs.append(capsys.readouterr().out)
    assert outs[0].replace(str(tmp_path / "a"), "") == outs[1].replace(str(tmp_path / "b"), "")
    for f in ("report.json", "model.kbca", "curves.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    rep = json.loads((tmp_path / "a" / "report.json").read_text())
    assert rep["config"]["kl_weight"] == 0.5 and rep["config"]["seed"] == 4 and rep["config"]["variant"] == "bam"


def test_eval_outputs(files, tmp_path, capsys):
    run("train", "--config", files / "cfg.json", "--data", files / "data", "--out", tmp_path / "r", "-q")
    capsys.readouterr()
    for name in ("e1", "e2"):
        assert run("eval", "--checkpoint", tmp_path / "r" / "model.kbca", "--data", files / "data", "--out", tmp_path / name) == 0
    out = capsys.readouterr().out
    assert "UA" in out and "confusion" in out
    for f in ("eval_test.json", "confusion_test.png"):
        assert (tmp_path / "e1" / f).read_bytes() == (tmp_path / "e2" / f).read_bytes()
    rep = json.loads((tmp_path / "e1" / "eval_test.json").read_text())
    assert set(rep) == {"ua", "wa", "per_class_recall", "confusion", "n", "split"}


def test_ablate_outputs(files, tmp_path):
    cfg = dict(CFG, max_epochs=1, ablation={"repeats": 2, "configs": ["det", "bam+knowledge"]})
    (tmp_path / "abl.json").write_text(json.dumps(cfg))
    for name in ("a", "b"):
        assert run("ablate", "--config", tmp_path / "abl.json", "--data", files / "data", "--out", tmp_path / name, "-q") == 0
    for f in ("ablation.csv", "ablation.txt", "ablation.json", "ablation.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    csv_lines = (tmp_path / "a" / "ablation.csv").read_text().splitlines()
    assert len(csv_lines) == 3 and csv_lines[1].startswith("det,2,")


def test_selfcheck_subset(capsys):
    assert run("selfcheck", "--only", "softmax_invariants,pool_words_bruteforce") == 0
    assert "2/2 checks passed" in capsys.readouterr().out


def test_selfcheck_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setitem(selfcheck.CHECKS, "broken", (lambda: (1.0, False), 0.0))
    assert run("selfcheck", "--only", "broken") == 3
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize(
    "argv",
    [[], ["frobnicate"], ["train", "--bogus"], ["train", "--variant", "vae"], ["train", "--seed", "x"]],
)
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_config_errors_exit_1(files, tmp_path):
    assert run("train", "--config", files / "cfg.json") == 1  # no --data
    (tmp_path / "bad.json").write_text("{oops")
    assert run("train", "--config", tmp_path / "bad.json", "--data", files / "data") == 1
    (tmp_path / "unk.json").write_text(json.dumps({"learning_rate": 1}))
    assert run("train", "--config", tmp_path / "unk.json", "--data", files / "data") == 1
    assert run("ablate", "--config", files / "cfg.json", "--data", files / "data", "--configs", "nope") == 1


def test_data_errors_exit_2(files, tmp_path):
    assert run("train", "--config", files / "cfg.json", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    (tmp_path / "junk.kbca").write_bytes(b"garbage")
    assert run("eval", "--checkpoint", tmp_path / "junk.kbca", "--data", files / "data") == 2
    # width mismatch between config and embeddings
    assert run("train", "--data", files / "data", "--out", tmp_path / "o2") == 2


def test_non_finite_exit_3(files, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(files / "data", bad)
    emb = read_embeddings(bad / "text.emb")
    for arr in emb.values():
        arr[0, 0, 0] = np.inf
    write_embeddings(bad / "text.emb", emb)
    assert run("train", "--config", files / "cfg.json", "--data", bad, "--out", tmp_path / "o", "-q") == 3


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "kbca.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-data", "train", "eval", "ablate", "selfcheck"):
        assert cmd in out.stdout
