import csv
import json

import numpy as np
import pytest

from exprnet.cli import emit_pgm, run_cli
from exprnet.config import load_run_config, parse_run_config
from exprnet.data import decode_ppm, read_ppm
from exprnet.errors import ConfigError

TINY = {"model": {"input_size": 16, "dense_widths": [8, 4]},
        "train": {"epochs": 2, "batch_size": 8, "workers": 1}}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run_cli(["synth-toy", "--out", str(root / "toy"), "--n", "10", "--size", "16",
                    "--seed", "7"]) == 0
    (root / "cfg.json").write_text(json.dumps(TINY))
    return root


def read_pgm(path):
    data = path.read_bytes()
    header, payload = data.split(b"\n255\n", 1)
    magic, w, h = header.split()
    assert magic == b"P5"
    return np.frombuffer(payload, np.uint8).reshape(int(h), int(w))


# -- usage ------------------------------------------------------------------

@pytest.mark.parametrize("argv", [[], ["bogus"], ["train"], ["synth-toy", "--out", "x", "--n", "abc"],
                                  ["train", "--out", "x", "--experiment", "9"]])
def test_usage_errors_exit_1(argv, capsys):
    assert run_cli(argv) == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_help_exits_0(capsys):
    assert run_cli(["--help"]) == 0


# -- PGM ------------------------------------------------------------------------

def test_emit_pgm_values(tmp_path):
    emit_pgm(np.zeros((4, 5)), tmp_path / "z.pgm")
    emit_pgm(np.ones((4, 5)), tmp_path / "o.pgm")
    emit_pgm(np.full((2, 2), 0.5), tmp_path / "h.pgm")
    assert np.all(read_pgm(tmp_path / "z.pgm") == 0)
    o = read_pgm(tmp_path / "o.pgm")
    assert o.shape == (4, 5) and np.all(o == 255)
    assert np.all(read_pgm(tmp_path / "h.pgm") == 128)


def test_emit_pgm_bit_exact(tmp_path, nprng):
    hm = nprng.random((7, 3))
    emit_pgm(hm, tmp_path / "a.pgm")
    emit_pgm(hm, tmp_path / "b.pgm")
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), np.floor(255 * hm + 0.5).astype(np.uint8))


# -- config ----------------------------------------------------------------------

def test_unknown_keys_named():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        parse_run_config({"train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError, match="optimizer"):
        parse_run_config({"optimizer": {}})


def test_config_sections_and_defaults(tmp_path):
    rc = parse_run_config({"model": {"attention": "se"}, "augment": {"vflip_prob": 0.0},
                           "data": {"val_frac": 0.25}})
    assert rc.model.attention == "se" and rc.train.augment.vflip_prob == 0.0
    assert rc.train.initial_lr == 0.02 and rc.data.val_frac == 0.25
    assert parse_run_config({"augment": None}).train.augment is None
    rc.dump(tmp_path / "c.json")
    assert load_run_config(tmp_path / "c.json").to_dict() == rc.to_dict()


def test_bad_config_file_exit_2(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"nope": 1}}))
    assert run_cli(["train", "--data", str(corpus / "toy"), "--config", str(bad),
                    "--out", str(tmp_path / "o")]) == 2
    assert "train.nope" in capsys.readouterr().err


# -- subcommands ---------------------------------------------------------------------

def test_synth_toy_layout(corpus):
    toy = corpus / "toy"
    assert len(list((toy / "happy").glob("*.ppm"))) == 10
    assert len(list((toy / "sad").glob("*.ppm"))) == 10
    assert read_ppm(next((toy / "happy").glob("*.ppm"))).shape == (16, 16, 3)


def test_train_eval_gradcam(corpus, tmp_path, capsys):
    out = tmp_path / "run"
    args = ["train", "--data", str(corpus / "toy"), "--config", str(corpus / "cfg.json"),
            "--out", str(out), "--experiment", "7", "--seed", "3"]
    assert run_cli(args) == 0
    for name in ("config.json", "log.csv", "best.ckpt", "final.ckpt"):
        assert (out / name).exists()
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["train"]["epochs"] == 2 and resolved["train"]["seed"] == 3
    assert resolved["model"]["seed"] == 3 and resolved["augment"]["master_seed"] == 3
    assert resolved["data"]["seed"] == 3
    capsys.readouterr()

    assert run_cli(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(corpus / "toy"),
                    "--split", "all"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["samples"] == 20 and 0 <= report["accuracy"] <= 1

    images = sorted((corpus / "toy" / "sad").glob("*.ppm"))[:2]
    assert run_cli(["gradcam", "--checkpoint", str(out / "best.ckpt"), "--out", str(tmp_path / "cam"),
                    "--class", "1", *map(str, images)]) == 0
    cams = sorted((tmp_path / "cam").glob("*.pgm"))
    assert len(cams) == 2 and read_pgm(cams[0]).shape == (224, 224)


def test_train_flags_override_file(corpus, tmp_path):
    out = tmp_path / "run"
    assert run_cli(["train", "--data", str(corpus / "toy"), "--config", str(corpus / "cfg.json"),
                    "--out", str(out), "--epochs", "1", "--no-augment"]) == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["train"]["epochs"] == 1 and resolved["augment"] is None
    assert len((out / "log.csv").read_text().splitlines()) == 2


def test_train_twice_byte_identical_logs(corpus, tmp_path):
    for name in ("a", "b"):
        assert run_cli(["train", "--data", str(corpus / "toy"), "--config", str(corpus / "cfg.json"),
                        "--out", str(tmp_path / name), "--workers", "1"]) == 0
    assert (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()


def test_experiments_table(corpus, tmp_path, capsys):
    out = tmp_path / "results"
    assert run_cli(["experiments", "--data", str(corpus / "toy"), "--config", str(corpus / "cfg.json"),
                    "--out", str(out), "--epochs", "1"]) == 0
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert len(rows) == 8
    assert "Experiment 8" in capsys.readouterr().out
    assert (out / "config.json").exists() and (out / "report.txt").exists()


def test_augment_manifest(corpus, tmp_path):
    out = tmp_path / "aug"
    assert run_cli(["augment", "--data", str(corpus / "toy"), "--out", str(out), "--copies", "2",
                    "--seed", "5"]) == 0
    rows = list(csv.DictReader((out / "manifest.csv").open()))
    assert len(rows) == 40
    assert set(rows[0]) == {"source", "output", "seed", "index", "ops"}
    assert {r["seed"] for r in rows} == {"5"}
    assert [int(r["index"]) for r in rows] == list(range(40))
    assert rows[0]["output"].endswith("_aug0.ppm") and rows[1]["output"].endswith("_aug1.ppm")
    first = decode_ppm(open(rows[0]["output"], "rb").read())
    assert first.shape == (16, 16, 3)
    again = tmp_path / "aug2"
    run_cli(["augment", "--data", str(corpus / "toy"), "--out", str(again), "--copies", "2", "--seed", "5"])
    assert (again / "happy" / "00000_aug1.ppm").read_bytes() == (out / "happy" / "00000_aug1.ppm").read_bytes()


def test_missing_data_exit_2(tmp_path):
    assert run_cli(["train", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 2
    assert run_cli(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--data", "x"]) == 2


def test_gradcheck_exit_0(capsys):
    assert run_cli(["gradcheck", "--trials", "2"]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 11 and "FAIL" not in out


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "exprnet"], capture_output=True)
    assert r.returncode == 1
