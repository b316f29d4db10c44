import json
import subprocess
import sys

import numpy as np
import pytest

from qmlsec.cli import main
from qmlsec.simcore import Circuit, GateOp, format_circuit, parse_circuit, random_circuit

GHZ = Circuit(3, (GateOp("H", (0,)), GateOp("CNOT", (0, 1)), GateOp("CNOT", (1, 2))))


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def write_circuit(path, circ):
    path.write_text(format_circuit(circ))
    return str(path)


def test_gradcheck_passes(tmp_path, capsys):
    assert main(["qnn", "gradcheck", "--seed", "7", "--out", str(tmp_path / "g")]) == 0
    doc = json.loads((tmp_path / "g" / "gradcheck.json").read_text())
    assert doc["relative_error"] < 1e-5
    assert "max_relative_error=" in capsys.readouterr().out


def test_dataset_gen_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["dataset", "gen", "--per-class", "3", "--seed", "4", "--out", str(tmp_path / name)]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    assert len([k for k in a if k.endswith(".pgm")]) == 18
    manifest = json.loads(a["run_manifest.json"])
    assert manifest["command"] == "dataset gen"
    assert manifest["seeds"] == {"seed": 4}
    assert "manifest.csv" in manifest["artifacts"]


def test_refuses_to_overwrite_without_force(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["dataset", "gen", "--per-class", "1", "--out", out]) == 0
    assert main(["dataset", "gen", "--per-class", "1", "--out", out]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["dataset", "gen", "--per-class", "1", "--out", out, "--force"]) == 0


def test_usage_and_validation_exit_codes(tmp_path, capsys):
    assert main(["teleport"]) == 2
    assert main(["sec", "split", "--out", str(tmp_path)]) == 2
    circ = write_circuit(tmp_path / "c.txt", GHZ)
    capsys.readouterr()
    assert main(["sec", "split", "--circuit", circ, "--k", "9", "--out", str(tmp_path / "s")]) == 1
    assert capsys.readouterr().err == "error: k must be in [1, 3], got 9\n"
    assert main(["sim", "run", "--circuit", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "r")]) == 1


def test_split_recombine_byte_identical(tmp_path):
    circ = random_circuit(3, 12, np.random.default_rng(3))
    src = write_circuit(tmp_path / "c.txt", circ)
    assert main(["sec", "split", "--circuit", src, "--k", "4", "--shuffle-seed", "2",
                 "--out", str(tmp_path / "frags")]) == 0
    frags = sorted(str(p) for p in (tmp_path / "frags").glob("fragment_*.txt"))
    assert len(frags) == 4
    assert main(["sec", "recombine", "--fragments", *frags[::-1], "--out", str(tmp_path / "back")]) == 0
    assert (tmp_path / "back" / "circuit.txt").read_bytes() == (tmp_path / "c.txt").read_bytes()


def test_obfuscate_restore_round_trip(tmp_path):
    src = write_circuit(tmp_path / "c.txt", GHZ)
    assert main(["sec", "obfuscate", "--circuit", src, "--count", "2", "--out", str(tmp_path / "o")]) == 0
    obf = parse_circuit((tmp_path / "o" / "obfuscated.txt").read_text())
    assert len(obf.ops) == len(GHZ.ops) + 2
    assert main(["sec", "restore", "--circuit", str(tmp_path / "o" / "obfuscated.txt"),
                 "--key", str(tmp_path / "o" / "key.json"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "circuit.txt").read_bytes() == (tmp_path / "c.txt").read_bytes()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"per_class": 2, "seed": 5}))
    assert main(["dataset", "gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    a = json.loads((tmp_path / "a" / "run_manifest.json").read_text())
    assert a["config"]["per_class"] == 2 and a["config"]["seed"] == 5
    assert main(["dataset", "gen", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "b")]) == 0
    b = json.loads((tmp_path / "b" / "run_manifest.json").read_text())
    assert b["config"]["per_class"] == 2 and b["config"]["seed"] == 6
    cfg.write_text(json.dumps({"colour": "red"}))
    assert main(["dataset", "gen", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 1


def test_sim_tvd_and_allocate(tmp_path, capsys):
    a = write_circuit(tmp_path / "a.txt", GHZ)
    b = write_circuit(tmp_path / "b.txt", Circuit(3, GHZ.ops[:1] + (GateOp("SWAP", (0, 1)),) + GHZ.ops[1:]))
    assert main(["sim", "tvd", "--a", a, "--b", b, "--out", str(tmp_path / "t")]) == 0
    assert json.loads((tmp_path / "t" / "tvd.json").read_text())["tvd"] == pytest.approx(0.5, abs=1e-12)
    assert main(["sec", "allocate", "--device", "ideal:3", "--sizes", "1,1", "--out", str(tmp_path / "al")]) == 0
    doc = json.loads((tmp_path / "al" / "allocation.json").read_text())
    assert doc == {"programs": {"0": [0], "1": [2]}, "buffer": [1]}


def test_data_to_qnn_chain(tmp_path):
    run = lambda *a: main(list(a))  # noqa: E731
    assert run("dataset", "gen", "--per-class", "4", "--out", str(tmp_path / "d")) == 0
    assert run("dataset", "split", "--manifest", str(tmp_path / "d" / "manifest.csv"), "--out",
               str(tmp_path / "s")) == 0
    assert run("cae", "train", "--manifest", str(tmp_path / "s" / "train.csv"), "--epochs", "1",
               "--out", str(tmp_path / "c")) == 0
    assert run("cae", "encode", "--model", str(tmp_path / "c" / "cae.json"), "--manifest",
               str(tmp_path / "s" / "holdout.csv"), "--out", str(tmp_path / "z")) == 0
    latents = str(tmp_path / "z" / "latents.csv")
    assert run("qnn", "train", "--train", latents, "--classes", "0,1,2", "--epochs", "1",
               "--out", str(tmp_path / "q")) == 0
    assert run("qnn", "eval", "--model", str(tmp_path / "q" / "model.json"), "--data", latents,
               "--classes", "0,1,2", "--out", str(tmp_path / "e")) == 0
    assert 0 <= json.loads((tmp_path / "e" / "metrics.json").read_text())["accuracy"] <= 1


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qmlsec.cli", "sec", "inject", "--device", "ideal:5",
                          "--adversary", "0", "--shots", "200", "--out", str(tmp_path / "i")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    doc = json.loads((tmp_path / "i" / "reliability.json").read_text())
    assert doc["adjacent"]["reliability"] == 1.0 and doc["buffered"]["reliability"] == 1.0
