import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from icnnvolt import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_eval_identical_files(tmp_path, capsys):
    f = tmp_path / "a.csv"
    f.write_text("x,y\n1.0,2.0\n3.0,4.5\n")
    assert run("eval", "--pred", f, "--target", f, "--out", tmp_path / "m.csv") == 0
    assert "mae 0.0" in capsys.readouterr().out
    assert read_rows(tmp_path / "m.csv")[1] == ["mae", "0.0"]


def test_exit_codes(tmp_path, capsys):
    assert run("no-such-command") == 2
    assert run("gen-data", "--net", tmp_path / "missing.json") == 1
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "icnnvolt", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    common = ("--out-dir", d, "--seed", 3)
    assert run("gen-network", "--kind", "random_tree", "--n", 4, "--out", "net.json", *common) == 0
    assert run("gen-data", "--net", d / "net.json", "--samples", 400, "--out", "train.csv", *common) == 0
    assert run("gen-data", "--net", d / "net.json", "--samples", 4, "--uncontrolled",
               "--out", "test.csv", *common) == 0
    assert run("train", "--data", d / "train.csv", "--net", d / "net.json", "--iters", 300,
               "--hidden", "8,8", "--loss-csv", "loss.csv", "--out", "model.json", *common) == 0
    return d


def test_pipeline_outputs(pipeline, capsys):
    d = pipeline
    assert len(read_rows(d / "loss.csv")) == 301
    common = ("--out-dir", d, "--seed", 3)
    assert run("regulate", "--model", d / "model.json", "--net", d / "net.json",
               "--instances", d / "test.csv", "--out", "reg.csv", *common) == 0
    rows = read_rows(d / "reg.csv")
    assert len(rows) == 5 and rows[0][-3:] == ["iterations", "converged", "objective"]
    assert run("distributed", "--model", d / "model.json", "--net", d / "net.json",
               "--instances", d / "test.csv", "--graph", "ring", "--out", "dist.csv", *common) == 0
    assert len(read_rows(d / "dist_agents.csv")) == 5
    assert run("baseline", "linear-fit", "--data", d / "train.csv", "--out", "lin.json", *common) == 0
    assert run("baseline", "linear-regulate", "--model", d / "lin.json", "--net", d / "net.json",
               "--instances", d / "test.csv", "--out", "lreg.csv", *common) == 0
    assert run("baseline", "oracle", "--net", d / "net.json", "--instances", d / "test.csv",
               "--grid-points", 5, "--out", "oracle.csv", *common) == 0
    assert run("eval", "--qstar", d / "reg.csv", "--net", d / "net.json",
               "--instances", d / "test.csv") == 0
    assert "viol_5pct" in capsys.readouterr().out


def test_maxaffine_commands(tmp_path):
    (tmp_path / "abs.json").write_text(json.dumps({"pieces": [{"a": [1.0], "b": 0.0}, {"a": [-1.0], "b": 0.0}]}))
    assert run("maxaffine", "convert", "--in", tmp_path / "abs.json", "--out", tmp_path / "m.json") == 0
    x = np.linspace(-1, 1, 101).tolist()
    with open(tmp_path / "fit.csv", "w") as fh:
        fh.write("x_1,y\n" + "".join(f"{a!r},{abs(a)!r}\n" for a in x))
    assert run("maxaffine", "fit", "--data", tmp_path / "fit.csv", "--pieces", 2,
               "--out", tmp_path / "f.json") == 0
    assert run("train", "--data", tmp_path / "nope.csv") == 1


def test_enumerate_command(pipeline, tmp_path):
    d = pipeline
    assert run("train", "--data", d / "train.csv", "--iters", 50, "--hidden", "3",
               "--out", tmp_path / "one.json") == 0
    assert run("maxaffine", "enumerate", "--model", tmp_path / "one.json", "--samples", 2000,
               "--output", 2, "--out", tmp_path / "pieces.csv") == 0
    assert len(read_rows(tmp_path / "pieces.csv")) == 1 + 2 ** 3


def test_manifest_rerun_is_bit_identical(pipeline):
    d = pipeline
    before = (d / "model.json").read_bytes()
    manifest = d / "model.json.manifest.json"
    assert json.loads(manifest.read_text())["config"]["iterations"] == 300
    assert cli.rerun_manifest(manifest) == 0
    assert (d / "model.json").read_bytes() == before


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "random_tree", "n": 5, "seed": 1}))
    assert run("gen-network", "--config", cfg, "--out", tmp_path / "a.json") == 0
    assert len(json.loads((tmp_path / "a.json").read_text())["lines"]) == 4
    assert run("gen-network", "--config", cfg, "--n", 7, "--out", tmp_path / "b.json") == 0
    assert len(json.loads((tmp_path / "b.json").read_text())["lines"]) == 6
    m = json.loads((tmp_path / "b.json.manifest.json").read_text())
    assert m["seed"] == 1 and m["config"]["n"] == 7


def test_small_repro_is_deterministic(tmp_path):
    args = ("repro", "--n-train", 300, "--n-test", 6, "--iterations", 200, "--n-distributed", 1, "--seed", 5)
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()
    rows = read_rows(tmp_path / "a" / "summary.csv")
    assert [r[0] for r in rows[1:]] == ["uncontrolled", "linear", "nn", "icnn", "distributed"]
