import io
import shutil
import subprocess
import sys

import numpy as np
import pytest

from tradeslab.checkpoint import load_checkpoint
from tradeslab.cli import main
from tradeslab.csvio import parse_table, read_table


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def blob_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "blobs.csv"
    assert run("gen-data", "--kind", "blobs", "--n", 120, "--seed", 0, "--out", path)[0] == 0
    return path


@pytest.fixture(scope="module")
def trained_ckpt(blob_csv):
    path = blob_csv.parent / "model.ckpt"
    code, _, err = run("train", "--data", blob_csv, "--mode", "trades_binary", "--epochs", 3, "--batch", 32,
                       "--k", 3, "--hidden", 8, "--seed", 1, "--ckpt-out", path)
    assert code == 0, err
    return path


def test_no_arguments_is_a_usage_error():
    code, _, err = run()
    assert code == 1 and "usage" in err


def test_missing_required_option_is_a_usage_error():
    assert run("gen-data", "--kind", "blobs", "--n", 10)[0] == 1
    assert run("witness")[0] == 1


def test_psi_hinge_is_identity():
    code, out, _ = run("psi", "--loss", "hinge")
    header, rows = parse_table(out)
    assert code == 0 and header[:2] == ["theta", "psi"]
    theta, psi = np.array([r[0] for r in rows], float), np.array([r[1] for r in rows], float)
    assert len(rows) == 1025 and np.max(np.abs(psi - theta)) <= 1e-3


def test_staircase_command():
    assert run("staircase", "--eps", 0.1)[1] == "r_nat,r_bdy,r_rob\n0,1,1\n"
    assert run("staircase", "--classifier", "allone")[1] == "r_nat,r_bdy,r_rob\n0.5,0,0.5\n"


def test_gen_data_is_deterministic(tmp_path):
    a = run("gen-data", "--kind", "rings", "--n", 50, "--seed", 4)[1]
    b = run("gen-data", "--kind", "rings", "--n", 50, "--seed", 4)[1]
    assert a == b and a.startswith("x0,x1,label\n")


def test_train_is_deterministic(blob_csv, trained_ckpt, tmp_path):
    again = tmp_path / "again.ckpt"
    run("train", "--data", blob_csv, "--mode", "trades_binary", "--epochs", 3, "--batch", 32,
        "--k", 3, "--hidden", 8, "--seed", 1, "--ckpt-out", again)
    assert again.read_bytes() == trained_ckpt.read_bytes()


def test_train_resume_matches_uninterrupted(blob_csv, trained_ckpt, tmp_path):
    common = ["--data", blob_csv, "--mode", "trades_binary", "--batch", 32, "--k", 3, "--hidden", 8, "--seed", 1]
    run("train", *common, "--epochs", 1, "--ckpt-out", tmp_path / "one.ckpt")
    code, _, err = run("train", *common, "--epochs", 3, "--resume", tmp_path / "one.ckpt",
                       "--ckpt-out", tmp_path / "resumed.ckpt", "--metrics-out", tmp_path / "m.csv")
    assert code == 0, err
    assert (tmp_path / "resumed.ckpt").read_bytes() == trained_ckpt.read_bytes()
    header, rows = read_table(tmp_path / "m.csv")
    assert "epoch" in header and len(rows) == 3


def test_attack_is_deterministic_and_bounded(blob_csv, trained_ckpt, tmp_path):
    args = ["attack", "--model", trained_ckpt, "--data", blob_csv, "--eps", 0.2, "--seed", 3]
    code, a, err = run(*args)
    assert code == 0, err
    assert run(*args)[1] == a
    _, clean = parse_table(blob_csv.read_text())
    _, adv = parse_table(a)
    diff = np.abs(np.array(adv, float)[:, :2] - np.array(clean, float)[:, :2])
    assert diff.max() <= 0.2 + 1e-12


def test_eval_and_verify(blob_csv, trained_ckpt, tmp_path):
    code, out, err = run("eval", "--model", trained_ckpt, "--data", blob_csv, "--eps", 0.1, "--mode", "exact")
    assert code == 0, err
    header, rows = parse_table(out)
    rec = dict(zip(header, rows[0]))
    assert rec["r_rob"] == pytest.approx(rec["r_nat"] + rec["r_bdy"])
    base = tmp_path / "base.ckpt"
    run("train", "--data", blob_csv, "--mode", "natural", "--epochs", 3, "--batch", 32, "--hidden", 8,
        "--surrogate", "hinge", "--seed", 1, "--ckpt-out", base)
    code, out, err = run("verify-bound", "--model", trained_ckpt, "--baseline", base, "--data", blob_csv,
                         "--lambda", 2.0, "--eps", 0.1)
    assert code == 0, err
    assert "delta" in out.splitlines()[0]


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# defaults for gen-data\nkind = blobs\nn = 7\nseed = 2\n")
    _, out, _ = run("gen-data", "--config", cfg)
    assert len(out.splitlines()) == 8
    _, out, _ = run("gen-data", "--config", cfg, "--n", 3)
    assert len(out.splitlines()) == 4
    cfg.write_text("kind = blobs\nkind = rings\n")
    assert run("gen-data", "--config", cfg)[0] == 2


def test_data_errors_exit_2(tmp_path):
    out = tmp_path / "m.ckpt"
    assert run("train", "--data", tmp_path / "missing.csv", "--seed", 0, "--ckpt-out", out)[0] == 2
    (tmp_path / "bad.csv").write_text("x0,label\n1,zz\n")
    code, _, err = run("train", "--data", tmp_path / "bad.csv", "--seed", 0, "--ckpt-out", out)
    assert code == 2 and "data error" in err
    (tmp_path / "bad.ckpt").write_bytes(b"TRDS\x07\x00\x00\x00")
    assert run("eval", "--model", tmp_path / "bad.ckpt", "--data", tmp_path / "bad.csv", "--mode", "exact")[0] == 2


def test_numeric_failures_exit_3(blob_csv, tmp_path):
    code, _, err = run("train", "--data", blob_csv, "--mode", "natural", "--eta2", 1e300, "--epochs", 2, "--batch", 32,
                       "--seed", 0, "--ckpt-out", tmp_path / "m.ckpt")
    assert code == 3 and "numeric error" in err


def test_witness_and_srm_commands(blob_csv):
    code, out, err = run("witness", "--theta", 0.4)
    assert code == 0, err
    code, out, err = run("srm", "--data", blob_csv, "--margins", "0.4,0.2", "--eps", 0.05)
    header, rows = parse_table(out)
    assert code == 0 and len(rows) == 2 and sum(1 for r in rows if r[header.index("selected")]) == 1


def test_sweep_command(blob_csv, tmp_path):
    code, out, err = run("sweep-lambda", "--data", blob_csv, "--list", "0.5,0.5", "--epochs", 1, "--k", 2,
                         "--batch", 32, "--hidden", 4, "--seed", 0)
    assert code == 0, err
    _, rows = parse_table(out)
    assert len(rows) == 2 and rows[0] == rows[1]


def test_console_script_runs():
    exe = shutil.which("tradeslab")
    cmd = [exe] if exe else [sys.executable, "-m", "tradeslab.cli"]
    proc = subprocess.run(cmd + ["staircase"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.splitlines()[1] == "0,1,1"
    proc = subprocess.run(cmd, capture_output=True, text=True, check=False)
    assert proc.returncode == 1
