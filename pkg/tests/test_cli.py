import json
import subprocess
import sys
from pathlib import Path

from mflqg.cli import dispatch

PF_CONFIG = """
mode = "pf"

[grid]
T = 1.0
M = 100

[coefficients]
A = -0.2
B = 1.0
alpha = 0.4
m = 0.2
sigma = 0.5
sigma_tilde = 0.3
Q = 1.0
R = 1.0
G = 0.5
x_init = 1.0

[population]
N = 8
reps = 3
seed = 42
"""

PO_CONFIG = PF_CONFIG.replace('mode = "pf"', 'mode = "po"') + """
"""


def write_config(tmp_path, text, name="model.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_outputs(out_dir):
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())}


def test_solve_pf_happy_path(tmp_path):
    cfg = write_config(tmp_path, PF_CONFIG)
    out = tmp_path / "out"
    code = dispatch(["solve-pf", "--config", str(cfg), "--out-dir", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert (out / "pf_consistency.csv").exists()
    assert "pf_consistency.csv" in manifest["outputs"]
    assert manifest["seed"] == 42
    header = (out / "pf_consistency.csv").read_text().splitlines()[0]
    assert header.split(",")[0] == "t"


def test_solve_po_happy_path(tmp_path):
    text = PO_CONFIG.replace("x_init = 1.0", "x_init = 1.0\nH = 0.5\nH_tilde = 0.1\nh = 0.05")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    code = dispatch(["solve-po", "--config", str(cfg), "--out-dir", str(out)])
    assert code == 0
    assert (out / "po_consistency.csv").exists()


def test_simulate_writes_paths_and_summary(tmp_path):
    cfg = write_config(tmp_path, PF_CONFIG)
    out = tmp_path / "out"
    code = dispatch(["simulate", "--config", str(cfg), "--out-dir", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for rep in range(3):
        assert f"paths_rep{rep:04d}.csv" in manifest["outputs"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["cost_population"]["mean"] >= 0.0
    # The manifest references exactly the files written beside it.
    on_disk = {p.name for p in out.iterdir()}
    assert set(manifest["outputs"]) | {"manifest.json"} == on_disk


def test_unknown_subcommand_exits_2(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "mflqg.cli", "frobnicate"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()


def test_assumption_violation_exits_1_with_error_json(tmp_path, capsys):
    cfg = write_config(tmp_path, PF_CONFIG.replace("R = 1.0", "R = 0.0"))
    out = tmp_path / "out"
    code = dispatch(["solve-pf", "--config", str(cfg), "--out-dir", str(out)])
    assert code == 1
    err = capsys.readouterr().err
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "AssumptionViolation"
    assert "R>0" in payload["message"]


def test_missing_coefficient_error_json(tmp_path, capsys):
    cfg = write_config(tmp_path, PO_CONFIG)  # po mode without sensor fields
    code = dispatch(["solve-po", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert code == 1
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "MissingCoefficient"


def test_repeat_runs_byte_identical(tmp_path):
    cfg = write_config(tmp_path, PF_CONFIG)
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert dispatch(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == 0
        outs.append(read_outputs(out))
    assert set(outs[0]) == set(outs[1])
    for name in outs[0]:
        if name == "manifest.json":
            m0 = json.loads(outs[0][name])
            m1 = json.loads(outs[1][name])
            m0.pop("wall_clock_seconds")
            m1.pop("wall_clock_seconds")
            assert m0 == m1
        else:
            assert outs[0][name] == outs[1][name], name


def test_study_convergence_thread_count_invariance(tmp_path):
    cfg = write_config(tmp_path, PF_CONFIG.replace("reps = 3", "reps = 60"))
    outs = []
    for sub, threads in (("a", "1"), ("b", "4")):
        out = tmp_path / sub
        code = dispatch(
            [
                "study-convergence",
                "--config", str(cfg),
                "--out-dir", str(out),
                "--N-list", "4", "8", "16",
                "--threads", threads,
            ]
        )
        assert code == 0
        outs.append(read_outputs(out))
    assert outs[0]["convergence.csv"] == outs[1]["convergence.csv"]
    assert outs[0]["convergence.json"] == outs[1]["convergence.json"]


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_config(tmp_path, PF_CONFIG)
    a, b = tmp_path / "a", tmp_path / "b"
    dispatch(["simulate", "--config", str(cfg), "--out-dir", str(a)])
    dispatch(["simulate", "--config", str(cfg), "--out-dir", str(b), "--seed", "43"])
    assert read_outputs(a)["paths_rep0000.csv"] != read_outputs(b)["paths_rep0000.csv"]


def test_csv_full_precision_round_trip(tmp_path):
    import numpy as np

    cfg = write_config(tmp_path, PF_CONFIG)
    out = tmp_path / "out"
    dispatch(["solve-pf", "--config", str(cfg), "--out-dir", str(out)])
    lines = (out / "pf_consistency.csv").read_text().splitlines()
    row = lines[1].split(",")
    # 17 significant digits round-trip float64 exactly.
    val = float(row[1])
    assert f"%.17g" % val == row[1]
    assert val == np.float64(row[1])
