import io
import json
import math

import numpy as np
import pytest

from blockprec.cli import canonical_json, main


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_bound_example():
    code, out, _ = run(
        "bound --dim 2 --lambda-d 1 --lambda-1 1 --lambda-0 2 --partition 1,1 --kind gl1".split()
    )
    assert code == 0
    assert json.loads(out)["log_bound"] == pytest.approx(math.log(2.0), abs=1e-15)


def test_estimate_tikhonov_csv(tmp_path):
    np.savetxt(tmp_path / "S.csv", np.eye(3), delimiter=",")
    code, out, _ = run(["estimate", "--scatter", str(tmp_path / "S.csv"), "--n", "10", "--tikhonov", "0.5", "--format", "csv"])
    assert code == 0
    om = np.loadtxt(io.StringIO(out), delimiter=",")
    assert np.allclose(om, np.eye(3) * 2 / 3)


def test_synth_then_search(tmp_path):
    code, _, _ = run(["synth", "--groups", "5,5,5", "--n", "200", "--seed", "7", "--out", str(tmp_path / "s")])
    assert code == 0
    code, out, _ = run(
        ["search", "--input", str(tmp_path / "s" / "data.csv"), "--method", "gl1-ue",
         "--lambda-d", "1", "--lambda-1", "4", "--lambda-0", "20"]
    )
    assert code == 0
    rep = json.loads(out)
    assert len(rep["final_partition"]) == 15
    planted = json.loads((tmp_path / "s" / "report.json").read_text())["planted"]
    assert rep["n_groups"] == len(set(planted))


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambda_d": 1, "lambda_1": 1, "lambda_0": 2, "partition": "1,2", "kind": "gl12"}))
    code, out, _ = run(["bound", "--config", str(cfg), "--lambda-0", "4"])
    assert code == 0
    rep = json.loads(out)
    assert rep["kind"] == "gl12"
    assert rep["log_bound"] == pytest.approx(math.log(2 / 4), abs=1e-14)


def test_usage_errors_exit_one():
    assert run(["bound", "--bogus"])[0] == 1
    assert run([])[0] == 1
    assert run(["bound", "--dim", "2"])[0] == 1
    code, _, err = run(["nosuch"])
    assert code == 1 and "usage" in err


def test_numerical_failure_exits_two(tmp_path):
    np.savetxt(tmp_path / "S.csv", np.eye(3) + 0.1, delimiter=",")
    code, _, err = run(
        ["estimate", "--scatter", str(tmp_path / "S.csv"), "--n", "10", "--il1", "0.1", "--max-iter", "1", "--tol", "1e-15"]
    )
    assert code == 2 and "numerical failure" in err


def test_logz_report(tmp_path):
    code, _, _ = run(
        "logz --dim 2 --partition 1,1 --lambda-d 1 --lambda-1 1 --lambda-0 2 --n-samples 20000".split()
        + ["--out", str(tmp_path)]
    )
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert abs(rep["logz_is"] - rep["logz_exact"]) < 4 * rep["std_err"]


def test_sample_report():
    code, out, _ = run("sample --partition 1,2 --lambda-d 1 --lambda-1 1 --lambda-0 2 --sweeps 30 --burn-in 5".split())
    assert code == 0
    assert np.array(json.loads(out)["mean_abs"]).shape == (2, 2)


def test_reports_are_deterministic(tmp_path):
    argv = "logz --dim 3 --partition 1,1,2 --lambda-d 1 --lambda-1 1 --lambda-0 2 --n-samples 5000 --seed 3".split()
    a = json.loads(run(argv)[1])
    b = json.loads(run(argv)[1])
    assert canonical_json(a) == canonical_json(b)


def test_cv_command(tmp_path):
    run(["synth", "--groups", "2,2", "--n", "40", "--out", str(tmp_path)])
    code, out, _ = run(
        ["cv", "--input", str(tmp_path / "data.csv"), "--methods", "T,IL1", "--grid-points", "3", "--grid-hi", "100"]
    )
    assert code == 0
    rep = json.loads(out)
    assert set(rep["median_test_ll"]) == {"T", "IL1"}
    assert "timing" in rep and "timing" not in json.loads(canonical_json(rep))
