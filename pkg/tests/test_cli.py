import json

import pytest

from rbm_exact import cli


def run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def data_lines(text):
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


def test_sample_csv_contract(capsys):
    code, out, _ = run(capsys, "sample", "--d", "1", "--T", "0.3333333333", "--n", "20", "--seed", "42")
    assert code in (0, 3)
    lines = out.splitlines()
    assert lines[0] == f"# rbm-exact {cli.__version__} sample csv v1"
    header = lines[1].split(",")
    assert header == ["sample", "seed", "config_hash", "status", "attempts", "max_level", "N", "value_1"]
    rows = [ln.split(",") for ln in lines[2:]]
    assert len(rows) == 20
    assert {r[1] for r in rows} == {"42"}
    assert len({r[2] for r in rows}) == 1


def test_sample_is_byte_identical(tmp_path):
    args = ["sample", "--d", "2", "--Q", "0,0.5,0.5,0", "--n", "6", "--seed", "3"]
    outs = []
    for i, workers in enumerate(("1", "1", "2")):
        path = tmp_path / f"o{i}.csv"
        assert cli.run(args + ["--workers", workers, "--out", str(path)]) in (0, 3)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("RBM_EXACT_SEED", "17")
    _, out, _ = run(capsys, "sample", "--n", "2")
    assert data_lines(out)[1].split(",")[1] == "17"
    _, out, _ = run(capsys, "sample", "--n", "2", "--seed", "4")
    assert data_lines(out)[1].split(",")[1] == "4"


def test_config_file_and_flag_override(capsys, tmp_path):
    kv = tmp_path / "run.cfg"
    kv.write_text("# comment\nd = 2\nQ = 0,0.5,0.5,0\nn = 3\nseed = 5\n")
    code, out, _ = run(capsys, "sample", "--config", str(kv), "--n", "2")
    assert code in (0, 3)
    rows = data_lines(out)[1:]
    assert len(rows) == 2 and len(rows[0].split(",")) == 9
    js = tmp_path / "run.json"
    js.write_text(json.dumps({"d": 1, "n": 2, "seed": 5}))
    assert run(capsys, "sample", "--config", str(js))[0] in (0, 3)


@pytest.mark.parametrize("argv", [
    ["sample", "--bogus"],
    ["sample", "--d", "2", "--Q", "1,2,3"],
    ["sample", "--d", "2", "--Q", "0,1.2,0,0"],
    ["sample", "--Q", "x"],
    ["sample", "--n", "0"],
    ["sample", "--T", "2"],
    ["sample", "--out", "/nonexistent-dir/x.csv", "--n", "1"],
    ["gamma", "--L", "1", "--U", "-1"],
    ["gamma"],
    ["convergence", "--levels", "a-b"],
])
def test_config_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_unknown_config_key(capsys, tmp_path):
    kv = tmp_path / "bad.cfg"
    kv.write_text("colour = blue\n")
    assert run(capsys, "sample", "--config", str(kv))[0] == 2


def test_budget_exhaustion_exit_3(capsys):
    code, out, err = run(capsys, "sample", "--n", "10", "--max-level", "1", "--seed", "1")
    assert code == 3
    assert "budget_exhausted" in out
    assert len(data_lines(out)) == 11  # partial results are still written
    assert "exhausted" in err


def test_gamma_command(capsys):
    code, out, _ = run(capsys, "gamma", "--L", "-1", "--U", "1", "--r", "1", "--a", "0", "--b", "0",
                       "--tol", "1e-9")
    assert code == 0
    parts = dict(kv.split("=") for kv in out.split())
    lo, hi, mid = float(parts["lower"]), float(parts["upper"]), float(parts["mid"])
    assert lo <= mid <= hi and hi - lo <= 1e-9
    assert mid == pytest.approx(0.7300003283, abs=1e-9)
    code, out, _ = run(capsys, "gamma", "--L", "-1", "--U", "1", "--format", "json")
    assert json.loads(out)["schema_version"] == 1


def test_validate_is_deterministic(capsys):
    args = ["validate", "--suite", "skorokhod_conditions", "--n", "10", "--seed", "7"]
    code, first, _ = run(capsys, *args)
    assert code == 0
    _, second, _ = run(capsys, *args)
    assert first == second
    verdict = json.loads(first)
    assert verdict["passed"] and verdict["schema_version"] == 1


def test_validate_failure_exit_4(capsys, monkeypatch):
    monkeypatch.setitem(cli.harness.SUITES, "lipschitz", lambda seed, **kw: {"passed": False})
    assert run(capsys, "validate", "--suite", "lipschitz")[0] == 4


def test_convergence_and_inspect(capsys):
    code, out, _ = run(capsys, "convergence", "--levels", "2-4", "--seeds", "5", "--seed", "1")
    assert code == 0
    assert data_lines(out)[0] == "level,mean_area" and len(data_lines(out)) == 4
    code, out, _ = run(capsys, "inspect", "--level", "2", "--seed", "1")
    assert code == 0 and len(out.splitlines()) == 5


def test_help_and_version(capsys):
    assert run(capsys, "--version")[0] == 0
    assert run(capsys, "sample", "--help")[0] == 0


def test_validate_halfnormal_reports_ks(capsys):
    args = ["validate", "--suite", "one_d_halfnormal", "--seed", "7", "--n", "200"]
    code, first, _ = run(capsys, *args)
    verdict = json.loads(first)
    assert code == (0 if verdict["passed"] else 4)
    assert 0 < verdict["ks"]["statistic"] < 1
    assert run(capsys, *args)[1] == first
