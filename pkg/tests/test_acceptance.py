"""The nine acceptance criteria, at their full sizes and tolerances.

Each test prints one pass/fail line; the lines are repeated in the terminal
summary. Thresholds live in ``harness.THRESHOLDS``.
"""

import numpy as np
import pytest

from rbm_exact import cli, harness

SEED = 20240601


@pytest.mark.slow
def test_exactness_one_d(report):
    v = harness.run_suite("one_d_halfnormal", SEED, n=2000, max_level=22)
    ks = v["ks"]
    ok = ks.passed and v["budget_fraction"] < 0.01
    report(1, "1-d half-normal", ok,
           f"KS {ks.statistic:.4f} < {ks.critical:.4f} (alpha {ks.alpha}), "
           f"exhausted {v['budget_exhausted']} ({100 * v['budget_fraction']:.2f}%)")
    assert ok


def test_envelope_convergence_rate(report):
    v = harness.run_suite("convergence", SEED, n=200)
    report(2, "envelope area rate", v["passed"],
           f"log2 slope {v['slope']:.4f} over levels 2..10, 200 seeds (want [-0.65, -0.35])")
    assert v["passed"]


@pytest.mark.slow
def test_gamma_series_vs_oracle(report):
    v = harness.run_suite("gamma_oracle", SEED, n_cases=20, n_paths=10**6, grid_step=2.0 ** -12)
    report(3, "gamma series vs bridge oracle", v["passed"],
           f"max |series - oracle| / se = {v['max_z']:.2f} over 20 cases (want <= 3)")
    assert v["passed"]


def test_density_bounds_audit(report):
    v = harness.run_suite("lipschitz", SEED, n_cases=20, n_points=1000)
    worst_pi = max(c["slope_pi"] / c["K_pi"] for c in v["cases"])
    worst_rho = max(c["slope_rho"] / c["K_rho"] for c in v["cases"])
    edge = max(c["edge_rho"] for c in v["cases"])
    report(4, "pi/rho bounds and Lipschitz constants", v["passed"],
           f"max slope/K: pi {worst_pi:.3f}, rho {worst_rho:.2e}; max edge rho {edge:.1e}")
    assert v["passed"]


def test_skorokhod_lipschitz(report):
    v = harness.run_suite("skorokhod_lipschitz", SEED, n_pairs=100, n_1d=1000)
    report(5, "Skorokhod map Lipschitz", v["passed"],
           f"max dL/dX {v['max_ratio_L']:.3f} (K = {v['K']:.0f}), "
           f"max dY/dX {v['max_ratio_Y']:.3f} (bound K+1); 1-d gap {v['max_1d_gap']:.1e}")
    assert v["passed"]


def test_skorokhod_conditions(report):
    v = harness.run_suite("skorokhod_conditions", SEED, n_random=200)
    report(6, "Skorokhod conditions a)-c)", v["passed"],
           f"{v['cases']} solver outputs, {len(v['failures'])} failures")
    assert v["passed"]


@pytest.mark.slow
def test_coupled_two_d(report):
    v = harness.run_suite("two_d_coupled", SEED, n=2000, n_oracle=20000, grid_step=2.0 ** -14)
    d1, d2 = v["ks_distance"]
    report(7, "2-d coupled vs fine-grid oracle", v["passed"],
           f"KS distances {d1:.4f}, {d2:.4f} (want <= 0.05); exhausted {v['budget_exhausted']}")
    assert v["passed"]


def test_conditioning_discipline(report):
    v = harness.run_suite("conditioning", SEED, n=50)
    report(8, "no refinement right of T_left", v["passed"],
           f"{v['refinements_after_freeze']} refinements after freezing, "
           f"{v['refinements_right_of_T_left']} right of T_left")
    assert v["passed"]


def test_determinism(report, tmp_path):
    base = ["sample", "--d", "2", "--Q", "0,0.5,0.5,0", "--n", "24", "--seed", str(SEED)]
    files = []
    for name, workers in (("a", 1), ("b", 1), ("c", 2)):
        path = tmp_path / f"{name}.csv"
        code = cli.run(base + ["--workers", str(workers), "--out", str(path)])
        assert code in (0, 3)
        files.append(path.read_bytes())
    ok = files[0] == files[1] == files[2]
    report(9, "determinism", ok, "two runs and 1 vs 2 workers give byte-identical CSV"
           if ok else "outputs differ")
    assert ok
