import json
import math

import numpy as np
import pytest
from scipy import stats

from rbm_exact import harness
from rbm_exact.bridge_math import BridgeGeometry
from rbm_exact.skorokhod import validate_spec


def test_half_normal_cdf_values():
    assert harness.half_normal_cdf(0.0, 0.3) == 0.0
    assert harness.half_normal_cdf(-1.0, 0.3) == 0.0
    assert harness.half_normal_cdf(1e3, 0.3) == pytest.approx(1.0)
    T = 0.7
    assert harness.half_normal_cdf(math.sqrt(T), T) == pytest.approx(0.682689492, abs=1e-9)
    with pytest.raises(ValueError):
        harness.half_normal_cdf(1.0, 0.0)


def test_gamma_oracle_edge_cases():
    rng = np.random.default_rng(0)
    wide = harness.mc_gamma_oracle(-20, 20, BridgeGeometry(0.5, 0.0, 0.1), 2000, 2.0 ** -8, rng)
    assert wide.mean == pytest.approx(1.0, abs=1e-12)
    start_out = harness.mc_gamma_oracle(-1, 1, BridgeGeometry(0.5, -1.0, 0.1), 2000, 2.0 ** -8, rng)
    assert start_out.mean == 0.0
    with pytest.raises(ValueError):
        harness.mc_gamma_oracle(1, -1, BridgeGeometry(0.5, 0.0, 0.0), 10, 0.1, rng)


def test_gamma_oracle_is_seeded():
    g = BridgeGeometry(1.0, 0.0, 0.0)
    a = harness.mc_gamma_oracle(-1, 1, g, 5000, 2.0 ** -8, np.random.default_rng(4))
    b = harness.mc_gamma_oracle(-1, 1, g, 5000, 2.0 ** -8, np.random.default_rng(4))
    assert a == b


def test_fine_grid_oracle_independent_coordinates():
    spec = validate_spec(np.zeros((2, 2)))
    y = harness.fine_grid_rbm_oracle(spec, 0.0, 1 / 3, 2.0 ** -12, 2000, np.random.default_rng(1))
    assert y.shape == (2000, 2) and np.all(y >= 0)
    assert abs(np.corrcoef(y.T)[0, 1]) < 0.05
    with pytest.raises(ValueError):
        harness.fine_grid_rbm_oracle(spec, 0.0, 1 / 3, 2.0 ** -8, 10, np.random.default_rng(1))


def test_fine_grid_oracle_one_d_law():
    spec = validate_spec(np.zeros((1, 1)))
    y = harness.fine_grid_rbm_oracle(spec, 0.0, 1 / 3, 2.0 ** -12, 3000, np.random.default_rng(2))
    assert harness.ks_test(y[:, 0], lambda x: harness.half_normal_cdf(x, 1 / 3)).passed


def test_ks_calibration():
    rng = np.random.default_rng(7)
    passes = sum(harness.ks_test(rng.standard_normal(300), stats.norm.cdf, 0.05).passed
                 for _ in range(200))
    # pass rate should be near 0.95; 200 Bernoulli draws have sd ~0.015
    assert 0.9 <= passes / 200 <= 0.995


def test_ks_rejects_constant_samples():
    assert not harness.ks_test(np.full(100, 0.3), stats.norm.cdf).passed
    with pytest.raises(ValueError):
        harness.ks_test([0.1, 0.2], stats.norm.cdf)


def test_ks_distance():
    assert harness.ks_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert harness.ks_distance([0, 0], [1, 1]) == 1.0


def test_convergence_study_shapes():
    table = harness.convergence_study(range(2, 6), 20, seed=1)
    assert table.areas.shape == (20, 4)
    assert np.all(np.diff(table.mean_area) < 0)
    assert table.slope < 0
    with pytest.raises(ValueError):
        harness.convergence_study(range(0, 3), 2)


def test_csv_and_json_helpers():
    text = harness.rows_to_csv(["a", "b"], [[1, 0.1]], comment="hello v1")
    assert text == "# hello v1\na,b\n1,0.1\n"
    payload = json.loads(harness.summary_json({"x": np.arange(2), "ok": np.bool_(True)}))
    assert payload == {"schema_version": harness.SCHEMA_VERSION, "x": [0, 1], "ok": True}


def test_unknown_suite():
    with pytest.raises(ValueError):
        harness.run_suite("nope", 0)


@pytest.mark.parametrize("name,opts", [
    ("lipschitz", {"n_cases": 3, "n_points": 100}),
    ("skorokhod_conditions", {"n_random": 20}),
    ("skorokhod_lipschitz", {"n_pairs": 10, "n_1d": 50}),
    ("conditioning", {"n": 3}),
    ("convergence", {"n": 30}),
    ("gamma_oracle", {"n_cases": 2, "n_paths": 20_000, "grid_step": 2.0 ** -8}),
])
def test_small_suites_pass(name, opts):
    verdict = harness.run_suite(name, 5, **opts)
    assert verdict["passed"], verdict
    assert verdict["suite"] == name
