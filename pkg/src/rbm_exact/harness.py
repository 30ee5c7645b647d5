"""Reference laws, Monte Carlo oracles and statistical checks."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import _kernels
from . import rng as rngmod
from .bridge_math import BridgeGeometry
from .layers import LayerSet, envelope_area, refine_to_level
from .skorokhod import ReflectionSpec

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class KSReport:
    statistic: float
    n: int
    alpha: float
    passed: bool
    critical: float


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    std_error: float
    n_paths: int
    grid_step: float


def half_normal_cdf(x, T: float):
    """CDF of |B(T)|, the law of one-dimensional RBM started at 0."""
    if not T > 0:
        raise ValueError("T must be positive")
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 2.0 * stats.norm.cdf(np.maximum(x, 0.0) / math.sqrt(T)) - 1.0, 0.0)
    return out if out.ndim else float(out)


def mc_gamma_oracle(L: float, U: float, geom: BridgeGeometry, n_paths: int, grid_step: float,
                    rng: np.random.Generator) -> OracleEstimate:
    """Monte Carlo estimate of the bridge stay-in-band probability.

    Bridges are sampled on a grid; between grid points the exit probability
    is integrated out with the single-barrier bridge formulas, which leaves
    only the (tiny) double-crossing error per step.
    """
    if not U > L:
        raise ValueError("degenerate band")
    if not grid_step > 0 or n_paths < 2:
        raise ValueError("need grid_step > 0 and at least two paths")
    n_steps = max(1, int(round(geom.r / grid_step)))
    seed = int(rng.integers(0, 2**31 - 1))
    mean, se = _kernels.bridge_oracle_paths(float(L), float(U), geom.r, geom.a, geom.b,
                                            int(n_paths), n_steps, seed)
    return OracleEstimate(float(mean), float(se), int(n_paths), geom.r / n_steps)


def grid_reflect(X: np.ndarray, Q: np.ndarray, y0: np.ndarray, tol: float = 1e-12,
                 max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Skorokhod map of piecewise-linear paths, evaluated at their grid points.

    ``X`` has shape (paths, steps + 1, d). Every Picard iterate is convex on
    each grid segment, so its running maximum is attained at grid points and
    the result equals the exact polyline reflection at those points.
    Returns (Y, L) with the same shape as ``X``.
    """
    L = np.zeros_like(X)
    base = -y0 - X
    for _ in range(max_iter):
        new = np.maximum.accumulate(np.maximum(base + L @ Q, 0.0), axis=1)
        step = np.max(np.abs(new - L)) if L.size else 0.0
        L = new
        if step <= tol:
            break
    else:
        raise RuntimeError("grid Picard iteration did not converge")
    return y0 + X + L - L @ Q, L


def fine_grid_rbm_oracle(spec: ReflectionSpec, y0, T: float, grid_step: float, n_samples: int,
                         rng: np.random.Generator, chunk: int = 250) -> np.ndarray:
    """Approximate draws of Y(T) from reflecting a Brownian path on a fine grid.

    The bias from ignoring excursions below zero between grid points is of
    order sqrt(grid_step); it is acknowledged, not certified.
    """
    if grid_step > 2.0 ** -12:
        raise ValueError("grid_step must be at most 2**-12")
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (spec.d,))
    n_steps = int(math.ceil(T / grid_step))
    h = T / n_steps
    out = np.empty((n_samples, spec.d))
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        inc = rng.standard_normal((m, n_steps, spec.d)) * math.sqrt(h)
        X = np.concatenate([np.zeros((m, 1, spec.d)), np.cumsum(inc, axis=1)], axis=1)
        Y, _ = grid_reflect(X, spec.Q, y0)
        out[start : start + m] = Y[:, -1]
    return out


def ks_test(samples, cdf, alpha: float = 0.01) -> KSReport:
    """One-sample Kolmogorov-Smirnov test with the asymptotic critical value."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 20:
        raise ValueError("need at least 20 samples")
    stat = float(stats.kstest(x, cdf).statistic)
    crit = float(stats.kstwobign.ppf(1 - alpha)) / math.sqrt(n)
    return KSReport(stat, n, alpha, stat < crit, crit)


def ks_distance(a, b) -> float:
    """Two-sample KS distance (sup gap between empirical CDFs)."""
    return float(stats.ks_2samp(np.asarray(a, float), np.asarray(b, float)).statistic)


@dataclass(frozen=True)
class ConvergenceTable:
    levels: np.ndarray
    mean_area: np.ndarray
    areas: np.ndarray  # (seeds, levels)
    slope: float


def convergence_study(levels=range(2, 11), n_seeds: int = 200, seed: int = 0) -> ConvergenceTable:
    """Mean envelope area per level and its fitted log2 slope."""
    levels = np.array(sorted(levels))
    if levels.min() < 1 or levels.max() > 12:
        raise ValueError("levels must lie in [1, 12]")
    areas = np.empty((n_seeds, len(levels)))
    for s in range(n_seeds):
        ls = LayerSet.new(rngmod.stream(seed, s, 0, rngmod.LAYERS))
        for k, n in enumerate(levels):
            refine_to_level(ls, int(n))
            areas[s, k] = envelope_area(ls)
    mean = areas.mean(axis=0)
    slope = float(np.polyfit(levels, np.log2(mean), 1)[0])
    return ConvergenceTable(levels, mean, areas, slope)


def rows_to_csv(header: list[str], rows, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def summary_json(payload: dict) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if hasattr(o, "__dataclass_fields__"):
            return asdict(o)
        raise TypeError(type(o))

    return json.dumps({"schema_version": SCHEMA_VERSION, **payload}, default=default,
                      indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Validation suites. Thresholds are fixed here, before any run, and shared by
# the CLI ``validate`` command and the acceptance tests.

THRESHOLDS = {
    "ks_alpha": 0.01,
    "budget_fraction": 0.01,
    "two_d_ks_distance": 0.05,
    "slope_range": (-0.65, -0.35),
    "oracle_sigmas": 3.0,
    "lipschitz_tol": 1e-12,
}


def suite_one_d_halfnormal(seed: int, n: int = 2000, max_level: int = 22) -> dict:
    """1-d RBM from 0 at T = 1/3 against the half-normal law."""
    from .sampler import ACCEPTED, SamplerConfig, sample
    from .skorokhod import validate_spec

    cfg = SamplerConfig(validate_spec(np.zeros((1, 1))), T=1 / 3, y0=0.0, seed=seed,
                        max_level=max_level)
    values, exhausted, k = [], 0, 0
    while len(values) < n:
        r = sample(cfg, k)
        k += 1
        if r.status == ACCEPTED:
            values.append(r.value[0])
        else:
            exhausted += 1
    rep = ks_test(values, lambda x: half_normal_cdf(x, 1 / 3), THRESHOLDS["ks_alpha"])
    frac = exhausted / k
    return {"suite": "one_d_halfnormal", "seed": seed, "n": n, "ks": rep,
            "budget_exhausted": exhausted, "budget_fraction": frac,
            "passed": bool(rep.passed and frac < THRESHOLDS["budget_fraction"])}


def suite_two_d_coupled(seed: int, n: int = 2000, n_oracle: int = 20000,
                        grid_step: float = 2.0 ** -14) -> dict:
    """Coupled 2-d RBM against a fine-grid reflection oracle, per coordinate."""
    from .sampler import ACCEPTED, SamplerConfig, sample
    from .skorokhod import validate_spec

    spec = validate_spec(np.array([[0.0, 0.5], [0.5, 0.0]]))
    cfg = SamplerConfig(spec, T=1 / 3, y0=0.0, seed=seed)
    values, exhausted, k = [], 0, 0
    while len(values) < n:
        r = sample(cfg, k)
        k += 1
        if r.status == ACCEPTED:
            values.append(r.value)
        else:
            exhausted += 1
    values = np.array(values)
    oracle = fine_grid_rbm_oracle(spec, 0.0, 1 / 3, grid_step, n_oracle,
                                  rngmod.stream(seed, 2**20, 0, 7))
    dist = [ks_distance(values[:, i], oracle[:, i]) for i in range(2)]
    return {"suite": "two_d_coupled", "seed": seed, "n": n, "n_oracle": n_oracle,
            "ks_distance": dist, "budget_exhausted": exhausted,
            "passed": bool(max(dist) <= THRESHOLDS["two_d_ks_distance"])}


def random_gamma_cases(rng: np.random.Generator, n_cases: int):
    """Bands and bridges with stay-in-band probabilities away from 0 and 1."""
    cases = []
    for _ in range(n_cases):
        r = rng.uniform(0.1, 0.5)
        s = math.sqrt(r)
        L = -rng.uniform(0.3, 1.5) * s
        U = rng.uniform(0.3, 1.5) * s
        a, b = rng.uniform(L + 0.1 * (U - L), U - 0.1 * (U - L), size=2)
        cases.append((float(L), float(U), BridgeGeometry(float(r), float(a), float(b))))
    return cases


def suite_gamma_oracle(seed: int, n_cases: int = 20, n_paths: int = 10**6,
                       grid_step: float = 2.0 ** -12) -> dict:
    """Series value of gamma against the Monte Carlo bridge oracle."""
    from .bridge_math import gamma_bounds

    rng = rngmod.stream(seed, 2**20, 1)
    rows = []
    for L, U, g in random_gamma_cases(rng, n_cases):
        sb = gamma_bounds(L, U, g, 1e-12)
        est = mc_gamma_oracle(L, U, g, n_paths, grid_step, rng)
        z = abs(sb.mid - est.mean) / est.std_error if est.std_error > 0 else 0.0
        rows.append({"L": L, "U": U, "r": g.r, "a": g.a, "b": g.b, "series": sb.mid,
                     "oracle": est.mean, "std_error": est.std_error, "z": z})
    worst = max(r["z"] for r in rows)
    return {"suite": "gamma_oracle", "seed": seed, "cases": rows, "max_z": worst,
            "passed": bool(worst <= THRESHOLDS["oracle_sigmas"])}


def random_density_params(rng: np.random.Generator, n_cases: int):
    """Layer-like bands in coordinates relative to the left endpoint."""
    from .bridge_math import Band, BandDensityParams

    out = []
    for _ in range(n_cases):
        l = 2.0 ** -rng.integers(0, 8)
        sq = math.sqrt(l)
        v = rng.normal(0, sq)
        w = 2.0 ** (-(math.log2(1 / l) + 1) / 2)
        Lu = min(0.0, v) - rng.uniform(0, 0.5) * sq
        Ld = Lu - rng.uniform(0.05, 1.0) * w
        Ud = max(0.0, v) + rng.uniform(0, 0.5) * sq
        Uu = Ud + rng.uniform(0.05, 1.0) * w
        s = rng.uniform(0.05, 0.95) * l
        out.append(BandDensityParams(Band(Ld, Lu, Ud, Uu), s, l, v))
    return out


def suite_lipschitz(seed: int, n_cases: int = 20, n_points: int = 1000) -> dict:
    """Bounds and Lipschitz constants of pi and rho on random band parameters."""
    from .bridge_math import density_constants, pi_density, rho_bounds

    tol = THRESHOLDS["lipschitz_tol"]
    rng = rngmod.stream(seed, 2**20, 2)
    rows, ok = [], True
    for p in random_density_params(rng, n_cases):
        c = density_constants(p)
        x = np.linspace(p.band.L_low, p.band.U_up, n_points)
        pi = np.array([pi_density(t, p) for t in x])
        rb = np.array([(lambda sb: (sb.lower, sb.upper))(rho_bounds(t, p, tol)) for t in x])
        rho_mid = rb.mean(axis=1)
        dx = np.diff(x)
        slope_pi = float(np.max(np.abs(np.diff(pi)) / dx))
        # largest slope any pair of certified values could have
        gap = np.maximum(np.abs(rb[1:, 1] - rb[:-1, 0]), np.abs(rb[:-1, 1] - rb[1:, 0]))
        slope_rho = float(np.max(gap / dx))
        edge = max(rb[0, 1], rb[-1, 1])
        row = {"K_pi": c.K_pi, "K_rho": c.K_rho, "c_rho": c.c_rho,
               "sup_pi": float(pi.max()), "sup_rho": float(rb[:, 1].max()),
               "slope_pi": slope_pi, "slope_rho": slope_rho, "edge_rho": float(edge)}
        row["passed"] = bool(row["sup_pi"] <= 1.0 and row["sup_rho"] <= c.c_rho + tol
                             and slope_pi <= c.K_pi and slope_rho <= c.K_rho + 2 * tol / dx.min()
                             and edge <= tol and np.all(pi > 0) and np.all(rho_mid >= 0))
        ok &= row["passed"]
        rows.append(row)
    return {"suite": "lipschitz", "seed": seed, "cases": rows, "passed": bool(ok)}


def suite_convergence(seed: int, n: int = 200) -> dict:
    table = convergence_study(range(2, 11), n, seed)
    lo, hi = THRESHOLDS["slope_range"]
    return {"suite": "convergence", "seed": seed, "levels": table.levels,
            "mean_area": table.mean_area, "slope": table.slope,
            "passed": bool(lo <= table.slope <= hi)}


def random_polyline(rng: np.random.Generator, d: int, k: int, scale: float = 1.0):
    from .skorokhod import Polyline

    t = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, k - 1))])
    t = np.unique(t)
    steps = rng.normal(0, scale * np.sqrt(np.diff(t))[:, None], (len(t) - 1, d))
    v = np.vstack([np.zeros((1, d)), np.cumsum(steps, axis=0)])
    return Polyline(t, v)


def suite_skorokhod_lipschitz(seed: int, n_pairs: int = 100, n_1d: int = 1000,
                              tol: float = 1e-10) -> dict:
    """Regulator map Lipschitz check on coupled pairs and 1-d closed-form agreement."""
    from .skorokhod import Polyline, reflect, reflect_1d, validate_spec

    rng = rngmod.stream(seed, 2**20, 3)
    spec = validate_spec(np.array([[0.0, 0.5], [0.5, 0.0]]))
    worst_L = worst_Y = 0.0
    ok = True
    for _ in range(n_pairs):
        X1 = random_polyline(rng, 2, int(rng.integers(5, 60)))
        bump = random_polyline(rng, 2, int(rng.integers(5, 60)), scale=rng.uniform(0.01, 0.5))
        grid = np.union1d(X1.t, bump.t)
        X2 = Polyline(grid, X1.on_grid(grid) + bump.on_grid(grid))
        y0 = rng.uniform(0, 0.3, 2)
        s1, s2 = reflect(X1, spec, y0, tol), reflect(X2, spec, y0, tol)
        dX = float(np.max(X1.sup_distance(X2)))
        dL = float(np.max(s1.L.sup_distance(s2.L)))
        dY = float(np.max(s1.Y.sup_distance(s2.Y)))
        worst_L = max(worst_L, dL / dX)
        worst_Y = max(worst_Y, dY / dX)
        ok &= dL <= spec.K * dX + 2 * tol and dY <= (spec.K + 1) * dX + 2 * tol
    one_d = validate_spec(np.zeros((1, 1)))
    worst_1d = 0.0
    for _ in range(n_1d):
        X = random_polyline(rng, 1, int(rng.integers(2, 40)))
        y0 = float(rng.uniform(0, 0.5))
        a, b = reflect(X, one_d, y0, tol), reflect_1d(X, y0)
        gap = float(np.max(a.Y.sup_distance(b.Y)))
        worst_1d = max(worst_1d, gap)
        ok &= gap <= a.err_bound + 1e-12
    return {"suite": "skorokhod_lipschitz", "seed": seed, "max_ratio_L": worst_L,
            "max_ratio_Y": worst_Y, "K": spec.K, "max_1d_gap": worst_1d, "passed": bool(ok)}


def skorokhod_corpus(rng: np.random.Generator, n_random: int = 200):
    """Hand cases plus random instances: (X, spec, y0) triples."""
    from .skorokhod import Polyline, validate_spec

    coupled = validate_spec(np.array([[0.0, 0.5], [0.5, 0.0]]))
    t = np.array([0.0, 1.0])
    cases = [
        (Polyline(t, t[:, None]), validate_spec(np.zeros((1, 1))), np.zeros(1)),
        (Polyline(t, -t[:, None]), validate_spec(np.zeros((1, 1))), np.zeros(1)),
        (Polyline(t, np.stack([-t, t], axis=1)), coupled, np.zeros(2)),
    ]
    specs = [coupled, validate_spec(np.zeros((2, 2))),
             validate_spec(np.array([[0, 0.3, 0.2], [0.1, 0, 0.6], [0.4, 0.4, 0]])),
             validate_spec(np.array([[0.9]]))]
    for _ in range(n_random):
        spec = specs[int(rng.integers(len(specs)))]
        X = random_polyline(rng, spec.d, int(rng.integers(2, 80)))
        cases.append((X, spec, rng.uniform(0, 0.3, spec.d)))
    return cases


def suite_skorokhod_conditions(seed: int, n_random: int = 200, tol: float = 1e-10) -> dict:
    from .skorokhod import check_conditions, reflect

    rng = rngmod.stream(seed, 2**20, 4)
    failures = []
    cases = skorokhod_corpus(rng, n_random)
    for k, (X, spec, y0) in enumerate(cases):
        sol = reflect(X, spec, y0, tol)
        rep = check_conditions(sol, X, spec, y0, sol.err_bound + 1e-12)
        if not rep.ok:
            failures.append({"case": k, "violations": rep.violations})
    return {"suite": "skorokhod_conditions", "seed": seed, "cases": len(cases),
            "failures": failures, "passed": not failures}


def suite_conditioning(seed: int, n: int = 50, d: int = 2) -> dict:
    """No layer meeting (T_left, 1] is refined once the guard has passed."""
    from .sampler import SamplerConfig, sample_with_trace
    from .skorokhod import validate_spec

    Q = np.array([[0.0, 0.5], [0.5, 0.0]]) if d == 2 else np.zeros((1, 1))
    cfg = SamplerConfig(validate_spec(Q), T=1 / 3, y0=0.0, seed=seed)
    late, after = 0, 0
    for k in range(n):
        _, out = sample_with_trace(cfg, k)
        if out is None:
            continue
        for ls, mark in zip(out.layer_sets, out.freeze_mark):
            ops = ls.log[mark:]
            after += len(ops)
            late += sum(1 for _, _, t1 in ops if t1 > out.T_left)
    return {"suite": "conditioning", "seed": seed, "n": n, "refinements_after_freeze": after,
            "refinements_right_of_T_left": late, "passed": late == 0}


SUITES = {
    "one_d_halfnormal": suite_one_d_halfnormal,
    "two_d_coupled": suite_two_d_coupled,
    "gamma_oracle": suite_gamma_oracle,
    "lipschitz": suite_lipschitz,
    "convergence": suite_convergence,
    "skorokhod_lipschitz": suite_skorokhod_lipschitz,
    "skorokhod_conditions": suite_skorokhod_conditions,
    "conditioning": suite_conditioning,
}


# name of the keyword that sets each suite's main sample size
SIZE_PARAM = {
    "gamma_oracle": "n_cases",
    "lipschitz": "n_cases",
    "skorokhod_lipschitz": "n_pairs",
    "skorokhod_conditions": "n_random",
}


def run_suite(name: str, seed: int, **opts) -> dict:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed, **opts)
