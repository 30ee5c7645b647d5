"""Command-line entry point: ``rbm-exact <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 some sample ended with an
exhausted budget (results are still written), 4 a validation suite failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, harness
from .bridge_math import BridgeGeometry, InvalidBandError, gamma_bounds
from .layers import LayerSet, refine_to_level
from . import rng as rngmod
from .sampler import ACCEPTED, SamplerConfig, sample
from .skorokhod import validate_spec

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_VALIDATION = 0, 2, 3, 4
CSV_VERSION = 1

DEFAULTS = {
    "d": 1, "Q": None, "T": 1.0 / 3.0, "y0": 0.0, "n": 100, "seed": None,
    "max_level": 22, "max_attempts": 100_000, "decision_budget": 1_000_000,
    "out": None, "format": "csv", "workers": 1, "proposal": "envelope",
    "suite": "one_d_halfnormal", "L": None, "U": None, "r": 1.0, "a": 0.0, "b": 0.0,
    "tol": 1e-12, "levels": "2-10", "seeds": 200, "level": 3,
}


class ConfigError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbm-exact", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", default=None, help="key=value or JSON file; flags override it")
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--out", default=S, help="output file (default: stdout)")
        sp.add_argument("--format", choices=["csv", "json"], default=S)

    def model(sp):
        sp.add_argument("--d", type=int, default=S)
        sp.add_argument("--Q", default=S, help="row-major routing matrix, comma separated")
        sp.add_argument("--T", type=float, default=S)
        sp.add_argument("--y0", default=S, help="start point, scalar or comma separated")
        sp.add_argument("--max-level", dest="max_level", type=int, default=S)
        sp.add_argument("--max-attempts", dest="max_attempts", type=int, default=S)
        sp.add_argument("--decision-budget", dest="decision_budget", type=int, default=S)
        sp.add_argument("--proposal", choices=["envelope", "uniform"], default=S)

    sp = sub.add_parser("sample", help="draw samples of Y(T)")
    common(sp)
    model(sp)
    sp.add_argument("--n", type=int, default=S)
    sp.add_argument("--workers", type=int, default=S)

    sp = sub.add_parser("validate", help="run a statistical validation suite")
    common(sp)
    sp.add_argument("--suite", choices=sorted(harness.SUITES), default=S)
    sp.add_argument("--n", type=int, default=S)

    sp = sub.add_parser("gamma", help="certified bracket of the bridge band probability")
    common(sp)
    for name in ("L", "U", "r", "a", "b", "tol"):
        sp.add_argument(f"--{name}", type=float, default=S)

    sp = sub.add_parser("convergence", help="envelope-area convergence study")
    common(sp)
    sp.add_argument("--levels", default=S, help="range like 2-10")
    sp.add_argument("--seeds", type=int, default=S)

    sp = sub.add_parser("inspect", help="dump an intersection-layer table")
    common(sp)
    sp.add_argument("--level", type=int, default=S)
    return p


def _read_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from exc
        return {k.replace("-", "_"): v for k, v in data.items()}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _floats(v, what: str) -> list[float]:
    if isinstance(v, (int, float)):
        return [float(v)]
    if isinstance(v, (list, tuple)):
        return [float(x) for x in np.ravel(v)]
    try:
        return [float(x) for x in str(v).replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"malformed {what}: {v!r}") from exc


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win) into one dict."""
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("RBM_EXACT_SEED")
    if env_seed is not None:
        cfg["seed"] = env_seed
    given = set()
    if getattr(ns, "config", None):
        from_file = _read_config_file(ns.config)
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(from_file)
        given |= set(from_file)
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "command")}
    cfg.update(flags)
    given |= set(flags)
    cfg["_given"] = sorted(given)
    cfg["command"] = ns.command
    try:
        cfg["seed"] = int(cfg["seed"]) if cfg["seed"] is not None else 0
        for k in ("d", "n", "max_level", "max_attempts", "decision_budget", "workers", "seeds",
                  "level"):
            cfg[k] = int(cfg[k])
        for k in ("T", "r", "a", "b", "tol"):
            cfg[k] = float(cfg[k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric option: {exc}") from exc
    for k in ("n", "max_level", "max_attempts", "decision_budget", "workers", "seeds"):
        if cfg[k] <= 0:
            raise ConfigError(f"{k} must be positive")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError(f"unknown format {cfg['format']!r}")
    return cfg


def _spec_from(cfg: dict):
    d = cfg["d"]
    if d < 1:
        raise ConfigError("d must be at least 1")
    q = np.zeros(d * d) if cfg["Q"] is None else np.array(_floats(cfg["Q"], "matrix Q"))
    if q.size != d * d:
        raise ConfigError(f"Q has {q.size} entries, expected {d * d} for d={d}")
    try:
        spec = validate_spec(q.reshape(d, d))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    y0 = np.array(_floats(cfg["y0"], "y0"))
    if y0.size == 1:
        y0 = np.full(d, y0[0])
    if y0.size != d:
        raise ConfigError(f"y0 has {y0.size} entries, expected {d}")
    return spec, y0


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items()
            if k not in ("out", "workers", "format") and not k.startswith("_")}
    blob = json.dumps(keep, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _emit(text: str, cfg: dict) -> None:
    if cfg["out"] in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {cfg['out']}: {exc}") from exc


def _one(args):
    config, idx = args
    return sample(config, idx)


def cmd_sample(cfg: dict) -> int:
    spec, y0 = _spec_from(cfg)
    try:
        config = SamplerConfig(spec=spec, T=cfg["T"], y0=y0, seed=cfg["seed"],
                               max_level=cfg["max_level"], max_attempts=cfg["max_attempts"],
                               decision_budget=cfg["decision_budget"], proposal=cfg["proposal"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    jobs = [(config, i) for i in range(cfg["n"])]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(_one, jobs, chunksize=4))
    else:
        results = [_one(j) for j in jobs]
    h = config_hash(cfg)
    d = spec.d
    header = (["sample", "seed", "config_hash", "status", "attempts", "max_level", "N"]
              + [f"value_{i + 1}" for i in range(d)])
    rows = [[k, cfg["seed"], h, r.status, r.attempts, r.max_level_reached, r.N,
             *(float(v) for v in r.value)] for k, r in enumerate(results)]
    if cfg["format"] == "csv":
        text = harness.rows_to_csv(header, rows,
                                   f"rbm-exact {__version__} sample csv v{CSV_VERSION}")
    else:
        text = harness.summary_json({"command": "sample", "config_hash": h, "seed": cfg["seed"],
                                     "columns": header, "rows": rows})
    _emit(text, cfg)
    exhausted = sum(r.status != ACCEPTED for r in results)
    if exhausted:
        print(f"{exhausted} of {len(results)} samples exhausted their budget", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_validate(cfg: dict) -> int:
    opts = {}
    if "n" in cfg["_given"]:
        opts[harness.SIZE_PARAM.get(cfg["suite"], "n")] = cfg["n"]
    verdict = harness.run_suite(cfg["suite"], cfg["seed"], **opts)
    verdict["config_hash"] = config_hash(cfg)
    _emit(harness.summary_json(verdict), cfg)
    return EXIT_OK if verdict["passed"] else EXIT_VALIDATION


def cmd_gamma(cfg: dict) -> int:
    if cfg["L"] is None or cfg["U"] is None:
        raise ConfigError("gamma needs --L and --U")
    try:
        sb = gamma_bounds(float(cfg["L"]), float(cfg["U"]),
                          BridgeGeometry(cfg["r"], cfg["a"], cfg["b"]), cfg["tol"])
    except (ValueError, InvalidBandError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["format"] == "json":
        text = harness.summary_json({"command": "gamma", "lower": sb.lower, "upper": sb.upper,
                                     "mid": sb.mid, "terms_used": sb.terms_used})
    else:
        text = f"lower={sb.lower!r} upper={sb.upper!r} mid={sb.mid!r} terms={sb.terms_used}\n"
    _emit(text, cfg)
    return EXIT_OK


def _levels(spec: str) -> range:
    try:
        if "-" in str(spec):
            a, b = str(spec).split("-", 1)
            return range(int(a), int(b) + 1)
        return range(int(spec), int(spec) + 1)
    except ValueError as exc:
        raise ConfigError(f"bad level range {spec!r}") from exc


def cmd_convergence(cfg: dict) -> int:
    try:
        table = harness.convergence_study(_levels(cfg["levels"]), cfg["seeds"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["format"] == "json":
        text = harness.summary_json({"command": "convergence", "levels": table.levels,
                                     "mean_area": table.mean_area, "slope": table.slope})
    else:
        rows = [[int(n), float(a)] for n, a in zip(table.levels, table.mean_area)]
        text = harness.rows_to_csv(["level", "mean_area"], rows,
                                   f"rbm-exact {__version__} convergence v{CSV_VERSION} "
                                   f"slope={table.slope!r}")
    _emit(text, cfg)
    return EXIT_OK


def cmd_inspect(cfg: dict) -> int:
    ls = LayerSet.new(rngmod.stream(cfg["seed"], 0, 0, rngmod.LAYERS))
    refine_to_level(ls, max(0, cfg["level"]))
    _emit(ls.dump(), cfg)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "validate": cmd_validate, "gamma": cmd_gamma,
            "convergence": cmd_convergence, "inspect": cmd_inspect}


def run(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve(ns)
        return COMMANDS[ns.command](cfg)
    except ConfigError as exc:
        print(f"rbm-exact: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())
