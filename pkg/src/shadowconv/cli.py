"""Command-line experiment runner.

Every command reads an optional JSON config, merges ``--seed``, writes its
outputs under ``--out-dir`` and stamps them with the SHA-256 of the
canonical resolved config.  No timestamps are written, so re-running a
saved config reproduces the files byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import make_rng, parallel_map
from .convergence import convergence_report
from .errors import DataError, ParameterError, ShadowconvError
from .estimator import fit_beta, ingest_measurements
from .geometry import Metric, gen_hexagonal, gen_perturbed_lattice, gen_poisson, load_pattern_csv
from .propagation import MarkKernel, RayleighPower, ShadowingSpec, propagation_process
from .stats import Protocol, critical_sigma_search, sigma_db_grid, sir_experiment

log = logging.getLogger("shadowconv")

DEFAULTS = {
    "simulate": {
        "pattern": {"kind": "hexagonal", "N": 6, "spacing": 1.0},
        "sigma_db": 10.0, "beta": 3.0, "K": 1.0, "truncation": None, "marks": None,
        "extra_factor": None, "replications": 1, "user": [0.0, 0.0], "rescale": True,
    },
    "convergence": {
        "pattern": {"kind": "hexagonal", "N": 30, "spacing": 1.0},
        "sigma_db_grid": [5.0, 10.0, 20.0, 40.0], "beta": 4.0, "K": 1.0,
        "replications": 100, "window_mean": 10.0, "marks": None, "alpha": 0.01,
    },
    "critical-sigma": {
        "Ns": [30], "betas": [2.5, 3.0, 4.0, 5.0], "K": 1.0, "spacing": 1.0,
        "obs_per_realization": 300, "realizations": 10, "pass_quota": 9, "alpha": 0.01,
        "grid_step_db": 0.5, "grid_max_db": 30.0,
    },
    "sir-compare": {
        "pattern": {"kind": "hexagonal", "N": 30, "spacing": 1.0},
        "sigma_db": [0.0, 20.0], "beta": 4.0, "K": 1.0, "replications": 500,
        "repetitions": 10, "thresholds": None, "alpha": 0.10,
    },
    "fit": {"input": None, "column": None},
}


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def resolve_config(command: str, path, seed) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    cfg["seed"] = 0
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise DataError("config must be a JSON object")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ParameterError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(user)
    if seed is not None:
        cfg["seed"] = seed
    cfg["command"] = command
    return cfg


def build_pattern(spec: dict, seed):
    kind = spec.get("kind", "hexagonal")
    if kind == "hexagonal":
        return gen_hexagonal(spec["N"], spec.get("spacing", 1.0))
    if kind == "perturbed":
        return gen_perturbed_lattice(spec["N"], spec.get("spacing", 1.0), spec["jitter_std"], make_rng(seed, 99))
    if kind == "poisson":
        window = Metric.torus(spec["width"], spec["height"])
        return gen_poisson(spec["lam"], window, make_rng(seed, 99), spec.get("metric"))
    if kind == "file":
        return load_pattern_csv(spec["path"], spec.get("sidecar"))
    raise ParameterError(f"unknown pattern kind {kind!r}")


def _kernel(marks):
    if marks is None:
        return None
    if isinstance(marks, str):
        return MarkKernel.load(marks)
    if marks.get("kind") == "indicator":
        return MarkKernel.indicator(marks.get("threshold", 0.0), tuple(marks.get("types", (0, 1))))
    return MarkKernel.from_dict(marks)


def _extra(name):
    if name is None:
        return None
    if name == "rayleigh":
        return RayleighPower()
    raise ParameterError(f"unknown extra factor {name!r}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


def _clean(x):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def cmd_simulate(cfg, out: Path, workers: int) -> dict:
    pattern = build_pattern(cfg["pattern"], cfg["seed"])
    spec = ShadowingSpec.from_db(cfg["sigma_db"], _extra(cfg["extra_factor"]))
    kernel = _kernel(cfg["marks"])
    files = []
    for i in range(cfg["replications"]):
        sample = propagation_process(
            pattern, tuple(cfg["user"]), spec, cfg["K"], cfg["beta"], cfg["truncation"],
            kernel, make_rng(cfg["seed"], i), cfg["rescale"],
        )
        sample.meta.update(seed=cfg["seed"], replication=i, config_hash=cfg["hash"])
        path = out / f"sample_{i:04d}.csv"
        sample.to_csv(path)
        files.append(path.name)
    return {"files": files, "n_stations": len(pattern)}


def _convergence_one(args):
    pattern, cfg, g, s = args
    return convergence_report(
        pattern, s, cfg["beta"], cfg["K"], cfg["replications"], cfg["window_mean"],
        _kernel(cfg["marks"]), cfg["alpha"], make_rng(cfg["seed"], g),
    ).to_dict()


def cmd_convergence(cfg, out: Path, workers: int) -> dict:
    grid = [float(s) for s in cfg["sigma_db_grid"]]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParameterError("sigma_db_grid must be ascending")
    pattern = build_pattern(cfg["pattern"], cfg["seed"])
    reports = parallel_map(_convergence_one, [(pattern, cfg, g, s) for g, s in enumerate(grid)], workers)
    result = {"config_hash": cfg["hash"], "reports": _clean(reports)}
    _write_json(out / "convergence.json", result)
    return {"files": ["convergence.json"]}


def cmd_critical_sigma(cfg, out: Path, workers: int) -> dict:
    grid = tuple(float(s) for s in sigma_db_grid(cfg["grid_step_db"], cfg["grid_max_db"]))
    protocol = Protocol(cfg["obs_per_realization"], cfg["realizations"], cfg["pass_quota"], cfg["alpha"], grid)
    rows, results = [], []
    for N in cfg["Ns"]:
        pattern = gen_hexagonal(N, cfg["spacing"])
        for b in cfg["betas"]:
            res = critical_sigma_search(pattern, b, cfg["K"], protocol, make_rng(cfg["seed"], N, int(b * 1000)).integers(2**63), workers)
            rows.append((b, N, "above_grid_max" if res.above_grid else res.sigma_db_star))
            results.append(res.to_dict())
    with (out / "critical_sigma.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "N", "sigma_db_star"])
        w.writerows(rows)
    _write_json(out / "critical_sigma.json", {"config_hash": cfg["hash"], "config": cfg, "results": results})
    return {"files": ["critical_sigma.csv", "critical_sigma.json"]}


def cmd_sir_compare(cfg, out: Path, workers: int) -> dict:
    pattern = build_pattern(cfg["pattern"], cfg["seed"])
    sigmas = cfg["sigma_db"] if isinstance(cfg["sigma_db"], list) else [cfg["sigma_db"]]
    summary, table = [], []
    for g, s in enumerate(sigmas):
        rejects = 0
        for rep in range(cfg["repetitions"]):
            seed = int(make_rng(cfg["seed"], g, rep).integers(2**63))
            res = sir_experiment(pattern, s, cfg["beta"], cfg["K"], cfg["replications"], seed,
                                 cfg["thresholds"], alpha=cfg["alpha"])
            rejects += res.ks.reject
            if rep == 0:
                table += [(s, t, pc, lc) for t, pc, lc in zip(res.thresholds, res.pattern_ccdf, res.limit_ccdf)]
            summary.append({"sigma_db": s, "repetition": rep, "ks": res.ks.to_dict()})
        log.info("sigma_db=%s: %d/%d rejections", s, rejects, cfg["repetitions"])
    with (out / "sir_ccdf.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_db", "t", "pattern_ccdf", "limit_ccdf"])
        w.writerows((s, repr(float(t)), repr(float(p)), repr(float(q))) for s, t, p, q in table)
    _write_json(out / "sir_compare.json", {"config_hash": cfg["hash"], "config": cfg, "tests": summary})
    return {"files": ["sir_ccdf.csv", "sir_compare.json"]}


def cmd_fit(cfg, out: Path, workers: int) -> dict:
    if not cfg["input"]:
        raise ParameterError("fit needs an input file (config key 'input' or --input)")
    data = ingest_measurements(cfg["input"], cfg["column"])
    fit = fit_beta(data.losses)
    report = fit.to_dict()
    report.update(config_hash=cfg["hash"], invalid_rows=data.invalid_rows, total_rows=data.total_rows, column=data.column)
    _write_json(out / "fit.json", report)
    return {"files": ["fit.json"], "beta_hat": fit.beta_hat}


COMMANDS = {
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "critical-sigma": cmd_critical_sigma,
    "sir-compare": cmd_sir_compare,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--workers", type=int, default=1, help="worker processes; results do not depend on it")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--input", help="CSV with a 'loss' or 'loss_db' column")
            p.add_argument("--column", choices=["loss", "loss_db"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.command, args.config, args.seed)
        if args.command == "fit":
            if args.input:
                cfg["input"] = args.input
            if args.column:
                cfg["column"] = args.column
        cfg["hash"] = config_hash(cfg)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", cfg)
        result = COMMANDS[args.command](cfg, out, max(1, args.workers))
    except ShadowconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps(_clean(result), default=_jsonable))
    return 0
