"""Command-line driver: validate a JSON run config, run one experiment, write artifacts.

    dissipation-lab --config run.json --out results/ [--seed S] [--threads N] [--verbose]
    dissipation-lab report results/

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import mcsim, moments, quasimode, schrodinger, twopoint
from . import numerics as nm
from .krylov import ConvergenceError
from .profiles import ProfileError, ProfileFamily, RootFindingError, parse_profile

log = logging.getLogger("dissipation_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
THREADS_ENV = "DISSIPATION_LAB_THREADS"


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------- schema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}
_PROFILE = {"oneOf": [
    {"type": "string"},
    {"type": "object", "additionalProperties": False,
     "properties": {"a": {"type": "array", "items": _NUM},
                    "b": {"type": "array", "items": _NUM},
                    "constant": {"type": "boolean"}}},
]}
_FAMILY = {"type": "array", "items": _PROFILE, "minItems": 1}
_LAMS = {"type": "array", "items": _POS, "minItems": 1}


def _obj(required, **props):
    return {"type": "object", "additionalProperties": False, "required": list(required),
            "properties": props}


_FIELD = {"type": "object", "additionalProperties": False, "properties": {
    "shear_x": _PROFILE, "shear_y": _PROFILE,
    "ax": {"type": "array", "items": {"type": "array", "items": _NUM,
                                      "minItems": 4, "maxItems": 4}},
    "ay": {"type": "array", "items": {"type": "array", "items": _NUM,
                                      "minItems": 4, "maxItems": 4}}}}
_MATRIX = _obj(["re"], re={"type": "array", "items": {"type": "array", "items": _NUM}},
               im={"type": "array", "items": {"type": "array", "items": _NUM}})

PARAM_SCHEMAS = {
    "profiles": _obj(["family"], family=_FAMILY),
    "eig-scaling": _obj(["family", "lambdas"], family=_FAMILY, lambdas=_LAMS, tol_eig=_POS,
                        richardson_tol=_POS),
    "model-problem": _obj(["m", "n", "lambdas"], m=_INT, n=_INT,
                          sign={"enum": [1, -1]}, lambdas=_LAMS, R=_POS, N=_INT),
    "kernel": _obj(["type"], type={"enum": ["matrices", "shear", "2d"]},
                   matrices={"type": "array", "items": _MATRIX, "minItems": 1},
                   profiles=_FAMILY, ell=_INT, fields={"type": "array", "items": _FIELD},
                   K=_INT, K_list={"type": "array", "items": _INT}),
    "moments": _obj(["family", "nu", "kappa", "ell", "N"], family=_FAMILY, nu=_POS,
                    kappa={"type": "number", "minimum": 0}, ell=_INT, N=_INT, dt=_POS,
                    efolds=_POS, records=_INT),
    "mc": _obj(["family", "nu", "kappa", "ell", "N", "dt", "T", "n_paths"], family=_FAMILY,
               nu={"type": "number", "minimum": 0}, kappa={"type": "number", "minimum": 0},
               ell=_INT, N=_INT, dt=_POS, T=_POS, n_paths={"type": "integer", "minimum": 2},
               checkpoints={"type": "integer", "minimum": 0}, antithetic={"type": "boolean"},
               compare_moments={"type": "boolean"}),
    "quasimode": _obj(["family", "lambdas"], family=_FAMILY, lambdas=_LAMS, beta=_POS,
                      N=_INT, y0=_NUM),
    "report": _obj(["directory"], directory={"type": "string"}),
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "params"],
    "properties": {
        "kind": {"enum": sorted(PARAM_SCHEMAS)},
        "params": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
}


def _where(err: jsonschema.ValidationError, prefix: str) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return f"{prefix}{'.' + path if path else ''}"


def validate_config(cfg) -> dict:
    """Raise ConfigError naming the offending field; returns cfg unchanged."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{_where(err, 'config')}: {err.message}") from None
    try:
        jsonschema.validate(cfg["params"], PARAM_SCHEMAS[cfg["kind"]])
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{_where(err, 'params')}: {err.message}") from None
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ----------------------------------------------------------------- writers

def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- tasks

def _family(p: dict) -> ProfileFamily:
    return ProfileFamily([parse_profile(s) for s in p["family"]])


def task_profiles(p, out: Path, ctx) -> dict:
    fam = _family(p)
    summary = {
        "n0": fam.n0,
        "profiles": [u.to_dict() for u in fam],
        "critical_points": [[c.to_dict() for c in crit] for crit in fam.critical],
        "overlapping_points": [{"y": y, "order": o} for y, o in fam.overlapping_points()],
    }
    _write_json(out / "profiles.json", summary)
    return {"n0": fam.n0}


def task_eig_scaling(p, out: Path, ctx) -> dict:
    fam = _family(p)
    fit = schrodinger.scaling_study(fam, p["lambdas"], p.get("tol_eig"),
                                    p.get("richardson_tol", 0.01))
    _write_rows(out / "scaling.csv", fit.rows())
    _write_json(out / "scaling_fit.json", fit.summary())
    return fit.summary()


def task_model_problem(p, out: Path, ctx) -> dict:
    fit = schrodinger.model_problem_sweep(p["m"], p["n"], p.get("sign", 1), p["lambdas"],
                                          p.get("R", 6.0), p.get("N", 128))
    _write_rows(out / "model_problem.csv", fit.rows())
    summary = fit.summary()
    summary.update({"m": p["m"], "n": p["n"]})
    _write_json(out / "model_fit.json", summary)
    return summary


def _kernel_spec(p: dict, K: int | None) -> dict:
    spec = {"type": p["type"]}
    for key in ("matrices", "profiles", "ell", "fields"):
        if key in p:
            spec[key] = p[key]
    if K is not None:
        spec["K"] = K
    return spec


def task_kernel(p, out: Path, ctx) -> dict:
    if p["type"] == "matrices" or "K_list" not in p:
        fam = twopoint.GeneratorFamily.from_json(_kernel_spec(p, p.get("K")))
        if fam.d <= 48:
            kb = twopoint.kernel_basis(fam)
            dec = twopoint.invariant_subspaces(kb, fam, seed=ctx["seed"])
            summary = {"d": fam.d, "kernel_dim": kb.dim, "nontrivial_dim": kb.nontrivial_dim(),
                       "oracle_max_angle": kb.oracle_max_angle, "subspaces": dec.dims,
                       "degenerate": dec.degenerate}
        else:
            alg = twopoint.algebra_decomposition(fam, seed=ctx["seed"])
            summary = {"d": fam.d, "kernel_dim": alg.commutant_dim,
                       "nontrivial_dim": alg.commutant_dim - 1,
                       "subspaces": [c.dim for c in alg.components],
                       "degenerate": alg.degenerate}
        _write_json(out / "kernel.json", summary)
        return summary
    report = twopoint.enhancement_diagnostic(
        lambda K: twopoint.GeneratorFamily.from_json(_kernel_spec(p, K)), p["K_list"],
        seed=ctx["seed"])
    _write_json(out / "kernel.json", report.to_json())
    return {"verdict": report.verdict, "reason": report.reason}


def task_moments(p, out: Path, ctx) -> dict:
    fam = _family(p)
    state, series, fit = moments.decay_experiment(
        fam, p["nu"], p["kappa"], p["ell"], p["N"], efolds=p.get("efolds", 8.0),
        dt=p.get("dt"), records=p.get("records", 400))
    _write_rows(out / "trace.csv", series.rows())
    summary = fit.summary()
    summary.update(fit.extra)
    _write_json(out / "decay_fit.json", summary)
    return summary


def task_mc(p, out: Path, ctx) -> dict:
    cfg = mcsim.SimConfig(p["nu"], p["kappa"], p["ell"], _family(p), p["N"], p["dt"], p["T"],
                          p["n_paths"], seed=ctx["seed"], checkpoints=p.get("checkpoints", 0),
                          antithetic=p.get("antithetic", False), workers=ctx["threads"])
    stats = mcsim.run_ensemble(cfg)
    _write_rows(out / "ensemble.csv", stats.rows())
    for i, (t, g) in enumerate(zip(stats.checkpoint_t, stats.g_hat)):
        nm.write_binary(out / f"g_hat_{i:03d}.bin", g)
    summary = {"n_paths": cfg.n_paths, "steps": cfg.steps,
               "final_mean": float(stats.mean[-1]), "final_stderr": float(stats.stderr[-1])}
    if p.get("compare_moments", False):
        cmp = mcsim.compare_with_moments(cfg, stats)
        _write_rows(out / "mc_vs_moments.csv", cmp.rows())
        summary.update({"max_z": cmp.max_z, "within_3se": cmp.within(3.0)})
    _write_json(out / "ensemble.json", summary)
    return summary


def task_quasimode(p, out: Path, ctx) -> dict:
    fam = _family(p)
    rep = quasimode.quasimode_study(fam, p["lambdas"], p.get("beta"), p.get("N", 2048),
                                    p.get("y0"))
    doc = rep.to_json()
    doc.update({"spread_top_decade": rep.spread(), "sandwich": rep.sandwich_ok()})
    _write_json(out / "quasimode.json", doc)
    return {"spread_top_decade": rep.spread(), "sandwich": rep.sandwich_ok()}


TASKS = {
    "profiles": task_profiles,
    "eig-scaling": task_eig_scaling,
    "model-problem": task_model_problem,
    "kernel": task_kernel,
    "moments": task_moments,
    "mc": task_mc,
    "quasimode": task_quasimode,
}


def classify(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ProfileError, twopoint.GeneratorError)):
        return EXIT_CONFIG
    if isinstance(exc, (ConvergenceError, RootFindingError, moments.InsufficientDecay,
                        quasimode.BoundaryMassError, twopoint.RankDecisionError)):
        return EXIT_NUMERIC
    if isinstance(exc, (moments.InvariantViolation, mcsim.PathBlowup, nm.GridMismatch,
                        ArithmeticError)):
        return EXIT_INVARIANT
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def run(cfg: dict, out: Path, seed: int | None = None, threads: int | None = None) -> int:
    """Run a validated config, writing artifacts and manifest.json into `out`."""
    validate_config(cfg)
    if cfg["kind"] == "report":
        return report(Path(cfg["params"]["directory"]), out)
    seed = cfg.get("seed", 0) if seed is None else seed
    threads = threads or cfg.get("threads") or int(os.environ.get(THREADS_ENV, "1") or 1)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    ctx = {"seed": seed, "threads": threads}
    status, code, detail = "ok", EXIT_OK, {}
    try:
        detail = TASKS[cfg["kind"]](cfg["params"], out, ctx)
    except Exception as exc:  # classified into an exit code and recorded
        code = classify(exc)
        status = {EXIT_CONFIG: "config-error", EXIT_NUMERIC: "non-convergence",
                  EXIT_INVARIANT: "invariant-violation"}[code]
        detail = {"error": f"{cfg['kind']}: {type(exc).__name__}: {exc}"}
        log.error("%s", detail["error"])
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "version": __version__,
        "seed": seed,
        "threads": threads,
        "wall_time": time.perf_counter() - start,
        "tasks": [{"kind": cfg["kind"], "status": status, "result": detail}],
    }
    _write_json(out / "manifest.json", manifest)
    return code


# ----------------------------------------------------------------- report

def _manifests(directory: Path) -> list[Path]:
    return sorted(directory.rglob("manifest.json"))


def _match_key(params: dict) -> str:
    keys = ("family", "nu", "kappa", "ell", "N")
    return json.dumps({k: params.get(k) for k in keys}, sort_keys=True)


def report(directory: Path, out: Path | None = None) -> int:
    """Merge all runs under `directory` into summary.json plus plot-ready CSVs."""
    directory = Path(directory)
    if not directory.is_dir():
        log.error("report: %s is not a directory", directory)
        return EXIT_CONFIG
    paths = [p for p in _manifests(directory) if out is None or p.parent != Path(out)]
    if not paths:
        log.error("report: no manifest.json under %s", directory)
        return EXIT_CONFIG
    runs = [(p.parent, json.loads(p.read_text())) for p in paths]
    versions = sorted({m.get("version") for _, m in runs})
    if len(versions) > 1:
        log.error("report: incompatible toolkit versions %s", versions)
        return EXIT_CONFIG
    out = directory if out is None else Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"version": versions[0], "runs": [], "scaling": [], "decay": [], "kernel": [],
               "mc_vs_moments": []}
    eig_rows, trace_rows = [], []
    traces, ensembles = {}, {}
    for run_dir, m in runs:
        kind = m["config"]["kind"]
        params = m["config"]["params"]
        tag = str(run_dir.relative_to(directory)) or "."
        summary["runs"].append({"dir": tag, "kind": kind, "status": m["tasks"][0]["status"]})
        if m["tasks"][0]["status"] != "ok":
            continue
        if kind in ("eig-scaling", "model-problem"):
            fit = json.loads((run_dir / ("scaling_fit.json" if kind == "eig-scaling"
                                         else "model_fit.json")).read_text())
            summary["scaling"].append({"dir": tag, "slope": fit["slope"],
                                       "target": fit["target"], "gap": fit["gap"]})
            csv_name = "scaling.csv" if kind == "eig-scaling" else "model_problem.csv"
            for r in _read_rows(run_dir / csv_name):
                eig_rows.append({"x": math.log(float(r["lambda"])),
                                 "y": math.log(float(r["mu"])), "series": tag})
        elif kind == "moments":
            fit = json.loads((run_dir / "decay_fit.json").read_text())
            summary["decay"].append({"dir": tag, **{k: fit.get(k) for k in
                                                    ("rate", "nu_mu", "rel_gap")}})
            rows = _read_rows(run_dir / "trace.csv")
            traces[_match_key(params)] = rows
            for r in rows:
                trace_rows.append({"x": float(r["t"]), "y": float(r["log_trace"]),
                                   "series": tag})
        elif kind == "kernel":
            doc = json.loads((run_dir / "kernel.json").read_text())
            summary["kernel"].append({"dir": tag, "verdict": doc.get("verdict"),
                                      "kernel_dim": doc.get("kernel_dim")})
        elif kind == "mc":
            rows = _read_rows(run_dir / "ensemble.csv")
            ensembles[_match_key(params)] = (tag, rows)
            for r in rows:
                v = float(r["mean_norm2"])
                trace_rows.append({"x": float(r["t"]), "y": math.log(v) if v > 0 else -math.inf,
                                   "series": tag})
    for key, (tag, rows) in ensembles.items():
        if key not in traces:
            continue
        t_det = np.array([float(r["t"]) for r in traces[key]])
        lt_det = np.array([float(r["log_trace"]) for r in traces[key]])
        z = []
        for r in rows:
            t = float(r["t"])
            se = float(r["stderr"])
            if t > t_det[-1] or se <= 0:
                continue
            det = math.exp(np.interp(t, t_det, lt_det))
            z.append(abs(float(r["mean_norm2"]) - det) / se)
        if z:
            summary["mc_vs_moments"].append({"mc": tag, "max_z": max(z), "points": len(z)})
    _write_json(out / "summary.json", summary)
    _write_rows(out / "plot_log_mu_vs_log_lambda.csv", eig_rows)
    _write_rows(out / "plot_log_trace_vs_t.csv", trace_rows)
    return EXIT_OK


# ----------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dissipation-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", nargs="?", choices=["run", "report"], default="run")
    ap.add_argument("directory", nargs="?", help="run directory (report command)")
    ap.add_argument("--config", help="JSON run config")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--threads", type=int, help=f"worker threads (fallback: ${THREADS_ENV})")
    ap.add_argument("--verbose", "-v", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        if not args.directory:
            log.error("report needs a directory")
            return EXIT_CONFIG
        return report(Path(args.directory), Path(args.out) if args.out else None)
    if not args.config:
        log.error("--config is required")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        log.error("config: --seed must be an unsigned 64-bit integer")
        return EXIT_CONFIG
    out = Path(args.out or cfg.get("out") or "results")
    return run(cfg, out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
