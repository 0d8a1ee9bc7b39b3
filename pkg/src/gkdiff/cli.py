"""Command-line interface: ``gkdiff <command> [options]``.

Exit codes: 0 success (or gradient), 1 error, 2 not a gradient,
3 self-test failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from typing import Sequence

import jsonschema
import numpy as np

from . import gradient, montecarlo, variational
from .dynamics import BondGenerator, model_from_config
from .errors import GKDiffError, InputError, ModelError
from .local_fn import LocalFunction
from .measure_basis import Marginal

EXIT_OK, EXIT_ERROR, EXIT_NOT_GRADIENT, EXIT_SELFTEST = 0, 1, 2, 3

COMMANDS = ("check-gradient", "decompose", "static", "variational", "simulate", "green-kubo",
            "diffusion", "selftest")

CSV_COLUMNS = {
    "variational": ["radius", "D_upper_bound", "correction", "kernel_dim"],
    "simulate": ["lag", "H", "stderr"],
    "green-kubo": ["lag", "C", "stderr"],
    "diffusion": ["radius", "D_upper_bound", "correction", "kernel_dim"],
    "diffusion-energy": ["temperature", "Ds_static", "correction", "correction_stderr", "D_total"],
}

_MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {"enum": ["ssep", "gep", "zero_range", "energy_exchange"]},
        "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "c": {"type": ["number", "string"]},
        "range": {"type": "integer", "minimum": 1},
        "kappa": {"type": "integer", "minimum": 1},
        "fugacity": {"type": "number", "exclusiveMinimum": 0},
        "g": {"type": ["string", "array"]},
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "kernel": {"anyOf": [{"enum": ["uniform", "sqrt_rate"]},
                             {"type": "object", "properties": {"custom": {"type": "object"}},
                              "required": ["custom"], "additionalProperties": False}]},
        "shape": {"type": "number", "exclusiveMinimum": 0},
        "temperature": {"type": "number", "exclusiveMinimum": 0},
    },
    "required": ["model"],
    "additionalProperties": False,
}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": _MODEL_SCHEMA,
        "marginal": {"type": "object"},
        "function": {"type": ["object", "string"]},
        "radius": {"type": "integer", "minimum": 1},
        "direction": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "N": {"type": "integer", "minimum": 4},
        "t_max": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "trajectories": {"type": "integer", "minimum": 2},
        "batches": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "exact": {"type": "boolean"},
        "mc": {"type": "boolean"},
        "temperatures": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "threads": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "csv": {"type": "string"},
        "inject_asymmetric_kernel": {"type": "boolean"},
    },
    "required": ["command"],
    "additionalProperties": False,
}

DEFAULTS = {"radius": 2, "N": 64, "t_max": 30.0, "dt": 0.25, "trajectories": 200, "batches": 20,
            "seed": 12345, "tol": gradient.ORBIT_TOLERANCE, "exact": False, "mc": False}


# --------------------------------------------------------------------------- output helpers
def labeled(value, method: str, stderr=None) -> dict:
    out = {"value": _plain(value), "method": method}
    if method != "exact":
        out["stderr"] = _plain(stderr if stderr is not None else 0.0)
    return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, Fraction)):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def dumps(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"


def write_csv(rows, columns, path: str | None, stream) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    if path:
        with open(path, "w") as fh:
            fh.write(buf.getvalue())
    elif stream is not None:
        stream.write(buf.getvalue())


# --------------------------------------------------------------------------- config
def _parse_direction(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad direction {text!r}") from exc


def _model_args(args) -> dict | None:
    if args.model is None:
        return None
    cfg = {"model": args.model}
    for key in ("p", "c", "kappa", "fugacity", "dim", "kernel", "shape", "temperature"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if args.g is not None:
        cfg["g"] = args.g
    return cfg


def build_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise InputError("config must be a JSON object")
    cfg.setdefault("command", args.command)
    if cfg["command"] != args.command:
        raise InputError(f"config is for {cfg['command']!r}, not {args.command!r}")
    model = _model_args(args)
    if model is not None:
        cfg["model"] = {**cfg.get("model", {}), **model} if cfg.get("model", {}).get("model") == model["model"] else model
    if args.marginal:
        with open(args.marginal) as fh:
            cfg["marginal"] = json.load(fh)
    if getattr(args, "function", None):
        cfg["function"] = args.function
    for key, attr in (("radius", "radius"), ("direction", "direction"), ("N", "N"), ("t_max", "t_max"),
                      ("dt", "dt"), ("trajectories", "trajectories"), ("batches", "batches"),
                      ("seed", "seed"), ("tol", "tol"), ("temperatures", "temperatures"),
                      ("out", "out"), ("csv", "csv"), ("threads", "threads")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    for flag in ("exact", "mc", "inject_asymmetric_kernel"):
        if getattr(args, flag, False):
            cfg[flag] = True
    try:
        jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"invalid configuration at {where}: {exc.message}") from exc
    return {**DEFAULTS, **cfg}


def threads_from(cfg) -> int:
    if "threads" in cfg:
        return int(cfg["threads"])
    env = os.environ.get("GKDIFF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError("GKDIFF_THREADS must be an integer") from exc
    return 1


def energy_ring(mcfg: dict, temperature: float | None = None) -> montecarlo.EnergyRing:
    extra = set(mcfg) - {"model", "kernel", "shape", "temperature"}
    if extra:
        raise InputError(f"unknown keys for energy_exchange: {sorted(extra)}")
    shape = float(mcfg.get("shape", 1.0))
    temp = float(temperature if temperature is not None else mcfg.get("temperature", 1.0))
    kernel = montecarlo.ExchangeKernel.from_config(mcfg.get("kernel", "uniform"), shape)
    return montecarlo.EnergyRing(kernel, Marginal.gamma(shape, temp))


def load_model(cfg):
    mcfg = cfg.get("model")
    if mcfg is None:
        raise InputError("a model is required (--model or config 'model')")
    if mcfg["model"] == "energy_exchange":
        return energy_ring(mcfg)
    return model_from_config(mcfg)


def load_function(cfg) -> LocalFunction:
    doc = cfg["function"]
    if isinstance(doc, str):
        with open(doc) as fh:
            doc = json.load(fh)
    marginal = Marginal.from_dict(cfg["marginal"]) if "marginal" in cfg else None
    return LocalFunction.from_dict(doc, marginal)


# --------------------------------------------------------------------------- commands
def _gradient_report(f: LocalFunction, cfg) -> dict:
    mean = f.mean
    fc = f - mean if abs(mean) > gradient.MEAN_TOLERANCE else f
    rep = gradient.report(fc, tol=cfg["tol"], exact=cfg["exact"])
    rep["subtracted_mean"] = mean if fc is not f else 0.0
    return rep


def cmd_check_gradient(cfg, out) -> int:
    if "function" in cfg:
        reports = {"function": _gradient_report(load_function(cfg), cfg)}
        model_doc = None
    else:
        model = load_model(cfg)
        if not isinstance(model, BondGenerator):
            raise InputError("check-gradient needs a lattice model or a function")
        reports = {f"j_{a + 1}": _gradient_report(model.current(a), cfg) for a in range(model.dim)}
        model_doc = model.to_dict()
    verdict = "gradient" if all(r["verdict"] == "gradient" for r in reports.values()) else "not-gradient"
    doc = {"verdict": verdict, "model": model_doc, "reports": reports,
           "tolerance": cfg["tol"], "exact": cfg["exact"]}
    emit(doc, cfg, out)
    return EXIT_OK if verdict == "gradient" else EXIT_NOT_GRADIENT


def cmd_decompose(cfg, out) -> int:
    return cmd_check_gradient(cfg, out)


def _static_doc(model) -> dict:
    if isinstance(model, montecarlo.EnergyRing):
        q = montecarlo.static_quadrature(model.kernel, model.marginal)
        return {"Ds": labeled([[q["Ds"]]], "quadrature", q["error"]),
                "chi": labeled(q["chi"], "quadrature", 0.0), "model": model.describe()}
    ds = variational.static_D(model)
    return {"Ds": labeled(ds, "exact"), "chi": labeled(variational.compressibility(model), "exact"),
            "model": model.to_dict()}


def cmd_static(cfg, out) -> int:
    emit(_static_doc(load_model(cfg)), cfg, out)
    return EXIT_OK


def _variational_table(model, cfg) -> tuple[dict, list]:
    direction = cfg.get("direction")
    results, rows = [], []
    for r in range(1, int(cfg["radius"]) + 1):
        res = variational.minimize(model, direction, r)
        results.append(res)
        rows.append((r, res.D, res.correction, res.kernel_dim))
    last = results[-1]
    doc = {
        "model": model.to_dict(),
        "direction": list(last.direction),
        "Ds": labeled(last.Ds, "exact"),
        "correction_by_radius": {str(res.radius): labeled(res.correction, "exact") for res in results},
        "D_upper_bound": labeled(last.D, "exact"),
        "D_upper_bound_by_radius": {str(res.radius): labeled(res.D, "exact") for res in results},
        "kernel_dim": {str(res.radius): res.kernel_dim for res in results},
        "raw_infimum_by_radius": {str(res.radius): labeled(res.raw_infimum, "exact") for res in results},
        "note": "finite-radius values bound the bulk coefficient from above",
    }
    return doc, rows


def cmd_variational(cfg, out) -> int:
    model = load_model(cfg)
    if not isinstance(model, BondGenerator):
        raise InputError("variational needs a lattice model")
    doc, rows = _variational_table(model, cfg)
    emit(doc, cfg, out)
    write_csv(rows, CSV_COLUMNS["variational"], cfg.get("csv"), None)
    return EXIT_OK


def _run(model, cfg):
    return montecarlo.simulate(model, int(cfg["N"]), float(cfg["t_max"]), int(cfg["trajectories"]),
                               int(cfg["seed"]), float(cfg["dt"]), int(cfg["batches"]), threads_from(cfg))


def cmd_simulate(cfg, out) -> int:
    model = load_model(cfg)
    run = _run(model, cfg)
    series = montecarlo.displacement_series(run)
    ms = montecarlo.moment_spreading_D(series)
    rel = np.abs(run.total - run.total[:, :1]) / np.maximum(np.abs(run.total[:, :1]), 1e-300)
    marg = run_marginal(model)
    doc = {"moment_spreading_D": labeled(ms.value, "monte-carlo", ms.stderr), "fit": ms.extra,
           "warnings": ms.warnings, "max_relative_conservation_defect": float(rel.max()),
           "stationarity_pvalue": montecarlo.ks_stationarity(run, marg), "run": run.meta}
    emit(doc, cfg, out)
    write_csv(series.to_rows(), CSV_COLUMNS["simulate"], cfg.get("csv"), None)
    return EXIT_OK


def run_marginal(model) -> Marginal:
    return model.marginal if isinstance(model, (BondGenerator, montecarlo.EnergyRing)) else model.model.marginal


def _gk_doc(model, cfg):
    run = _run(model, cfg)
    cseries = montecarlo.current_autocorrelation(run)
    corr = montecarlo.gk_dynamical_correction(cseries)
    ms = montecarlo.moment_spreading_D(montecarlo.displacement_series(run))
    ds, method = montecarlo.static_value(model)
    doc = {
        "Ds_static": labeled(ds, method, 0.0 if method != "exact" else None),
        "dynamical_correction": labeled(corr.value, "monte-carlo", corr.stderr),
        "D_total": labeled(ds + corr.value, "monte-carlo", corr.stderr),
        "moment_spreading_D": labeled(ms.value, "monte-carlo", ms.stderr),
        "details": {"correction": corr.to_dict(), "moment_spreading": ms.to_dict()},
        "run": run.meta,
    }
    return doc, cseries


def cmd_green_kubo(cfg, out) -> int:
    doc, series = _gk_doc(load_model(cfg), cfg)
    emit(doc, cfg, out)
    write_csv(series.to_rows(), CSV_COLUMNS["green-kubo"], cfg.get("csv"), None)
    return EXIT_OK


def cmd_diffusion(cfg, out) -> int:
    mcfg = cfg.get("model")
    if mcfg is None:
        raise InputError("a model is required")
    if mcfg["model"] == "energy_exchange":
        temps = cfg.get("temperatures") or [float(mcfg.get("temperature", 1.0))]
        rows, table = [], []
        for t in temps:
            ring = energy_ring(mcfg, t)
            q = montecarlo.static_quadrature(ring.kernel, ring.marginal)
            entry = {"temperature": t, "Ds_static": labeled(q["Ds"], "quadrature", q["error"])}
            corr_v, corr_se = float("nan"), float("nan")
            if cfg["mc"]:
                run = _run(ring, cfg)
                corr = montecarlo.gk_dynamical_correction(montecarlo.current_autocorrelation(run))
                corr_v, corr_se = corr.value, corr.stderr
                entry["dynamical_correction"] = labeled(corr.value, "monte-carlo", corr.stderr)
                entry["D_total"] = labeled(q["Ds"] + corr.value, "monte-carlo", corr.stderr)
            table.append(entry)
            rows.append((t, q["Ds"], corr_v, corr_se, q["Ds"] + (corr_v if cfg["mc"] else 0.0)))
        doc = {"model": ring.describe(), "table": table, "run": {"seed": cfg["seed"]} if cfg["mc"] else None}
        emit(doc, cfg, out)
        write_csv(rows, CSV_COLUMNS["diffusion-energy"], cfg.get("csv"), None)
        return EXIT_OK
    model = model_from_config(mcfg)
    doc, rows = _variational_table(model, cfg)
    if cfg["mc"]:
        gk, _ = _gk_doc(model, cfg)
        doc["monte_carlo"] = gk
    emit(doc, cfg, out)
    write_csv(rows, CSV_COLUMNS["diffusion"], cfg.get("csv"), None)
    return EXIT_OK


def cmd_selftest(cfg, out) -> int:
    from .selftest import run_selftest

    if "marginal" in cfg:
        Marginal.from_dict(cfg["marginal"])  # malformed marginal -> input error (exit 1)
    results = run_selftest(inject_asymmetric_kernel=cfg.get("inject_asymmetric_kernel", False),
                           marginal=cfg.get("marginal"))
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        out.write(f"{name.ljust(width)}  {'PASS' if ok else 'FAIL'}  {detail}\n")
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            fh.write(dumps({"checks": [{"name": n, "pass": ok, "detail": d} for n, ok, d in results]}))
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def emit(doc, cfg, out) -> None:
    text = dumps(doc)
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    else:
        out.write(text)


HANDLERS = {
    "check-gradient": cmd_check_gradient,
    "decompose": cmd_decompose,
    "static": cmd_static,
    "variational": cmd_variational,
    "simulate": cmd_simulate,
    "green-kubo": cmd_green_kubo,
    "diffusion": cmd_diffusion,
    "selftest": cmd_selftest,
}

EPILOG = """CSV columns (written with --csv):
  variational, diffusion (lattice): radius,D_upper_bound,correction,kernel_dim
  diffusion (energy_exchange):      temperature,Ds_static,correction,correction_stderr,D_total
  simulate:                         lag,H,stderr   (Helfand moment H(t))
  green-kubo:                       lag,C,stderr   (current autocorrelation C(t))

Exit codes: 0 ok / gradient, 1 error, 2 not a gradient, 3 self-test failure.
Worker threads: --threads, else the GKDIFF_THREADS environment variable, else 1.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkdiff", description=__doc__.splitlines()[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file (unknown keys are rejected)")
    common.add_argument("--model", choices=["ssep", "gep", "zero_range", "energy_exchange"])
    common.add_argument("--p", type=float, help="SSEP density")
    common.add_argument("--c", help="SSEP jump rate: number, const:v, neighbour:g or product:g")
    common.add_argument("--kappa", type=int, help="GEP capacity or zero-range truncation")
    common.add_argument("--fugacity", type=float)
    common.add_argument("--g", choices=["linear", "constant"], help="zero-range rate")
    common.add_argument("--dim", type=int)
    common.add_argument("--kernel", choices=["uniform", "sqrt_rate"])
    common.add_argument("--shape", type=float, help="Gamma shape of the energy marginal")
    common.add_argument("--temperature", type=float)
    common.add_argument("--marginal", help="marginal JSON file")
    common.add_argument("--radius", type=int)
    common.add_argument("--direction", type=_parse_direction)
    common.add_argument("--N", type=int)
    common.add_argument("--t-max", dest="t_max", type=float)
    common.add_argument("--dt", type=float)
    common.add_argument("--trajectories", type=int)
    common.add_argument("--batches", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--out", help="write JSON here instead of stdout")
    common.add_argument("--csv", help="write the CSV table here")
    common.add_argument("--threads", type=int)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if name in ("check-gradient", "decompose"):
            p.add_argument("--function", help="LocalFunction JSON file")
            p.add_argument("--exact", action="store_true", help="rational-arithmetic verdict")
        if name == "diffusion":
            p.add_argument("--mc", action="store_true", help="add Monte Carlo estimates")
            p.add_argument("--temperatures", type=_parse_direction, help="energy model: T grid, e.g. 0.5,1,2")
        if name == "selftest":
            p.add_argument("--inject-asymmetric-kernel", action="store_true",
                           help="include a non-reversible kernel (negative test)")
    return parser


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        cfg = build_config(args)
        return HANDLERS[args.command](cfg, stdout)
    except (GKDiffError, ValueError, OSError, json.JSONDecodeError) as exc:
        stderr.write(f"gkdiff: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
