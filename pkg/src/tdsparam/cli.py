"""Command-line front end: ``tds <command> --config FILE [--out DIR] [--verbose]``.

Exit codes: 0 success (or PASS / CONVERGED), 1 configuration or input
error, 2 hypothesis WARN, 3 ray DIVERGED or stopped at the domain edge,
4 computation FAILED.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .charfun import CharFun
from .distributed import DistributedModel, model_to_charfun
from .errors import ModelError, TDSError
from .line import RayTask, coefficient_scale, fan_directions, run_fan, run_ray
from .polecount import count_unstable
from .region import MAX_GROW_DIM, HolderPair, grow_region
from .sweep import min_modulus

log = logging.getLogger("tdsparam")

EXIT_OK, EXIT_INPUT, EXIT_WARN, EXIT_DIVERGED, EXIT_FAILED = 0, 1, 2, 3, 4

COMMANDS = ("check", "ray", "fan", "region", "count", "convert")

DEFAULTS = {
    "eta": 0.5,
    "delta": 1e-4,
    "theta_max": None,
    "theta0": 0.0,
    "retarded": True,
    "p": 2.0,
    "q": 2.0,
    "h": None,
    "extent": None,
    "max_generations": 60,
    "max_balls": 4000,
    "fan": 16,
    "workers": None,
}

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_EXPR = {"type": ["number", "string"]}
_MATRIX = {"anyOf": [_EXPR, {"type": "array", "items": {"type": "array", "items": _EXPR}}]}
_NORM = {"anyOf": [{"type": "number", "minimum": 1}, {"const": "inf"}]}

SYSTEM_SCHEMA = {
    "type": "object",
    "properties": {
        "m": {"type": "integer", "minimum": 1},
        "params": {"type": "array", "items": {"type": "string"}},
        "lower_bounds": _VEC,
        "text": {"type": "string", "minLength": 1},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"power": {"type": "integer", "minimum": 0},
                               "coeff": _EXPR, "delay": _EXPR},
                "required": ["power"],
                "additionalProperties": False,
            },
        },
    },
    "oneOf": [{"required": ["text"]}, {"required": ["m", "terms", "params"]}],
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "params": {"type": "array", "items": {"type": "string"}},
        "A0": _MATRIX,
        "discrete": {"type": "array", "items": {
            "type": "object", "properties": {"A": _MATRIX, "delay": _EXPR},
            "required": ["A", "delay"], "additionalProperties": False}},
        "distributed": {"type": "array", "items": {
            "type": "object",
            "properties": {"A": _MATRIX, "lower": _EXPR, "upper": _EXPR,
                           "kernel": {"type": "array", "items": _EXPR, "minItems": 1}},
            "required": ["A", "upper"], "additionalProperties": False}},
        "lower_bounds": _VEC,
    },
    "required": ["A0"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "system": {"anyOf": [SYSTEM_SCHEMA, {"type": "string", "minLength": 1}]},
        "system_file": {"type": "string"},
        "model": MODEL_SCHEMA,
        "model_file": {"type": "string"},
        "start": _VEC,
        "direction": _VEC,
        "directions": {"type": "array", "items": _VEC, "minItems": 1},
        "fan": {"type": "integer", "minimum": 1},
        "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0},
        "theta_max": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "theta0": {"type": "number", "minimum": 0},
        "retarded": {"type": "boolean"},
        "p": _NORM,
        "q": _NORM,
        "h": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "extent": {"anyOf": [{"type": "null"},
                             {"type": "array", "items": _VEC, "minItems": 2, "maxItems": 2}]},
        "max_generations": {"type": "integer", "minimum": 0},
        "max_balls": {"type": "integer", "minimum": 1},
        "workers": {"type": ["integer", "null"], "minimum": 1},
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}

_REQUIRED = {
    "check": [],
    "ray": ["start", "direction"],
    "fan": ["start"],
    "region": ["start"],
    "count": ["start"],
    "convert": [],
}


class InputError(Exception):
    """Configuration problem; reported with exit code 1."""


# Configuration -------------------------------------------------------------------

def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"cannot read config {path}: {err}") from err
    cfg = _parse_json(text, path)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"{path}: schema error at {where}: {err.message}") from err
    return cfg, path.parent


def _parse_json(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise InputError(f"{path}: malformed JSON at offset {err.pos} "
                         f"(line {err.lineno}, column {err.colno}): {err.msg}") from err


def _read_json_file(name, base: Path):
    p = Path(name)
    if not p.is_absolute():
        p = base / p
    try:
        return _parse_json(p.read_text(encoding="utf-8"), p)
    except OSError as err:
        raise InputError(f"cannot read {p}: {err}") from err


def resolve(cfg: dict, command: str) -> dict:
    """Config with every default filled in (echoed into outputs)."""
    out = copy.deepcopy(DEFAULTS)
    out.update(cfg)
    missing = [k for k in _REQUIRED[command] if k not in cfg]
    if missing:
        raise InputError(f"'{command}' needs config field(s): {', '.join(missing)}")
    p, q = out["p"], out["q"]
    p = np.inf if p == "inf" else float(p)
    q = np.inf if q == "inf" else float(q)
    if "p" in cfg and "q" not in cfg:
        q = HolderPair.from_p(p).q
    elif "q" in cfg and "p" not in cfg:
        p = HolderPair.from_q(q).p
    try:
        HolderPair(p, q)
    except TDSError as err:
        raise InputError(str(err)) from err
    out["p"], out["q"] = _jnum(p), _jnum(q)
    return out


def load_system(cfg: dict, base: Path):
    """CharFun from the config and, for distributed models, the conversion report."""
    sources = [k for k in ("system", "system_file", "model", "model_file") if k in cfg]
    if len(sources) != 1:
        raise InputError("give exactly one of system, system_file, model, model_file")
    src = sources[0]
    try:
        if src in ("model", "model_file"):
            data = cfg["model"] if src == "model" else _read_json_file(cfg["model_file"], base)
            if src == "model_file":
                _validate(data, MODEL_SCHEMA, "model_file")
            dm = DistributedModel.from_dict(data)
            report = model_to_charfun(dm, data.get("lower_bounds"))
            return report.charfun, report
        data = cfg["system"] if src == "system" else _read_json_file(cfg["system_file"], base)
        if isinstance(data, str):
            return CharFun.from_text(data), None
        _validate(data, SYSTEM_SCHEMA, src)
        return CharFun.from_dict(data), None
    except InputError:
        raise
    except (TDSError, ValueError) as err:
        raise InputError(f"invalid system: {err}") from err


def _validate(data, schema, label):
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"{label}: schema error at {where}: {err.message}") from err


# Output helpers ------------------------------------------------------------------

def _jnum(x):
    if x is None:
        return None
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    if np.isnan(x):
        return None
    return x


def _clean(obj):
    """JSON-safe copy (numpy scalars, infinities, tuples, sets)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _jnum(obj)
    return obj


def _write_json(path: Path, data):
    path.write_text(json.dumps(_clean(data), indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit(summary):
    print(json.dumps(_clean(summary), indent=2))


# Commands ------------------------------------------------------------------------

def cmd_check(cfg, base, out: Path):
    cf, report = load_system(cfg, base)
    hyp = cf.check_hypotheses()
    data = {"command": "check", "system": cf.to_dict(), **hyp.to_dict()}
    if report is not None:
        data["conversion"] = report.to_dict()
    _write_json(out / "check.json", data)
    _emit({"verdict": hyp.verdict, "issues": hyp.issues})
    return EXIT_OK if hyp.verdict == "PASS" else EXIT_WARN


def _ray_kwargs(rc):
    return dict(eta=rc["eta"], delta=rc["delta"], theta_max=rc["theta_max"],
                theta0=rc["theta0"], retarded=rc["retarded"])


def _trace_record(trace, direction, cf, task_point):
    rec = trace.to_dict()
    rec["direction"] = list(map(float, direction))
    if trace.theta_lim is not None:
        end = task_point(trace.theta_lim)
        rec["endpoint"] = list(map(float, end))
        if trace.verdict == "CONVERGED":
            try:
                rec["endpoint_min_abs_f"] = min_modulus(cf, end).value
                rec["endpoint_scale"] = coefficient_scale(cf, end)
            except TDSError as err:
                rec["endpoint_error"] = str(err)
    return rec


def _ray_exit(verdict):
    return {"CONVERGED": EXIT_OK, "DIVERGED": EXIT_DIVERGED,
            "DOMAIN_EDGE": EXIT_DIVERGED}.get(verdict, EXIT_FAILED)


def cmd_ray(cfg, base, out: Path):
    cf, _ = load_system(cfg, base)
    rc = resolve(cfg, "ray")
    try:
        task = RayTask(cf, rc["start"], rc["direction"], **_ray_kwargs(rc))
    except TDSError as err:
        raise InputError(str(err)) from err
    rc["theta_max"] = task.theta_max
    trace = run_ray(task)
    rec = _trace_record(trace, task.direction, cf, task.point)
    _write_csv(out / "ray.csv", trace.CSV_HEADER, trace.csv_rows())
    _write_json(out / "ray.json", {"command": "ray", "config": rc, "system": cf.to_dict(),
                                   "result": rec})
    _emit(rec)
    return _ray_exit(trace.verdict)


def cmd_fan(cfg, base, out: Path):
    cf, _ = load_system(cfg, base)
    rc = resolve(cfg, "fan")
    if "directions" in cfg:
        dirs = [np.asarray(d, dtype=float) for d in cfg["directions"]]
    elif cf.n == 2:
        dirs = list(fan_directions(rc["fan"]))
    else:
        raise InputError("a 'directions' list is required when the system does not have 2 parameters")
    try:
        traces = run_fan(cf, rc["start"], dirs, workers=rc["workers"], **_ray_kwargs(rc))
    except TDSError as err:
        raise InputError(str(err)) from err
    tau0 = cf.point(rc["start"])
    records = []
    for i, (d, tr) in enumerate(zip(dirs, traces)):
        u = d / np.linalg.norm(d)
        rec = _trace_record(tr, u, cf, lambda th, u=u: tau0 + th * u)
        rec["index"] = i
        rec["csv"] = f"fan_{i:03d}.csv"
        records.append(rec)
        _write_csv(out / rec["csv"], tr.CSV_HEADER, tr.csv_rows())
    if rc["theta_max"] is None:
        rc["theta_max"] = 100.0 * (1.0 + float(np.max(np.abs(tau0))))
    _write_json(out / "fan.json", {"command": "fan", "config": rc, "system": cf.to_dict(),
                                   "rays": records})
    if cf.n == 2:
        _write_fan_plot(out, records, tau0, cf.params)
    _emit({"rays": [{k: r.get(k) for k in ("index", "verdict", "theta_lim", "direction")}
                    for r in records]})
    return EXIT_FAILED if any(r["verdict"] == "FAILED" for r in records) else EXIT_OK


def _write_fan_plot(out, records, tau0, params):
    lines = [f"set xlabel '{params[0]}'", f"set ylabel '{params[1]}'", "set size ratio -1",
             "unset key"]
    for r in records:
        if "endpoint" in r:
            x, y = r["endpoint"]
            lines.append(f"set arrow from {tau0[0]!r},{tau0[1]!r} to {x!r},{y!r} nohead")
    lines.append(f"plot '-' with points pt 7\n{tau0[0]!r} {tau0[1]!r}\ne")
    (out / "fan.gp").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_region(cfg, base, out: Path):
    cf, _ = load_system(cfg, base)
    if cf.n > MAX_GROW_DIM:
        raise InputError(f"region growth supports at most {MAX_GROW_DIM} parameters; "
                         f"this system has {cf.n}")
    rc = resolve(cfg, "region")
    p = np.inf if rc["p"] == "inf" else rc["p"]
    q = np.inf if rc["q"] == "inf" else rc["q"]
    try:
        state = grow_region(cf, rc["start"], HolderPair(p, q), eta=rc["eta"], h=rc["h"],
                            extent=rc["extent"], max_generations=rc["max_generations"],
                            max_balls=rc["max_balls"], retarded=rc["retarded"],
                            workers=rc["workers"])
    except (ValueError, TypeError) as err:
        raise InputError(str(err)) from err
    rc["h"] = state.h
    rc["extent"] = [list(state.extent[0]), list(state.extent[1])]
    data = state.to_dict()
    data["unbounded"] = bool(state.unbounded_directions)
    data["command"] = "region"
    data["config"] = rc
    data["system"] = cf.to_dict()
    _write_json(out / "region.json", data)
    _write_csv(out / "region_balls.csv", tuple(f"c_{n}" for n in cf.params) + ("radius",),
               [(*b.center, b.radius) for b in state.balls])
    if state.polygon:
        _write_csv(out / "region_polygon.csv", tuple(cf.params), state.polygon)
    if cf.n == 2:
        _write_region_plot(out, state, cf.params)
    _emit({"nu": state.nu, "balls": len(state.balls), "generations": state.generations,
           "stop_reason": state.stop_reason, "capped_faces": state.unbounded_directions})
    return EXIT_OK


def _write_region_plot(out, state, params):
    lines = [f"set xlabel '{params[0]}'", f"set ylabel '{params[1]}'", "set size ratio -1",
             "unset key", "set datafile separator ','"]
    q = state.hp.q
    if q == 2.0:
        lines.append("plot 'region_balls.csv' skip 1 using 1:2:3 with circles, \\")
    else:
        # non-Euclidean balls: draw centres, the outline carries the shape
        lines.append("plot 'region_balls.csv' skip 1 using 1:2 with dots, \\")
    if state.polygon:
        lines.append("     'region_polygon.csv' skip 1 using 1:2 with lines lw 2")
    else:
        lines[-1] = lines[-1].rstrip(", \\")
    (out / "region.gp").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_count(cfg, base, out: Path):
    cf, _ = load_system(cfg, base)
    rc = resolve(cfg, "count")
    try:
        tau = cf.point(rc["start"])
    except TDSError as err:
        raise InputError(str(err)) from err
    rep = count_unstable(cf, tau)
    data = {"command": "count", "point": list(map(float, tau)), **rep.to_dict()}
    _write_json(out / "count.json", data)
    _emit(rep.to_dict())
    return EXIT_OK


def cmd_convert(cfg, base, out: Path):
    if "model" not in cfg and "model_file" not in cfg:
        raise InputError("'convert' needs a model or model_file")
    _, report = load_system(cfg, base)
    data = {"command": "convert", **report.to_dict()}
    _write_json(out / "system.json", report.charfun.to_dict())
    _write_json(out / "convert.json", data)
    _emit(data)
    return EXIT_OK


HANDLERS = {"check": cmd_check, "ray": cmd_ray, "fan": cmd_fan, "region": cmd_region,
            "count": cmd_count, "convert": cmd_convert}


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; exit code 2 is reserved for WARN
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="tds", description=(
        "Stability equivalence rays and regions for time-delay systems."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--out", help="output directory (default: config 'out' or '.')")
    ap.add_argument("--verbose", action="store_true", help="diagnostics on stderr")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, base = load_config(args.config)
        out = Path(args.out or cfg.get("out", "."))
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, base, out)
    except InputError as err:
        print(f"tds: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ModelError as err:
        print(f"tds: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except TDSError as err:
        print(f"tds: failed: {err}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
