"""Command line runner: ``dpgeo run|check|list|describe``.

Configs are YAML documents validated against a versioned JSON schema; unknown
keys are rejected.  Results land in ``<output_dir>/<preset>/`` as a JSON
summary plus one CSV per table.  The output directory comes from
``--output-dir``, else ``$DPGEO_OUTPUT_DIR``, else the config, else
``./dpgeo-out``.

Exit codes: 0 success, 1 failed check (``check`` / ``--check``), 2 invalid
config, 3 solver non-convergence (partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import presets

log = logging.getLogger("dpgeo")

SCHEMA_VERSION = 1
ENV_OUTPUT = "DPGEO_OUTPUT_DIR"

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _json_type(value):
    if isinstance(value, bool):
        return {"type": "boolean"}
    if isinstance(value, int):
        return {"type": "integer"}
    if isinstance(value, float):
        return {"type": "number"}
    if isinstance(value, str):
        return {"type": "string"}
    if value is None or isinstance(value, list):
        return {"type": ["array", "null"]}
    return {}


def config_schema(name: str | None = None) -> dict:
    """JSON schema for configs of one preset (or the union over all presets)."""
    names = [name] if name else list(presets.PRESETS)
    sections = {s: {} for s in presets.SECTIONS}
    for nm in names:
        for sec, vals in presets.PRESETS[nm][2].items():
            for key, val in vals.items():
                sections[sec].setdefault(key, _json_type(val))
    props = {
        "version": {"const": SCHEMA_VERSION},
        "experiment": {"enum": names},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
    }
    for sec, keys in sections.items():
        props[sec] = {"type": "object", "additionalProperties": False, "properties": keys}
    return {"$schema": "https://json-schema.org/draft/2020-12/schema",
            "title": f"dpgeo experiment config v{SCHEMA_VERSION}",
            "type": "object", "additionalProperties": False,
            "required": ["experiment"], "properties": props}


class ConfigError(ValueError):
    pass


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` and merge it over the preset defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    name = raw.get("experiment")
    if name not in presets.PRESETS:
        raise ConfigError(f"unknown experiment {name!r}")
    try:
        jsonschema.validate(raw, config_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = presets.defaults(name)
    for sec in presets.SECTIONS:
        cfg[sec].update(copy.deepcopy(raw.get(sec, {})))
    cfg["experiment"] = name
    cfg["version"] = raw.get("version", SCHEMA_VERSION)
    cfg["seed"] = raw.get("seed", 0)
    cfg["workers"] = raw.get("workers", 1)
    cfg["output_dir"] = raw.get("output_dir")
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    return data or {}


def _apply_overrides(raw: dict, args) -> dict:
    raw = copy.deepcopy(raw)
    name = raw["experiment"]
    defaults = presets.defaults(name)

    def put(candidates, value):
        # first (section, key, as_list) the preset actually uses
        for sec, key, as_list in candidates:
            if key in defaults[sec]:
                raw.setdefault(sec, {})[key] = [value] if as_list else value
                return
        raise ConfigError(f"preset {name} has no parameter for this option")

    if args.p is not None:
        put([("solver", "p", False)], args.p)
    if args.n is not None:
        put([("metric", "n", False)], args.n)
    if args.delta is not None:
        put([("metric", "delta", False), ("sweep", "deltas", True)], args.delta)
    if args.eps is not None:
        put([("metric", "epsilon", False), ("sweep", "epsilons", True)], args.eps)
    if args.alpha is not None:
        put([("metric", "alphas", True)], args.alpha)
    if args.tau is not None:
        put([("metric", "tau", False), ("sweep", "taus", True)], args.tau)
    if args.cells is not None:
        cur = defaults["grid"].get("cells")
        if cur is None:
            raise ConfigError(f"preset {name} has no grid cells")
        lower = defaults["grid"].get("lower")
        if not isinstance(cur, list):
            val = args.cells[0]
        elif len(args.cells) == 1 and lower is not None and len(cur) == len(lower):
            val = args.cells * len(lower)   # one count per axis
        else:
            val = args.cells
        raw.setdefault("grid", {})["cells"] = val
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    return raw


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_artifacts(out_dir: Path, cfg: dict, result: dict, status: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (cols, rows) in result.get("tables", {}).items():
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
    checks = result.get("checks", {})
    doc = {"schema_version": SCHEMA_VERSION, "experiment": cfg["experiment"], "status": status,
           "config": {k: v for k, v in cfg.items() if k != "output_dir"},
           "summary": result.get("summary", {}), "checks": checks,
           "passed": bool(all(checks.values()))}
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(_clean(doc), fh, indent=2, sort_keys=True)
    return out_dir / "summary.json"


def _output_root(args, cfg) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    if os.environ.get(ENV_OUTPUT):
        return Path(os.environ[ENV_OUTPUT])
    if cfg.get("output_dir"):
        return Path(cfg["output_dir"])
    return Path("dpgeo-out")


def cmd_run(args, check: bool) -> int:
    try:
        raw = load_config(args.config) if args.config else {}
        if args.preset:
            if raw.get("experiment") not in (None, args.preset):
                raise ConfigError(f"config is for {raw['experiment']!r}, not {args.preset!r}")
            raw["experiment"] = args.preset
        if "experiment" not in raw:
            raise ConfigError("no experiment given")
        if raw["experiment"] not in presets.PRESETS:
            raise ConfigError(f"unknown experiment {raw['experiment']!r}")
        raw = _apply_overrides(raw, args)
        cfg = resolve_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _output_root(args, cfg) / cfg["experiment"]
    try:
        result = presets.run_preset(cfg["experiment"], cfg, workers=cfg["workers"])
    except presets.ConvergenceError as exc:
        partial = exc.partial or {"summary": {"error": str(exc)}}
        path = write_artifacts(out_dir, cfg, partial, "not-converged")
        print(f"solver did not converge: {exc} (partial results in {path})", file=sys.stderr)
        return EXIT_SOLVER
    status = "ok" if result.get("converged", True) else "not-converged"
    path = write_artifacts(out_dir, cfg, result, status)
    _print_result(cfg["experiment"], result)
    print(f"wrote {path}")
    if status != "ok":
        print("solver did not converge", file=sys.stderr)
        return EXIT_SOLVER
    if check and not all(result["checks"].values()):
        return EXIT_CHECK
    return EXIT_OK


def _print_result(name: str, result: dict) -> None:
    summ = result["summary"]
    for key in ("min_R", "slopes", "ratios", "mu", "collapsed_diameters", "deviations",
                "residual_ratio", "values"):
        if key in summ:
            print(f"{key}: {json.dumps(_clean(summ[key]))}")
    for cname, ok in result["checks"].items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {cname}")


def cmd_list(args) -> int:
    for name, (_, desc, _) in presets.PRESETS.items():
        print(f"{name:26s} {desc}")
    return EXIT_OK


def cmd_describe(args) -> int:
    if args.preset not in presets.PRESETS:
        print(f"unknown preset {args.preset!r}", file=sys.stderr)
        return EXIT_CONFIG
    _, desc, _ = presets.PRESETS[args.preset]
    doc = {"experiment": args.preset, "description": desc, "version": SCHEMA_VERSION,
           "defaults": presets.defaults(args.preset)}
    if args.schema:
        doc["schema"] = config_schema(args.preset)
    yaml.safe_dump(doc, sys.stdout, sort_keys=False)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpgeo", description="d_p geometry experiment runner")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_args(p):
        p.add_argument("preset", nargs="?")
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--n", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--eps", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--cells", type=int, nargs="+")

    p_run = sub.add_parser("run", help="run a preset")
    run_args(p_run)
    p_run.add_argument("--check", action="store_true", help="exit nonzero if a check fails")
    p_chk = sub.add_parser("check", help="run a preset and exit nonzero on failed checks")
    run_args(p_chk)
    sub.add_parser("list", help="list presets")
    p_desc = sub.add_parser("describe", help="show a preset's defaults")
    p_desc.add_argument("preset")
    p_desc.add_argument("--schema", action="store_true", help="include the config schema")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        return cmd_list(args)
    if args.command == "describe":
        return cmd_describe(args)
    return cmd_run(args, check=args.command == "check" or getattr(args, "check", False))


if __name__ == "__main__":
    sys.exit(main())
