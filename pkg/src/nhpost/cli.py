"""Command-line experiment runner.

    nhpost run --config cfg.json [--seed N] [--out DIR] [--plots] [--workers K]
    nhpost validate --config cfg.json
    nhpost list-experiments
    nhpost example-config KIND

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 a pass/fail check in the report failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import traceback
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, DimensionError, NHPostError
from .experiments import EXPERIMENTS, resolve_params, run_kind
from .linalg import decode_matrix

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3
DEFAULT_SEED = 0
DEFAULT_OUT = "nhpost-out"


def load_schema() -> dict:
    return json.loads(resources.files("nhpost").joinpath("schema/config.json").read_text())


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _field(error: jsonschema.ValidationError) -> str:
    out = ""
    for part in error.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


def _check_dims(cfg: dict) -> None:
    kind = cfg["experiment"]
    p = cfg.get("params", {})
    for key in ("dims",):
        for i, d in enumerate(p.get(key, [])):
            if not _is_power_of_two(d):
                raise DimensionError(f"params.{key}[{i}]: dimension {d} is not a power of two")
    if kind == "trotter-order" and "system_dim" in p and not _is_power_of_two(p["system_dim"]):
        raise DimensionError(f"params.system_dim: dimension {p['system_dim']} is not a power of two")
    for key in ("gates", "matrices"):
        for i, m in enumerate(p.get(key, [])):
            a = decode_matrix(m)
            if a.shape[0] != a.shape[1]:
                raise DimensionError(f"params.{key}[{i}]: matrix is {a.shape[0]}x{a.shape[1]}, not square")
            if not _is_power_of_two(a.shape[0]):
                raise DimensionError(f"params.{key}[{i}]: dimension {a.shape[0]} is not a power of two")


def validate_config(cfg) -> dict:
    """Schema and dimension checks; raises :class:`ConfigError` or :class:`DimensionError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>: configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        raise ConfigError("; ".join(f"{_field(e)}: {e.message}" for e in errors))
    _check_dims(cfg)
    return cfg


def effective_config(cfg: dict, seed: int | None = None) -> dict:
    kind = cfg["experiment"]
    return {
        "experiment": kind,
        "rng_seed": int(seed if seed is not None else cfg.get("rng_seed", DEFAULT_SEED)),
        "params": resolve_params(kind, cfg.get("params")),
    }


def config_hash(cfg: dict) -> str:
    text = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _cell(x) -> str:
    x = _jsonable(x)
    return "" if x is None else str(x)


def _ensure_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")


def _write_plots(plots, out: Path) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "nhpost"
    names = []
    for name, draw in plots:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        draw(ax)
        fig.tight_layout()
        fname = f"{name}.svg"
        fig.savefig(out / fname, format="svg", metadata={"Date": None})
        plt.close(fig)
        names.append(fname)
    return names


def run_experiment(cfg: dict, out_dir, seed: int | None = None, plots: bool = False, workers: int = 1) -> dict:
    """Run one configured experiment and write ``report.json``, CSV tables and optional SVG plots."""
    eff = effective_config(cfg, seed)
    out = Path(out_dir)
    _ensure_writable(out)
    result = run_kind(eff["experiment"], eff["params"], eff["rng_seed"], workers=workers)
    table_files = []
    for name, table in sorted(result.tables.items()):
        fname = f"{name}.csv"
        with open(out / fname, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(table.columns)
            writer.writerows([_cell(v) for v in row] for row in table.rows)
        table_files.append(fname)
    plot_files = _write_plots(result.plots, out) if plots and result.plots else []
    report = {
        "artifact": "nhpost",
        "version": __version__,
        "config_hash": config_hash(eff),
        "config": eff,
        "metrics": result.metrics,
        "checks": {k: "PASS" if v else "FAIL" for k, v in sorted(result.checks.items())},
        "passed": all(result.checks.values()),
        "tables": table_files,
        "plots": plot_files,
    }
    report = _jsonable(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _error_context(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(frames):
        parts = Path(frame.filename).parts
        if "nhpost" in parts:
            return "nhpost." + Path(frame.filename).stem
    return "nhpost"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhpost", description="Experiment runner for postselection gadgets and trajectories")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True, metavar="PATH")
    p_run.add_argument("--seed", type=int, default=None, help="override rng_seed from the config")
    p_run.add_argument("--out", default=None, metavar="DIR", help="output directory (default: config output.dir or nhpost-out)")
    p_run.add_argument("--plots", action="store_true", help="also write SVG plots (needs matplotlib)")
    p_run.add_argument("--workers", type=int, default=1, help="process pool size for sweep points")

    p_val = sub.add_parser("validate", help="check a config file without running it")
    p_val.add_argument("--config", required=True, metavar="PATH")

    sub.add_parser("list-experiments", help="list available experiment kinds")

    p_ex = sub.add_parser("example-config", help="print a config with default parameters")
    p_ex.add_argument("kind", choices=sorted(EXPERIMENTS))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        width = max(map(len, EXPERIMENTS))
        for name, kind in EXPERIMENTS.items():
            print(f"{name:<{width}}  {kind.description}")
        return EXIT_OK
    if args.command == "example-config":
        cfg = {"experiment": args.kind, "rng_seed": DEFAULT_SEED, "params": EXPERIMENTS[args.kind].defaults}
        print(json.dumps(_jsonable(cfg), indent=2))
        return EXIT_OK
    try:
        cfg = validate_config(load_config(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DimensionError as exc:
        print(f"dimension error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: valid {cfg['experiment']} config")
        return EXIT_OK
    if args.workers < 1:
        print("config error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    plots = args.plots or cfg.get("output", {}).get("plots", False)
    out = args.out or cfg.get("output", {}).get("dir", DEFAULT_OUT)
    try:
        report = run_experiment(cfg, out, seed=args.seed, plots=plots, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ImportError as exc:
        print(f"config error: plotting requested but unavailable ({exc})", file=sys.stderr)
        return EXIT_CONFIG
    except (NHPostError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure in {_error_context(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for name, status in report["checks"].items():
        print(f"{status} {name}")
    print(f"report written to {Path(out) / 'report.json'}")
    return EXIT_OK if report["passed"] else EXIT_ACCEPTANCE


if __name__ == "__main__":
    sys.exit(main())
