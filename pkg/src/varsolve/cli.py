"""Command-line experiment runner.

    varsolve run CONFIG [--seed S] [--out-dir DIR]   (CONFIG may be a manifest.json)
    varsolve sweep CONFIG --key beta --values 10 100 1000 [--jobs J]
    varsolve eval CHECKPOINT --problem NAME [--h 1/64] [--pointwise CSV] [--out CSV]

Configs are INI files; every key belongs to one section:

    [training]  problem method beta alpha epochs epochs_u epochs_lambda pmdl_steps
                multiplier_init multiplier_sign sgda_ratio sgda_ascent_scale
    [network]   width depth multiplier_width multiplier_depth
    [optimizer] lr_base adam_beta1 adam_beta2 adam_eps lr_decay_total_steps
                lr_decay_factor adam_reset
    [sampling]  batch_interior boundary_points_per_face norm_batch seed
    [metrics]   eval_every evaluate grid_h oracle_n
    [output]    name

Exit status: 0 on success, 2 for configuration errors, 3 for numeric
failures. Failures also print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import typing
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, NumericFailure, VarsolveError
from .metrics import Reference, evaluate
from .network import ExactBCNetwork, ResNet, load_checkpoint, save_checkpoint
from .problems import builtin
from .sampling import grid_points
from .training import TrainConfig, train

log = logging.getLogger("varsolve")

METRIC_COLUMNS = ("epoch", "loss", "beta", "lr", "err_abs_in", "err_rel_in",
                  "err_abs_bd", "err_rel_bd", "rho_rel_err", "wall_s")
REPORT_COLUMNS = METRIC_COLUMNS[4:]

SECTIONS = {
    "training": ("problem", "method", "beta", "alpha", "epochs", "epochs_u", "epochs_lambda",
                 "pmdl_steps", "multiplier_init", "multiplier_sign", "sgda_ratio",
                 "sgda_ascent_scale"),
    "network": ("width", "depth", "multiplier_width", "multiplier_depth"),
    "optimizer": ("lr_base", "adam_beta1", "adam_beta2", "adam_eps", "lr_decay_total_steps",
                  "lr_decay_factor", "adam_reset"),
    "sampling": ("batch_interior", "boundary_points_per_face", "norm_batch", "seed"),
    "metrics": ("eval_every", "evaluate", "grid_h", "oracle_n"),
}
FIELD_SECTION = {key: section for section, keys in SECTIONS.items() for key in keys}
_HINTS = typing.get_type_hints(TrainConfig)
EXIT_CONFIG, EXIT_NUMERIC = 2, 3


# -- config parsing ----------------------------------------------------------------

def parse_number(text: str) -> float:
    """Floats, plus the forms ``1/64`` and ``2^-6``."""
    text = text.strip()
    try:
        if "/" in text:
            num, den = text.split("/")
            return float(num) / float(den)
        if "^" in text:
            base, exp = text.split("^")
            return float(base) ** float(exp)
        return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc


def parse_value(field: str, text: str):
    """Convert ``text`` to the type of TrainConfig.``field``."""
    hint = _HINTS[field]
    base = [a for a in typing.get_args(hint) if a is not type(None)] or [hint]
    kind = base[0]
    if text.strip().lower() in ("", "none") and type(None) in typing.get_args(hint):
        return None
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if kind is int:
            value = parse_number(text)
            if value != int(value):
                raise ValueError(text)
            return int(value)
        if kind is float:
            return parse_number(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for {field}", key=field) from exc


def resolve_key(key: str) -> str:
    """Accept ``beta`` or ``training.beta``."""
    section, _, name = key.rpartition(".")
    if name not in FIELD_SECTION or (section and FIELD_SECTION[name] != section):
        raise ConfigError(f"unknown configuration key {key!r}", key=key)
    return name


def load_config(path, overrides=None) -> tuple[TrainConfig, str]:
    """Parse an INI config (or a run's manifest.json) into a TrainConfig.

    Returns (config, run name).
    """
    if str(path).endswith(".json"):
        return _load_manifest(path, overrides)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", key="config") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}", key="config") from exc
    values = {}
    name = Path(path).stem
    for section in parser.sections():
        for key, text in parser.items(section):
            if section == "output" and key == "name":
                name = text.strip()
                continue
            if FIELD_SECTION.get(key) != section:
                raise ConfigError(f"unknown configuration key {section}.{key}",
                                  key=f"{section}.{key}")
            values[key] = parse_value(key, text)
    values.update(overrides or {})
    return TrainConfig(**values), name


def _load_manifest(path, overrides):
    try:
        stored = json.loads(Path(path).read_text())["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read manifest {path}", key="config") from exc
    unknown = set(stored) - set(FIELD_SECTION)
    if unknown:
        raise ConfigError(f"unknown key in manifest: {sorted(unknown)[0]}", key=sorted(unknown)[0])
    stored.update(overrides or {})
    return TrainConfig(**stored), Path(path).resolve().parent.name + "-rerun"


# -- output ------------------------------------------------------------------------

def _cell(value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metrics(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for rec in records:
            row = rec.as_row()
            writer.writerow([_cell(row[c]) for c in METRIC_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _build_id():
    return {"version": __version__, "python": platform.python_version(),
            "numpy": np.__version__}


def _now():
    return datetime.now(timezone.utc).isoformat()


def execute(cfg: TrainConfig, out_dir: Path) -> dict:
    """Train and write metrics.csv, both checkpoints and manifest.json into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()
    result = train(cfg)
    write_metrics(out_dir / "metrics.csv", result.records)
    role = "primal_exact_bc" if cfg.method == "refnet" else "primal"
    save_checkpoint(out_dir / "primal.ckpt", result.primal_cfg, result.theta_u, role, cfg.seed)
    save_checkpoint(out_dir / "multiplier.ckpt", result.multiplier_cfg, result.theta_lambda,
                    "multiplier", cfg.seed)
    manifest = {
        "config": dataclasses.asdict(cfg),
        "build": _build_id(),
        "started": started,
        "finished": _now(),
        "adam_steps": result.adam_steps,
        "beta_final": result.beta_final,
        "train_seconds": result.wall_time,
        "files": ["metrics.csv", "primal.ckpt", "multiplier.ckpt", "manifest.json"],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return result.final.as_row()


def _out_root(arg):
    return Path(arg or os.environ.get("VARSOLVE_OUT") or "runs")


def report_failure(exc) -> int:
    if isinstance(exc, NumericFailure):
        info = {"error": "numeric", "message": str(exc), "outer": exc.outer,
                "inner": exc.inner if exc.inner is not None else exc.batch_index}
        code = EXIT_NUMERIC
    else:
        info = {"error": "config", "message": str(exc), "key": getattr(exc, "key", None)}
        code = EXIT_CONFIG
    print(json.dumps(info), file=sys.stderr)
    return code


# -- commands ------------------------------------------------------------------------

def cmd_run(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    cfg, name = load_config(args.config, overrides)
    out_dir = _out_root(args.out_dir) / name
    row = execute(cfg, out_dir)
    print(f"wrote {out_dir}: err_abs_in={row['err_abs_in']:.4e}")
    return 0


def _child(payload):
    cfg, out_dir = payload
    try:
        return 0, execute(cfg, Path(out_dir))
    except VarsolveError as exc:
        return report_failure(exc), None


def cmd_sweep(args) -> int:
    field = resolve_key(args.key)
    if not args.values:
        raise ConfigError("sweep needs at least one value", key="values")
    seen, values = set(), []
    for text in args.values:
        value = parse_value(field, text)
        if value in seen:
            log.warning("duplicate sweep value %s ignored", text)
            continue
        seen.add(value)
        values.append((text, value))
    overrides = {} if args.seed is None else {"seed": args.seed}
    base, name = load_config(args.config, overrides)
    root = _out_root(args.out_dir) / name
    jobs = []
    for text, value in values:
        cfg = base.replace(**{field: value})
        cfg.validate()
        jobs.append((cfg, str(root / f"{field}={text}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_child, jobs))
    else:
        outcomes = [_child(job) for job in jobs]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((field, "status") + REPORT_COLUMNS)
        for (text, _), (code, row) in zip(values, outcomes):
            cells = [_cell(row[c]) for c in REPORT_COLUMNS] if row else [""] * len(REPORT_COLUMNS)
            writer.writerow([text, code] + cells)
    print(f"wrote {root / 'summary.csv'}")
    return max(code for code, _ in outcomes)


def cmd_eval(args) -> int:
    cfg, params, meta = load_checkpoint(args.checkpoint)
    spec = builtin(args.problem)
    if cfg.input_dim != spec.d:
        raise ConfigError(f"checkpoint is {cfg.input_dim}-dimensional but {spec.name} is "
                          f"{spec.d}-dimensional", key="d")
    if meta.get("role") == "multiplier":
        raise ConfigError("cannot evaluate a multiplier checkpoint", key="role")
    try:
        h = parse_number(args.h)
    except ValueError as exc:
        raise ConfigError(str(exc), key="h") from exc
    net = ExactBCNetwork(cfg) if meta.get("role") == "primal_exact_bc" else ResNet(cfg)
    reference = Reference(spec, grid_points(spec.d, h), args.oracle_n)
    report = evaluate(net, params, reference)
    out = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        writer = csv.writer(out)
        writer.writerow(REPORT_COLUMNS[:-1])
        writer.writerow([_cell(getattr(report, c)) for c in REPORT_COLUMNS[:-1]])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.pointwise:
        path = Path(args.pointwise)
        X = reference.grid.points
        u = np.asarray(net.value(params, X))
        coords = [f"x{i + 1}" for i in range(spec.d)]
        table = np.column_stack([X, u, reference.values, np.abs(u - reference.values)])
        np.savetxt(path, table, delimiter=",", fmt="%.17g", comments="",
                   header=",".join(coords + ["u_dl", "u_ref", "error"]))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="varsolve", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir", help="output root (default $VARSOLVE_OUT or ./runs)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="train one run per value of a key")
    sweep.add_argument("config")
    sweep.add_argument("--key", required=True)
    sweep.add_argument("--values", nargs="*", default=[])
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out-dir")
    sweep.set_defaults(func=cmd_sweep)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the lattice")
    ev.add_argument("checkpoint")
    ev.add_argument("--problem", required=True)
    ev.add_argument("--h", default="2^-6", help="lattice spacing, e.g. 1/64 or 2^-6")
    ev.add_argument("--oracle-n", type=int)
    ev.add_argument("--out", help="CSV file for the report row (default stdout)")
    ev.add_argument("--pointwise", metavar="CSV", help="also dump per-point values")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VarsolveError as exc:
        return report_failure(exc)


if __name__ == "__main__":
    sys.exit(main())
