"""Command-line entry point: gen-data, run, sweep, report.

Config resolution is layered: built-in defaults, then the --config file,
then individual field flags.  Every layer goes through the same strict
parser, so an unknown key or bad range fails identically everywhere.
Failures print one machine-readable JSON line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import numpy as np

from . import rng as rng_mod
from .config import ExperimentConfig, config_from_dict
from .datagen import export_feature_files, synthesize
from .errors import ConfigError, ParseError, ProtofedError
from .fedsim import run_experiment
from .losses import CMA_KINDS

DEFAULT_SEEDS = (0, 1, 2, 3, 4)

_SWEEP_AXES = ("q", "u", "tau", "d", "cma_kind", "toggles")
_TOGGLE_VARIANTS = {
    "full": dict(use_cmpr=True, use_cmpc=True, use_cma=True),
    "no_cmpr": dict(use_cmpr=False, use_cmpc=True, use_cma=True),
    "no_cmpc": dict(use_cmpr=True, use_cmpc=False, use_cma=True),
    "no_cma": dict(use_cmpr=True, use_cmpc=True, use_cma=False),
    "none": dict(use_cmpr=False, use_cmpc=False, use_cma=False),
}
_METRICS = ("accuracy", "macro_f1", "uar")


class _Parser(argparse.ArgumentParser):
    """argparse that fails with the same JSON shape as everything else."""

    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}),
              file=sys.stderr)
        raise SystemExit(2)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, choices=("true", "false"), default=None,
                                help=f"override {f.name}")
        elif f.name == "eval_mask_q":
            parser.add_argument(flag, default=None, metavar="Q|none",
                                help="test-side modality drop rate")
        elif f.type == "int":
            parser.add_argument(flag, type=int, default=None, help=f"override {f.name}")
        elif f.type == "float":
            parser.add_argument(flag, type=float, default=None, help=f"override {f.name}")
        else:
            parser.add_argument(flag, default=None, help=f"override {f.name}")


def _collect_overrides(args) -> dict:
    out = {}
    for f in dataclasses.fields(ExperimentConfig):
        raw = getattr(args, f.name)
        if raw is None:
            continue
        if f.type == "bool":
            out[f.name] = raw == "true"
        elif f.name == "eval_mask_q":
            if raw == "none":
                out[f.name] = None
            else:
                try:
                    out[f.name] = float(raw)
                except ValueError:
                    raise ConfigError(f"eval_mask_q must be a number or 'none', "
                                      f"got {raw!r}") from None
        else:
            out[f.name] = raw
    return out


def _resolve_config(args) -> ExperimentConfig:
    payload = dataclasses.asdict(ExperimentConfig())
    if args.config is not None:
        try:
            with open(args.config) as fh:
                file_payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(file_payload, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = sorted(set(file_payload) - set(payload))
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys: {', '.join(unknown)}")
        payload.update(file_payload)
    payload.update(_collect_overrides(args))
    return config_from_dict(payload)


def _parse_seeds(raw: str | None) -> list[int]:
    if raw is None:
        return list(DEFAULT_SEEDS)
    try:
        return [int(s) for s in raw.split(",") if s != ""]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {raw!r}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    rng = rng_mod.stream(args.seed, rng_mod.DOMAIN_DATASET)
    ds = synthesize(args.n_modalities, args.n_classes, args.n_samples, rng,
                    latent_dim=args.latent_dim, class_sep=args.class_sep,
                    noise_sigma=args.noise_sigma, feat_dim=args.feat_dim,
                    view_size=args.view_size or None)
    manifest = export_feature_files(ds, args.out)
    print(json.dumps({"manifest": manifest, "n_samples": ds.n_samples,
                      "n_classes": ds.n_classes,
                      "modalities": ds.modality_names}))
    return 0


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    result = run_experiment(cfg, out_dir=args.out)
    if args.out is not None:
        with open(os.path.join(args.out, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
        print(json.dumps({"out_dir": args.out, "best_round": result.best_round,
                          "headline": result.summary["headline"]}))
    else:
        print(json.dumps(result.summary, sort_keys=True))
    return 0


def _axis_values(axis: str, raw: str | None) -> list:
    if axis == "toggles":
        names = list(_TOGGLE_VARIANTS) if raw is None else raw.split(",")
        bad = [n for n in names if n not in _TOGGLE_VARIANTS]
        if bad:
            raise ConfigError(f"unknown toggle variants {bad}; "
                              f"valid: {', '.join(_TOGGLE_VARIANTS)}")
        return names
    if raw is None:
        raise ConfigError(f"--values is required for axis '{axis}'")
    vals = raw.split(",")
    if axis == "d":
        return [int(v) for v in vals]
    if axis == "cma_kind":
        bad = [v for v in vals if v not in CMA_KINDS]
        if bad:
            raise ConfigError(f"unknown cma kinds {bad}; valid: {', '.join(CMA_KINDS)}")
        return vals
    return [float(v) for v in vals]


def _apply_axis(payload: dict, axis: str, value) -> dict:
    out = dict(payload)
    if axis == "toggles":
        out.update(_TOGGLE_VARIANTS[value])
    elif axis == "d":
        out["proj_dim"] = value
    else:
        out[axis] = value
    return out


def cmd_sweep(args) -> int:
    base = _resolve_config(args)
    seeds = _parse_seeds(args.seeds)
    values = _axis_values(args.axis, args.values)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        for seed in seeds:
            payload = _apply_axis(base.to_dict(), args.axis, value)
            payload["seed"] = seed
            cfg = config_from_dict(payload)
            run_dir = os.path.join(args.out, f"{args.axis}_{value}_seed{seed}")
            result = run_experiment(cfg, out_dir=run_dir)
            with open(os.path.join(run_dir, "config.json"), "w") as fh:
                json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)
            rows.append((value, seed, result.summary["headline"]))

    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.axis, "seed"] + list(_METRICS))
        for value, seed, headline in rows:
            writer.writerow([value, seed] + [repr(headline[m]) for m in _METRICS])

    summary_path = os.path.join(args.out, "sweep_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.axis, "n_seeds"] + [f"mean_{m}" for m in _METRICS])
        for value in values:
            picked = [h for v, _, h in rows if v == value]
            means = [repr(float(np.mean([h[m] for h in picked]))) for m in _METRICS]
            writer.writerow([value, len(picked)] + means)
    print(json.dumps({"out_dir": args.out, "runs": len(rows),
                      "summary": summary_path}))
    return 0


def cmd_report(args) -> int:
    rows = []
    for run_dir in args.runs:
        path = os.path.join(run_dir, "summary.json")
        try:
            with open(path) as fh:
                summary = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc}") from None
        cfg = summary.get("config", {})
        rows.append([run_dir, cfg.get("algorithm", "?"), cfg.get("seed", "?"),
                     summary["best"]["round"],
                     repr(summary["best"]["val_accuracy"])]
                    + [repr(summary["headline"][m]) for m in _METRICS])
    header = ["run_dir", "algorithm", "seed", "best_round", "best_val_accuracy"] \
        + [f"test_{m}" for m in _METRICS]
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        print(json.dumps({"out": args.out, "runs": len(rows)}))
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(rows)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="protofed",
                     description="Multimodal federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV + manifest")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-samples", type=int, default=1200)
    gen.add_argument("--n-classes", type=int, default=4)
    gen.add_argument("--n-modalities", type=int, default=2)
    gen.add_argument("--latent-dim", type=int, default=16)
    gen.add_argument("--feat-dim", type=int, default=20)
    gen.add_argument("--view-size", type=int, default=0)
    gen.add_argument("--class-sep", type=float, default=1.0)
    gen.add_argument("--noise-sigma", type=float, default=1.0)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", default=None, help="JSON config file")
    run.add_argument("--out", default=None, help="run directory (omit to print summary)")
    _add_config_flags(run)

    sweep = sub.add_parser("sweep", help="run one experiment per (axis value, seed)")
    sweep.add_argument("--config", default=None, help="JSON config file")
    sweep.add_argument("--out", required=True, help="sweep directory")
    sweep.add_argument("--axis", required=True, choices=_SWEEP_AXES)
    sweep.add_argument("--values", default=None,
                       help="comma-separated axis values (toggle variant names "
                            "for axis=toggles; defaults to all five)")
    sweep.add_argument("--seeds", default=None,
                       help=f"comma-separated seeds (default {','.join(map(str, DEFAULT_SEEDS))})")
    _add_config_flags(sweep)

    report = sub.add_parser("report", help="tabulate finished run directories")
    report.add_argument("runs", nargs="+", help="run directories with summary.json")
    report.add_argument("--out", default=None, help="CSV path (omit for stdout)")
    return parser


_COMMANDS = {"gen-data": cmd_gen_data, "run": cmd_run,
             "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ProtofedError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
