"""Command line front end.

Subcommands: generate (write synthetic datasets to CSV), train (single run:
first grid point, first objective), sweep (full grid), ablate (shuffle
ablation over the config's fractions), report (re-aggregate an existing runs
file). Shared flags: --config <json>, --out <dir>, --seed <u64> (replaces the
config's seed list), --format csv|jsonl.

Exit codes: 0 full success, 1 any failed record or write failure, 2 config
error. Config files are JSON with a versioned "schema" field; omitted fields
fall back to the per-task defaults of default_config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .harness import (
    ConfigError,
    ExperimentConfig,
    ablation_summary,
    default_config,
    load_records,
    report,
    run_experiment,
    run_shuffle_ablation,
    _build_splits,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

_TUPLE_FIELDS = (
    "objectives",
    "seeds",
    "alpha_star_grid",
    "q_train_grid",
    "feature_columns",
    "ablation_fractions",
)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    schema = raw.pop("schema", None)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {schema!r}")
    task = raw.pop("task", None)
    if task is None:
        raise ConfigError("config needs a 'task' field")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _TUPLE_FIELDS:
        if key in raw and raw[key] is not None:
            if not isinstance(raw[key], list):
                raise ConfigError(f"config key {key!r} must be a list")
            raw[key] = tuple(raw[key])
    try:
        return default_config(task, **raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _write_dataset_csv(path: Path, ds):
    header = [f"f{i + 1}" for i in range(ds.d)] + ["label"]
    if ds.uv_oracle is not None:
        header.append("uv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]]
            label = ds.labels[i]
            row.append(str(int(label)) if ds.is_classification else repr(float(label)))
            if ds.uv_oracle is not None:
                row.append(str(ds.uv_oracle[i]))
            writer.writerow(row)


def _point_tag(a_star, q) -> str:
    return f"astar{a_star:g}" if a_star is not None else f"q{q:g}"


def _cmd_generate(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    out.mkdir(parents=True, exist_ok=True)
    for a_star, q in cfg.grid_points():
        for seed in cfg.seeds:
            train, valid, test = _build_splits(cfg, a_star, q, int(seed))
            tag = f"{cfg.task}_{_point_tag(a_star, q)}_seed{seed}"
            for name, ds in (("train", train), ("valid", valid), ("test", test)):
                _write_dataset_csv(out / f"{tag}_{name}.csv", ds)
            logger.info("wrote %s train/valid/test", tag)
    return 0


def _finish(records, out: Path, fmt: str) -> int:
    paths = report(records, out, fmt)
    for p in paths:
        logger.info("wrote %s", p)
    failed = [r for r in records if r.error is not None]
    for r in failed:
        logger.error(
            "failed record: objective=%s alpha_star=%s q=%s seed=%s: %s",
            r.objective, r.alpha_star, r.q, r.seed, r.error,
        )
    return 1 if failed else 0


def _cmd_train(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    point = cfg.grid_points()[0]
    single = replace(
        cfg,
        objectives=(cfg.objectives[0],),
        seeds=(cfg.seeds[0],),
        alpha_star_grid=() if point[0] is None else (point[0],),
        q_train_grid=() if point[1] is None else (point[1],),
    )
    records = run_experiment(single)
    for r in records:
        print(
            f"task={r.task} objective={r.objective} alpha_star={r.alpha_star} "
            f"q={r.q} seed={r.seed} accuracy={r.accuracy} log_loss={r.log_loss} "
            f"mse={r.mse} objective_value={r.objective_value} error={r.error}"
        )
    return _finish(records, out, fmt)


def _cmd_sweep(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    return _finish(run_experiment(cfg), out, fmt)


def _cmd_ablate(cfg: ExperimentConfig, out: Path, fmt: str) -> int:
    records = run_shuffle_ablation(cfg)
    code = _finish(records, out, fmt)
    rows = ablation_summary(records)
    path = out / f"ablation.{fmt}"
    columns = ("task", "objective", "alpha_star", "q", "n_seeds", "spearman_mean")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow(
                    ["" if row[c] is None else repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in columns]
                )
    else:
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps({c: row[c] for c in columns}) + "\n")
    logger.info("wrote %s", path)
    return code


def _cmd_report(out: Path, fmt: str) -> int:
    runs_path = out / f"runs.{fmt}"
    if not runs_path.exists():
        raise ConfigError(f"no runs file to aggregate: {runs_path}")
    records = load_records(runs_path)
    report(records, out, fmt)
    logger.info("rewrote aggregate from %s", runs_path)
    return 1 if any(r.error is not None for r in records) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvdro",
        description="robust training experiments over unmeasured-variable shifts",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (
        ("generate", True),
        ("train", True),
        ("sweep", True),
        ("ablate", True),
        ("report", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="replace the config seed list")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    return parser


def main(argv=None) -> int:
    if not logging.getLogger().handlers:
        logging.basicConfig(
            stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
        )
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "report":
            return _cmd_report(out, args.format)
        cfg = _apply_overrides(load_config(args.config), args)
        handler = {
            "generate": _cmd_generate,
            "train": _cmd_train,
            "sweep": _cmd_sweep,
            "ablate": _cmd_ablate,
        }[args.command]
        return handler(cfg, out, args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
