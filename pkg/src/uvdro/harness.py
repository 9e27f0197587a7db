"""Config-driven experiment runner: grids, shuffle ablations, and reports.

A config names a task, an objective list, and a grid (q_train values for the
medical simulation, minority fractions for the image and tabular tasks). For
every grid point and seed the runner builds seeded train/validation/test
splits (80/20 train/validation; one test set shared by every objective at
that point), constructs distance matrices according to uv_source, trains each
objective, and emits one RunRecord per (objective, grid point, seed). A
failure inside one record is logged and recorded; the remaining records still
run.

Distance construction: feature distances are pairwise euclidean, rescaled to
unit mean off-diagonal and multiplied by feature_distance_scale; unmeasured
distances come from the oracle column (absolute difference when numeric, 0/1
when categorical), from replicate annotation embeddings, or from a partially
shuffled oracle matrix, and are rescaled to unit mean as well. Unit-mean
rescaling makes the two matrices contribute comparable transport cost and
prices crossings out of rare groups proportionally to their rarity.

Report files use a fixed column order and are byte-deterministic for a fixed
config and seed: wall_ms is written as 0.0 (true timings stay on the records;
serializing them would break rerun determinism), and floats are serialized
with repr.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .datagen import (
    MedicalSimConfig,
    MixtureConfig,
    TransformConfig,
    gen_confounded_classification,
    gen_medical_sim,
    gen_rotation_pair_images,
    load_csv_dataset,
    load_embeddings,
    mix_subpopulation,
)
from .distances import (
    DistanceMatrix,
    annotation_distance,
    pairwise_euclidean,
    rescale_unit_mean,
    shuffle_distances,
)
from .models import Dataset, evaluate
from .objectives import RobustnessConfig
from .optimizer import TrainConfig, train

logger = logging.getLogger(__name__)

TASKS = ("medical_sim", "confounded_images", "tabular")
OBJECTIVES = ("erm", "cvar_dro", "covshift_dro", "uv_dro")
UV_SOURCES = ("oracle", "embeddings", "none", "shuffled")

REPORT_COLUMNS = (
    "task",
    "objective",
    "alpha_star",
    "q",
    "seed",
    "accuracy",
    "log_loss",
    "mse",
    "relative_weight_x2",
    "objective_value",
    "wall_ms",
    "fraction",
    "config_hash",
    "error",
)

# seed offsets keep the test set, the split permutation, the train/test
# transform draws, and the shuffle permutation on independent streams
_TEST_SEED_OFFSET = 10_000
_SPLIT_SEED_OFFSET = 20_000
_TRAIN_TRANSFORM_OFFSET = 1
_TEST_TRANSFORM_OFFSET = 2
_SHUFFLE_SEED_OFFSET = 777


class ConfigError(ValueError):
    """Invalid experiment configuration; the CLI maps this to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    objectives: tuple = OBJECTIVES
    n: int = 1000
    seeds: tuple = (0, 1, 2, 3, 4)
    alpha: float = 0.2
    lipschitz: float = 1.0
    ridge_erm: float = 0.0
    ridge_robust: float = 0.0
    learning_rate: float = 1e-4
    transport_learning_rate: float | None = None
    steps: int = 3000
    alpha_star_grid: tuple = ()
    q_train_grid: tuple = ()
    q_test: float = 0.8
    uv_source: str = "oracle"
    shuffle_fraction: float = 0.0
    feature_distance_scale: float = 1.0
    image_side: int = 12
    occlusion_prob: float = 0.0
    occlusion_patch_fraction: float = 0.25
    data_paths: dict = field(default_factory=dict)
    feature_columns: tuple | None = None
    label_column: str | None = None
    uv_column: str | None = None
    ablation_fractions: tuple = (0.0, 0.05, 0.1, 0.2, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if len(self.objectives) == 0:
            raise ConfigError("objectives must be nonempty")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ConfigError(f"unknown objective {obj!r}, expected one of {OBJECTIVES}")
        if self.uv_source not in UV_SOURCES:
            raise ConfigError(f"unknown uv_source {self.uv_source!r}, expected one of {UV_SOURCES}")
        if self.n < 10:
            raise ConfigError(f"n must be at least 10 to split, got {self.n}")
        if len(self.seeds) == 0:
            raise ConfigError("seeds must be nonempty")
        if any(int(s) < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative")
        grid = self.grid_points()
        if len(grid) == 0:
            raise ConfigError(
                "grid is empty: medical_sim needs q_train_grid, other tasks need alpha_star_grid"
            )
        for a_star, q in grid:
            for name, v in (("alpha_star", a_star), ("q", q)):
                if v is not None and not 0.0 <= v <= 1.0:
                    raise ConfigError(f"{name} grid values must lie in [0, 1], got {v}")
        if not 0.0 <= self.q_test <= 1.0:
            raise ConfigError(f"q_test must lie in [0, 1], got {self.q_test}")
        if not 0.0 <= self.shuffle_fraction <= 1.0:
            raise ConfigError(f"shuffle_fraction must lie in [0, 1], got {self.shuffle_fraction}")
        if "uv_dro" in self.objectives and self.uv_source == "none":
            raise ConfigError("uv_dro requires an unmeasured-variable source, got uv_source='none'")
        for f in self.ablation_fractions:
            if not 0.0 <= f <= 1.0:
                raise ConfigError(f"ablation fractions must lie in [0, 1], got {f}")

    def grid_points(self) -> list:
        """(alpha_star, q) pairs; exactly one coordinate is set per task."""
        if self.task == "medical_sim":
            return [(None, float(q)) for q in self.q_train_grid]
        return [(float(a), None) for a in self.alpha_star_grid]


@dataclass(frozen=True)
class RunRecord:
    task: str
    objective: str
    alpha_star: float | None
    q: float | None
    seed: int
    accuracy: float | None
    log_loss: float | None
    mse: float | None
    relative_weight_x2: float | None
    objective_value: float | None
    wall_ms: float | None
    fraction: float | None
    config_hash: str
    error: str | None = None


def default_config(task: str, **overrides) -> ExperimentConfig:
    """Per-task defaults: reported optima of the source experiments.

    medical_sim: lr 1e-4, no ridge, q_train grid .05-.8, q_test .8.
    confounded_images: lr 1e-3, ridge 25 (erm) / 50 (robust), minority grid
    .05-.6, n 4000. tabular: lr 5e-3, ridge 0 (erm) / 50 (robust), minority
    grid .1-.6, n 2000. Shared: alpha .2, L 1, 3000 AdaGrad steps.
    """
    base = {
        "medical_sim": dict(
            n=1000,
            learning_rate=1e-4,
            q_train_grid=(0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
            q_test=0.8,
        ),
        "confounded_images": dict(
            n=4000,
            learning_rate=1e-3,
            ridge_erm=25.0,
            ridge_robust=50.0,
            alpha_star_grid=(0.05, 0.1, 0.2, 0.4, 0.6),
        ),
        "tabular": dict(
            n=2000,
            learning_rate=5e-3,
            ridge_erm=0.0,
            ridge_robust=50.0,
            alpha_star_grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
        ),
    }
    if task not in base:
        raise ConfigError(f"unknown task {task!r}, expected one of {TASKS}")
    kwargs = base[task]
    kwargs.update(overrides)
    return ExperimentConfig(task=task, **kwargs)


def config_hash(cfg: ExperimentConfig) -> str:
    payload = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in vars(cfg).items()
    }
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _take(ds: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(
        features=ds.features[idx],
        labels=ds.labels[idx],
        uv_oracle=None if ds.uv_oracle is None else ds.uv_oracle[idx],
        uv_embeddings=None
        if ds.uv_embeddings is None
        else [ds.uv_embeddings[int(i)] for i in idx],
        source_flags=None if ds.source_flags is None else ds.source_flags[idx],
        n_classes=ds.n_classes,
        label_names=ds.label_names,
    )


def _split_train_valid(pool: Dataset, seed: int) -> tuple:
    perm = np.random.default_rng(seed + _SPLIT_SEED_OFFSET).permutation(pool.n)
    cut = int(0.8 * pool.n)
    return _take(pool, perm[:cut]), _take(pool, perm[cut:])


def _attach_embeddings(ds: Dataset, path: str) -> Dataset:
    embeddings = load_embeddings(path, n=ds.n)
    return Dataset(
        features=ds.features,
        labels=ds.labels,
        uv_oracle=ds.uv_oracle,
        uv_embeddings=embeddings,
        source_flags=ds.source_flags,
        n_classes=ds.n_classes,
        label_names=ds.label_names,
    )


def _load_source(cfg: ExperimentConfig, key: str) -> Dataset:
    path = cfg.data_paths.get(key)
    if path is None:
        raise ConfigError(f"task {cfg.task!r} needs data_paths[{key!r}]")
    if not Path(path).exists():
        raise ConfigError(f"data path does not exist: {path}")
    if cfg.feature_columns is None or cfg.label_column is None:
        raise ConfigError("csv-backed tasks need feature_columns and label_column")
    return load_csv_dataset(
        path,
        feature_columns=cfg.feature_columns,
        label_column=cfg.label_column,
        uv_column=cfg.uv_column,
    )


def _build_splits(cfg: ExperimentConfig, a_star, q, seed: int) -> tuple:
    """(train, valid, test) for one grid point; test is objective-independent."""
    if cfg.task == "medical_sim":
        pool = gen_medical_sim(MedicalSimConfig(n=cfg.n, q=q, seed=seed))
        test = gen_medical_sim(
            MedicalSimConfig(n=cfg.n, q=cfg.q_test, seed=seed + _TEST_SEED_OFFSET)
        )
    elif cfg.task == "confounded_images":
        if "images" in cfg.data_paths:
            base = _load_source(cfg, "images")
        else:
            base = gen_rotation_pair_images(n=2 * cfg.n, seed=seed, side=cfg.image_side)
        side = int(round(np.sqrt(base.d)))
        # train and test must share class structure, so one base pool is
        # split first and only then transformed with different mixes
        perm = np.random.default_rng(seed + _SPLIT_SEED_OFFSET).permutation(base.n)
        half = base.n // 2
        train_base, test_base = _take(base, perm[:half]), _take(base, perm[half:])
        pool = gen_confounded_classification(
            train_base,
            TransformConfig(
                rotation_prob=a_star,
                occlusion_prob=cfg.occlusion_prob,
                occlusion_patch_fraction=cfg.occlusion_patch_fraction,
                image_side=side,
                seed=seed + _TRAIN_TRANSFORM_OFFSET,
            ),
        )
        test = gen_confounded_classification(
            test_base,
            TransformConfig(
                rotation_prob=1.0,
                image_side=side,
                seed=seed + _TEST_TRANSFORM_OFFSET,
            ),
        )
        if cfg.uv_source == "embeddings":
            pool = _attach_embeddings(pool, _require_path(cfg, "embeddings"))
        cut = int(0.8 * pool.n)
        return _take(pool, np.arange(cut)), _take(pool, np.arange(cut, pool.n)), test
    else:
        majority = _load_source(cfg, "majority")
        minority = _load_source(cfg, "minority")
        pool = mix_subpopulation(
            MixtureConfig(
                alpha_star=a_star,
                majority_source=majority,
                minority_source=minority,
                n=cfg.n,
                seed=seed,
            )
        )
        test = mix_subpopulation(
            MixtureConfig(
                alpha_star=1.0,
                majority_source=majority,
                minority_source=minority,
                n=cfg.n,
                seed=seed + _TEST_SEED_OFFSET,
            )
        )
    if cfg.uv_source == "embeddings":
        pool = _attach_embeddings(pool, _require_path(cfg, "embeddings"))
    train, valid = _split_train_valid(pool, seed)
    return train, valid, test


def _require_path(cfg: ExperimentConfig, key: str) -> str:
    path = cfg.data_paths.get(key)
    if path is None:
        raise ConfigError(f"uv_source {cfg.uv_source!r} needs data_paths[{key!r}]")
    if not Path(path).exists():
        raise ConfigError(f"data path does not exist: {path}")
    return path


def oracle_uv_distance(values: np.ndarray) -> DistanceMatrix:
    """Absolute difference for numeric oracles, 0/1 for categorical ones."""
    v = np.asarray(values)
    if np.issubdtype(v.dtype, np.number):
        entries = np.abs(v[:, None].astype(float) - v[None, :].astype(float))
    else:
        entries = (v[:, None] != v[None, :]).astype(float)
    return DistanceMatrix(entries)


def _build_distances(cfg: ExperimentConfig, train: Dataset, seed: int, fraction=None):
    """Feature and unmeasured distances for the train split, or (d_x, None)."""
    d_x = rescale_unit_mean(pairwise_euclidean(train.features))
    if cfg.feature_distance_scale != 1.0:
        d_x = DistanceMatrix(d_x.entries * cfg.feature_distance_scale)
    if cfg.uv_source == "none":
        return d_x, None
    if cfg.uv_source == "embeddings":
        if train.uv_embeddings is None:
            raise ConfigError("uv_source 'embeddings' but the dataset carries none")
        d_c = annotation_distance(train.uv_embeddings)
    else:
        if train.uv_oracle is None:
            raise ConfigError(f"uv_source {cfg.uv_source!r} but the dataset has no oracle values")
        d_c = oracle_uv_distance(train.uv_oracle)
    d_c = rescale_unit_mean(d_c)
    shuffle = cfg.shuffle_fraction if fraction is None else fraction
    if cfg.uv_source == "shuffled" or (fraction is not None and fraction > 0.0):
        d_c = shuffle_distances(d_c, shuffle, seed=seed + _SHUFFLE_SEED_OFFSET)
    return d_x, d_c


def _robustness_for(cfg: ExperimentConfig, objective: str) -> RobustnessConfig:
    if objective == "erm":
        return RobustnessConfig(
            alpha=1.0, lipschitz=0.0, ridge=cfg.ridge_erm, objective="erm"
        )
    lip = cfg.lipschitz if objective in ("covshift_dro", "uv_dro") else 0.0
    return RobustnessConfig(
        alpha=cfg.alpha, lipschitz=lip, ridge=cfg.ridge_robust, objective=objective
    )


def _failed_record(cfg, objective, a_star, q, seed, fraction, digest, reason) -> RunRecord:
    logger.error(
        "record failed: task=%s objective=%s alpha_star=%s q=%s seed=%s: %s",
        cfg.task, objective, a_star, q, seed, reason,
    )
    return RunRecord(
        task=cfg.task,
        objective=objective,
        alpha_star=a_star,
        q=q,
        seed=seed,
        accuracy=None,
        log_loss=None,
        mse=None,
        relative_weight_x2=None,
        objective_value=None,
        wall_ms=None,
        fraction=fraction,
        config_hash=digest,
        error=str(reason),
    )


def _run_grid(cfg: ExperimentConfig, fraction=None) -> list:
    digest = config_hash(cfg)
    records = []
    for a_star, q in cfg.grid_points():
        for seed in cfg.seeds:
            seed = int(seed)
            try:
                train_ds, _valid_ds, test_ds = _build_splits(cfg, a_star, q, seed)
                needs_dist = any(o in ("covshift_dro", "uv_dro") for o in cfg.objectives)
                d_x, d_c = (
                    _build_distances(cfg, train_ds, seed, fraction)
                    if needs_dist
                    else (None, None)
                )
            except (ConfigError, ValueError, OSError) as exc:
                records.extend(
                    _failed_record(cfg, obj, a_star, q, seed, fraction, digest, exc)
                    for obj in cfg.objectives
                )
                continue
            loss_kind = "log" if train_ds.is_classification else "squared"
            tcfg = TrainConfig(
                learning_rate=cfg.learning_rate,
                steps=cfg.steps,
                seed=seed,
                transport_learning_rate=cfg.transport_learning_rate,
            )
            for objective in cfg.objectives:
                try:
                    rcfg = _robustness_for(cfg, objective)
                    if objective == "uv_dro" and d_c is None:
                        raise ConfigError("uv_dro needs unmeasured-variable distances")
                    use_x = d_x if objective in ("covshift_dro", "uv_dro") else None
                    use_c = d_c if objective == "uv_dro" else None
                    t0 = time.perf_counter()
                    result = train(train_ds, use_x, use_c, rcfg, tcfg, loss_kind)
                    metrics = evaluate(result.params, test_ds, loss_kind)
                    rel = metrics.relative_weights
                    records.append(
                        RunRecord(
                            task=cfg.task,
                            objective=objective,
                            alpha_star=a_star,
                            q=q,
                            seed=seed,
                            accuracy=metrics.accuracy,
                            log_loss=metrics.mean_loss if loss_kind == "log" else None,
                            mse=metrics.mse,
                            relative_weight_x2=(
                                float(rel[1]) if rel is not None and rel.size == 2 else None
                            ),
                            objective_value=float(result.objective[-1]),
                            wall_ms=(time.perf_counter() - t0) * 1000.0,
                            fraction=fraction,
                            config_hash=digest,
                        )
                    )
                except (ConfigError, ValueError, OSError) as exc:
                    records.append(
                        _failed_record(cfg, objective, a_star, q, seed, fraction, digest, exc)
                    )
    return sorted(records, key=_record_order)


def _record_order(r: RunRecord):
    return (
        r.objective,
        -1.0 if r.alpha_star is None else r.alpha_star,
        -1.0 if r.q is None else r.q,
        -1.0 if r.fraction is None else r.fraction,
        r.seed,
    )


def run_experiment(cfg: ExperimentConfig) -> list:
    """One record per (objective, grid point, seed), in that sort order."""
    return _run_grid(cfg)


def run_shuffle_ablation(cfg: ExperimentConfig, fractions=None) -> list:
    """Repeat the experiment per shuffle fraction; records carry the fraction.

    Fraction 0 runs the unshuffled distances, so its records match the base
    experiment apart from the fraction field.
    """
    if cfg.uv_source not in ("oracle", "embeddings"):
        raise ConfigError(
            f"ablation needs uv_source 'oracle' or 'embeddings', got {cfg.uv_source!r}"
        )
    fractions = cfg.ablation_fractions if fractions is None else tuple(fractions)
    if len(fractions) == 0:
        raise ConfigError("ablation needs at least one fraction")
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ConfigError(f"ablation fractions must lie in [0, 1], got {f}")
    records = []
    for f in fractions:
        records.extend(_run_grid(cfg, fraction=float(f)))
    return sorted(records, key=_record_order)


def ablation_summary(records) -> list:
    """Per (objective, grid point): accuracy by fraction and seed-mean Spearman.

    Spearman is computed per seed across fractions, then averaged over seeds;
    constant accuracy curves give nan.
    """
    groups = {}
    for r in records:
        if r.error is not None or r.fraction is None or r.accuracy is None:
            continue
        groups.setdefault((r.objective, r.alpha_star, r.q), []).append(r)
    rows = []
    for (objective, a_star, q), rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        by_seed = {}
        for r in rs:
            by_seed.setdefault(r.seed, []).append((r.fraction, r.accuracy))
        rhos = []
        for seed, pairs in by_seed.items():
            pairs.sort()
            fr = [p[0] for p in pairs]
            acc = [p[1] for p in pairs]
            if len(pairs) >= 3:
                with warnings.catch_warnings():
                    # constant accuracy across fractions is documented to
                    # yield nan, not a warning
                    warnings.simplefilter("ignore")
                    rhos.append(spearmanr(fr, acc).statistic)
        rows.append(
            {
                "task": rs[0].task,
                "objective": objective,
                "alpha_star": a_star,
                "q": q,
                "n_seeds": len(by_seed),
                "spearman_mean": float(np.mean(rhos)) if rhos else float("nan"),
            }
        )
    return rows


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_row(r: RunRecord) -> dict:
    row = {col: getattr(r, col) for col in REPORT_COLUMNS}
    # timings vary between reruns of the same config; the report files must
    # not, so the serialized column is pinned to zero
    row["wall_ms"] = None if r.wall_ms is None else 0.0
    return row


def report(records, out_dir, fmt: str = "csv") -> list:
    """Write runs.<fmt> and aggregate.<fmt>; returns the written paths."""
    if len(records) == 0:
        raise ValueError("no records to report")
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"format must be csv or jsonl, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=_record_order)
    runs_path = out / f"runs.{fmt}"
    rows = [_record_row(r) for r in records]
    _write_rows(runs_path, REPORT_COLUMNS, rows, fmt)
    agg_rows = _aggregate_rows(records)
    agg_path = out / f"aggregate.{fmt}"
    _write_rows(agg_path, _AGGREGATE_COLUMNS, agg_rows, fmt)
    return [runs_path, agg_path]


_MEAN_STD_FIELDS = ("accuracy", "log_loss", "mse", "relative_weight_x2", "objective_value")
_AGGREGATE_COLUMNS = (
    ("task", "objective", "alpha_star", "q", "fraction", "n_seeds", "n_failed")
    + tuple(f"{f}_mean" for f in _MEAN_STD_FIELDS)
    + tuple(f"{f}_std" for f in _MEAN_STD_FIELDS)
)


def _aggregate_rows(records) -> list:
    groups = {}
    for r in records:
        key = (r.task, r.objective, r.alpha_star, r.q, r.fraction)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        rs = groups[key]
        ok = [r for r in rs if r.error is None]
        row = {
            "task": key[0],
            "objective": key[1],
            "alpha_star": key[2],
            "q": key[3],
            "fraction": key[4],
            "n_seeds": len(ok),
            "n_failed": len(rs) - len(ok),
        }
        for f in _MEAN_STD_FIELDS:
            vals = [getattr(r, f) for r in ok if getattr(r, f) is not None]
            row[f"{f}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{f}_std"] = float(np.std(vals)) if vals else None
        rows.append(row)
    return rows


def _write_rows(path: Path, columns, rows, fmt: str):
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_cell(row[c]) for c in columns])
    else:
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps({c: row[c] for c in columns}) + "\n")


def load_records(path) -> list:
    """Read a runs file written by report; csv and jsonl round-trip equally."""
    path = Path(path)
    rows = []
    if path.suffix == ".jsonl":
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rows.append(json.loads(line))
    else:
        with open(path, newline="") as fh:
            for raw in csv.DictReader(fh):
                rows.append({k: _parse_cell(k, v) for k, v in raw.items()})
    records = []
    for row in rows:
        row = {col: row.get(col) for col in REPORT_COLUMNS}
        if row["seed"] is not None:
            row["seed"] = int(row["seed"])
        records.append(RunRecord(**row))
    return records


_STR_COLUMNS = ("task", "objective", "config_hash", "error")


def _parse_cell(column, value):
    if value == "" or value is None:
        return None
    if column in _STR_COLUMNS:
        return value
    if column == "seed":
        return int(value)
    return float(value)
