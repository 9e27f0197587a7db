"""Seeded dataset generators and loaders for tabular/image-vector data.

Three synthetic families: a two-feature regression task whose first feature
flips sign under an unmeasured binary variable, image-vector classification
with rotation/occlusion confounds, and subpopulation mixtures of two source
datasets. Loaders ingest user-supplied CSV datasets and replicate-annotation
embedding files. All generators are deterministic under their seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from uvdro.models import Dataset

__all__ = [
    "MedicalSimConfig",
    "TransformConfig",
    "MixtureConfig",
    "gen_medical_sim",
    "sample_medical_uv_given_features",
    "apply_rotation",
    "apply_occlusion",
    "gen_confounded_classification",
    "gen_rotation_pair_images",
    "mix_subpopulation",
    "load_csv_dataset",
    "load_embeddings",
    "TRANSFORM_IDENTITY",
    "TRANSFORM_ROTATION",
    "TRANSFORM_OCCLUSION",
]

TRANSFORM_IDENTITY = "identity"
TRANSFORM_ROTATION = "rotation"
TRANSFORM_OCCLUSION = "occlusion"

# label noise: y ~ N(0, 2) and measurement noise e ~ N(0, 4). The second
# parameter is read as a variance by default; scale_is_std switches both to
# the standard-deviation reading.
_Y_PARAM = 2.0
_NOISE_PARAM = 4.0


@dataclass(frozen=True)
class MedicalSimConfig:
    """Two-feature regression with an unmeasured sign-flip variable.

    Draws truthfulness c in {+1,-1} with P(c=-1) = q, a latent outcome y,
    a self-report x1 = c*y, and a noisy measurement x2 = y + e.
    """

    n: int
    q: float
    seed: int = 0
    scale_is_std: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must be in [0, 1], got {self.q}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")


def _medical_stds(scale_is_std: bool) -> tuple[float, float]:
    if scale_is_std:
        return _Y_PARAM, _NOISE_PARAM
    return math.sqrt(_Y_PARAM), math.sqrt(_NOISE_PARAM)


def gen_medical_sim(cfg: MedicalSimConfig) -> Dataset:
    """Generate the sign-flip regression task; uv_oracle holds the true c."""
    rng = np.random.default_rng(cfg.seed)
    y_std, noise_std = _medical_stds(cfg.scale_is_std)
    c = np.where(rng.uniform(size=cfg.n) < cfg.q, -1, 1).astype(np.int64)
    y = rng.normal(0.0, y_std, size=cfg.n)
    eps = rng.normal(0.0, noise_std, size=cfg.n)
    features = np.column_stack([c * y, y + eps])
    return Dataset(features=features, labels=y, uv_oracle=c)


def sample_medical_uv_given_features(features, q, seed, scale_is_std=False):
    """Draw c from its conditional given (x1, x2) only, ignoring the label.

    Under the generator above, p(x | c) carries c only through the cross
    term c*x1*x2 / var(e), so the posterior log-odds of c=-1 are
    log(q/(1-q)) - 2*x1*x2/var(e). Sampling from this is what an annotator
    without access to y could do at test time.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ValueError(f"expected an n x 2 feature matrix, got shape {x.shape}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must be in [0, 1], got {q}")
    n = x.shape[0]
    if q == 0.0:
        return np.ones(n, dtype=np.int64)
    if q == 1.0:
        return -np.ones(n, dtype=np.int64)
    _, noise_std = _medical_stds(scale_is_std)
    logit = math.log(q / (1.0 - q)) - 2.0 * x[:, 0] * x[:, 1] / noise_std**2
    p_lie = expit(logit)
    rng = np.random.default_rng(seed)
    return np.where(rng.uniform(size=n) < p_lie, -1, 1).astype(np.int64)


def _check_image(vec, side) -> np.ndarray:
    v = np.asarray(vec, dtype=float).ravel()
    if side < 1 or v.size != side * side:
        raise ValueError(f"image length {v.size} is not side {side} squared")
    return v


def apply_rotation(image_vector, side):
    """Rotate a flattened row-major image by 180 degrees (index reversal)."""
    return _check_image(image_vector, side)[::-1].copy()


def _occlude(v: np.ndarray, side: int, patch_fraction: float, rng) -> np.ndarray:
    patch = math.ceil(patch_fraction * side)
    row = int(rng.integers(0, side - patch + 1))
    col = int(rng.integers(0, side - patch + 1))
    img = v.reshape(side, side).copy()
    img[row : row + patch, col : col + patch] = 0.0
    return img.ravel()


def apply_occlusion(image_vector, side, patch_fraction, seed):
    """Zero a square patch of side ceil(patch_fraction*side) at a seeded spot."""
    if not 0.0 < patch_fraction < 1.0:
        raise ValueError(f"patch_fraction must be in (0, 1), got {patch_fraction}")
    v = _check_image(image_vector, side)
    return _occlude(v, side, patch_fraction, np.random.default_rng(seed))


@dataclass(frozen=True)
class TransformConfig:
    """Per-example transform draw: rotation, occlusion, or identity."""

    rotation_prob: float
    occlusion_prob: float = 0.0
    occlusion_patch_fraction: float = 0.25
    image_side: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.rotation_prob < 0.0 or self.occlusion_prob < 0.0:
            raise ValueError("transform probabilities must be nonnegative")
        if self.rotation_prob + self.occlusion_prob > 1.0 + 1e-12:
            raise ValueError(
                f"rotation_prob + occlusion_prob must be <= 1, got "
                f"{self.rotation_prob + self.occlusion_prob}"
            )
        if not 0.0 < self.occlusion_patch_fraction < 1.0:
            raise ValueError(
                f"occlusion_patch_fraction must be in (0, 1), "
                f"got {self.occlusion_patch_fraction}"
            )
        if self.image_side < 1:
            raise ValueError(f"image_side must be positive, got {self.image_side}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")


def gen_confounded_classification(base: Dataset, cfg: TransformConfig) -> Dataset:
    """Apply a seeded transform per example; uv_oracle records which one.

    Labels are left untouched; only features change. source_flags from the
    base dataset are carried through unchanged.
    """
    if not base.is_classification:
        raise ValueError("confounded classification requires class labels")
    side = cfg.image_side
    if base.d != side * side:
        raise ValueError(f"feature length {base.d} is not side {side} squared")
    rng = np.random.default_rng(cfg.seed)
    draws = rng.uniform(size=base.n)
    features = base.features.copy()
    transforms = np.full(base.n, TRANSFORM_IDENTITY, dtype="U9")
    for i in range(base.n):
        if draws[i] < cfg.rotation_prob:
            features[i] = features[i][::-1]
            transforms[i] = TRANSFORM_ROTATION
        elif draws[i] < cfg.rotation_prob + cfg.occlusion_prob:
            features[i] = _occlude(features[i], side, cfg.occlusion_patch_fraction, rng)
            transforms[i] = TRANSFORM_OCCLUSION
    return Dataset(
        features=features,
        labels=base.labels.copy(),
        uv_oracle=transforms,
        source_flags=None if base.source_flags is None else base.source_flags.copy(),
        n_classes=base.n_classes,
        label_names=base.label_names,
    )


def _reversal_symmetric(v: np.ndarray) -> np.ndarray:
    return 0.5 * (v + v[::-1])


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def gen_rotation_pair_images(
    n,
    seed,
    side=12,
    n_pairs=2,
    base_scale=1.5,
    pose_scale=0.5,
    delta_scale=0.15,
    noise=0.05,
    outlier_fraction=0.03,
) -> Dataset:
    """Clean image-vector classes built in rotation-confusable pairs.

    Each pair shares a reversal-symmetric base, so a 180-degree rotation
    keeps an image inside its pair region. Within the pair, the first class
    sits at base + pose and the second at rotate(first) + delta with delta
    itself reversal-symmetric. Rotating any image therefore lands exactly
    delta away from the other class's cluster: the pose direction (strong,
    norm 2*pose_scale) identifies the class on clean data but flips under
    rotation, while the delta direction (weak, norm delta_scale) identifies
    it under any rotation. A small fraction of examples are replaced by
    wide-noise junk with random labels, marked "outlier" in source_flags.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if side < 2 or n_pairs < 1:
        raise ValueError("need side >= 2 and at least one class pair")
    if not 0.0 <= outlier_fraction < 1.0:
        raise ValueError(f"outlier_fraction must be in [0, 1), got {outlier_fraction}")
    d = side * side
    rng = np.random.default_rng(seed)
    templates = []
    for _ in range(n_pairs):
        base = _unit(_reversal_symmetric(rng.normal(size=d))) * base_scale
        anti = rng.normal(size=d)
        # antisymmetric part: exactly orthogonal to every symmetric vector
        pose = _unit(0.5 * (anti - anti[::-1])) * pose_scale
        delta = _reversal_symmetric(rng.normal(size=d))
        delta -= (delta @ base) / (base @ base) * base
        delta = _unit(delta) * delta_scale
        first = base + pose
        templates.append(first)
        templates.append(first[::-1] + delta)
    k = 2 * n_pairs
    labels = rng.integers(0, k, size=n)
    features = np.stack(templates)[labels] + rng.normal(0.0, noise, size=(n, d))
    flags = np.full(n, "clean", dtype="U7")
    n_out = round(outlier_fraction * n)
    if n_out:
        picked = rng.choice(n, size=n_out, replace=False)
        typical = base_scale / side
        features[picked] = rng.normal(0.0, 3.0 * typical, size=(n_out, d))
        labels[picked] = rng.integers(0, k, size=n_out)
        flags[picked] = "outlier"
    return Dataset(
        features=features, labels=labels, source_flags=flags, n_classes=k
    )


@dataclass(frozen=True)
class MixtureConfig:
    """Bernoulli mixture of two source datasets with minority weight alpha_star."""

    alpha_star: float
    majority_source: Dataset
    minority_source: Dataset
    n: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha_star <= 1.0:
            raise ValueError(f"alpha_star must be in (0, 1], got {self.alpha_star}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        maj, mino = self.majority_source, self.minority_source
        if maj.d != mino.d:
            raise ValueError(
                f"source feature dimensions differ: {maj.d} vs {mino.d}"
            )
        if maj.is_classification != mino.is_classification:
            raise ValueError("sources must share a label kind")


def mix_subpopulation(cfg: MixtureConfig) -> Dataset:
    """Draw each example from the minority source with probability alpha_star.

    Sampling is with replacement; source_flags record membership per example.
    uv_oracle is carried through only when both sources provide it.
    """
    rng = np.random.default_rng(cfg.seed)
    maj, mino = cfg.majority_source, cfg.minority_source
    from_minority = rng.uniform(size=cfg.n) < cfg.alpha_star
    idx_min = rng.integers(0, mino.n, size=cfg.n)
    idx_maj = rng.integers(0, maj.n, size=cfg.n)
    features = np.where(
        from_minority[:, None], mino.features[idx_min], maj.features[idx_maj]
    )
    labels = np.where(from_minority, mino.labels[idx_min], maj.labels[idx_maj])
    oracle = None
    if maj.uv_oracle is not None and mino.uv_oracle is not None:
        oracle = np.where(
            from_minority, mino.uv_oracle[idx_min], maj.uv_oracle[idx_maj]
        )
    flags = np.where(from_minority, "minority", "majority")
    n_classes = None
    if maj.is_classification:
        n_classes = max(maj.n_classes, mino.n_classes)
    return Dataset(
        features=features,
        labels=labels,
        uv_oracle=oracle,
        source_flags=flags,
        n_classes=n_classes,
    )


def _parse_all(cells, caster):
    out = []
    for c in cells:
        out.append(caster(c))
    return out


def load_csv_dataset(path, feature_columns, label_column, uv_column=None) -> Dataset:
    """Read a header-first CSV into a typed Dataset.

    Labels that all parse as integers become classification targets, mapped
    to contiguous indices in first-appearance order with the original values
    recorded in label_names; labels that all parse as floats become
    regression targets; anything else is treated as categorical and mapped
    the same first-appearance way. Malformed rows fail with their line
    number.
    """
    feature_columns = list(feature_columns)
    if not feature_columns:
        raise ValueError("feature_columns must be nonempty")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        index = {name: i for i, name in enumerate(header)}
        wanted = feature_columns + [label_column]
        if uv_column is not None:
            wanted.append(uv_column)
        for name in wanted:
            if name not in index:
                raise ValueError(f"{path}: missing column {name!r} in header")
        feat_idx = [index[name] for name in feature_columns]
        rows, raw_labels, raw_uv = [], [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(header):
                raise ValueError(
                    f"{path} line {lineno}: expected {len(header)} fields, "
                    f"got {len(cells)}"
                )
            feats = []
            for j, name in zip(feat_idx, feature_columns):
                try:
                    feats.append(float(cells[j]))
                except ValueError:
                    raise ValueError(
                        f"{path} line {lineno}: non-numeric value {cells[j]!r} "
                        f"in column {name!r}"
                    ) from None
            rows.append(feats)
            raw_labels.append(cells[index[label_column]])
            if uv_column is not None:
                raw_uv.append(cells[index[uv_column]])
    if not rows:
        raise ValueError(f"{path}: no data rows")

    labels, names = _coerce_labels(raw_labels)
    uv = None
    if uv_column is not None:
        try:
            uv = np.array(_parse_all(raw_uv, float))
        except ValueError:
            uv = np.array(raw_uv)
    n_classes = len(names) if names is not None else None
    return Dataset(
        features=np.array(rows, dtype=float),
        labels=labels,
        uv_oracle=uv,
        n_classes=n_classes,
        label_names=names,
    )


def _coerce_labels(raw):
    try:
        values = _parse_all(raw, int)
        return _first_appearance(values, raw)
    except ValueError:
        pass
    try:
        return np.array(_parse_all(raw, float)), None
    except ValueError:
        return _first_appearance(raw, raw)


def _first_appearance(values, raw):
    mapping, names = {}, []
    out = np.empty(len(values), dtype=np.int64)
    for i, (v, r) in enumerate(zip(values, raw)):
        if v not in mapping:
            mapping[v] = len(names)
            names.append(str(r))
        out[i] = mapping[v]
    if len(names) < 2:
        raise ValueError("classification labels need at least 2 distinct values")
    return out, tuple(names)


def load_embeddings(path, n=None):
    """Read replicate annotation embeddings grouped per example.

    Expects a header `example_id,replicate_id,v1,...,vk`. Rows may appear in
    any order; replicates are returned sorted by replicate_id so the result
    is order-independent. With n given, every example_id must lie in [0, n)
    and every example must receive at least one replicate.
    """
    groups: dict[int, dict[int, np.ndarray]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 3 or header[0] != "example_id" or header[1] != "replicate_id":
            raise ValueError(
                f"{path}: header must start with example_id,replicate_id "
                f"followed by value columns"
            )
        k = len(header) - 2
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != k + 2:
                raise ValueError(
                    f"{path} line {lineno}: expected {k + 2} fields, got {len(cells)}"
                )
            try:
                ex = int(cells[0])
                rep = int(cells[1])
                vec = np.array(_parse_all(cells[2:], float))
            except ValueError:
                raise ValueError(
                    f"{path} line {lineno}: malformed id or non-numeric value"
                ) from None
            if n is not None and not 0 <= ex < n:
                raise ValueError(
                    f"{path} line {lineno}: unknown example_id {ex} "
                    f"(dataset has {n} examples)"
                )
            if ex < 0:
                raise ValueError(f"{path} line {lineno}: negative example_id {ex}")
            reps = groups.setdefault(ex, {})
            if rep in reps:
                raise ValueError(
                    f"{path} line {lineno}: duplicate replicate {rep} "
                    f"for example {ex}"
                )
            reps[rep] = vec
    if not groups:
        raise ValueError(f"{path}: no data rows")
    total = n if n is not None else max(groups) + 1
    out = []
    for ex in range(total):
        if ex not in groups:
            raise ValueError(f"{path}: example {ex} has no embedding replicates")
        reps = groups[ex]
        out.append([reps[r] for r in sorted(reps)])
    return out
