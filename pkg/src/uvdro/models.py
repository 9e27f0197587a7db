"""Linear and multinomial-logistic predictors with per-example losses.

Shared by every training objective: the robust objectives only reweight the
loss vector produced here. Single-output parameters mean regression (affine
scores), multi-output parameters mean softmax classification.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "ModelParams",
    "Metrics",
    "DimensionMismatchError",
    "LOG_LOSS_CLAMP",
    "predict",
    "loss_vector",
    "evaluate",
    "weighted_loss_grad",
]

# probabilities are clipped to [LOG_LOSS_CLAMP, 1 - LOG_LOSS_CLAMP] before the
# log, so log losses are bounded above by -log(1e-12) ~= 27.6
LOG_LOSS_CLAMP = 1e-12


class DimensionMismatchError(ValueError):
    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"feature dimension mismatch: expected {expected}, got {actual}")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, labels, and optional unmeasured-variable information.

    Integer labels are class indices in {0..K-1}; float labels mean
    regression. uv_oracle carries ground-truth unmeasured values when a
    generator knows them; uv_embeddings carries per-example lists of replicate
    annotation vectors.
    """

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    uv_oracle: np.ndarray | None = field(default=None, repr=False)
    uv_embeddings: list | None = field(default=None, repr=False)
    source_flags: np.ndarray | None = field(default=None, repr=False)
    n_classes: int | None = None
    label_names: tuple | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"features must be a nonempty 2-D matrix, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(
                f"labels must be a length-{x.shape[0]} vector, got shape {y.shape}"
            )
        if np.issubdtype(y.dtype, np.integer):
            y = y.astype(np.int64)
            k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
            if k < 2:
                raise ValueError("classification needs at least 2 classes")
            if y.min() < 0 or y.max() >= k:
                raise ValueError(f"labels must lie in [0, {k}), got [{y.min()}, {y.max()}]")
            object.__setattr__(self, "n_classes", k)
        else:
            y = y.astype(float)
            if not np.all(np.isfinite(y)):
                raise ValueError("labels contain non-finite entries")
            if self.n_classes is not None:
                raise ValueError("n_classes only applies to integer labels")
        if self.uv_oracle is not None:
            c = np.asarray(self.uv_oracle)
            if c.shape[0] != x.shape[0]:
                raise ValueError("uv_oracle length must match n")
            object.__setattr__(self, "uv_oracle", c)
        if self.uv_embeddings is not None:
            if len(self.uv_embeddings) != x.shape[0]:
                raise ValueError("uv_embeddings length must match n")
            dim = None
            for i, reps in enumerate(self.uv_embeddings):
                if len(reps) == 0:
                    raise ValueError(f"example {i} has no embedding replicates")
                for v in reps:
                    v = np.asarray(v)
                    if dim is None:
                        dim = v.size
                    elif v.size != dim:
                        raise ValueError(
                            f"example {i} embedding dimension {v.size} != {dim}"
                        )
        if self.source_flags is not None:
            f = np.asarray(self.source_flags)
            if f.shape[0] != x.shape[0]:
                raise ValueError("source_flags length must match n")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.labels.dtype, np.integer)


@dataclass(frozen=True)
class ModelParams:
    """Weight matrix (d x K) and intercepts (K,); K=1 means regression."""

    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float).ravel()
        if w.ndim != 2:
            raise ValueError(f"weights must be 2-D (d x K), got shape {w.shape}")
        if b.shape[0] != w.shape[1]:
            raise ValueError(f"bias length {b.shape[0]} != K={w.shape[1]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Metrics:
    mean_loss: float
    accuracy: float | None = None
    mse: float | None = None
    relative_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if self.mse is not None and self.mse < 0.0:
            raise ValueError(f"mse must be nonnegative, got {self.mse}")


def _scores(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if x.shape[1] != params.weights.shape[0]:
        raise DimensionMismatchError(params.weights.shape[0], x.shape[1])
    return x @ params.weights + params.bias


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: ModelParams, features) -> np.ndarray:
    """Affine predictions (K=1) or softmax class probabilities (K>=2)."""
    s = _scores(params, features)
    if params.n_outputs == 1:
        return s[:, 0]
    return _softmax(s)


def _check_kind(params: ModelParams, data: Dataset, loss_kind: str):
    if loss_kind == "squared":
        if data.is_classification or params.n_outputs != 1:
            raise ValueError("squared loss requires regression labels and K=1")
    elif loss_kind == "log":
        if not data.is_classification or params.n_outputs < 2:
            raise ValueError("log loss requires class labels and K>=2")
        if params.n_outputs != data.n_classes:
            raise ValueError(
                f"model has {params.n_outputs} outputs for {data.n_classes} classes"
            )
    else:
        raise ValueError(f"unknown loss_kind {loss_kind!r}")


def loss_vector(params: ModelParams, data: Dataset, loss_kind: str) -> np.ndarray:
    """Per-example losses: (pred - y)^2 or clamped -log p(y|x)."""
    _check_kind(params, data, loss_kind)
    if loss_kind == "squared":
        resid = predict(params, data.features) - data.labels
        return resid * resid
    probs = predict(params, data.features)
    p_true = probs[np.arange(data.n), data.labels]
    p_true = np.clip(p_true, LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP)
    return -np.log(p_true)


def evaluate(params: ModelParams, data: Dataset, loss_kind: str) -> Metrics:
    losses = loss_vector(params, data, loss_kind)
    mean_loss = float(losses.mean())
    if loss_kind == "squared":
        rel = None
        absw = np.abs(params.weights[:, 0])
        if absw.sum() > 0.0:
            rel = absw / absw.sum()
        return Metrics(mean_loss=mean_loss, mse=mean_loss, relative_weights=rel)
    probs = predict(params, data.features)
    acc = float(np.mean(probs.argmax(axis=1) == data.labels))
    return Metrics(mean_loss=mean_loss, accuracy=acc)


def weighted_loss_grad(params: ModelParams, data: Dataset, loss_kind: str, sample_weights):
    """Gradient of sum_i s_i * loss_i with respect to (weights, bias).

    Log-loss gradients ignore the probability clamp (valid subgradient except
    at numerically saturated predictions).
    """
    _check_kind(params, data, loss_kind)
    s = np.asarray(sample_weights, dtype=float)
    if s.shape != (data.n,):
        raise ValueError(f"sample_weights must have shape ({data.n},)")
    x = data.features
    if loss_kind == "squared":
        resid = predict(params, data.features) - data.labels
        scaled = 2.0 * s * resid
        gw = (x.T @ scaled)[:, None]
        gb = np.array([scaled.sum()])
        return gw, gb
    probs = predict(params, data.features)
    g = probs.copy()
    g[np.arange(data.n), data.labels] -= 1.0
    g *= s[:, None]
    return x.T @ g, g.sum(axis=0)
