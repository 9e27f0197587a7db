"""Batch AdaGrad training loop.

Jointly minimizes over model parameters and (for the two Lipschitz
objectives) the transport matrix B, with the cutoff eta solved exactly at
every step. Full-batch, zero-initialized, deterministic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from uvdro.distances import DistanceMatrix
from uvdro.models import Dataset, ModelParams, loss_vector, weighted_loss_grad
from uvdro.objectives import (
    DualState,
    RobustnessConfig,
    _robust_parts,
    cvar_objective,
    solve_eta,
)

__all__ = ["TrainConfig", "TrainTrace", "adagrad_step", "train"]


@dataclass(frozen=True)
class TrainConfig:
    """Step size, budget, and AdaGrad knobs for the training loop.

    transport_learning_rate defaults to the shared learning_rate when None.
    The seed only feeds downstream bookkeeping (the loop itself is
    deterministic full-batch descent).
    """

    learning_rate: float
    steps: int
    adagrad_epsilon: float = 1e-6
    seed: int = 0
    convergence_tol: float | None = None
    transport_learning_rate: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.adagrad_epsilon <= 0.0:
            raise ValueError(f"adagrad_epsilon must be > 0, got {self.adagrad_epsilon}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.convergence_tol is not None and self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive when set")
        if self.transport_learning_rate is not None and self.transport_learning_rate <= 0.0:
            raise ValueError("transport_learning_rate must be positive when set")


@dataclass(frozen=True)
class TrainTrace:
    """Per-step objective values plus the final parameters and dual state."""

    objective: np.ndarray = field(repr=False)
    params: ModelParams
    dual: DualState | None
    wall_ms: float

    def __post_init__(self):
        obj = np.array(self.objective, dtype=float)
        if obj.ndim != 1 or obj.size < 1:
            raise ValueError("objective trace must be a nonempty vector")
        if not np.all(np.isfinite(obj)):
            raise ValueError("objective trace contains non-finite values")
        obj.flags.writeable = False
        object.__setattr__(self, "objective", obj)


def adagrad_step(params_flat, grad, accum, lr: float, eps: float):
    """One AdaGrad update; returns (new_params, new_accum) without mutating inputs."""
    params_flat = np.asarray(params_flat, dtype=float)
    grad = np.asarray(grad, dtype=float)
    accum = np.asarray(accum, dtype=float)
    if params_flat.shape != grad.shape or grad.shape != accum.shape:
        raise ValueError(
            f"shape mismatch: params {params_flat.shape}, grad {grad.shape}, accum {accum.shape}"
        )
    if np.any(accum < 0.0):
        raise ValueError("accum must be nonnegative")
    new_accum = accum + grad * grad
    new_params = params_flat - lr * grad / (np.sqrt(new_accum) + eps)
    return new_params, new_accum


def _entries(d: DistanceMatrix | None, n: int, label: str) -> np.ndarray | None:
    if d is None:
        return None
    if d.size != n:
        raise ValueError(f"{label} distance matrix is {d.size}x{d.size}, expected {n}x{n}")
    return d.entries


def train(
    data: Dataset,
    d_x: DistanceMatrix | None,
    d_c: DistanceMatrix | None,
    cfg: RobustnessConfig,
    tcfg: TrainConfig,
    loss_kind: str,
) -> TrainTrace:
    """Run full-batch AdaGrad on the configured objective.

    Parameters start at zero. For uv_dro and covshift_dro the transport
    matrix also starts at zero, is updated with its own AdaGrad accumulator,
    and is projected back to feasibility (nonnegative, zero diagonal) after
    every step; eta is excluded from AdaGrad and solved exactly. A non-finite
    objective aborts with the offending step index in the message.
    """
    t0 = time.perf_counter()
    n = data.n
    k = data.n_classes if data.is_classification else 1
    weights = np.zeros((data.d, k))
    bias = np.zeros(k)
    lipschitz_objective = cfg.objective in ("uv_dro", "covshift_dro")

    dsum = None
    b = None
    accum_b = None
    if lipschitz_objective:
        dx = _entries(d_x, n, "feature")
        if dx is None:
            raise ValueError(f"{cfg.objective} requires a feature distance matrix")
        if cfg.objective == "covshift_dro":
            dsum = dx.copy()
        else:
            dc = _entries(d_c, n, "uv")
            dsum = dx.copy() if dc is None else dx + dc
        b = np.zeros((n, n))
        accum_b = np.zeros((n, n))
        lr_b = tcfg.transport_learning_rate
        if lr_b is None:
            lr_b = tcfg.learning_rate

    theta = np.concatenate([weights.ravel(), bias])
    accum_theta = np.zeros_like(theta)
    split = data.d * k
    trace = []
    prev = None
    eta = 0.0

    for step in range(tcfg.steps):
        params = ModelParams(weights=theta[:split].reshape(data.d, k), bias=theta[split:])
        losses = loss_vector(params, data, loss_kind)
        ridge = cfg.ridge * float(np.sum(params.weights * params.weights))

        if cfg.objective == "erm":
            total = float(losses.mean()) + ridge
            sample_w = np.full(n, 1.0 / n)
        elif cfg.objective == "cvar_dro":
            value, eta = cvar_objective(losses, cfg.alpha)
            total = value + ridge
            sample_w = (losses > eta).astype(float) / (cfg.alpha * n)
        else:
            netflow = b.sum(axis=1) - b.sum(axis=0)
            eta = solve_eta(losses - netflow, cfg.alpha)
            robust, cost, hinge, rms = _robust_parts(
                losses, dsum, b, eta, cfg.alpha, cfg.lipschitz
            )
            total = robust + cost + eta + ridge
            if rms > 0.0:
                sample_w = hinge / (n * rms * cfg.alpha)
            elif cfg.alpha * cfg.alpha * n < 1.0:
                # true collapse: the cutoff solve lands on the largest adjusted
                # loss and every hinge closes; the robust term equals that
                # maximum, so its subgradient sits on the argmax sample
                sample_w = np.zeros(n)
                sample_w[int(np.argmax(losses - netflow))] = 1.0
            else:
                # exact tie (all adjusted losses equal, e.g. at the zero init);
                # any single-point weight here would overshoot the valid
                # subgradient bound 1/(alpha*sqrt(n)), so take the uniform one
                sample_w = np.full(n, 1.0 / n)

        if not np.isfinite(total):
            raise ValueError(f"objective became non-finite at step {step}")
        trace.append(total)
        if (
            tcfg.convergence_tol is not None
            and prev is not None
            and abs(total - prev) <= tcfg.convergence_tol * max(1.0, abs(prev))
        ):
            break
        prev = total

        gw, gb = weighted_loss_grad(params, data, loss_kind, sample_w)
        gw = gw + 2.0 * cfg.ridge * params.weights
        grad_theta = np.concatenate([gw.ravel(), gb])
        theta, accum_theta = adagrad_step(
            theta, grad_theta, accum_theta, tcfg.learning_rate, tcfg.adagrad_epsilon
        )

        if lipschitz_objective:
            # sample_w already carries the 1/alpha factor
            grad_b = (cfg.lipschitz / n) * dsum - (sample_w[:, None] - sample_w[None, :])
            flat_b, flat_acc = adagrad_step(
                b.ravel(), grad_b.ravel(), accum_b.ravel(), lr_b, tcfg.adagrad_epsilon
            )
            b = flat_b.reshape(n, n)
            accum_b = flat_acc.reshape(n, n)
            np.clip(b, 0.0, None, out=b)
            np.fill_diagonal(b, 0.0)

    params = ModelParams(weights=theta[:split].reshape(data.d, k), bias=theta[split:])
    dual = DualState(transport=b, eta=eta) if lipschitz_objective else None
    wall_ms = (time.perf_counter() - t0) * 1000.0
    return TrainTrace(objective=np.asarray(trace), params=params, dual=dual, wall_ms=wall_ms)
