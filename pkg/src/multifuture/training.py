"""Oracle-loss training.

The loss for one instance is ``RMSE(truth, best_future) + gamma *
NRMSE(truth, best_shape)``, where "best" is the future whose shape
prediction has the lowest NRMSE against the ground truth (the oracle
index).  Each instance in a mini-batch routes its own gradient to its own
best decoder; the per-instance losses are summed and one Adam update is
applied per iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ExpertClassifier, Forecaster, FutureSet, ModelConfig
from .nn import ops
from .nn.optim import AdamState, adam_step
from .nn.tensor import Tensor, no_grad

__all__ = [
    "TrainConfig",
    "LossRecord",
    "TrainingDiverged",
    "z_normalize",
    "rmse",
    "nrmse",
    "oracle_index",
    "compute_loss",
    "sample_minibatch",
    "train",
    "train_expert",
    "write_loss_trace",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    n_iter: int = 2000
    batch_size: int = 64
    seed: int = 0
    learning_rate: float = 1e-3
    znorm_epsilon: float = 1e-8

    def __post_init__(self):
        if self.znorm_epsilon <= 0:
            raise ValueError("znorm_epsilon must be positive")
        if self.n_iter < 0 or self.batch_size < 1:
            raise ValueError("n_iter must be >= 0 and batch_size >= 1")


@dataclass
class LossRecord:
    iteration: int
    total_loss: float
    rmse_term: float
    nrmse_term: float
    oracle_index_histogram: list[int]


def z_normalize(series, epsilon: float = 1e-8, axis: int = 0) -> np.ndarray:
    """Subtract the mean and divide by the epsilon-floored population std.

    The statistics are taken along ``axis`` (the time axis: 0 for
    time-major ``(n, d)`` series, -1 for feature-major ``(d, n_h)``
    prediction windows), independently per feature dimension.
    """
    arr = np.asarray(series, dtype=np.float64)
    mean = arr.mean(axis=axis, keepdims=True)
    std = arr.std(axis=axis, keepdims=True)
    return (arr - mean) / np.maximum(std, epsilon)


def rmse(pred, truth) -> float:
    """Root mean squared error over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def nrmse(shape_pred, truth, epsilon: float = 1e-8) -> float:
    """RMSE between a shape prediction and the z-normalized ground truth.

    Both arguments are feature-major ``(d, n_h)``; only the truth is
    normalized (per dimension, along time).
    """
    truth = np.asarray(truth, dtype=np.float64)
    return rmse(shape_pred, z_normalize(truth, epsilon, axis=-1))


def oracle_index(future_set: FutureSet, truth, epsilon: float = 1e-8) -> int:
    """1-based index of the future whose shape best matches the truth.

    The choice is made on shape predictions only; ties break toward the
    lowest index.
    """
    truth_z = z_normalize(np.asarray(truth, dtype=np.float64), epsilon, axis=-1)
    errors = np.sqrt(
        np.mean((future_set.shape_preds - truth_z[None]) ** 2, axis=(1, 2)))
    return int(np.argmin(errors)) + 1


def compute_loss(future_set: FutureSet, truth, i_oc: int,
                 gamma: float = 1.0, epsilon: float = 1e-8) -> LossRecord:
    """Evaluate the oracle loss of a prediction set at a given index."""
    if not 1 <= i_oc <= future_set.f:
        raise ValueError(f"i_oc {i_oc} out of range [1..{future_set.f}]")
    truth = np.asarray(truth, dtype=np.float64)
    r = rmse(future_set.futures[i_oc - 1], truth)
    n = nrmse(future_set.shape_preds[i_oc - 1], truth, epsilon)
    histogram = [0] * future_set.f
    histogram[i_oc - 1] = 1
    return LossRecord(
        iteration=0,
        total_loss=r + gamma * n,
        rmse_term=r,
        nrmse_term=n,
        oracle_index_histogram=histogram,
    )


def _series_values(series) -> np.ndarray:
    values = getattr(series, "values", series)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"series values must be 2-D (n, d), got {arr.shape}")
    return arr


def sample_minibatch(series, n_p: int, n_h: int, n_b: int,
                     rng: np.random.Generator):
    """Draw (inputs, targets) windows uniformly with replacement.

    ``series`` is one series or a sequence of them (windows never span
    series boundaries).  The target window starts immediately after the
    input window.  Returns ``(n_b, n_p, d)`` inputs and ``(n_b, n_h, d)``
    targets.
    """
    if isinstance(series, (list, tuple)):
        pool = [_series_values(s) for s in series]
    else:
        pool = [_series_values(series)]
    limits = [len(v) - n_p - n_h for v in pool]
    usable = [i for i, lim in enumerate(limits) if lim >= 0]
    if not usable:
        raise ValueError(
            f"series too short: need at least {n_p + n_h} hours")
    inputs = np.empty((n_b, n_p, pool[0].shape[1]))
    targets = np.empty((n_b, n_h, pool[0].shape[1]))
    which = (usable[0] * np.ones(n_b, dtype=int) if len(usable) == 1
             else np.asarray(usable)[rng.integers(0, len(usable), size=n_b)])
    for row in range(n_b):
        values = pool[which[row]]
        start = int(rng.integers(0, limits[which[row]] + 1))
        inputs[row] = values[start:start + n_p]
        targets[row] = values[start + n_p:start + n_p + n_h]
    return inputs, targets


def _per_instance_error(pred: Tensor, target: np.ndarray) -> Tensor:
    """sqrt(mean((pred - target)^2)) per batch row, as a (batch,) tensor."""
    diff = pred - Tensor(target)
    return (diff * diff).mean(axis=(1, 2)).sqrt()


def _oracle_rows(shape_values: np.ndarray, truth_z: np.ndarray) -> np.ndarray:
    """0-based oracle index per batch row from detached shape predictions."""
    errors = np.sqrt(
        np.mean((shape_values - truth_z[None]) ** 2, axis=(2, 3)))  # (f, batch)
    return errors.argmin(axis=0)


def _fill_missing_grads(params) -> None:
    """Zero-fill grads of parameters untouched by the loss.

    A decoder that wins no instance in a batch contributes exactly zero
    loss, so its true gradient is zero; materializing it keeps the strict
    adam_step contract satisfied.
    """
    for p in params:
        for t in p.tensors():
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def train(series, model_config: ModelConfig, train_config: TrainConfig,
          progress: Callable[[LossRecord], None] | None = None,
          ) -> tuple[Forecaster, list[LossRecord]]:
    """Run the mini-batch oracle-loss training loop.

    Returns the trained model and one loss record per iteration.  The
    whole run is a deterministic function of (series, configs).
    """
    model = Forecaster(model_config, seed=train_config.seed)
    params = model.parameters()
    state = AdamState.init(params, learning_rate=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed)
    gamma = 0.0 if model_config.variant == "one_loss" else train_config.gamma
    eps = train_config.znorm_epsilon
    cfg = model_config
    trace: list[LossRecord] = []

    for iteration in range(train_config.n_iter):
        inputs, targets = sample_minibatch(
            series, cfg.n_p, cfg.n_h, train_config.batch_size, rng)
        truth = np.ascontiguousarray(
            targets.transpose(0, 2, 1)).astype(model.dtype)
        truth_z = z_normalize(truth, eps, axis=-1).astype(model.dtype)

        fwd = model.forward_tensors(inputs)
        rmse_rows = [_per_instance_error(t, truth) for t in fwd.futures]
        nrmse_rows = [_per_instance_error(t, truth_z) for t in fwd.shape_preds]

        shape_values = np.stack([t.data for t in fwd.shape_preds])
        i_oc = _oracle_rows(shape_values, truth_z)

        loss = None
        rmse_term = 0.0
        nrmse_term = 0.0
        for j in range(cfg.f):
            mask = (i_oc == j)
            if not mask.any():
                continue
            mask_t = Tensor(mask.astype(model.dtype))
            term = (mask_t * rmse_rows[j]).sum()
            rmse_term += float((rmse_rows[j].data * mask).sum())
            nrmse_term += float((nrmse_rows[j].data * mask).sum())
            if gamma != 0.0:
                term = term + gamma * (mask_t * nrmse_rows[j]).sum()
            loss = term if loss is None else loss + term
        total = rmse_term + gamma * nrmse_term
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss {total} at iteration {iteration} "
                f"(rmse={rmse_term}, nrmse={nrmse_term}, seed={train_config.seed})"
            )
        loss.backward()
        _fill_missing_grads(params)
        adam_step(params, state)

        record = LossRecord(
            iteration=iteration,
            total_loss=total,
            rmse_term=rmse_term,
            nrmse_term=nrmse_term,
            oracle_index_histogram=np.bincount(i_oc, minlength=cfg.f).tolist(),
        )
        trace.append(record)
        if progress is not None:
            progress(record)
    return model, trace


def train_expert(series, model: Forecaster,
                 classifier_config: ModelConfig | None = None,
                 train_config: TrainConfig | None = None,
                 seed_offset: int = 1,
                 ) -> ExpertClassifier:
    """Fit an expert classifier against the trained model's oracle indices.

    Every sampled window gets labeled with the model's oracle future index
    for the window that actually followed, and the classifier is optimized
    with cross-entropy on those labels.  With ``f == 1`` the untrained
    classifier is already exact, so it is returned as-is.

    The classifier seed is offset from the training seed so its weights do
    not replay the forecaster's initialization stream.
    """
    cfg = classifier_config or model.config
    train_config = train_config or TrainConfig()
    classifier = ExpertClassifier(cfg, seed=train_config.seed + seed_offset)
    if cfg.f == 1:
        return classifier

    params = classifier.parameters()
    state = AdamState.init(params, learning_rate=train_config.learning_rate)
    rng = np.random.default_rng(train_config.seed + seed_offset)
    eps = train_config.znorm_epsilon

    for iteration in range(train_config.n_iter):
        inputs, targets = sample_minibatch(
            series, cfg.n_p, cfg.n_h, train_config.batch_size, rng)
        truth = np.ascontiguousarray(
            targets.transpose(0, 2, 1)).astype(model.dtype)
        truth_z = z_normalize(truth, eps, axis=-1)
        with no_grad():
            fwd = model.forward_tensors(inputs)
        shape_values = np.stack([t.data for t in fwd.shape_preds])
        labels = _oracle_rows(shape_values, truth_z)

        loss = ops.cross_entropy(classifier.forward_logits(inputs), labels)
        if not np.isfinite(float(loss.data)):
            raise TrainingDiverged(
                f"non-finite classifier loss at iteration {iteration}")
        loss.backward()
        adam_step(params, state)
    return classifier


def write_loss_trace(trace: Sequence[LossRecord], path) -> None:
    """Write a loss trace as CSV: iteration,total,rmse,nrmse,oracle_histogram."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total", "rmse", "nrmse", "oracle_histogram"])
        for rec in trace:
            writer.writerow([
                rec.iteration,
                f"{rec.total_loss:.17g}",
                f"{rec.rmse_term:.17g}",
                f"{rec.nrmse_term:.17g}",
                "|".join(str(c) for c in rec.oracle_index_histogram),
            ])
