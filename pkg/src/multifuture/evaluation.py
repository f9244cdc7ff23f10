"""Rolling evaluation, oracle metrics, and the classical baselines.

The test protocol predicts every ``n_h`` hours: the test span is covered by
non-overlapping ``n_h``-hour target windows, each predicted from the
``n_p`` hours immediately before it.  Oracle metrics take, per window, the
minimum error over the predicted futures; the plain ``rmse``/``nrmse``
fields report the fixed policy of always using the first future (for
single-future models the two coincide).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import MultivariateSeries
from .model import FutureSet
from .training import z_normalize

__all__ = [
    "WindowRecord",
    "EvalReport",
    "evaluate_rolling",
    "NearestNeighborBaseline",
    "RidgeBaseline",
    "baseline_nearest_neighbor",
    "baseline_ridge",
    "compare",
    "ComparisonTable",
]


@dataclass
class WindowRecord:
    window_index: int
    start_hour: int                      # offset of the target window in the test span
    oracle_index: int                    # 1-based, chosen on shape NRMSE
    rmse_per_future: list[float]
    nrmse_per_future: list[float]


@dataclass
class EvalReport:
    """Aggregated metrics over the rolling windows of one test span."""

    model_id: str
    f: int
    n_p: int
    n_h: int
    d: int
    rmse: float
    nrmse: float
    oracle_rmse: float
    oracle_nrmse: float
    per_window: list[WindowRecord] = field(default_factory=list)

    @property
    def n_windows(self) -> int:
        return len(self.per_window)

    def to_json(self) -> str:
        payload = {
            "model_id": self.model_id,
            "f": self.f,
            "n_p": self.n_p,
            "n_h": self.n_h,
            "d": self.d,
            "n_windows": self.n_windows,
            # plain metrics follow future 1; oracle metrics take the
            # per-window min; everything is averaged over windows
            "aggregation": "mean over windows; rmse/nrmse fix future 1; "
                           "oracle_* take the per-window minimum",
            "rmse": self.rmse,
            "nrmse": self.nrmse,
            "oracle_rmse": self.oracle_rmse,
            "oracle_nrmse": self.oracle_nrmse,
            "per_window": [
                {
                    "window_index": w.window_index,
                    "start_hour": w.start_hour,
                    "oracle_index": w.oracle_index,
                    "rmse_per_future": w.rmse_per_future,
                    "nrmse_per_future": w.nrmse_per_future,
                }
                for w in self.per_window
            ],
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["window_index", "start_hour", "oracle_index",
                         "best_rmse", "best_nrmse", "rmse_per_future",
                         "nrmse_per_future"])
        for w in self.per_window:
            writer.writerow([
                w.window_index, w.start_hour, w.oracle_index,
                f"{min(w.rmse_per_future):.17g}",
                f"{min(w.nrmse_per_future):.17g}",
                "|".join(f"{v:.17g}" for v in w.rmse_per_future),
                "|".join(f"{v:.17g}" for v in w.nrmse_per_future),
            ])
        return buf.getvalue()


def _window_errors(futures: FutureSet, truth: np.ndarray,
                   epsilon: float) -> tuple[list[float], list[float]]:
    truth = np.asarray(truth, dtype=np.float64)
    truth_z = z_normalize(truth, epsilon, axis=-1)
    rmses = [
        float(np.sqrt(np.mean((futures.futures[j] - truth) ** 2)))
        for j in range(futures.f)
    ]
    nrmses = [
        float(np.sqrt(np.mean((futures.shape_preds[j] - truth_z) ** 2)))
        for j in range(futures.f)
    ]
    return rmses, nrmses


def evaluate_rolling(predictor, test: MultivariateSeries, n_p: int, n_h: int,
                     epsilon: float = 1e-8,
                     collect_predictions: bool = False):
    """Evaluate a predictor over all rolling windows of a test series.

    ``predictor`` needs ``predict_futures((n_p, d) array) -> FutureSet``
    and a ``model_id`` attribute; the forecaster and both baselines
    qualify.  With ``collect_predictions`` the return value is
    ``(report, predictions)`` where predictions is a list of per-window
    ``(truth (d, n_h), FutureSet)`` pairs.
    """
    values = test.values
    n_windows = (len(values) - n_p) // n_h
    if n_windows < 1:
        raise ValueError(
            f"test span of {len(values)} hours is shorter than n_p + n_h "
            f"= {n_p + n_h}")
    records: list[WindowRecord] = []
    predictions = []
    for w in range(n_windows):
        start = w * n_h
        window = values[start:start + n_p]
        truth = values[start + n_p:start + n_p + n_h].T  # (d, n_h)
        futures = predictor.predict_futures(window)
        rmses, nrmses = _window_errors(futures, truth, epsilon)
        records.append(WindowRecord(
            window_index=w,
            start_hour=start + n_p,
            oracle_index=int(np.argmin(nrmses)) + 1,
            rmse_per_future=rmses,
            nrmse_per_future=nrmses,
        ))
        if collect_predictions:
            predictions.append((truth, futures))

    report = EvalReport(
        model_id=getattr(predictor, "model_id", predictor.__class__.__name__),
        f=len(records[0].rmse_per_future),
        n_p=n_p,
        n_h=n_h,
        d=values.shape[1],
        rmse=float(np.mean([w.rmse_per_future[0] for w in records])),
        nrmse=float(np.mean([w.nrmse_per_future[0] for w in records])),
        oracle_rmse=float(np.mean([min(w.rmse_per_future) for w in records])),
        oracle_nrmse=float(np.mean([min(w.nrmse_per_future) for w in records])),
        per_window=records,
    )
    if collect_predictions:
        return report, predictions
    return report


# -- baselines ----------------------------------------------------------------


def _single_future_set(pred: np.ndarray, epsilon: float) -> FutureSet:
    """Wrap a raw (d, n_h) prediction as a one-future set.

    The future keeps the prediction bit-exactly in raw units; the shape
    prediction is its per-dimension z-normalization, so the scale pair
    (std, mean) satisfies the combine identity up to rounding.
    """
    pred = np.asarray(pred, dtype=np.float64)
    mean = pred.mean(axis=1)
    std = np.maximum(pred.std(axis=1), epsilon)
    shape = (pred - mean[:, None]) / std[:, None]
    return FutureSet(
        futures=pred[None].copy(),
        shape_preds=shape[None],
        scale_mul=std[None],
        scale_add=mean[None],
    )


class NearestNeighborBaseline:
    """Predict the continuation of the training subsequence nearest in shape.

    The query and every candidate window are z-normalized per dimension
    before the Euclidean comparison; the continuation is returned in raw
    units.  Ties keep the earliest window.
    """

    model_id = "nearest_neighbor"

    def __init__(self, train: MultivariateSeries, n_p: int, n_h: int,
                 epsilon: float = 1e-8):
        values = np.asarray(getattr(train, "values", train), dtype=np.float64)
        if len(values) < n_p + n_h:
            raise ValueError(
                f"training history of {len(values)} hours is shorter than "
                f"n_p + n_h = {n_p + n_h}")
        self.n_p = n_p
        self.n_h = n_h
        self.epsilon = epsilon
        self._values = values
        n_starts = len(values) - n_p - n_h + 1
        windows = np.lib.stride_tricks.sliding_window_view(
            values, n_p, axis=0)[:n_starts]          # (starts, d, n_p)
        mean = windows.mean(axis=2, keepdims=True)
        std = np.maximum(windows.std(axis=2, keepdims=True), epsilon)
        self._normalized = (windows - mean) / std

    def predict_futures(self, window: np.ndarray) -> FutureSet:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.n_p, self._values.shape[1]):
            raise ValueError(f"query must be (n_p, d), got {window.shape}")
        query = z_normalize(window, self.epsilon, axis=0).T  # (d, n_p)
        dist = np.sqrt(((self._normalized - query[None]) ** 2).sum(axis=2)) \
            .sum(axis=1)
        best = int(np.argmin(dist))
        continuation = self._values[best + self.n_p:best + self.n_p + self.n_h]
        return _single_future_set(continuation.T, self.epsilon)


class RidgeBaseline:
    """One closed-form ridge regressor per output coordinate.

    Input windows are flattened time-major to ``n_p * d`` feature vectors;
    with the default 168 x 4 input and 24 x 4 output this is the classic
    96-model multi-output linear baseline.  The intercept column is not
    penalized, so in the infinite-regularization limit the predictions
    collapse to the per-coordinate training means.
    """

    model_id = "ridge"

    def __init__(self, train: MultivariateSeries, n_p: int, n_h: int,
                 lam: float = 1.0, epsilon: float = 1e-8):
        if lam <= 0:
            raise ValueError("lam must be positive")
        values = np.asarray(getattr(train, "values", train), dtype=np.float64)
        n_windows = len(values) - n_p - n_h + 1
        if n_windows < 1:
            raise ValueError(
                f"training history of {len(values)} hours is shorter than "
                f"n_p + n_h = {n_p + n_h}")
        self.n_p = n_p
        self.n_h = n_h
        self.d = values.shape[1]
        self.lam = lam
        self.epsilon = epsilon
        x = np.empty((n_windows, 1 + n_p * self.d))
        y = np.empty((n_windows, n_h * self.d))
        x[:, 0] = 1.0
        for w in range(n_windows):
            x[w, 1:] = values[w:w + n_p].reshape(-1)
            y[w] = values[w + n_p:w + n_p + n_h].reshape(-1)
        penalty = lam * np.eye(x.shape[1])
        penalty[0, 0] = 0.0  # free intercept
        self.coefficients = np.linalg.solve(x.T @ x + penalty, x.T @ y)

    def predict_raw(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.n_p, self.d):
            raise ValueError(f"query must be (n_p, d), got {window.shape}")
        features = np.concatenate(([1.0], window.reshape(-1)))
        return (features @ self.coefficients).reshape(self.n_h, self.d).T

    def predict_futures(self, window: np.ndarray) -> FutureSet:
        return _single_future_set(self.predict_raw(window), self.epsilon)


def baseline_nearest_neighbor(train: MultivariateSeries, query: np.ndarray,
                              n_h: int, epsilon: float = 1e-8) -> np.ndarray:
    """One-shot nearest-neighbor prediction; returns (d, n_h) raw units."""
    query = np.asarray(query, dtype=np.float64)
    baseline = NearestNeighborBaseline(train, query.shape[0], n_h, epsilon)
    return baseline.predict_futures(query).futures[0]


def baseline_ridge(train: MultivariateSeries, lam: float = 1.0,
                   n_p: int = 168, n_h: int = 24) -> RidgeBaseline:
    """Fit the ridge baseline (closed-form normal equations)."""
    return RidgeBaseline(train, n_p, n_h, lam)


# -- method comparison ---------------------------------------------------------

_METRICS = ("rmse", "nrmse", "oracle_rmse", "oracle_nrmse")


@dataclass
class ComparisonTable:
    """Per-method metric table with the per-metric best marked."""

    rows: list[dict]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["model_id", *(_METRICS),
                         *(f"best_{m}" for m in _METRICS)])
        for row in self.rows:
            writer.writerow([
                row["model_id"],
                *(f"{row[m]:.17g}" for m in _METRICS),
                *(int(row[f"best_{m}"]) for m in _METRICS),
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        header = ["method"] + list(_METRICS)
        lines = []
        body = []
        for row in self.rows:
            cells = [row["model_id"]]
            for m in _METRICS:
                mark = "*" if row[f"best_{m}"] else " "
                cells.append(f"{row[m]:.4f}{mark}")
            body.append(cells)
        widths = [max(len(r[i]) for r in [header] + body)
                  for i in range(len(header))]
        for cells in [header] + body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def compare(reports: list[EvalReport]) -> ComparisonTable:
    """Tabulate reports that share a protocol; lowest value per metric wins."""
    if not reports:
        raise ValueError("no reports to compare")
    first = reports[0]
    for rep in reports[1:]:
        if (rep.n_p, rep.n_h, rep.d, rep.n_windows) != \
                (first.n_p, first.n_h, first.d, first.n_windows):
            raise ValueError(
                f"incompatible report {rep.model_id!r}: protocol "
                f"(n_p, n_h, d, windows) differs")
    rows = []
    for rep in reports:
        rows.append({"model_id": rep.model_id,
                     **{m: getattr(rep, m) for m in _METRICS}})
    for m in _METRICS:
        best = min(row[m] for row in rows)
        for row in rows:
            row[f"best_{m}"] = row[m] == best
    return ComparisonTable(rows)
