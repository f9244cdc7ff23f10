"""Tests for rolling evaluation, oracle metrics, and the baselines."""

import numpy as np
import pytest

from multifuture.data import GeneratorConfig, generate
from multifuture.evaluation import (
    NearestNeighborBaseline,
    RidgeBaseline,
    baseline_nearest_neighbor,
    baseline_ridge,
    compare,
    evaluate_rolling,
)
from multifuture.model import FutureSet
from multifuture.training import nrmse, rmse


class StubPredictor:
    """Emits fixed futures so window accounting is easy to verify."""

    model_id = "stub"

    def __init__(self, futures):
        self._futures = np.asarray(futures, dtype=np.float64)

    def predict_futures(self, window):
        f, d, n_h = self._futures.shape
        mean = self._futures.mean(axis=2)
        std = np.maximum(self._futures.std(axis=2), 1e-8)
        shapes = (self._futures - mean[:, :, None]) / std[:, :, None]
        return FutureSet(std[:, :, None] * shapes + mean[:, :, None],
                         shapes, std, mean)


def nn_oracle(train_values, query, n_p, n_h, epsilon=1e-8):
    """Completely naive scan: z-normalize per window, euclid, first-best."""
    best_dist = np.inf
    best_start = -1
    for start in range(len(train_values) - n_p - n_h + 1):
        window = train_values[start:start + n_p]
        dist = 0.0
        for j in range(train_values.shape[1]):
            a = window[:, j]
            b = query[:, j]
            az = (a - a.mean()) / max(a.std(), epsilon)
            bz = (b - b.mean()) / max(b.std(), epsilon)
            dist += np.sqrt(((az - bz) ** 2).sum())
        if dist < best_dist:
            best_dist = dist
            best_start = start
    return train_values[best_start + n_p:best_start + n_p + n_h].T


def ridge_oracle(train_values, n_p, n_h, lam):
    """Independent per-coordinate normal-equations solve on centered data."""
    d = train_values.shape[1]
    n_windows = len(train_values) - n_p - n_h + 1
    x = np.stack([train_values[w:w + n_p].reshape(-1)
                  for w in range(n_windows)])
    y = np.stack([train_values[w + n_p:w + n_p + n_h].reshape(-1)
                  for w in range(n_windows)])
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    gram_inv = np.linalg.inv(xc.T @ xc + lam * np.eye(x.shape[1]))
    coefs = np.empty((x.shape[1], y.shape[1]))
    for k in range(y.shape[1]):  # one solve per output coordinate
        coefs[:, k] = gram_inv @ (xc.T @ (y[:, k] - y_mean[k]))
    intercept = y_mean - x_mean @ coefs
    return coefs, intercept


@pytest.fixture(scope="module")
def month_series():
    return generate(GeneratorConfig(n_hours=720, seed=0))


class TestEvaluateRolling:
    def test_seven_windows_for_seven_days(self, month_series):
        # 168h warm-up + 7*24h of evaluated span
        test = month_series.slice(720 - 336, 720)
        stub = StubPredictor(np.zeros((1, 4, 24)) + 1.0)
        report = evaluate_rolling(stub, test, 168, 24)
        assert report.n_windows == 7
        starts = [w.start_hour for w in report.per_window]
        assert starts == [168, 192, 216, 240, 264, 288, 312]

    def test_single_future_oracle_equals_plain(self, month_series):
        test = month_series.slice(720 - 336, 720)
        stub = StubPredictor(np.random.default_rng(0).uniform(
            0.5, 2.0, size=(1, 4, 24)))
        report = evaluate_rolling(stub, test, 168, 24)
        assert report.oracle_rmse == pytest.approx(report.rmse)
        assert report.oracle_nrmse == pytest.approx(report.nrmse)

    def test_oracle_equals_exhaustive_min(self, month_series):
        test = month_series.slice(720 - 336, 720)
        rng = np.random.default_rng(1)
        stub = StubPredictor(rng.uniform(0.2, 2.5, size=(4, 4, 24)))
        report = evaluate_rolling(stub, test, 168, 24)
        for w, record in enumerate(report.per_window):
            start = w * 24
            truth = test.values[start + 168:start + 192].T
            fs = stub.predict_futures(None)
            expected_r = min(rmse(fs.futures[j], truth) for j in range(4))
            expected_n = min(nrmse(fs.shape_preds[j], truth) for j in range(4))
            assert min(record.rmse_per_future) == pytest.approx(expected_r)
            assert min(record.nrmse_per_future) == pytest.approx(expected_n)
        assert report.oracle_rmse == pytest.approx(
            np.mean([min(w.rmse_per_future) for w in report.per_window]))

    def test_oracle_dominance_and_monotonicity(self, month_series):
        test = month_series.slice(720 - 336, 720)
        rng = np.random.default_rng(2)
        stub = StubPredictor(rng.uniform(0.2, 2.5, size=(5, 4, 24)))
        report = evaluate_rolling(stub, test, 168, 24)
        f = 5
        for fixed in range(f):
            fixed_policy = np.mean(
                [w.rmse_per_future[fixed] for w in report.per_window])
            assert report.oracle_rmse <= fixed_policy + 1e-12
        # truncation to the first k futures is non-increasing in k
        prev = np.inf
        for k in range(1, f + 1):
            truncated = np.mean(
                [min(w.nrmse_per_future[:k]) for w in report.per_window])
            assert truncated <= prev + 1e-12
            prev = truncated

    def test_too_short_test_raises(self, month_series):
        with pytest.raises(ValueError, match="shorter"):
            evaluate_rolling(StubPredictor(np.ones((1, 4, 24))),
                             month_series.slice(0, 100), 168, 24)

    def test_exact_minimum_span_gives_one_window(self, month_series):
        test = month_series.slice(0, 192)  # exactly n_p + n_h
        report = evaluate_rolling(StubPredictor(np.ones((1, 4, 24))),
                                  test, 168, 24)
        assert report.n_windows == 1


class TestNearestNeighbor:
    def test_exact_match_returns_continuation(self, month_series):
        values = month_series.values
        query = values[100:100 + 168]
        pred = baseline_nearest_neighbor(month_series, query, 24)
        np.testing.assert_allclose(pred, values[268:292].T, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_scan(self, month_series, seed):
        rng = np.random.default_rng(seed)
        n_p, n_h = 72, 24
        query = rng.standard_normal((n_p, 4)) + month_series.values[:n_p]
        baseline = NearestNeighborBaseline(month_series, n_p, n_h)
        pred = baseline.predict_futures(query).futures[0]
        np.testing.assert_allclose(
            pred, nn_oracle(month_series.values, query, n_p, n_h), atol=1e-9)

    def test_constant_query_tie_breaks_first(self):
        values = np.ones((60, 2))
        baseline = NearestNeighborBaseline(values, 12, 6)
        values_series = baseline.predict_futures(np.ones((12, 2)))
        np.testing.assert_allclose(values_series.futures[0], np.ones((2, 6)))

    def test_deterministic(self, month_series):
        query = month_series.values[5:5 + 96]
        a = baseline_nearest_neighbor(month_series, query, 24)
        b = baseline_nearest_neighbor(month_series, query, 24)
        assert np.array_equal(a, b)

    def test_insufficient_history_raises(self):
        with pytest.raises(ValueError, match="shorter"):
            NearestNeighborBaseline(np.ones((30, 2)), 24, 12)


class TestRidge:
    def test_recovers_linear_relation(self):
        # next values are an exact linear map of the window
        rng = np.random.default_rng(0)
        n = 400
        t = np.arange(n)
        values = np.stack([np.sin(2 * np.pi * t / 24),
                           np.cos(2 * np.pi * t / 24)], axis=1)
        model = RidgeBaseline(values, n_p=48, n_h=12, lam=1e-8)
        errors = []
        for start in range(0, 300, 17):
            pred = model.predict_raw(values[start:start + 48])
            truth = values[start + 48:start + 60].T
            errors.append(rmse(pred, truth))
        assert np.mean(errors) < 1e-4

    def test_coefficients_match_normal_equations_oracle(self, month_series):
        n_p, n_h, lam = 24, 6, 1.0
        values = month_series.values[:240]
        model = RidgeBaseline(values, n_p, n_h, lam)
        coefs, intercept = ridge_oracle(values, n_p, n_h, lam)
        np.testing.assert_allclose(model.coefficients[1:], coefs, atol=1e-6)
        np.testing.assert_allclose(model.coefficients[0], intercept, atol=1e-6)

    def test_infinite_lambda_predicts_training_means(self, month_series):
        n_p, n_h = 24, 6
        values = month_series.values[:240]
        model = RidgeBaseline(values, n_p, n_h, lam=1e12)
        n_windows = len(values) - n_p - n_h + 1
        y = np.stack([values[w + n_p:w + n_p + n_h].reshape(-1)
                      for w in range(n_windows)])
        pred = model.predict_raw(values[:n_p])
        np.testing.assert_allclose(pred.T.reshape(-1), y.mean(axis=0),
                                   rtol=1e-4, atol=1e-6)

    def test_lambda_must_be_positive(self, month_series):
        with pytest.raises(ValueError, match="positive"):
            RidgeBaseline(month_series, 24, 6, lam=0.0)

    def test_future_set_contract(self, month_series):
        model = baseline_ridge(month_series, n_p=48, n_h=24)
        fs = model.predict_futures(month_series.values[:48])
        fs.validate()
        assert fs.futures.shape == (1, 4, 24)

    def test_default_horizons_are_canonical(self, month_series):
        model = baseline_ridge(month_series)
        # 168 x 4 flattened input (plus intercept), 96 output coordinates
        assert model.coefficients.shape == (1 + 672, 96)


class TestCompare:
    def _report(self, model_id, seed, month_series):
        test = month_series.slice(720 - 336, 720)
        rng = np.random.default_rng(seed)
        stub = StubPredictor(rng.uniform(0.2, 2.5, size=(2, 4, 24)))
        report = evaluate_rolling(stub, test, 168, 24)
        report.model_id = model_id
        return report

    def test_single_report_table(self, month_series):
        table = compare([self._report("only", 0, month_series)])
        assert len(table.rows) == 1
        assert all(table.rows[0][f"best_{m}"] for m in
                   ("rmse", "nrmse", "oracle_rmse", "oracle_nrmse"))

    def test_best_marking_matches_argmin(self, month_series):
        reports = [self._report(f"m{k}", k, month_series) for k in range(3)]
        table = compare(reports)
        for metric in ("rmse", "nrmse", "oracle_rmse", "oracle_nrmse"):
            values = [row[metric] for row in table.rows]
            marked = [row[f"best_{metric}"] for row in table.rows]
            assert marked[int(np.argmin(values))]

    def test_csv_and_text_layouts(self, month_series):
        table = compare([self._report(f"m{k}", k, month_series)
                         for k in range(2)])
        csv_text = table.to_csv()
        assert csv_text.splitlines()[0].startswith(
            "model_id,rmse,nrmse,oracle_rmse,oracle_nrmse")
        text = table.to_text()
        assert "method" in text and "m0" in text and "m1" in text

    def test_incompatible_reports_rejected(self, month_series):
        a = self._report("a", 0, month_series)
        b = self._report("b", 1, month_series)
        b.n_p = 24
        with pytest.raises(ValueError, match="incompatible"):
            compare([a, b])
