"""Tests for normalization, the oracle loss, batching, and the train loop."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multifuture.data import GeneratorConfig, generate
from multifuture.model import Forecaster, FutureSet, ModelConfig
from multifuture.training import (
    LossRecord,
    TrainConfig,
    compute_loss,
    nrmse,
    oracle_index,
    rmse,
    sample_minibatch,
    train,
    train_expert,
    write_loss_trace,
    z_normalize,
)

SMALL_MODEL = dict(n_p=16, n_h=8, d=4, f=2, n_s=4, channels=8)


def random_future_set(rng, f, d, n_h):
    shapes = rng.standard_normal((f, d, n_h))
    mul = rng.uniform(0.5, 2.0, size=(f, d))
    add = rng.standard_normal((f, d))
    futures = mul[:, :, None] * shapes + add[:, :, None]
    return FutureSet(futures, shapes, mul, add)


class TestZNormalize:
    def test_hand_computation(self):
        out = z_normalize(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(out[:, 0], [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_constant_dimension_floors_to_zero(self):
        out = z_normalize(np.array([[5.0], [5.0], [5.0]]))
        np.testing.assert_allclose(out, 0.0)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 3))
        once = z_normalize(x)
        twice = z_normalize(once)
        np.testing.assert_allclose(once, twice, atol=1e-6)

    def test_population_std(self):
        # ddof=0: [0, 2] has std 1, not sqrt(2)
        out = z_normalize(np.array([[0.0], [2.0]]))
        np.testing.assert_allclose(out[:, 0], [-1.0, 1.0])

    def test_axis_selects_time_direction(self):
        x = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])  # (d, n_h)
        out = z_normalize(x, axis=-1)
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)


class TestRmse:
    def test_zero_on_equal(self):
        x = np.ones((3, 4))
        assert rmse(x, x) == 0.0

    def test_unit_error(self):
        assert rmse(np.zeros((2, 2)), np.ones((2, 2))) == 1.0

    def test_hand_sum_of_squares(self):
        pred = np.zeros((2, 2))
        truth = np.array([[3.0, 0.0], [0.0, 4.0]])
        assert rmse(pred, truth) == pytest.approx(2.5)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            rmse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestNrmse:
    def test_zero_when_shape_matches_znorm(self):
        rng = np.random.default_rng(1)
        truth = rng.standard_normal((2, 10))
        assert nrmse(z_normalize(truth, axis=-1), truth) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computation(self):
        # z-normalized [1,2,3] has unit variance, so zeros predict RMSE 1
        assert nrmse(np.zeros((1, 3)), np.array([[1.0, 2.0, 3.0]])) \
            == pytest.approx(1.0)

    @given(
        a=st.floats(min_value=0.01, max_value=10.0),
        b=st.floats(min_value=-100.0, max_value=100.0),
        seed=st.integers(min_value=0, max_value=999),
    )
    @settings(max_examples=60, deadline=None)
    def test_affine_invariance(self, a, b, seed):
        rng = np.random.default_rng(seed)
        pred = rng.standard_normal((2, 12))
        truth = rng.standard_normal((2, 12)) * 3 + 1
        assert nrmse(pred, a * truth + b) == pytest.approx(
            nrmse(pred, truth), abs=1e-6)


class TestOracleIndex:
    def test_single_future(self):
        rng = np.random.default_rng(0)
        fs = random_future_set(rng, 1, 2, 8)
        assert oracle_index(fs, rng.standard_normal((2, 8))) == 1

    def test_exact_shape_match_wins(self):
        rng = np.random.default_rng(2)
        truth = rng.standard_normal((2, 8)) * 4 + 2
        fs = random_future_set(rng, 3, 2, 8)
        fs.shape_preds[1] = z_normalize(truth, axis=-1)
        assert oracle_index(fs, truth) == 2

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        f = int(rng.integers(1, 17))
        fs = random_future_set(rng, f, 3, 6)
        truth = rng.standard_normal((3, 6))
        best = min(range(f),
                   key=lambda j: nrmse(fs.shape_preds[j], truth))
        assert oracle_index(fs, truth) == best + 1

    def test_tie_breaks_low(self):
        rng = np.random.default_rng(3)
        fs = random_future_set(rng, 3, 2, 8)
        fs.shape_preds[2] = fs.shape_preds[0]
        truth = rng.standard_normal((2, 8))
        errors = [nrmse(fs.shape_preds[j], truth) for j in range(3)]
        if min(errors) == errors[0]:
            assert oracle_index(fs, truth) == 1


class TestComputeLoss:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(4)
        truth = rng.standard_normal((2, 8))
        shapes = np.stack([z_normalize(truth, axis=-1)])
        mul = truth.std(axis=1)[None]
        add = truth.mean(axis=1)[None]
        futures = mul[:, :, None] * shapes + add[:, :, None]
        fs = FutureSet(futures, shapes, mul, add)
        record = compute_loss(fs, truth, 1)
        assert record.total_loss == pytest.approx(0.0, abs=1e-9)

    def test_gamma_zero_is_rmse_only(self):
        rng = np.random.default_rng(5)
        fs = random_future_set(rng, 2, 2, 8)
        truth = rng.standard_normal((2, 8))
        record = compute_loss(fs, truth, 1, gamma=0.0)
        assert record.total_loss == pytest.approx(record.rmse_term)

    def test_additivity(self):
        rng = np.random.default_rng(6)
        fs = random_future_set(rng, 2, 2, 8)
        truth = rng.standard_normal((2, 8))
        record = compute_loss(fs, truth, 2, gamma=1.0)
        assert record.total_loss == pytest.approx(
            record.rmse_term + record.nrmse_term, abs=1e-9)

    def test_out_of_range_index_raises(self):
        rng = np.random.default_rng(7)
        fs = random_future_set(rng, 2, 2, 8)
        with pytest.raises(ValueError, match="out of range"):
            compute_loss(fs, rng.standard_normal((2, 8)), 3)

    @given(st.floats(min_value=0.0, max_value=5.0),
           st.integers(min_value=0, max_value=100))
    @settings(max_examples=40, deadline=None)
    def test_decomposition_property(self, gamma, seed):
        rng = np.random.default_rng(seed)
        fs = random_future_set(rng, 3, 2, 6)
        truth = rng.standard_normal((2, 6))
        i_oc = oracle_index(fs, truth)
        record = compute_loss(fs, truth, i_oc, gamma=gamma)
        assert record.total_loss == pytest.approx(
            record.rmse_term + gamma * record.nrmse_term, rel=1e-9, abs=1e-9)


class TestOracleMinMonotonicity:
    def test_subset_never_beats_superset(self):
        rng = np.random.default_rng(8)
        fs = random_future_set(rng, 6, 2, 8)
        truth = rng.standard_normal((2, 8))
        errors = [nrmse(fs.shape_preds[j], truth) for j in range(6)]
        for k in range(1, 7):
            assert min(errors[:k]) >= min(errors)
        mins = [min(errors[:k]) for k in range(1, 7)]
        assert all(a >= b for a, b in zip(mins, mins[1:]))


class TestSampleMinibatch:
    def test_single_window_series(self):
        values = np.arange(48.0).reshape(24, 2)
        rng = np.random.default_rng(0)
        inputs, targets = sample_minibatch(values, 16, 8, 5, rng)
        for row in range(5):
            np.testing.assert_array_equal(inputs[row], values[:16])
            np.testing.assert_array_equal(targets[row], values[16:24])

    def test_alignment_contract(self):
        rng = np.random.default_rng(1)
        values = np.arange(400.0).reshape(200, 2)
        inputs, targets = sample_minibatch(values, 16, 8, 32, rng)
        for row in range(32):
            start = int(inputs[row, 0, 0] // 2)
            np.testing.assert_array_equal(
                targets[row], values[start + 16:start + 24])

    def test_determinism_under_seed(self):
        values = np.random.default_rng(2).standard_normal((100, 3))
        a = sample_minibatch(values, 10, 5, 8, np.random.default_rng(7))
        b = sample_minibatch(values, 10, 5, 8, np.random.default_rng(7))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_too_short_raises(self):
        with pytest.raises(ValueError, match="too short"):
            sample_minibatch(np.zeros((10, 2)), 16, 8, 4,
                             np.random.default_rng(0))

    def test_multi_series_pool(self):
        rng = np.random.default_rng(3)
        pool = [np.full((30, 2), 1.0), np.full((30, 2), 2.0)]
        inputs, _ = sample_minibatch(pool, 16, 8, 64, rng)
        seen = {inputs[row, 0, 0] for row in range(64)}
        assert seen == {1.0, 2.0}


def _tiny_series(seed=0, hours=240):
    return generate(GeneratorConfig(n_hours=hours, seed=seed))


class TestTrain:
    def test_zero_iterations_returns_initialized_model(self):
        model, trace = train(_tiny_series(), ModelConfig(**SMALL_MODEL),
                             TrainConfig(n_iter=0, seed=0))
        assert trace == []
        assert isinstance(model, Forecaster)

    def test_deterministic_trace(self):
        cfg = ModelConfig(**SMALL_MODEL)
        tcfg = TrainConfig(n_iter=8, batch_size=8, seed=3)
        series = _tiny_series()
        _, trace_a = train(series, cfg, tcfg)
        _, trace_b = train(series, cfg, tcfg)
        assert [r.total_loss for r in trace_a] == [r.total_loss for r in trace_b]
        assert [r.oracle_index_histogram for r in trace_a] \
            == [r.oracle_index_histogram for r in trace_b]

    def test_loss_record_decomposition(self):
        cfg = ModelConfig(**SMALL_MODEL)
        _, trace = train(_tiny_series(), cfg,
                         TrainConfig(n_iter=5, batch_size=8, seed=0))
        for rec in trace:
            assert rec.total_loss == pytest.approx(
                rec.rmse_term + 1.0 * rec.nrmse_term, abs=1e-6)
            assert sum(rec.oracle_index_histogram) == 8

    def test_one_loss_variant_forces_gamma_zero(self):
        cfg = ModelConfig(**SMALL_MODEL, variant="one_loss")
        _, trace = train(_tiny_series(), cfg,
                         TrainConfig(n_iter=3, batch_size=8, seed=0))
        for rec in trace:
            assert rec.total_loss == pytest.approx(rec.rmse_term, abs=1e-9)

    def test_loss_decreases_on_short_run(self):
        cfg = ModelConfig(**SMALL_MODEL)
        _, trace = train(_tiny_series(), cfg,
                         TrainConfig(n_iter=150, batch_size=16, seed=0))
        first = np.mean([r.total_loss for r in trace[:20]])
        last = np.mean([r.total_loss for r in trace[-20:]])
        assert last < first

    @pytest.mark.parametrize("variant", ["shared_encoder", "non_separated",
                                         "model_ensemble"])
    def test_variants_train(self, variant):
        cfg = ModelConfig(**SMALL_MODEL, variant=variant)
        model, trace = train(_tiny_series(), cfg,
                             TrainConfig(n_iter=3, batch_size=4, seed=0))
        assert len(trace) == 3
        fs = model.predict_futures(_tiny_series().values[:16])
        fs.validate()


class TestTrainExpert:
    def test_single_future_trivial(self):
        cfg = ModelConfig(**{**SMALL_MODEL, "f": 1})
        model, _ = train(_tiny_series(), cfg, TrainConfig(n_iter=2, batch_size=4, seed=0))
        clf = train_expert(_tiny_series(), model,
                           train_config=TrainConfig(n_iter=50, seed=0))
        np.testing.assert_allclose(
            clf.predict_proba(_tiny_series().values[:16]), [1.0])

    def test_learns_persistent_regimes(self):
        # switching is rare, so the current regime (visible in the input)
        # predicts the next day's best-fitting future
        gen = GeneratorConfig(n_hours=1440, seed=4, regime_switch_prob=0.1,
                              noise_std=0.05)
        series = generate(gen)
        cfg = ModelConfig(n_p=48, n_h=24, d=4, f=2, n_s=8, channels=16)
        tcfg = TrainConfig(n_iter=250, batch_size=32, seed=0)
        model, _ = train(series, cfg, tcfg)
        clf = train_expert(series, model, train_config=TrainConfig(
            n_iter=250, batch_size=32, seed=0))

        # held-out windows from a longer run of the same process
        held = generate(GeneratorConfig(n_hours=2400, seed=77,
                                        regime_switch_prob=0.1,
                                        noise_std=0.05))
        hits = 0
        total = 0
        for start in range(0, len(held) - 72, 24):
            window = held.values[start:start + 48]
            truth = held.values[start + 48:start + 72].T
            fs = model.predict_futures(window)
            label = oracle_index(fs, truth)
            pred = int(np.argmax(clf.predict_proba(window))) + 1
            hits += (pred == label)
            total += 1
        assert hits / total > 0.6


class TestLossTraceCsv:
    def test_round_trip_columns(self, tmp_path):
        records = [LossRecord(0, 1.5, 1.0, 0.5, [3, 1]),
                   LossRecord(1, 1.25, 0.75, 0.5, [2, 2])]
        path = tmp_path / "trace.csv"
        write_loss_trace(records, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,total,rmse,nrmse,oracle_histogram"
        assert lines[1].split(",")[-1] == "3|1"
        assert float(lines[2].split(",")[1]) == 1.25
