import pickle

import numpy as np
import pytest

from calibration.prediction_store import SplitTag
from calibration.training.model import (LabeledFeatures, LinearSoftmaxModel, TrainConfig, TrainingDivergenceError,
                                        TrainingObjective, load_model, mean_loss, save_model, train)
from calibration.training.smoothing import SmoothingConfig


def separable_data(n=200, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(2, size=n)
    centers = np.array([[-2.0, -2.0], [2.0, 2.0]])
    return LabeledFeatures(centers[labels] + 0.5 * rng.standard_normal((n, 2)), labels)


def noisy_data(n=300, num_classes=3, dim=3, seed=1):
    rng = np.random.default_rng(seed)
    labels = rng.integers(num_classes, size=n)
    centers = rng.standard_normal((num_classes, dim))
    return LabeledFeatures(centers[labels] + rng.standard_normal((n, dim)), labels)


def training_accuracy(model, data):
    return float(np.mean(np.argmax(model.logits(data.features), axis=1) == data.labels))


class TestLabeledFeatures:

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            LabeledFeatures(np.zeros((3, 2)), [0, 1])

    def test_read_only(self):
        data = separable_data(10)
        assert len(data) == 10 and data.feature_dim == 2
        with pytest.raises(ValueError):
            data.features[0, 0] = 1.0


class TestLinearSoftmaxModel:

    def test_init(self):
        model = LinearSoftmaxModel.init(3, 4, seed=5)
        assert model.weights.shape == (3, 4)
        np.testing.assert_array_equal(model.bias, np.zeros(3))
        assert np.max(np.abs(model.weights)) < 0.1
        assert model == LinearSoftmaxModel.init(3, 4, seed=5)
        assert model != LinearSoftmaxModel.init(3, 4, seed=6)

    @pytest.mark.parametrize('weights, bias', [
        (np.full((2, 2), np.nan), np.zeros(2)),
        (np.zeros((2, 2)), np.array([0.0, np.inf])),
        (np.zeros((2, 2)), np.zeros(3)),
    ])
    def test_rejects_invalid_parameters(self, weights, bias):
        with pytest.raises(ValueError):
            LinearSoftmaxModel(weights, bias)

    def test_predict_set(self):
        data = noisy_data(20)
        model = LinearSoftmaxModel(np.arange(9.0).reshape(3, 3) / 10, np.array([0.1, 0.0, -0.1]))
        prediction_set = model.predict_set(data, SplitTag.IN_DOMAIN_TEST)
        assert prediction_set.split_tag is SplitTag.IN_DOMAIN_TEST
        assert prediction_set.num_classes == 3
        np.testing.assert_array_equal(prediction_set.logits_matrix(), model.logits(data.features))
        np.testing.assert_array_equal(prediction_set.labels(), data.labels)


class TestTrainingObjective:

    def test_names(self):
        assert TrainingObjective.mle().name == 'mle'
        assert TrainingObjective.label_smoothing().name == 'ls'
        assert TrainingObjective.label_smoothing().alpha == 0.1

    @pytest.mark.parametrize('alpha', [-0.1, 1.0])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(ValueError):
            TrainingObjective(alpha)

    @pytest.mark.parametrize('kwargs', [{'epochs': 0}, {'batch_size': 0}, {'learning_rate': 0.0},
                                        {'learning_rate': float('nan')}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestTrain:

    def test_deterministic(self):
        data = noisy_data()
        start = LinearSoftmaxModel.init(3, 3, seed=2)
        first = train(start, data, TrainingObjective.label_smoothing(), TrainConfig(seed=9))
        second = train(start, data, TrainingObjective.label_smoothing(), TrainConfig(seed=9))
        assert first.model == second.model
        assert first.epoch_losses == second.epoch_losses
        assert len(first.epoch_losses) == TrainConfig().epochs

    def test_mle_equals_zero_smoothing(self):
        data = noisy_data()
        start = LinearSoftmaxModel.init(3, 3, seed=2)
        mle = train(start, data, TrainingObjective.mle(), TrainConfig(seed=4))
        ls0 = train(start, data, TrainingObjective.label_smoothing(0.0), TrainConfig(seed=4))
        assert mle.model == ls0.model

    def test_does_not_mutate_start(self):
        data = noisy_data()
        start = LinearSoftmaxModel.init(3, 3, seed=2)
        snapshot = start.weights.copy()
        train(start, data, TrainingObjective.mle())
        np.testing.assert_array_equal(start.weights, snapshot)

    def test_separable_full_batch(self):
        data = separable_data()
        result = train(LinearSoftmaxModel.init(2, 2, seed=0), data, TrainingObjective.mle(),
                       TrainConfig(epochs=200, batch_size=200, learning_rate=0.1))
        assert training_accuracy(result.model, data) >= 0.95

    def test_full_batch_loss_non_increasing(self):
        data = noisy_data()
        for objective in (TrainingObjective.mle(), TrainingObjective.label_smoothing(0.2)):
            result = train(LinearSoftmaxModel.init(3, 3, seed=1), data, objective,
                           TrainConfig(epochs=100, batch_size=len(data), learning_rate=0.05))
            assert np.all(np.diff(result.epoch_losses) <= 1e-12)

    def test_reported_loss_matches_mean_loss(self):
        data = noisy_data()
        result = train(LinearSoftmaxModel.init(3, 3, seed=1), data, TrainingObjective.label_smoothing())
        assert result.epoch_losses[-1] == pytest.approx(mean_loss(result.model, data, SmoothingConfig(3, 0.1)),
                                                        rel=1e-12)

    def test_smoothing_lowers_confidence(self):
        data = separable_data()
        config = TrainConfig(epochs=100, batch_size=len(data), learning_rate=0.1)
        start = LinearSoftmaxModel.init(2, 2, seed=0)
        mle = train(start, data, TrainingObjective.mle(), config).model
        ls = train(start, data, TrainingObjective.label_smoothing(0.1), config).model
        mle_margin = np.ptp(mle.logits(data.features), axis=1)
        ls_margin = np.ptp(ls.logits(data.features), axis=1)
        assert np.mean(ls_margin) < np.mean(mle_margin)
        assert np.linalg.norm(ls.weights) < np.linalg.norm(mle.weights)

    def test_divergence(self):
        data = LabeledFeatures(np.full((20, 2), 1e200), np.arange(20) % 2)
        with np.errstate(all='ignore'):
            with pytest.raises(TrainingDivergenceError) as info:
                train(LinearSoftmaxModel.init(2, 2, seed=0), data, TrainingObjective.mle(),
                      TrainConfig(learning_rate=1e200))
        assert info.value.epoch == 1
        restored = pickle.loads(pickle.dumps(info.value))
        assert restored.epoch == 1 and str(restored) == str(info.value)

    def test_rejects_mismatched_data(self):
        with pytest.raises(ValueError):
            train(LinearSoftmaxModel.init(3, 4, seed=0), noisy_data(), TrainingObjective.mle())

    def test_rejects_labels_out_of_range(self):
        data = LabeledFeatures(np.zeros((4, 3)), [0, 1, 2, 3])
        with pytest.raises(ValueError):
            train(LinearSoftmaxModel.init(3, 3, seed=0), data, TrainingObjective.mle())


class TestPersistence:

    def test_save_load_identity(self, tmp_path):
        rng = np.random.default_rng(3)
        model = LinearSoftmaxModel(rng.standard_normal((4, 5)) * 1e5, rng.standard_normal(4) * 1e-7)
        path = tmp_path / 'model.csv'
        save_model(model, path, seed=42)
        assert path.read_text(encoding='utf-8').splitlines()[0] == '# num_classes=4 feature_dim=5 seed=42'
        assert load_model(path) == model

    def test_header_without_seed(self, tmp_path):
        path = tmp_path / 'model.csv'
        save_model(LinearSoftmaxModel.init(2, 1, seed=0), path)
        assert path.read_text(encoding='utf-8').startswith('# num_classes=2 feature_dim=1 seed=none\n')

    def test_rejects_truncated_file(self, tmp_path):
        path = tmp_path / 'model.csv'
        save_model(LinearSoftmaxModel.init(2, 2, seed=0), path)
        lines = path.read_text(encoding='utf-8').splitlines()
        path.write_text('\n'.join(lines[:-1]) + '\n', encoding='utf-8')
        with pytest.raises(ValueError):
            load_model(path)

    def test_rejects_missing_header(self, tmp_path):
        path = tmp_path / 'model.csv'
        path.write_text('0.5\n', encoding='utf-8')
        with pytest.raises(ValueError):
            load_model(path)
