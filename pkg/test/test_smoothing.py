import mpmath
import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st

from calibration.numerics import nll_from_logits, softmax
from calibration.training.smoothing import (SmoothingConfig, TargetDistribution, batch_loss, loss_gradient,
                                            smooth_target_matrix, smooth_targets, smoothed_loss)


def exact_kl_to_uniform(target):
    q = [sympy.nsimplify(v) for v in target]
    return float(sympy.N(sum(qi * sympy.log(qi * len(q)) for qi in q if qi != 0), 30))


def high_precision_central_differences(z, target, digits=50):
    """Central differences of the smoothed loss evaluated in 50-digit arithmetic."""
    with mpmath.workdps(digits):
        point = [mpmath.mpf(float(v)) for v in z]
        weights = [mpmath.mpf(float(v)) for v in target]

        def loss(values):
            log_norm = mpmath.log(mpmath.fsum(mpmath.exp(v) for v in values))
            return mpmath.fsum(w * (mpmath.log(w) - (v - log_norm)) for w, v in zip(weights, values) if w != 0)

        h = mpmath.mpf('1e-20')
        gradient = []
        for i in range(len(point)):
            up, down = list(point), list(point)
            up[i] += h
            down[i] -= h
            gradient.append(float((loss(up) - loss(down)) / (2 * h)))
    return gradient


class TestSmoothTargets:

    def test_three_classes(self):
        q = smooth_targets(0, SmoothingConfig(3, 0.1)).target
        np.testing.assert_allclose(q, [0.9, 0.05, 0.05], rtol=0, atol=1e-15)

    def test_mle_limit(self):
        np.testing.assert_array_equal(smooth_targets(0, SmoothingConfig(4, 0.0)).target, [1.0, 0.0, 0.0, 0.0])

    def test_fifteenths(self):
        q = smooth_targets(2, SmoothingConfig(4, 0.2)).target
        np.testing.assert_allclose(q, [1 / 15, 1 / 15, 0.8, 1 / 15], rtol=1e-15)

    def test_uniform_at_maximal_alpha(self):
        q = smooth_targets(1, SmoothingConfig(4, 0.75)).target
        np.testing.assert_allclose(q, [0.25] * 4, rtol=1e-15)

    @pytest.mark.parametrize('num_classes, alpha', [(1, 0.1), (3, 1.0), (3, -0.1), (3, 1.5)])
    def test_invalid_config(self, num_classes, alpha):
        with pytest.raises(ValueError):
            SmoothingConfig(num_classes, alpha)

    @pytest.mark.parametrize('gold', [-1, 3])
    def test_gold_out_of_range(self, gold):
        with pytest.raises(ValueError):
            smooth_targets(gold, SmoothingConfig(3))

    @given(st.integers(2, 50), st.floats(0.0, 0.999), st.data())
    def test_target_shape(self, num_classes, alpha, data):
        gold = data.draw(st.integers(0, num_classes - 1))
        config = SmoothingConfig(num_classes, alpha)
        q = smooth_targets(gold, config).target
        assert abs(q.sum() - 1.0) <= 1e-12
        assert q[gold] == 1.0 - alpha
        others = np.delete(q, gold)
        assert len(set(others.tolist())) == 1

    def test_matrix_matches_rows(self):
        config = SmoothingConfig(5, 0.3)
        labels = np.array([4, 0, 2, 2])
        matrix = smooth_target_matrix(labels, config)
        for row, label in zip(matrix, labels):
            np.testing.assert_array_equal(row, smooth_targets(int(label), config).target)

    def test_target_distribution_validation(self):
        with pytest.raises(ValueError):
            TargetDistribution([0.5, 0.4])
        with pytest.raises(ValueError):
            TargetDistribution([1.2, -0.2])


class TestSmoothedLoss:

    def test_zero_at_target(self):
        q = TargetDistribution(softmax([0.4, -1.0, 2.0]))
        assert smoothed_loss([0.4, -1.0, 2.0], q) == pytest.approx(0.0, abs=1e-14)

    def test_uniform_logits(self):
        target = [0.9, 0.05, 0.05]
        value = smoothed_loss([0.0, 0.0, 0.0], smooth_targets(0, SmoothingConfig(3, 0.1)))
        assert value == pytest.approx(exact_kl_to_uniform(target), abs=1e-12)
        assert value == pytest.approx(0.7042146, abs=1e-6)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=6), st.data())
    def test_mle_is_nll(self, z, data):
        gold = data.draw(st.integers(0, len(z) - 1))
        q = smooth_targets(gold, SmoothingConfig(len(z), 0.0))
        assert smoothed_loss(z, q) == pytest.approx(nll_from_logits(z, gold), rel=1e-12, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        config = SmoothingConfig(6, 0.2)
        for _ in range(200):
            assert smoothed_loss(rng.normal(scale=5, size=6), smooth_targets(int(rng.integers(6)), config)) >= 0.0

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError, match="mismatched lengths"):
            smoothed_loss([0.0, 1.0], smooth_targets(0, SmoothingConfig(3)))
        with pytest.raises(ValueError, match="mismatched lengths"):
            loss_gradient([0.0, 1.0], smooth_targets(0, SmoothingConfig(3)))

    def test_batch_loss_matches_rows(self):
        rng = np.random.default_rng(6)
        config = SmoothingConfig(4, 0.1)
        labels = rng.integers(4, size=25)
        logits = rng.normal(scale=3, size=(25, 4))
        rows = batch_loss(logits, smooth_target_matrix(labels, config))
        expected = [smoothed_loss(z, smooth_targets(int(y), config)) for z, y in zip(logits, labels)]
        np.testing.assert_allclose(rows, expected, rtol=1e-12, atol=1e-14)


class TestLossGradient:

    def test_stationary_point(self):
        q = TargetDistribution(softmax([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(loss_gradient([1.0, 2.0, 3.0], q), 0.0, atol=1e-15)

    @settings(max_examples=100)
    @given(st.integers(2, 6), st.floats(0.0, 0.9), st.integers(0, 2**32 - 1))
    def test_finite_differences(self, num_classes, alpha, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(scale=2.0, size=num_classes)
        q = smooth_targets(int(rng.integers(num_classes)), SmoothingConfig(num_classes, alpha))
        analytic = loss_gradient(z, q)
        assert abs(analytic.sum()) <= 1e-12
        for i, numeric in enumerate(high_precision_central_differences(z, q.target)):
            if numeric == 0:
                assert abs(analytic[i]) <= 1e-15
            else:
                assert abs(analytic[i] - numeric) / abs(numeric) < 1e-5

    def test_symbolic_gradient(self):
        zs = sympy.symbols('z0:3')
        q = [sympy.Rational(9, 10), sympy.Rational(1, 20), sympy.Rational(1, 20)]
        norm = sum(sympy.exp(z) for z in zs)
        loss = sum(qi * (sympy.log(qi) - (z - sympy.log(norm))) for qi, z in zip(q, zs))
        point = {zs[0]: 0.3, zs[1]: -1.2, zs[2]: 2.0}
        expected = [float(sympy.diff(loss, z).subs(point).evalf(30)) for z in zs]
        actual = loss_gradient([0.3, -1.2, 2.0], smooth_targets(0, SmoothingConfig(3, 0.1)))
        np.testing.assert_allclose(actual, expected, rtol=1e-12, atol=1e-15)
