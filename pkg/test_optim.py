"""
Tests for Adam and the learning-rate schedule
"""

import numpy as np
import pytest

import gradcore as gc
from optim import BETA1, BETA2, EPSILON, AdamState, adam_step, cosine_factor, learning_rate


class TestSchedule:

    def test_warmup_is_linear(self):
        rates = [learning_rate(k, 0, 1e-3, 10, 1000) for k in range(10)]
        np.testing.assert_allclose(rates, [1e-3 * (k + 1) / 10 for k in range(10)], rtol=1e-12)

    def test_cosine_end_points(self):
        assert cosine_factor(10, 10, 110) == pytest.approx(1.0)
        assert cosine_factor(60, 10, 110) == pytest.approx(0.5)
        assert cosine_factor(110, 10, 110) == pytest.approx(0.0, abs=1e-12)
        assert cosine_factor(500, 10, 110) == pytest.approx(0.0, abs=1e-12)

    def test_warmup_restarts_with_a_new_phase(self):
        before = learning_rate(599, 0, 5e-4, 100, 1000)
        after = learning_rate(600, 600, 5e-4, 100, 1000)
        assert after < before
        assert after == pytest.approx(5e-4 * 0.01 * cosine_factor(600, 100, 1000))

    def test_cosine_follows_the_global_step(self):
        assert learning_rate(800, 600, 1.0, 100, 1000) == pytest.approx(cosine_factor(800, 100, 1000))


class TestAdam:

    def test_zero_gradient_leaves_parameters(self, float64):
        w = gc.parameter(np.array([1.0, -2.0]))
        adam_step({'w': w}, {'w': np.zeros(2)}, AdamState(), 1e-2)
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_first_step_moves_by_the_learning_rate(self, float64):
        w = gc.parameter(np.array([1.0, -2.0]))
        adam_step({'w': w}, {'w': np.array([3.0, -0.5])}, AdamState(), 0.1)
        np.testing.assert_allclose(w.data, [0.9, -1.9], rtol=1e-6)

    def test_matches_reference_on_a_quadratic(self, float64):
        target = np.array([0.3, -1.2, 2.0])
        w = gc.parameter(np.zeros(3))
        state = AdamState()
        ref, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
        for step in range(1, 11):
            adam_step({'w': w}, {'w': 2 * (w.data - target)}, state, 0.05)
            g = 2 * (ref - target)
            m = BETA1 * m + (1 - BETA1) * g
            v = BETA2 * v + (1 - BETA2) * g * g
            ref = ref - 0.05 * (m / (1 - BETA1 ** step)) / (np.sqrt(v / (1 - BETA2 ** step)) + EPSILON)
        np.testing.assert_allclose(w.data, ref, rtol=1e-12, atol=1e-15)
        assert state.step == 10

    def test_missing_gradient_skips_the_parameter(self, float64):
        a, b = gc.parameter([1.0]), gc.parameter([1.0])
        state = adam_step({'a': a, 'b': b}, {'a': np.array([1.0])}, AdamState(), 0.1)
        assert b.data[0] == 1.0
        assert 'b' not in state.m

    def test_non_finite_gradient_names_the_parameter(self):
        w = gc.parameter([1.0, 2.0])
        with pytest.raises(gc.NumericalError, match='fine.trunk.0.weight'):
            adam_step({'fine.trunk.0.weight': w}, {'fine.trunk.0.weight': np.array([np.nan, 0.0])},
                      AdamState(), 0.1)
        np.testing.assert_array_equal(w.data, [1.0, 2.0])

    def test_reset(self, float64):
        w = gc.parameter([1.0])
        state = adam_step({'w': w}, {'w': np.array([1.0])}, AdamState(), 0.1)
        state.reset()
        assert state.step == 0 and not state.m and not state.v
