import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plslab import nn, tape
from conftest import fd_gradient, flatten_grads, max_rel_err
from plslab.util import one_hot


def zero_params(d=3, c=4, hidden=(5,)):
    rng = np.random.default_rng(0)
    params = nn.init_params(d, c, hidden, rng)
    return nn.ModelParams(
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.classifier_layers],
        [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.transition_layers],
    )


class TestForwardClassifier:
    def test_zero_params_uniform(self):
        params = zero_params(d=3, c=4)
        probs, _ = nn.forward_classifier(params, np.ones(3))
        np.testing.assert_allclose(probs, 0.25, atol=1e-12)

    def test_hand_set_logits(self):
        # single linear layer with fixed bias giving logits (2, 0)
        w = np.zeros((2, 2))
        b = np.array([2.0, 0.0])
        params = nn.ModelParams([(w, b)], [(np.zeros((4, 2)), np.zeros(2))])
        probs, _ = nn.forward_classifier(params, np.zeros(2))
        expected0 = math.exp(2.0) / (math.exp(2.0) + 1.0)
        np.testing.assert_allclose(probs, [expected0, 1.0 - expected0], atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_output_is_distribution(self, seed):
        rng = np.random.default_rng(seed)
        params = nn.init_params(4, 3, (6, 6), rng)
        probs, _ = nn.forward_classifier(params, rng.standard_normal(4))
        assert (probs > 0).all()
        assert abs(probs.sum() - 1.0) < 1e-9

    def test_repeated_calls_bitwise_equal(self):
        rng = np.random.default_rng(3)
        params = nn.init_params(5, 4, (8,), rng)
        x = rng.standard_normal(5)
        a, _ = nn.forward_classifier(params, x)
        b, _ = nn.forward_classifier(params, x)
        assert np.array_equal(a, b)
        # the evaluation path agrees bitwise with the tape path
        assert np.array_equal(a, nn.classifier_probs(params, x))

    def test_dimension_mismatch(self):
        params = zero_params(d=3)
        with pytest.raises(ValueError):
            nn.forward_classifier(params, np.ones(5))


class TestForwardTransition:
    def test_zero_params_uniform(self):
        params = zero_params(d=3, c=4)
        probs, _ = nn.forward_transition(params, np.ones(3), np.array([0.7, 0.1, 0.1, 0.1]))
        np.testing.assert_allclose(probs, 0.25, atol=1e-12)

    def test_output_sums_to_one(self):
        rng = np.random.default_rng(9)
        params = nn.init_params(3, 4, (6,), rng)
        probs, _ = nn.forward_transition(params, rng.standard_normal(3),
                                         np.array([0.25, 0.25, 0.25, 0.25]))
        assert abs(probs.sum() - 1.0) < 1e-9

    def test_sensitive_to_label_permutation(self):
        # single layer whose label-block weights are asymmetric
        d, c = 2, 3
        w = np.zeros((d + c, c))
        w[d:, :] = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]])
        params = nn.ModelParams([(np.zeros((d, c)), np.zeros(c))], [(w, np.zeros(c))])
        x = np.zeros(d)
        a, _ = nn.forward_transition(params, x, np.array([0.7, 0.2, 0.1]))
        b, _ = nn.forward_transition(params, x, np.array([0.1, 0.2, 0.7]))
        assert not np.allclose(a, b)


class TestBackward:
    def test_constant_loss_zero_grads(self):
        rng = np.random.default_rng(1)
        params = nn.init_params(3, 2, (4,), rng)
        leaves = nn.make_leaves(params)
        loss = tape.total(tape.constant(np.array([[1.0, 2.0]])))
        grads = nn.backward(loss, leaves)
        for gw, gb in grads.classifier_layers + grads.transition_layers:
            assert not gw.any() and not gb.any()

    def test_shapes_mirror_params(self):
        rng = np.random.default_rng(2)
        params = nn.init_params(5, 3, (4, 4), rng)
        leaves = nn.make_leaves(params)
        dist = nn.classifier_dist(leaves, tape.constant(rng.standard_normal((6, 5))))
        loss = tape.scale(tape.total(tape.floor_log(dist)), -1.0)
        grads = nn.backward(loss, leaves)
        for (w, b), (gw, gb) in zip(params.classifier_layers, grads.classifier_layers):
            assert gw.shape == w.shape and gb.shape == b.shape
        for (w, b), (gw, gb) in zip(params.transition_layers, grads.transition_layers):
            assert gw.shape == w.shape and gb.shape == b.shape

    def test_cross_entropy_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        params = nn.init_params(8, 2, (4,), rng)
        x = rng.standard_normal((5, 8))
        y = rng.integers(0, 2, 5)
        target = one_hot(y, 2)

        def build(p):
            leaves = nn.make_leaves(p)
            dist = nn.classifier_dist(leaves, tape.constant(x))
            loss = tape.scale(tape.total(tape.mul(tape.constant(target),
                                                  tape.floor_log(dist))), -1.0 / 5)
            return loss, leaves

        loss, leaves = build(params)
        analytic = flatten_grads(nn.backward(loss, leaves))
        numeric = fd_gradient(lambda p: float(build(p)[0].value), params)
        assert max_rel_err(analytic, numeric) <= 1e-4


class TestSgdStep:
    def _single(self, p, g):
        params = nn.ModelParams([(np.array([[p]]), np.zeros(1))], [(np.zeros((2, 1)), np.zeros(1))])
        grads = nn.Gradients([(np.array([[g]]), np.zeros(1))], [(np.zeros((2, 1)), np.zeros(1))])
        return params, grads

    def test_lr_zero_no_op(self):
        params, grads = self._single(1.0, 0.5)
        out = nn.sgd_step(params, grads, lr=0.0, weight_decay=0.1)
        assert out.classifier_layers[0][0][0, 0] == 1.0

    def test_plain_step(self):
        params, grads = self._single(1.0, 0.5)
        out = nn.sgd_step(params, grads, lr=0.1, weight_decay=0.0)
        assert out.classifier_layers[0][0][0, 0] == pytest.approx(0.95)

    def test_decay_only_step(self):
        params, grads = self._single(1.0, 0.0)
        out = nn.sgd_step(params, grads, lr=0.1, weight_decay=0.1)
        assert out.classifier_layers[0][0][0, 0] == pytest.approx(0.99)

    def test_non_finite_gradient_aborts(self):
        params, grads = self._single(1.0, float("nan"))
        with pytest.raises(FloatingPointError, match="classifier_layers"):
            nn.sgd_step(params, grads, lr=0.1)

    def test_pure(self):
        params, grads = self._single(1.0, 0.5)
        nn.sgd_step(params, grads, lr=0.1)
        assert params.classifier_layers[0][0][0, 0] == 1.0


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        params = nn.init_params(3, 4, (5, 6), rng)
        path = tmp_path / "ckpt.txt"
        nn.save_checkpoint(params, path)
        loaded = nn.load_checkpoint(path)
        for (w, b), (w2, b2) in zip(params.classifier_layers + params.transition_layers,
                                    loaded.classifier_layers + loaded.transition_layers):
            assert np.array_equal(w, w2) and np.array_equal(b, b2)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "ckpt.txt"
        path.write_text("not a checkpoint\n")
        with pytest.raises(ValueError, match="header"):
            nn.load_checkpoint(path)
