import math

import numpy as np
import pytest

from mmaffect.autodiff import Tensor, backward, grad_check, make_rng
from mmaffect.core import Task
from mmaffect.heads import (
    AUWeights,
    HeadParams,
    NoValidFrames,
    ZeroOccurrence,
    au_probabilities,
    ce_expr,
    compute_au_weights,
    init_head,
    mse_eri,
    mse_va,
    output_layer,
    predict,
    weighted_asym_loss,
)


class TestOutputLayer:
    def test_zero_weights_emit_bias(self):
        params = init_head(Task.VA, 6, make_rng("head", 0))
        params.weight.data[:] = 0.0
        params.bias.data[:] = [0.3, -0.2]
        out = output_layer(np.ones((5, 6)), params)
        np.testing.assert_allclose(out.data, np.tile([0.3, -0.2], (5, 1)), atol=0)

    def test_va_clamped_at_inference_only(self):
        raw = np.array([[1.7, -2.3], [0.5, 0.9]])
        clamped = predict(raw, Task.VA)
        np.testing.assert_array_equal(clamped, [[1.0, -1.0], [0.5, 0.9]])

    def test_eri_pools_then_squashes(self):
        rng = make_rng("head", 1)
        params = init_head(Task.ERI, 4, rng, hidden=3)
        t = rng.normal(size=(6, 4))
        out = output_layer(t, params, training=False)
        assert out.shape == (1, 7)
        # oracle: mean-pool, hidden relu, affine, logistic
        pooled = t.mean(axis=0, keepdims=True)
        hid = np.maximum(pooled @ params.hidden_weight.data.T + params.hidden_bias.data, 0.0)
        raw = hid @ params.weight.data.T + params.bias.data
        np.testing.assert_allclose(out.data, raw, atol=1e-12)
        probs = predict(out.data, Task.ERI)
        assert np.all((probs > 0) & (probs < 1))
        np.testing.assert_allclose(probs, 1 / (1 + np.exp(-raw)), atol=1e-12)

    def test_expr_emits_logits_and_argmax_predictions(self):
        params = init_head(Task.EXPR, 5, make_rng("head", 2))
        raw = output_layer(make_rng("head", 3).normal(size=(4, 5)), params)
        assert raw.shape == (4, 8)
        preds = predict(raw.data, Task.EXPR)
        np.testing.assert_array_equal(preds, raw.data.argmax(axis=1))


class TestMseVa:
    def test_perfect_is_zero(self):
        y = np.array([[0.1, -0.2], [0.3, 0.4]])
        loss = mse_va(y, Tensor(y), np.ones(2, dtype=bool))
        assert float(loss.data) == 0.0

    def test_unit_error(self):
        loss = mse_va(np.array([[0.0, 0.0]]), Tensor([[1.0, 1.0]]), np.ones(1, dtype=bool))
        assert float(loss.data) == pytest.approx(1.0, abs=1e-15)

    def test_all_masked_rejected(self):
        with pytest.raises(NoValidFrames):
            mse_va(np.zeros((3, 2)), Tensor(np.zeros((3, 2))), np.zeros(3, dtype=bool))

    def test_masked_frames_cannot_move_the_loss(self):
        rng = make_rng("head", 4)
        y = rng.uniform(-1, 1, (6, 2))
        mask = np.array([True, False, True, True, False, True])
        pred = rng.normal(size=(6, 2))
        base = mse_va(y, Tensor(pred), mask)
        perturbed = pred.copy()
        perturbed[~mask] += 1e6
        moved = mse_va(y, Tensor(perturbed), mask)
        assert float(base.data) == float(moved.data)


class TestCeExpr:
    def test_confident_correct_is_tiny(self):
        logits = np.full((3, 8), -30.0)
        y = np.array([2, 5, 7])
        logits[np.arange(3), y] = 30.0
        loss = ce_expr(y, Tensor(logits))
        assert float(loss.data) < 1e-12

    def test_uniform_logits_give_log8(self):
        y = np.array([0, 3, 7, 1])
        loss = ce_expr(y, Tensor(np.zeros((4, 8))))
        assert float(loss.data) == pytest.approx(math.log(8.0), abs=1e-12)

    def test_invalid_frames_skipped(self):
        rng = make_rng("head", 5)
        logits = rng.normal(size=(4, 8))
        full = ce_expr(np.array([1, 2, -1, 3]), Tensor(logits))
        sub = ce_expr(np.array([1, 2, 3]), Tensor(logits[[0, 1, 3]]))
        assert float(full.data) == pytest.approx(float(sub.data), abs=1e-15)

    def test_masked_logit_perturbation_bit_identical(self):
        rng = make_rng("head", 6)
        logits = rng.normal(size=(4, 8))
        y = np.array([1, -1, 4, 0])
        base = float(ce_expr(y, Tensor(logits)).data)
        logits[1] += 1e5
        assert float(ce_expr(y, Tensor(logits)).data) == base

    def test_all_invalid_rejected(self):
        with pytest.raises(NoValidFrames):
            ce_expr(np.array([-1, -1]), Tensor(np.zeros((2, 8))))


class TestAuWeights:
    def test_equal_rates_give_ones(self):
        labels = np.tile(np.array([[1] * 12, [0] * 12]), (5, 1))
        w = compute_au_weights(labels)
        np.testing.assert_allclose(w.w, np.ones(12), atol=1e-12)

    def test_two_au_formula(self):
        # rates 0.5 and 0.25: inverse weights scaled to sum to 2
        labels = np.array([[1, 1], [0, 0], [1, 0], [0, 0]])
        w = compute_au_weights(labels)
        np.testing.assert_allclose(w.w, [2 / 3, 4 / 3], atol=1e-12)

    def test_zero_occurrence_rejected(self):
        labels = np.ones((4, 3), dtype=int)
        labels[:, 1] = 0
        with pytest.raises(ZeroOccurrence):
            compute_au_weights(labels)

    def test_invalid_entries_excluded_from_rates(self):
        labels = np.array([[1, 1], [0, 1], [-1, 1], [-1, 1]])
        w = compute_au_weights(labels)
        # AU0 rate 1/2 over its two annotated frames, AU1 rate 1
        np.testing.assert_allclose(w.w, [2 * 2 / 3, 2 * 1 / 3], atol=1e-12)

    def test_weights_validate(self):
        with pytest.raises(ValueError):
            AUWeights(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            AUWeights(np.array([-1.0, 3.0]))


class TestWeightedAsymLoss:
    def w(self, n=1):
        return AUWeights(np.ones(n))

    def test_confident_positive_vanishes(self):
        loss = weighted_asym_loss(np.array([[1]]), Tensor([[1 - 1e-9]]), self.w())
        assert float(loss.data) < 1e-8

    def test_negative_half_term(self):
        loss = weighted_asym_loss(np.array([[0]]), Tensor([[0.5]]), self.w())
        assert float(loss.data) == pytest.approx(-0.5 * math.log(0.5), abs=1e-8)
        assert float(loss.data) == pytest.approx(0.34657, abs=1e-5)

    def test_positive_half_term(self):
        loss = weighted_asym_loss(np.array([[1]]), Tensor([[0.5]]), self.w())
        assert float(loss.data) == pytest.approx(math.log(2.0), abs=1e-8)
        assert float(loss.data) == pytest.approx(0.69315, abs=1e-5)

    def test_linear_in_weights(self):
        rng = make_rng("head", 7)
        y = (rng.random((5, 12)) > 0.5).astype(int)
        p = rng.uniform(0.05, 0.95, (5, 12))
        base = float(weighted_asym_loss(y, Tensor(p), np.ones(12)).data)
        doubled = float(weighted_asym_loss(y, Tensor(p), np.full(12, 2.0)).data)
        assert doubled == pytest.approx(2 * base, rel=1e-12)

    def test_masked_entries_bit_identical(self):
        rng = make_rng("head", 8)
        y = (rng.random((4, 12)) > 0.5).astype(int)
        y[1, 3] = -1
        y[2] = -1  # fully masked frame
        p = rng.uniform(0.1, 0.9, (4, 12))
        base = float(weighted_asym_loss(y, Tensor(p), AUWeights(np.ones(12))).data)
        p2 = p.copy()
        p2[1, 3] = 0.999
        p2[2] = 0.001
        moved = float(weighted_asym_loss(y, Tensor(p2), AUWeights(np.ones(12))).data)
        assert base == moved

    def test_all_masked_rejected(self):
        with pytest.raises(NoValidFrames):
            weighted_asym_loss(-np.ones((2, 12)), Tensor(np.full((2, 12), 0.5)), AUWeights(np.ones(12)))


class TestMseEri:
    def test_perfect(self):
        y = np.full((1, 7), 0.4)
        assert float(mse_eri(y, Tensor(y)).data) == 0.0

    def test_unit_gap(self):
        loss = mse_eri(np.zeros((1, 7)), Tensor(np.ones((1, 7))))
        assert float(loss.data) == pytest.approx(1.0, abs=1e-15)

    def test_batch_of_two_averages_14_terms(self):
        y = np.zeros((2, 7))
        pred = np.zeros((2, 7))
        pred[0, 0] = 1.0  # single unit error among 14 terms
        assert float(mse_eri(y, Tensor(pred)).data) == pytest.approx(1 / 14, abs=1e-15)


class TestLossGradChecks:
    """Each loss composed with its head, finite-difference verified."""

    def composed(self, task, seed):
        rng = make_rng("headgrad", seed)
        d_t = 6
        t = 5
        hidden = 3 if task is Task.ERI else None
        params = init_head(task, d_t, rng, hidden=hidden)
        x = Tensor(rng.normal(size=(t, d_t)), requires_grad=True)
        if task is Task.VA:
            y = rng.uniform(-0.8, 0.8, (t, 2))
            mask = np.array([True, True, False, True, True])
            f = lambda: mse_va(y, output_layer(x, params), mask)
        elif task is Task.EXPR:
            y = rng.integers(0, 8, t)
            f = lambda: ce_expr(y, output_layer(x, params))
        elif task is Task.AU:
            y = (rng.random((t, 12)) > 0.5).astype(int)
            w = AUWeights(np.ones(12))
            f = lambda: weighted_asym_loss(y, au_probabilities(output_layer(x, params)), w)
        else:
            y = rng.uniform(0.2, 0.8, (1, 7))
            from mmaffect.autodiff import reshape, sigmoid

            f = lambda: mse_eri(y, sigmoid(reshape(output_layer(x, params), (1, 7))))
        wrt = [x, params.weight, params.bias]
        if params.hidden_weight is not None:
            wrt += [params.hidden_weight, params.hidden_bias]
        return f, wrt

    @pytest.mark.parametrize("task", list(Task))
    def test_loss_grad(self, task):
        f, wrt = self.composed(task, seed=11)
        report = grad_check(f, wrt, h=1e-5, tol=1e-4)
        assert report.passed, (task, report.per_tensor)

    @pytest.mark.parametrize("task", list(Task))
    def test_loss_nonnegative_and_zero_iff_exact(self, task):
        rng = make_rng("headnn", 1)
        if task is Task.VA:
            y = rng.uniform(-1, 1, (4, 2))
            assert float(mse_va(y, Tensor(y), np.ones(4, bool)).data) == 0.0
            assert float(mse_va(y, Tensor(y + 0.1), np.ones(4, bool)).data) > 0.0
        elif task is Task.EXPR:
            y = np.array([0, 1, 2])
            good = np.full((3, 8), -40.0)
            good[np.arange(3), y] = 40.0
            assert float(ce_expr(y, Tensor(good)).data) < 1e-12
            assert float(ce_expr(y, Tensor(np.zeros((3, 8)))).data) > 0.0
        elif task is Task.AU:
            y = (rng.random((4, 12)) > 0.5).astype(int)
            eps = 1e-7
            p = np.where(y == 1, 1 - eps, eps)
            loss = float(weighted_asym_loss(y, Tensor(p), AUWeights(np.ones(12))).data)
            assert 0.0 <= loss <= 12 * eps * abs(math.log(eps))
            mid = float(weighted_asym_loss(y, Tensor(np.full((4, 12), 0.5)), AUWeights(np.ones(12))).data)
            assert mid > 0.0
        else:
            y = rng.uniform(0, 1, (2, 7))
            assert float(mse_eri(y, Tensor(y)).data) == 0.0
            assert float(mse_eri(y, Tensor(1 - y)).data) > 0.0
