"""Tests for the tensor primitives and the reverse-mode tape."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aadtk import tensor as tt
from gradcheck import finite_difference_gradient, rel_error


def t64(data, requires_grad=False):
    return tt.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        a = tt.Tensor(np.eye(2))
        b = tt.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(tt.matmul(a, b).data, [[1, 2], [3, 4]])

    def test_selector_row(self):
        a = tt.Tensor([[1.0, 0.0], [0.0, 0.0]])
        b = tt.Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_allclose(tt.matmul(a, b).data, [[5, 6], [0, 0]])

    def test_shape_mismatch_reports_both_shapes(self):
        a = tt.Tensor(np.zeros((2, 3)))
        b = tt.Tensor(np.zeros((2, 3)))
        with pytest.raises(tt.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            tt.matmul(a, b)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        a = t64(rng.standard_normal((3, 4)), requires_grad=True)
        b = t64(rng.standard_normal((4, 2)), requires_grad=True)

        def forward():
            return float(np.matmul(a.data, b.data).sum())

        fd_a = finite_difference_gradient(forward, a.data)
        fd_b = finite_difference_gradient(forward, b.data)
        tape = tt.Tape()
        loss = tt.tensor_sum(tt.matmul(a, b, tape), tape)
        tt.backward(loss, tape)
        assert rel_error(a.grad, fd_a) < 1e-3
        assert rel_error(b.grad, fd_b) < 1e-3

    def test_broadcast_batch_matches_per_item(self):
        rng = np.random.default_rng(8)
        a = tt.Tensor(rng.standard_normal((5, 3)))
        x = tt.Tensor(rng.standard_normal((4, 3, 6)))
        out = tt.matmul(a, x)
        assert out.shape == (4, 5, 6)
        for i in range(4):
            np.testing.assert_allclose(out.data[i], a.data @ x.data[i], rtol=1e-6)


def conv_direct(x, kernels, bias):
    # independent sliding-window oracle, zero padding, cross-correlation
    cout, cin, k = kernels.shape
    t = x.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    out = np.zeros((cout, t))
    for o in range(cout):
        for ti in range(t):
            acc = 0.0
            for c in range(cin):
                for j in range(k):
                    acc += kernels[o, c, j] * xp[c, ti + j]
            out[o, ti] = acc + bias[o]
    return out


class TestConv1d:
    def test_identity_kernel(self):
        x = tt.Tensor([[1.0, -2.0, 3.0, 0.5]])
        kernels = tt.Tensor([[[1.0]]])
        bias = tt.Tensor([0.0])
        np.testing.assert_allclose(tt.conv1d(x, kernels, bias).data, x.data)

    def test_small_window_against_oracle(self):
        x = np.array([[0.0, 1.0, 0.0]])
        kernels = np.array([[[1.0, 2.0, 3.0]]])
        bias = np.array([0.0])
        expected = conv_direct(x, kernels, bias)
        np.testing.assert_allclose(expected, [[3.0, 2.0, 1.0]])
        out = tt.conv1d(tt.Tensor(x), tt.Tensor(kernels), tt.Tensor(bias))
        np.testing.assert_allclose(out.data, expected)

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 11))
        kernels = rng.standard_normal((2, 3, 5))
        bias = rng.standard_normal(2)
        out = tt.conv1d(tt.Tensor(x), tt.Tensor(kernels), tt.Tensor(bias))
        np.testing.assert_allclose(out.data, conv_direct(x, kernels, bias), rtol=1e-5)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            tt.conv1d(tt.Tensor(np.zeros((1, 4))), tt.Tensor(np.zeros((1, 1, 2))), tt.Tensor([0.0]))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(tt.ShapeError):
            tt.conv1d(tt.Tensor(np.zeros((2, 4))), tt.Tensor(np.zeros((1, 3, 3))), tt.Tensor([0.0]))

    def test_all_three_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        x = t64(rng.standard_normal((2, 8)), requires_grad=True)
        kernels = t64(rng.standard_normal((3, 2, 3)), requires_grad=True)
        bias = t64(rng.standard_normal(3), requires_grad=True)
        weights = rng.standard_normal((3, 8))  # fixed projection to a scalar

        def forward():
            return float((conv_direct(x.data, kernels.data, bias.data) * weights).sum())

        fd = {
            "x": finite_difference_gradient(forward, x.data),
            "k": finite_difference_gradient(forward, kernels.data),
            "b": finite_difference_gradient(forward, bias.data),
        }
        tape = tt.Tape()
        out = tt.conv1d(x, kernels, bias, tape)
        loss = tt.tensor_sum(tt.mul(out, tt.Tensor(weights), tape), tape)
        tt.backward(loss, tape)
        assert rel_error(x.grad, fd["x"]) < 1e-3
        assert rel_error(kernels.grad, fd["k"]) < 1e-3
        assert rel_error(bias.grad, fd["b"]) < 1e-3

    def test_batched_agrees_with_single(self):
        rng = np.random.default_rng(5)
        xs = rng.standard_normal((4, 2, 9)).astype(np.float32)
        kernels = tt.Tensor(rng.standard_normal((3, 2, 3)).astype(np.float32))
        bias = tt.Tensor(rng.standard_normal(3).astype(np.float32))
        batched = tt.conv1d(tt.Tensor(xs), kernels, bias)
        for i in range(4):
            single = tt.conv1d(tt.Tensor(xs[i]), kernels, bias)
            np.testing.assert_allclose(batched.data[i], single.data, rtol=1e-5)

    @given(st.integers(1, 4), st.integers(1, 30), st.sampled_from([1, 3, 5, 7]))
    @settings(max_examples=40, deadline=None)
    def test_time_length_preserved(self, cin, t, k):
        x = tt.Tensor(np.ones((cin, t)))
        kernels = tt.Tensor(np.ones((2, cin, k)))
        bias = tt.Tensor(np.zeros(2))
        assert tt.conv1d(x, kernels, bias).shape == (2, t)


class TestGelu:
    def test_zero_maps_to_zero(self):
        assert tt.gelu(tt.Tensor([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        x = tt.Tensor([12.0, -12.0])
        out = tt.gelu(x).data
        assert abs(out[0] - 12.0) < 1e-6
        assert abs(out[1]) < 1e-6

    def test_value_and_gradient_at_one(self):
        expected = 0.5 * 1.0 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        x = t64([1.0], requires_grad=True)
        out = tt.gelu(x)
        assert abs(out.data[0] - expected) < 1e-12

        def forward():
            return 0.5 * x.data[0] * (1.0 + math.erf(x.data[0] / math.sqrt(2.0)))

        fd = finite_difference_gradient(forward, x.data)
        tape = tt.Tape()
        loss = tt.tensor_sum(tt.gelu(x, tape), tape)
        tt.backward(loss, tape)
        assert rel_error(x.grad, fd) < 1e-3


class TestChannelNorm:
    def test_constant_column_collapses_to_shift(self):
        x = tt.Tensor(np.full((3, 2), 5.0))
        out = tt.channel_norm(x, tt.Tensor(np.ones(3)), tt.Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-4)

    def test_already_normalized_column(self):
        x = tt.Tensor([[1.0], [-1.0]])
        out = tt.channel_norm(x, tt.Tensor(np.ones(2)), tt.Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[1.0], [-1.0]], atol=1e-4)

    def test_columns_standardized_before_scale_shift(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 5))
        out = tt.channel_norm(tt.Tensor(x), tt.Tensor(np.ones(4)), tt.Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-3)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        x = t64(rng.standard_normal((4, 5)), requires_grad=True)
        scale = t64(rng.standard_normal(4), requires_grad=True)
        shift = t64(rng.standard_normal(4), requires_grad=True)
        weights = rng.standard_normal((4, 5))

        def forward():
            mean = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            xhat = (x.data - mean) / np.sqrt(var + 1e-5)
            y = scale.data[:, None] * xhat + shift.data[:, None]
            return float((y * weights).sum())

        fd_x = finite_difference_gradient(forward, x.data)
        fd_scale = finite_difference_gradient(forward, scale.data)
        fd_shift = finite_difference_gradient(forward, shift.data)
        tape = tt.Tape()
        out = tt.channel_norm(x, scale, shift, tape)
        loss = tt.tensor_sum(tt.mul(out, tt.Tensor(weights), tape), tape)
        tt.backward(loss, tape)
        assert rel_error(x.grad, fd_x) < 1e-3
        assert rel_error(scale.grad, fd_scale) < 1e-3
        assert rel_error(shift.grad, fd_shift) < 1e-3


class TestSoftmax:
    def test_symmetry(self):
        for tau in (0.05, 1.0, 7.0):
            out = tt.softmax(tt.Tensor([3.0, 3.0]), temperature=tau)
            np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-7)

    def test_closed_form(self):
        out = tt.softmax(tt.Tensor([1.0, 0.0]), temperature=1.0)
        e = math.e
        np.testing.assert_allclose(out.data, [e / (1 + e), 1 / (1 + e)], rtol=1e-6)

    def test_sharp_temperature_without_overflow(self):
        out = tt.softmax(t64([1.0, 0.0]), temperature=0.05)
        assert np.all(np.isfinite(out.data))
        expected0 = 1.0 / (1.0 + math.exp(-20.0))
        expected1 = math.exp(-20.0) / (1.0 + math.exp(-20.0))
        np.testing.assert_allclose(out.data, [expected0, expected1], rtol=1e-9)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            tt.softmax(tt.Tensor([1.0]), temperature=0.0)
        with pytest.raises(ValueError):
            tt.softmax(tt.Tensor([1.0]), temperature=-2.0)

    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=8),
        st.floats(1e-3, 1e3),
    )
    @settings(max_examples=200, deadline=None)
    def test_distribution_and_argmax_invariants(self, values, tau):
        x = np.asarray(values, dtype=np.float64)
        p = tt.softmax(tt.Tensor(x), temperature=tau).data
        assert np.all(p >= 0.0) and np.all(p <= 1.0 + 1e-12)
        assert abs(p.sum() - 1.0) < 1e-6
        # the top score keeps the top probability (ties possible after rounding)
        assert p[int(np.argmax(x))] == p.max()

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        x = t64(rng.standard_normal(6), requires_grad=True)
        weights = rng.standard_normal(6)
        tau = 0.7

        def forward():
            z = x.data / tau
            z = z - z.max()
            p = np.exp(z) / np.exp(z).sum()
            return float((p * weights).sum())

        fd = finite_difference_gradient(forward, x.data)
        tape = tt.Tape()
        loss = tt.tensor_sum(tt.mul(tt.softmax(x, tau, tape=tape), tt.Tensor(weights), tape), tape)
        tt.backward(loss, tape)
        assert rel_error(x.grad, fd) < 1e-3


class TestBackward:
    def test_sum_gives_ones(self):
        w = tt.Tensor(np.arange(5.0), requires_grad=True)
        tape = tt.Tape()
        loss = tt.tensor_sum(w, tape)
        tt.backward(loss, tape)
        np.testing.assert_allclose(w.grad, np.ones(5))

    def test_quadratic(self):
        w = tt.Tensor([1.0, 2.0, 3.0], requires_grad=True)
        tape = tt.Tape()
        loss = tt.tensor_sum(tt.mul(w, w, tape), tape)
        tt.backward(loss, tape)
        np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_loss_rejected(self):
        w = tt.Tensor([1.0, 2.0], requires_grad=True)
        tape = tt.Tape()
        out = tt.mul(w, w, tape)
        with pytest.raises(tt.ShapeError):
            tt.backward(out, tape)

    def test_gradients_accumulate_until_zeroed(self):
        w = tt.Tensor([1.0, 2.0], requires_grad=True)
        for expected in (1.0, 2.0):
            tape = tt.Tape()
            loss = tt.tensor_sum(w, tape)
            tt.backward(loss, tape)
            np.testing.assert_allclose(w.grad, [expected, expected])
        w.zero_grad()
        assert w.grad is None

    def test_parameter_reused_on_tape_accumulates(self):
        w = tt.Tensor([2.0], requires_grad=True)
        tape = tt.Tape()
        # loss = w*w + w -> dloss/dw = 2w + 1 = 5
        loss = tt.tensor_sum(tt.add(tt.mul(w, w, tape), w, tape), tape)
        tt.backward(loss, tape)
        np.testing.assert_allclose(w.grad, [5.0])

    def test_seeded_run_is_bit_identical(self):
        def run():
            rng = np.random.default_rng(23)
            a = tt.Tensor(rng.standard_normal((6, 4)).astype(np.float32), requires_grad=True)
            b = tt.Tensor(rng.standard_normal((4, 3)).astype(np.float32), requires_grad=True)
            tape = tt.Tape()
            out = tt.gelu(tt.matmul(a, b, tape), tape)
            loss = tt.tensor_mean(tt.mul(out, out, tape), tape)
            tt.backward(loss, tape)
            return a.grad.copy(), b.grad.copy()

        ga1, gb1 = run()
        ga2, gb2 = run()
        assert np.array_equal(ga1, ga2)
        assert np.array_equal(gb1, gb2)


class TestCosineSimilarity:
    def test_identical_vectors(self):
        v = tt.Tensor([1.0, 2.0, -3.0])
        assert abs(tt.cosine_similarity(v, v).item() - 1.0) < 1e-6

    def test_orthogonal(self):
        u = tt.Tensor([1.0, 0.0])
        v = tt.Tensor([0.0, 1.0])
        assert abs(tt.cosine_similarity(u, v).item()) < 1e-12

    def test_opposite(self):
        v = tt.Tensor([0.5, -2.0, 1.0])
        w = tt.Tensor([-0.5, 2.0, -1.0])
        assert abs(tt.cosine_similarity(v, w).item() + 1.0) < 1e-6

    def test_degenerate_warns_and_returns_zero(self):
        u = tt.Tensor([0.0, 0.0])
        v = tt.Tensor([1.0, 1.0])
        with pytest.warns(UserWarning, match="degenerate"):
            out = tt.cosine_similarity(u, v)
        assert out.item() == 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        u = t64(rng.standard_normal(8), requires_grad=True)
        v = t64(rng.standard_normal(8), requires_grad=True)

        def forward():
            return float(
                (u.data @ v.data) / (np.linalg.norm(u.data) * np.linalg.norm(v.data))
            )

        fd_u = finite_difference_gradient(forward, u.data)
        fd_v = finite_difference_gradient(forward, v.data)
        tape = tt.Tape()
        tt.backward(tt.cosine_similarity(u, v, tape), tape)
        assert rel_error(u.grad, fd_u) < 1e-3
        assert rel_error(v.grad, fd_v) < 1e-3

    def test_rowwise_matches_loop(self):
        rng = np.random.default_rng(37)
        u = rng.standard_normal((5, 12))
        v = rng.standard_normal((5, 12))
        out = tt.cosine_similarity(tt.Tensor(u), tt.Tensor(v)).data
        for i in range(5):
            expected = (u[i] @ v[i]) / (np.linalg.norm(u[i]) * np.linalg.norm(v[i]))
            assert abs(out[i] - expected) < 1e-6


class TestCrossEntropy:
    def test_certain_prediction_costs_nothing(self):
        # scores so far apart that p(label) == 1 to machine precision
        loss = tt.cross_entropy(tt.Tensor([30.0, 0.0]), 1, temperature=1.0)
        assert loss.item() < 1e-12

    def test_even_split_costs_ln2(self):
        loss = tt.cross_entropy(tt.Tensor([0.4, 0.4]), 2, temperature=0.05)
        assert abs(loss.item() - math.log(2.0)) < 1e-6

    def test_score_gradient_closed_form(self):
        # d loss / d scores = (p - onehot(y)) / temperature
        tau = 0.05
        scores = t64([0.9, 0.1], requires_grad=True)
        tape = tt.Tape()
        loss = tt.cross_entropy(scores, 1, temperature=tau, tape=tape)
        tt.backward(loss, tape)
        z = scores.data / tau
        p = np.exp(z - z.max())
        p /= p.sum()
        expected = (p - np.array([1.0, 0.0])) / tau
        np.testing.assert_allclose(scores.grad, expected, rtol=1e-6)

    def test_stable_for_extreme_scores(self):
        loss = tt.cross_entropy(tt.Tensor([1.0, -1.0]), 2, temperature=1e-3)
        assert np.isfinite(loss.item())

    def test_batched_mean(self):
        scores = tt.Tensor([[2.0, 0.0], [0.0, 2.0]])
        loss = tt.cross_entropy(scores, [1, 2], temperature=1.0)
        single = -math.log(math.exp(2.0) / (math.exp(2.0) + 1.0))
        assert abs(loss.item() - single) < 1e-6

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError):
            tt.cross_entropy(tt.Tensor([0.0, 1.0]), 3, temperature=1.0)


class TestDebugChecks:
    def test_nan_detected_when_enabled(self):
        tt.set_debug_checks(True)
        try:
            bad = tt.Tensor([np.nan, 1.0])
            with pytest.raises(tt.NonFiniteError):
                tt.gelu(bad)
        finally:
            tt.set_debug_checks(False)

    def test_assert_finite_on_clean_tensor(self):
        tt.Tensor([1.0, 2.0]).assert_finite()


class TestStackReshape:
    def test_stack_scalars(self):
        a = tt.Tensor(np.asarray(1.5))
        b = tt.Tensor(np.asarray(-0.5))
        out = tt.stack([a, b])
        np.testing.assert_allclose(out.data, [1.5, -0.5])

    def test_stack_backward_routes_slices(self):
        a = tt.Tensor([1.0, 2.0], requires_grad=True)
        b = tt.Tensor([3.0, 4.0], requires_grad=True)
        tape = tt.Tape()
        out = tt.stack([a, b], tape)
        loss = tt.tensor_sum(tt.mul(out, tt.Tensor([[1.0, 2.0], [3.0, 4.0]]), tape), tape)
        tt.backward(loss, tape)
        np.testing.assert_allclose(a.grad, [1.0, 3.0])
        np.testing.assert_allclose(b.grad, [2.0, 4.0])

    def test_reshape_round_trip_gradient(self):
        x = tt.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        tape = tt.Tape()
        flat = tt.reshape(x, (6,), tape)
        tt.backward(tt.tensor_sum(flat, tape), tape)
        np.testing.assert_allclose(x.grad, np.ones((2, 3)))
