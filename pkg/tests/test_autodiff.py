"""Tensor engine unit tests: forward semantics, error contracts, and
spot gradient checks. The exhaustive 20-instance-per-op sweep lives in
test_acceptance.py."""

import numpy as np
import pytest

from actionvid import autodiff as ad
from actionvid.autodiff import (GraphError, NumericError, ShapeError, Tensor,
                                backward, bilinear_sample, clamp01, concat,
                                conv2d, embedding, finite_difference_check,
                                matmul, multiply, relu, tensor_mean,
                                tensor_sum)
from actionvid.optim import Adam, MissingGradError


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestForward:
    def test_matmul_shape_rule(self):
        out = matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        assert out.shape == (2, 4)
        assert np.allclose(out.data, 3.0)

    def test_matmul_broadcasts_leading_axes(self):
        a = Tensor(np.ones((5, 2, 3)))
        b = Tensor(np.ones((3, 4)))
        assert matmul(a, b).shape == (5, 2, 4)

    def test_matmul_mismatch_names_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_relu_definition(self):
        out = relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_conv_zero_image_stays_zero(self):
        rng = np.random.default_rng(0)
        img = Tensor(np.zeros((8, 8, 1)))
        kernel = Tensor(rng.normal(size=(3, 3, 1, 1)))
        out = conv2d(img, kernel)
        assert out.shape == (8, 8, 1)
        assert np.array_equal(out.data, np.zeros((8, 8, 1)))

    def test_conv_matches_direct_convolution(self):
        # brute-force zero-padded 3x3 convolution as the oracle
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 6, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        expected = np.zeros((5, 6, 3))
        for y in range(5):
            for xx in range(6):
                for dy in range(3):
                    for dx in range(3):
                        sy, sx = y + dy - 1, xx + dx - 1
                        if 0 <= sy < 5 and 0 <= sx < 6:
                            expected[y, xx] += x[sy, sx] @ w[dy, dx]
        out = conv2d(Tensor(x), Tensor(w))
        assert np.allclose(out.data, expected)

    def test_conv_channel_mismatch(self):
        with pytest.raises(ShapeError, match="conv2d"):
            conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))

    def test_nonfinite_output_is_an_error(self):
        big = Tensor(np.full((2, 2), 1e308))
        with pytest.raises(NumericError, match="add"):
            big + big

    def test_concat_last_axis(self):
        out = concat([Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 1)))])
        assert out.shape == (2, 4)

    def test_concat_rejects_mismatched_leading_dims(self):
        with pytest.raises(ShapeError, match="concat"):
            concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))])

    def test_embedding_lookup_and_range_check(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = embedding(table, np.array([2, 0, 2]))
        assert np.array_equal(out.data, table.data[[2, 0, 2]])
        with pytest.raises(ShapeError, match="embedding"):
            embedding(table, np.array([4]))

    def test_clamp01(self):
        out = clamp01(Tensor([-0.5, 0.25, 1.75]))
        assert np.allclose(out.data, [0.0, 0.25, 1.0])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(tensor_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_mean_square_hand_gradient(self):
        # loss = mean(x^2) with x = [1, 2]: d/dx_i = 2 x_i / n = x_i
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(tensor_mean(multiply(x, x)))
        assert np.allclose(x.grad, [1.0, 2.0])

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphError, match="scalar"):
            backward(relu(x))

    def test_backward_requires_an_op_result(self):
        with pytest.raises(GraphError, match="forward"):
            backward(Tensor(1.0, requires_grad=True))

    def test_grads_accumulate_until_zeroed(self):
        x = Tensor(np.ones(4), requires_grad=True)
        backward(tensor_sum(x))
        backward(tensor_sum(multiply(x, 2.0)))
        assert np.allclose(x.grad, 3.0)
        x.zero_grad()
        assert np.array_equal(x.grad, np.zeros(4))

    def test_linearity_of_backward(self):
        # backward of a sum of losses equals summing two backward passes
        rng = np.random.default_rng(3)
        data = rng.normal(size=(3, 3))
        x1 = Tensor(data.copy(), requires_grad=True)
        backward(tensor_sum(multiply(x1, x1)) + tensor_mean(relu(x1)))
        x2 = Tensor(data.copy(), requires_grad=True)
        backward(tensor_sum(multiply(x2, x2)))
        backward(tensor_mean(relu(x2)))
        assert np.allclose(x1.grad, x2.grad)

    def test_unused_tensor_keeps_zero_gradient(self):
        x = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(2), requires_grad=True)
        unused.zero_grad()
        backward(tensor_sum(x))
        assert np.array_equal(unused.grad, np.zeros(2))

    def test_each_node_visited_once_in_diamond(self):
        # y = x*x used twice: gradient must not double-count the shared node
        x = Tensor([3.0], requires_grad=True)
        y = multiply(x, x)
        loss = tensor_sum(y + y)
        backward(loss)
        assert np.allclose(x.grad, [12.0])  # d/dx 2x^2 = 4x

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            loss = tensor_mean(ad.absolute(ad.tanh(matmul(x, w))))
            backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        first = run()
        second = run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


class TestBilinear:
    def test_zero_flow_is_exact_identity(self):
        rng = np.random.default_rng(5)
        img = Tensor(rng.uniform(size=(6, 7, 3)))
        out = bilinear_sample(img, Tensor(np.zeros((6, 7, 2))))
        assert np.array_equal(out.data, img.data)

    def test_integer_flow_shifts_with_border_clamp(self):
        img = np.arange(12.0).reshape(3, 4, 1)
        flow = np.zeros((3, 4, 2))
        flow[..., 0] = 1.0  # read one column to the right
        out = bilinear_sample(Tensor(img), Tensor(flow))
        expected = img[:, [1, 2, 3, 3], :]  # clamped at the right border
        assert np.array_equal(out.data, expected)

    def test_half_pixel_flow_averages_columns(self):
        img = np.zeros((2, 2, 1))
        img[:, 0, 0] = 2.0  # column a
        img[:, 1, 0] = 6.0  # column b
        flow = np.zeros((2, 2, 2))
        flow[..., 0] = 0.5
        out = bilinear_sample(Tensor(img), Tensor(flow))
        assert np.allclose(out.data[:, 0, 0], 4.0)  # (a + b) / 2

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match="bilinear_sample"):
            bilinear_sample(Tensor(np.zeros((4, 4, 3))), Tensor(np.zeros((4, 5, 2))))

    def test_differentiable_wrt_image_and_flow(self):
        rng = np.random.default_rng(11)
        img = Tensor(rng.uniform(size=(5, 5, 2)), requires_grad=True)
        flow = Tensor(rng.uniform(-1.2, 1.2, size=(5, 5, 2)) + 0.3, requires_grad=True)

        def build():
            return tensor_mean(multiply(bilinear_sample(img, flow),
                                        bilinear_sample(img, flow)))

        assert finite_difference_check(build, [img, flow]) <= 1e-4


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"p": p})
        opt.zero_grad()
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_hand_evaluated_single_step(self):
        # p=1, g=1, lr=1e-4, betas=(0.5, 0.99), eps=1e-8:
        # m=0.5, v=0.01, m_hat=1, v_hat=1 -> p = 1 - 1e-4/(1+1e-8)
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad = np.array(1.0)
        opt = Adam({"p": p}, lr=1e-4, betas=(0.5, 0.99), eps=1e-8)
        opt.step()
        expected = 1.0 - 1e-4 * 1.0 / (1.0 + 1e-8)
        assert p.data == pytest.approx(expected, abs=1e-12)
        assert p.data == pytest.approx(0.9999, abs=1e-6)

    def test_missing_grad_is_an_error(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam({"p": p})
        with pytest.raises(MissingGradError, match="p"):
            opt.step()

    def test_scalar_quadratic_converges(self):
        # minimize (p - 3)^2 from p = 0; Adam's step size is bounded by
        # the rate, so covering a distance of 3 within 1e4 steps needs
        # lr >= 3e-4
        p = Tensor(np.array(0.0), requires_grad=True)
        opt = Adam({"p": p}, lr=1e-3, betas=(0.5, 0.99))
        for _ in range(10_000):
            opt.zero_grad()
            diff = p - Tensor(3.0)
            backward(multiply(diff, diff))
            opt.step()
        assert abs(float(p.data) - 3.0) < 1e-2


class TestGradSpotChecks:
    """Quick per-op finite-difference checks; the full sweep is in the
    acceptance suite."""

    def test_matmul(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        assert finite_difference_check(
            lambda: tensor_mean(multiply(matmul(a, b), matmul(a, b))), [a, b]) <= 1e-4

    def test_conv2d(self):
        rng = np.random.default_rng(1)
        x, w = rand(rng, 5, 5, 2), rand(rng, 3, 3, 2, 3)
        assert finite_difference_check(
            lambda: tensor_mean(ad.absolute(conv2d(x, w))), [x, w]) <= 1e-4

    def test_embedding(self):
        rng = np.random.default_rng(2)
        table = rand(rng, 5, 3)
        ids = np.array([0, 3, 3, 1])
        assert finite_difference_check(
            lambda: tensor_sum(multiply(embedding(table, ids),
                                        embedding(table, ids))), [table]) <= 1e-4

    def test_broadcast_add_mul(self):
        rng = np.random.default_rng(3)
        a, b = rand(rng, 4, 1, 3), rand(rng, 5, 3)
        assert finite_difference_check(
            lambda: tensor_mean(multiply(a + b, a + b)), [a, b]) <= 1e-4
