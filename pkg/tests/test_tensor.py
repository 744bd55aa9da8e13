import numpy as np
import numpy.testing as npt
import pytest

from cvnnfp import tensor as T
from cvnnfp.gradcheck import finite_diff_check
from cvnnfp.tensor import RealTensor

from oracles import logsumexp_cross_entropy, loop_avgpool, loop_conv2d


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestRealTensor:
    def test_shape_data_grad_consistent(self):
        t = RealTensor(rand((3, 4)))
        assert t.data.size == t.grad.size == 12
        assert t.grad.shape == t.shape

    def test_zero_grad(self):
        t = RealTensor(rand((5,)))
        t.grad += 3.0
        t.zero_grad()
        assert np.all(t.grad == 0.0)

    def test_backward_nonscalar_without_seed_raises(self):
        t = RealTensor(rand((3,)))
        out = t * 2.0
        with pytest.raises(ValueError):
            out.backward()

    def test_second_backward_is_error(self):
        t = RealTensor(rand((3,)))
        out = T.tensor_sum(t * t)
        out.backward()
        with pytest.raises(RuntimeError):
            out.backward()

    def test_replay_bit_identical_grads(self):
        def run():
            x = RealTensor(rand((2, 3, 6, 8), seed=9))
            w = RealTensor(rand((4, 3, 2, 3), seed=10))
            loss = T.tensor_sum(T.relu(T.conv2d(x, w, (2, 2))))
            loss.backward()
            return x.grad.copy(), w.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0])
        assert np.array_equal(g1[1], g2[1])


class TestConv2d:
    def test_hand_example(self):
        x = RealTensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4))
        w = RealTensor(np.array([1.0, 0.0, -1.0]).reshape(1, 1, 1, 3))
        out = T.conv2d(x, w, (1, 1))
        npt.assert_array_equal(out.data, [[[-2.0, -2.0]]])

    def test_arch_layer1_shape(self):
        x = RealTensor(rand((1, 2, 100)))
        w = RealTensor(rand((128, 1, 1, 25)))
        assert T.conv2d(x, w, (1, 3)).shape == (128, 2, 26)

    def test_matches_loop_oracle(self):
        for seed, stride in [(0, (1, 1)), (1, (1, 3)), (2, (2, 2))]:
            x = rand((2, 3, 7, 12), seed=seed)
            w = rand((4, 3, 3, 4), seed=seed + 100)
            out = T.conv2d(RealTensor(x), RealTensor(w), stride)
            assert np.abs(out.data - loop_conv2d(x, w, *stride)).max() <= 1e-12

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.conv2d(RealTensor(rand((3, 5, 5))), RealTensor(rand((2, 4, 2, 2))))

    def test_linearity(self):
        u, v = rand((1, 2, 4, 9), seed=3), rand((1, 2, 4, 9), seed=4)
        w = RealTensor(rand((3, 2, 2, 3), seed=5))
        a, b = 1.7, -0.3
        lhs = T.conv2d(RealTensor(a * u + b * v), w).data
        rhs = a * T.conv2d(RealTensor(u), w).data + b * T.conv2d(RealTensor(v), w).data
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_gradcheck(self):
        x = RealTensor(rand((2, 2, 4, 7), seed=6))
        w = RealTensor(rand((3, 2, 2, 3), seed=7))
        proj = RealTensor(rand((2, 3, 3, 3), seed=8))
        err = finite_diff_check(
            lambda a, b: T.tensor_sum(T.conv2d(a, b, (1, 2)) * proj), [x, w])
        assert err < 1e-5


class TestRelu:
    def test_examples(self):
        out = T.relu(RealTensor(np.array([-1.0, 0.0, 2.0])))
        npt.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_all_negative_zero_grad(self):
        x = RealTensor(-np.abs(rand((4, 4))) - 0.1)
        out = T.tensor_sum(T.relu(x))
        out.backward()
        assert np.all(out.data == 0.0) or out.data == 0.0
        assert np.all(x.grad == 0.0)

    def test_gradcheck_away_from_kinks(self):
        x = rand((5, 5), seed=11)
        x[np.abs(x) < 1e-3] = 0.5
        xt = RealTensor(x)
        err = finite_diff_check(lambda a: T.tensor_sum(T.relu(a) ** 2.0), [xt])
        assert err < 1e-5


class TestAvgPool:
    def test_arch_pool_shape(self):
        x = RealTensor(rand((20, 2, 3)))
        out = T.avgpool2d(x, (2, 3), (1, 1))
        assert out.shape == (20, 1, 1)
        npt.assert_allclose(out.data.reshape(20), x.data.mean(axis=(1, 2)))

    def test_constant_preserved(self):
        x = RealTensor(np.full((3, 4, 6), 2.5))
        out = T.avgpool2d(x, (2, 2), (1, 2))
        npt.assert_allclose(out.data, 2.5)

    def test_matches_loop_oracle(self):
        x = rand((2, 3, 5, 7), seed=12)
        out = T.avgpool2d(RealTensor(x), (2, 3), (1, 2))
        npt.assert_allclose(out.data, loop_avgpool(x, 2, 3, 1, 2), atol=1e-12)

    def test_gradient_distributes_uniformly(self):
        x = RealTensor(rand((1, 1, 3, 4), seed=13))
        proj = RealTensor(rand((1, 1, 2, 2), seed=14))
        err = finite_diff_check(
            lambda a: T.tensor_sum(T.avgpool2d(a, (2, 3), (1, 1)) * proj), [x])
        assert err < 1e-6

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            T.avgpool2d(RealTensor(rand((1, 2, 2))), (3, 3))


class TestBatchNorm:
    def test_train_normalizes_per_channel(self):
        x = RealTensor(rand((8, 3, 4, 5), seed=15) * 3.0 + 1.0)
        st = T.BatchNormState(3)
        out = T.batchnorm_real(x, st, "train")
        mean = out.data.mean(axis=(0, 2, 3))
        var = out.data.var(axis=(0, 2, 3))
        npt.assert_allclose(mean, 0.0, atol=1e-6)
        npt.assert_allclose(var, 1.0, atol=1e-4)

    def test_eval_identity_at_default_stats(self):
        x = rand((4, 2, 3, 3), seed=16)
        st = T.BatchNormState(2)
        out = T.batchnorm_real(RealTensor(x), st, "eval")
        npt.assert_allclose(out.data, x, rtol=1e-4, atol=1e-6)  # identity up to eps

    def test_small_batch_rejected(self):
        st = T.BatchNormState(2)
        with pytest.raises(ValueError):
            T.batchnorm_real(RealTensor(rand((1, 2, 3, 3))), st, "train")

    def test_gradcheck(self):
        x = RealTensor(rand((4, 2, 2, 3), seed=17))
        st = T.BatchNormState(2)
        st.gamma.data[:] = [1.3, 0.7]
        st.beta.data[:] = [0.2, -0.4]
        proj = RealTensor(rand((4, 2, 2, 3), seed=18))
        err = finite_diff_check(
            lambda a, g, b: T.tensor_sum(T.batchnorm_real(a, st, "train") * proj),
            [x, st.gamma, st.beta])
        assert err < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = RealTensor(np.zeros((6, 20)))
        loss = T.softmax_cross_entropy(logits, np.zeros(6, dtype=int))
        npt.assert_allclose(loss.item(), np.log(20), atol=1e-12)

    def test_confident_logit_drives_loss_to_zero(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 50.0
        loss = T.softmax_cross_entropy(RealTensor(logits), np.array([2]))
        assert loss.item() < 1e-12

    def test_matches_logsumexp_oracle(self):
        logits = rand((7, 9), seed=19)
        labels = np.random.default_rng(20).integers(0, 9, 7)
        loss = T.softmax_cross_entropy(RealTensor(logits), labels)
        assert abs(loss.item() - logsumexp_cross_entropy(logits, labels)) <= 1e-12

    def test_row_gradients_sum_to_zero(self):
        logits = RealTensor(rand((5, 4), seed=21))
        loss = T.softmax_cross_entropy(logits, np.array([0, 1, 2, 3, 0]))
        loss.backward()
        npt.assert_allclose(logits.grad.sum(axis=1), 0.0, atol=1e-12)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            T.softmax_cross_entropy(RealTensor(rand((2, 3))), np.array([0, 3]))


class TestFiniteDiffCheck:
    def test_linear_op_near_exact(self):
        x = RealTensor(rand((4,), seed=22))
        err = finite_diff_check(lambda a: T.tensor_sum(a * 3.0), [x])
        assert err <= 1e-10

    def test_conv_random_point(self):
        x = RealTensor(rand((1, 1, 3, 8), seed=23))
        w = RealTensor(rand((2, 1, 1, 3), seed=24))
        proj = RealTensor(rand((1, 2, 3, 6), seed=25))
        err = finite_diff_check(
            lambda a, b: T.tensor_sum(T.conv2d(a, b, (1, 1)) * proj), [x, w])
        assert err < 1e-5

    def test_relu_kink_excluded(self):
        x = np.array([0.0, 1.0, -2.0])
        xt = RealTensor(x)
        kinks = np.array([True, False, False])
        err = finite_diff_check(lambda a: T.tensor_sum(T.relu(a)), [xt],
                                exclude=[kinks])
        assert err < 1e-8


def test_every_primitive_gradcheck_at_random_points():
    # tensor-core invariant: < 1e-6 in double at 10 random points, kinks avoided
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = RealTensor(rng.standard_normal((2, 2, 3, 5)))
        w = RealTensor(rng.standard_normal((2, 2, 2, 2)))
        proj = RealTensor(rng.standard_normal((2, 2, 2, 4)))
        err = finite_diff_check(
            lambda a, b: T.tensor_sum(T.conv2d(a, b, (1, 1)) * proj), [x, w],
            h=1e-6)
        assert err < 1e-6
