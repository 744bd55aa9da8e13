import numpy as np
import numpy.testing as npt
import pytest

from cvnnfp import clayers as C
from cvnnfp import tensor as T
from cvnnfp.clayers import ComplexBNState, ComplexConvFilter, ComplexTensor
from cvnnfp.gradcheck import finite_diff_check
from cvnnfp.tensor import RealTensor

from oracles import block_matrix_cconv, loop_avgpool


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def random_instance(seed, N=1, cin=2, cout=3, H=1, W=12, kh=1, kw=4):
    rng = np.random.default_rng(seed)
    h = ComplexTensor(RealTensor(rng.standard_normal((N, cin, H, W))),
                      RealTensor(rng.standard_normal((N, cin, H, W))))
    w = ComplexConvFilter(RealTensor(rng.standard_normal((cout, cin, kh, kw))),
                          RealTensor(rng.standard_normal((cout, cin, kh, kw))))
    return h, w


class TestComplexTensor:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ComplexTensor(RealTensor(rand((2, 3), 0)), RealTensor(rand((3, 2), 1)))

    def test_filter_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ComplexConvFilter(RealTensor(rand((2, 1, 1, 3), 0)),
                              RealTensor(rand((2, 1, 1, 4), 1)))


class TestCConv2d:
    def test_multiply_by_i(self):
        # 1x1 filter W = 0 + 1i on input h = 1 + 2i gives -2 + 1i
        h = ComplexTensor(RealTensor(np.ones((1, 1, 1))),
                          RealTensor(np.full((1, 1, 1), 2.0)))
        w = ComplexConvFilter(RealTensor(np.zeros((1, 1, 1, 1))),
                              RealTensor(np.ones((1, 1, 1, 1))))
        out = C.cconv2d(h, w)
        npt.assert_array_equal(out.re.data, [[[-2.0]]])
        npt.assert_array_equal(out.im.data, [[[1.0]]])

    def test_arch_layer1_shape(self):
        h = ComplexTensor(RealTensor(rand((2, 1, 1, 100), 0)),
                          RealTensor(rand((2, 1, 1, 100), 1)))
        w = ComplexConvFilter(RealTensor(rand((64, 1, 1, 25), 2)),
                              RealTensor(rand((64, 1, 1, 25), 3)))
        out = C.cconv2d(h, w, (1, 3))
        assert out.re.shape == out.im.shape == (2, 64, 1, 26)

    def test_block_matrix_oracle_100_instances(self):
        for seed in range(100):
            h, w = random_instance(seed)
            out = C.cconv2d(h, w, (1, 2))
            ref_re, ref_im = block_matrix_cconv(h.re.data, h.im.data,
                                                w.A.data, w.B.data, 1, 2)
            assert np.abs(out.re.data - ref_re).max() <= 1e-10
            assert np.abs(out.im.data - ref_im).max() <= 1e-10

    def test_complex_homogeneity(self):
        # multiplying the input by i must rotate the output by i; this fails
        # if either cross term is dropped
        for seed in range(100):
            h, w = random_instance(seed + 500)
            out = C.cconv2d(h, w)
            ih = ComplexTensor(RealTensor(-h.im.data), RealTensor(h.re.data.copy()))
            out_i = C.cconv2d(ih, w)
            assert np.abs(out_i.re.data + out.im.data).max() <= 1e-10
            assert np.abs(out_i.im.data - out.re.data).max() <= 1e-10

    def test_complex_linearity(self):
        rng = np.random.default_rng(42)
        h1, w = random_instance(7)
        h2, _ = random_instance(8)
        a = complex(*rng.standard_normal(2))
        b = complex(*rng.standard_normal(2))

        def cmul(scalar, h):
            re = scalar.real * h.re.data - scalar.imag * h.im.data
            im = scalar.imag * h.re.data + scalar.real * h.im.data
            return ComplexTensor(RealTensor(re), RealTensor(im))

        lhs_h = ComplexTensor(
            RealTensor(cmul(a, h1).re.data + cmul(b, h2).re.data),
            RealTensor(cmul(a, h1).im.data + cmul(b, h2).im.data))
        lhs = C.cconv2d(lhs_h, w)
        o1, o2 = C.cconv2d(h1, w), C.cconv2d(h2, w)
        rhs_re = (a.real * o1.re.data - a.imag * o1.im.data
                  + b.real * o2.re.data - b.imag * o2.im.data)
        rhs_im = (a.imag * o1.re.data + a.real * o1.im.data
                  + b.imag * o2.re.data + b.real * o2.im.data)
        assert np.abs(lhs.re.data - rhs_re).max() <= 1e-10
        assert np.abs(lhs.im.data - rhs_im).max() <= 1e-10

    def test_gradcheck(self):
        h, w = random_instance(11, W=8, kw=3)
        p1 = RealTensor(rand((1, 3, 1, 6), 90))
        p2 = RealTensor(rand((1, 3, 1, 6), 91))

        def f(re, im, A, B):
            out = C.cconv2d(ComplexTensor(re, im), w)
            return T.tensor_sum(out.re * p1) + T.tensor_sum(out.im * p2)

        err = finite_diff_check(f, [h.re, h.im, w.A, w.B])
        assert err < 1e-5


class TestCRelu:
    def test_per_component(self):
        h = ComplexTensor(RealTensor(np.array([-1.0])), RealTensor(np.array([2.0])))
        out = C.crelu(h)
        npt.assert_array_equal(out.re.data, [0.0])
        npt.assert_array_equal(out.im.data, [2.0])

    def test_identity_on_positive(self):
        h = ComplexTensor(RealTensor(np.abs(rand((3, 4), 12)) + 0.1),
                          RealTensor(np.abs(rand((3, 4), 13)) + 0.1))
        out = C.crelu(h)
        npt.assert_array_equal(out.re.data, h.re.data)
        npt.assert_array_equal(out.im.data, h.im.data)

    def test_gradcheck(self):
        re = rand((3, 4), 14)
        im = rand((3, 4), 15)
        for a in (re, im):
            a[np.abs(a) < 1e-3] = 0.3
        h = ComplexTensor(RealTensor(re), RealTensor(im))
        err = finite_diff_check(
            lambda r, i: T.tensor_sum(C.crelu(ComplexTensor(r, i)).re ** 2.0)
            + T.tensor_sum(C.crelu(ComplexTensor(r, i)).im ** 2.0),
            [h.re, h.im])
        assert err < 1e-5


class TestCBatchNorm:
    def test_constant_input_gives_beta(self):
        st = ComplexBNState(2)
        st.beta_r.data[:] = [0.5, -1.0]
        st.beta_i.data[:] = [2.0, 0.25]
        h = ComplexTensor(RealTensor(np.full((4, 2, 2, 3), 7.0)),
                          RealTensor(np.full((4, 2, 2, 3), -3.0)))
        out = C.cbatchnorm(h, st, "train")
        for ch in range(2):
            npt.assert_allclose(out.re.data[:, ch], st.beta_r.data[ch], atol=1e-6)
            npt.assert_allclose(out.im.data[:, ch], st.beta_i.data[ch], atol=1e-6)

    def test_unit_variance_split_between_components(self):
        # whitening + 1/sqrt(2) diagonal scale: each component ends up with
        # variance ~1/2 so total complex variance stays ~1
        rng = np.random.default_rng(16)
        h = ComplexTensor(RealTensor(rng.standard_normal((100, 1, 10, 20))),
                          RealTensor(rng.standard_normal((100, 1, 10, 20))))
        st = ComplexBNState(1)
        out = C.cbatchnorm(h, st, "train")
        assert abs(out.re.data.var() - 0.5) < 0.05
        assert abs(out.im.data.var() - 0.5) < 0.05

    def test_whitened_covariance_is_identity(self):
        rng = np.random.default_rng(17)
        base = rng.standard_normal((200, 2, 5, 10))
        mixed = 0.8 * base + 0.6 * rng.standard_normal((200, 2, 5, 10))
        h = ComplexTensor(RealTensor(base), RealTensor(mixed))
        st = ComplexBNState(2)
        # identity gamma isolates the whitening transform
        st.gamma_rr.data[:] = 1.0
        st.gamma_ii.data[:] = 1.0
        out = C.cbatchnorm(h, st, "train")
        for ch in range(2):
            r = out.re.data[:, ch].ravel()
            i = out.im.data[:, ch].ravel()
            npt.assert_allclose(r.var(), 1.0, atol=1e-3)
            npt.assert_allclose(i.var(), 1.0, atol=1e-3)
            assert abs(np.mean(r * i)) < 1e-4

    def test_small_batch_rejected(self):
        st = ComplexBNState(1)
        h = ComplexTensor(RealTensor(rand((1, 1, 2, 2), 18)),
                          RealTensor(rand((1, 1, 2, 2), 19)))
        with pytest.raises(ValueError):
            C.cbatchnorm(h, st, "train")

    def test_gradcheck(self):
        st = ComplexBNState(2)
        st.gamma_ri.data[:] = [0.1, -0.2]
        h = ComplexTensor(RealTensor(rand((3, 2, 2, 4), 20)),
                          RealTensor(rand((3, 2, 2, 4), 21)))
        p1 = RealTensor(rand((3, 2, 2, 4), 22))
        p2 = RealTensor(rand((3, 2, 2, 4), 23))

        def f(re, im, grr, gii, gri, br, bi):
            out = C.cbatchnorm(ComplexTensor(re, im), st, "train")
            return T.tensor_sum(out.re * p1) + T.tensor_sum(out.im * p2)

        err = finite_diff_check(f, [h.re, h.im, st.gamma_rr, st.gamma_ii,
                                    st.gamma_ri, st.beta_r, st.beta_i])
        assert err < 1e-5

    def test_naive_variant_normalizes_components(self):
        rng = np.random.default_rng(24)
        h = ComplexTensor(RealTensor(rng.standard_normal((50, 1, 4, 8)) * 3 + 1),
                          RealTensor(rng.standard_normal((50, 1, 4, 8)) * 0.2))
        st = ComplexBNState(1, whiten=False)
        st.gamma_rr.data[:] = 1.0
        st.gamma_ii.data[:] = 1.0
        out = C.cbatchnorm(h, st, "train")
        npt.assert_allclose(out.re.data.var(), 1.0, atol=1e-3)
        npt.assert_allclose(out.im.data.var(), 1.0, atol=1e-3)


class TestCAvgPool:
    def test_arch_pool(self):
        h = ComplexTensor(RealTensor(rand((2, 20, 1, 3), 25)),
                          RealTensor(rand((2, 20, 1, 3), 26)))
        out = C.cavgpool(h, (1, 3), (1, 1))
        assert out.re.shape == (2, 20, 1, 1)

    def test_constant_preserved(self):
        h = ComplexTensor(RealTensor(np.full((1, 2, 2, 3), 1.5)),
                          RealTensor(np.full((1, 2, 2, 3), -0.5)))
        out = C.cavgpool(h, (2, 3))
        npt.assert_allclose(out.re.data, 1.5)
        npt.assert_allclose(out.im.data, -0.5)

    def test_componentwise_oracle(self):
        re, im = rand((2, 3, 4, 6), 27), rand((2, 3, 4, 6), 28)
        out = C.cavgpool(ComplexTensor(RealTensor(re), RealTensor(im)), (2, 2), (1, 2))
        # exactly the independent per-component pooling...
        npt.assert_array_equal(out.re.data, T.avgpool2d(RealTensor(re), (2, 2), (1, 2)).data)
        npt.assert_array_equal(out.im.data, T.avgpool2d(RealTensor(im), (2, 2), (1, 2)).data)
        # ...and numerically the brute-force mean
        npt.assert_allclose(out.re.data, loop_avgpool(re, 2, 2, 1, 2), atol=1e-12)
        npt.assert_allclose(out.im.data, loop_avgpool(im, 2, 2, 1, 2), atol=1e-12)


class TestMagnitude:
    def test_three_four_five(self):
        h = ComplexTensor(RealTensor(np.array([3.0])), RealTensor(np.array([4.0])))
        npt.assert_allclose(C.magnitude(h).data, 5.0, atol=1e-9)

    def test_zero_has_finite_gradient(self):
        h = ComplexTensor(RealTensor(np.zeros(3)), RealTensor(np.zeros(3)))
        out = T.tensor_sum(C.magnitude(h))
        assert out.item() < 1e-5
        out.backward()
        assert np.all(np.isfinite(h.re.grad))
        assert np.all(np.isfinite(h.im.grad))

    def test_nonnegative_and_finite(self):
        h = ComplexTensor(RealTensor(rand((10, 10), 29) * 100),
                          RealTensor(rand((10, 10), 30) * 100))
        out = C.magnitude(h)
        assert np.all(out.data >= 0.0)
        assert np.all(np.isfinite(out.data))

    def test_gradcheck_away_from_zero(self):
        re = rand((4, 5), 31)
        im = rand((4, 5), 32)
        h = ComplexTensor(RealTensor(re), RealTensor(im))
        p = RealTensor(rand((4, 5), 33))
        err = finite_diff_check(
            lambda r, i: T.tensor_sum(C.magnitude(ComplexTensor(r, i)) * p),
            [h.re, h.im])
        assert err < 1e-5
