import numpy as np
import pytest

from decaylab import kernels
from decaylab._rng import Rng

BACKENDS = kernels.available_backends()
pairwise = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")


def brute_ncc(image, templ):
    th, tw = templ.shape
    oh, ow = image.shape[0] - th + 1, image.shape[1] - tw + 1
    tz = templ - templ.mean()
    tn = np.sqrt((tz * tz).sum())
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            win = image[r:r + th, c:c + tw]
            wz = win - win.mean()
            wn = np.sqrt((wz * wz).sum())
            if wn * tn > 1e-9:
                out[r, c] = (wz * tz).sum() / (wn * tn)
    return out


@pytest.mark.parametrize("backend", BACKENDS)
class TestNccResponse:
    def test_matches_brute_force(self, backend):
        rng = Rng(11)
        image = rng.uniform_array(18 * 15).reshape(18, 15)
        templ = rng.uniform_array(5 * 4).reshape(5, 4)
        got = kernels.ncc_response(image, templ, backend=backend)
        assert np.abs(got - brute_ncc(image, templ)).max() < 1e-10

    def test_bounded(self, backend):
        rng = Rng(12)
        image = rng.uniform_array(30 * 30).reshape(30, 30)
        templ = rng.uniform_array(64).reshape(8, 8)
        got = kernels.ncc_response(image, templ, backend=backend)
        assert got.min() >= -1.0 and got.max() <= 1.0

    def test_exact_copy_scores_one(self, backend):
        rng = Rng(13)
        image = rng.uniform_array(20 * 20).reshape(20, 20)
        templ = image[4:10, 7:12].copy()
        got = kernels.ncc_response(image, templ, backend=backend)
        assert got[4, 7] == pytest.approx(1.0, abs=1e-9)

    def test_constant_windows_score_zero(self, backend):
        image = np.zeros((10, 10))
        image[6:, 6:] = 1.0
        templ = Rng(14).uniform_array(9).reshape(3, 3)
        got = kernels.ncc_response(image, templ, backend=backend)
        assert got[0, 0] == 0.0

    def test_constant_template_all_zero(self, backend):
        image = Rng(15).uniform_array(64).reshape(8, 8)
        got = kernels.ncc_response(image, np.full((3, 3), 0.7), backend=backend)
        assert np.all(got == 0.0)

    def test_template_larger_than_image_rejected(self, backend):
        with pytest.raises(ValueError):
            kernels.ncc_response(np.zeros((4, 4)), np.zeros((5, 5)), backend=backend)


@pytest.mark.parametrize("backend", BACKENDS)
class TestBilinear:
    def test_identity(self, backend):
        img = Rng(20).uniform_array(6 * 7).reshape(6, 7)
        out = kernels.bilinear_sample_box(img, 0, 0, 7, 6, 7, 6, backend=backend)
        assert np.array_equal(out, img)

    def test_outside_zero(self, backend):
        img = np.ones((5, 5))
        out = kernels.bilinear_sample_box(img, 10, 10, 4, 4, 4, 4, backend=backend)
        assert np.all(out == 0.0)

    def test_rejects_degenerate_box(self, backend):
        with pytest.raises(ValueError):
            kernels.bilinear_sample_box(np.ones((5, 5)), 0, 0, 0.0, 2, 3, 3,
                                        backend=backend)


@pairwise
class TestBackendAgreement:
    def test_ncc(self):
        rng = Rng(30)
        image = rng.uniform_array(60 * 47).reshape(60, 47)
        templ = rng.uniform_array(12 * 9).reshape(12, 9)
        a = kernels.ncc_response(image, templ, backend="py")
        b = kernels.ncc_response(image, templ, backend="c")
        assert np.abs(a - b).max() < 1e-8

    def test_bilinear(self):
        rng = Rng(31)
        image = rng.uniform_array(25 * 31).reshape(25, 31)
        a = kernels.bilinear_sample_box(image, -2.4, 3.1, 17.7, 21.2, 16, 13, backend="py")
        b = kernels.bilinear_sample_box(image, -2.4, 3.1, 17.7, 21.2, 16, 13, backend="c")
        assert np.abs(a - b).max() < 1e-12

    def test_conv3x3(self):
        rng = Rng(32)
        x = rng.uniform_array(3 * 11 * 13 * 4).reshape(3, 11, 13, 4)
        w = rng.uniform_array(6 * 4 * 9).reshape(6, 4, 3, 3) - 0.5
        b = rng.uniform_array(6) - 0.5
        a = kernels.conv3x3_forward(x, w, b, backend="py")
        c = kernels.conv3x3_forward(x, w, b, backend="c")
        assert np.abs(a - c).max() < 1e-12
        da = rng.uniform_array(3 * 9 * 11 * 6).reshape(3, 9, 11, 6) - 0.5
        ga = kernels.conv3x3_input_grad(da, w, 11, 13, backend="py")
        gc = kernels.conv3x3_input_grad(da, w, 11, 13, backend="c")
        assert np.abs(ga - gc).max() < 1e-12
        wa, ba = kernels.conv3x3_param_grad(da, x, backend="py")
        wc, bc = kernels.conv3x3_param_grad(da, x, backend="c")
        assert np.abs(wa - wc).max() < 1e-10
        assert np.abs(ba - bc).max() < 1e-10

    def test_maxpool(self):
        rng = Rng(33)
        x = rng.uniform_array(2 * 28 * 28 * 6).reshape(2, 28, 28, 6)
        pa, ia = kernels.maxpool5_forward(x, backend="py")
        pc, ic = kernels.maxpool5_forward(x, backend="c")
        assert np.array_equal(pa, pc)
        assert np.array_equal(ia, ic)
        dout = rng.uniform_array(pa.size).reshape(pa.shape)
        ga = kernels.maxpool5_backward(dout, ia, 28, 28, backend="py")
        gc = kernels.maxpool5_backward(dout, ic, 28, 28, backend="c")
        assert np.array_equal(ga, gc)


class TestConvSemantics:
    def test_direct_convolution_oracle(self):
        rng = Rng(40)
        x = rng.uniform_array(1 * 5 * 5 * 2).reshape(1, 5, 5, 2)
        w = rng.uniform_array(3 * 2 * 9).reshape(3, 2, 3, 3) - 0.5
        b = rng.uniform_array(3)
        got = kernels.conv3x3_forward(x, w, b)
        expected = np.zeros((1, 3, 3, 3))
        for oy in range(3):
            for ox in range(3):
                for o in range(3):
                    acc = b[o]
                    for c in range(2):
                        for ky in range(3):
                            for kx in range(3):
                                acc += x[0, oy + ky, ox + kx, c] * w[o, c, ky, kx]
                    expected[0, oy, ox, o] = acc
        assert np.abs(got - expected).max() < 1e-12

    def test_pool_first_max_wins(self):
        x = np.zeros((1, 5, 5, 1))
        x[0, 1, 2, 0] = 1.0
        x[0, 3, 4, 0] = 1.0  # later in row-major order
        _, idx = kernels.maxpool5_forward(x)
        assert idx[0, 0, 0, 0] == 1 * 5 + 2


def test_resize_roundtrip_identity():
    img = Rng(50).uniform_array(9 * 9).reshape(9, 9)
    assert np.array_equal(kernels.resize(img, 9, 9), img)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.ncc_response(np.ones((4, 4)), np.ones((2, 2)), backend="fortran")
