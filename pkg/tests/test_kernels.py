import math

import numpy as np
import pytest

from sparsekern import kernels as K


def brute_force_gaussian(sigma, size):
    """Independent oracle: direct summation of the sampled Gaussian."""
    c = size // 2
    out = np.zeros((size, size))
    for j in range(size):
        for i in range(size):
            out[j, i] = math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2.0 * sigma**2))
    return out / out.sum()


class TestGaussian:
    def test_auto_size_sigma5(self):
        k = K.gaussian_kernel(5)
        assert k.size == 31
        assert abs(k.weights.sum() - 1.0) < 1e-9
        c = k.radius
        assert k.weights[c, c] == k.weights.max()

    def test_center_weight_matches_direct_summation(self):
        # oracle value computed first: 0.159241... for sigma=1 on a 7x7 grid
        oracle = brute_force_gaussian(1.0, 7)
        k = K.gaussian_kernel(1.0, 7)
        assert abs(oracle[3, 3] - 0.1592411256907) < 1e-12
        np.testing.assert_allclose(k.weights, oracle, atol=1e-12)

    def test_four_fold_symmetry_exact(self):
        k = K.gaussian_kernel(2.5).weights
        assert np.array_equal(k, k[::-1, :])
        assert np.array_equal(k, k[:, ::-1])
        assert np.array_equal(k, k.T)

    def test_bad_params(self):
        with pytest.raises(K.KernelError):
            K.gaussian_kernel(-1.0)
        with pytest.raises(K.KernelError):
            K.gaussian_kernel(0.0)
        with pytest.raises(K.KernelError):
            K.gaussian_kernel(2.0, 14)  # even size
        with pytest.raises(K.KernelError):
            K.gaussian_kernel(5.0, 9)  # too small for 6*sigma


class TestShapes:
    def test_subpixel_disk_all_mass_at_center(self):
        k = K.disk_kernel(0.5, 3)
        assert k.weights[1, 1] == 1.0
        assert k.weights.sum() == 1.0

    @pytest.mark.parametrize(
        "make",
        [
            lambda: K.disk_kernel(6.0),
            lambda: K.ring_kernel(4.0, 7.0),
            lambda: K.polygon_kernel(6, 7.0),
            lambda: K.star_kernel(4, 8.0),
            lambda: K.heart_kernel(8.0),
        ],
    )
    def test_normalized_nonneg_zero_border(self, make):
        k = make()
        w = k.weights
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w >= 0)
        assert np.all(w[0] == 0) and np.all(w[-1] == 0)
        assert np.all(w[:, 0] == 0) and np.all(w[:, -1] == 0)

    def test_ring_has_hole(self):
        k = K.ring_kernel(4.0, 7.0)
        c = k.radius
        assert k.weights[c, c] == 0.0
        assert k.weights[c, c + 5] > 0.0

    def test_shape_too_big_for_grid(self):
        with pytest.raises(K.KernelError):
            K.disk_kernel(8.0, 15)

    def test_bad_shape_params(self):
        with pytest.raises(K.KernelError):
            K.disk_kernel(-2.0)
        with pytest.raises(K.KernelError):
            K.ring_kernel(5.0, 3.0)
        with pytest.raises(K.KernelError):
            K.polygon_kernel(2, 5.0)

    def test_delta(self):
        k = K.delta_kernel()
        assert k.size == 1 and k.weights[0, 0] == 1.0


class TestSpecParse:
    @pytest.mark.parametrize(
        "text,shape,size",
        [
            ("gaussian:5", "gaussian", 31),
            ("gaussian:2:21", "gaussian", 21),
            ("disk:6", "disk", 15),
            ("ring:4:7", "ring", 17),
            ("polygon:6:7", "polygon", 17),
            ("star:4:8:21:45", "star", 21),
            ("heart:8", "heart", 19),
            ("delta", "delta", 1),
        ],
    )
    def test_roundtrip(self, text, shape, size):
        spec = K.KernelSpec.parse(text)
        assert spec.shape == shape
        k = K.generate_kernel(spec)
        assert k.size == size

    def test_parse_errors(self):
        with pytest.raises(K.KernelError):
            K.KernelSpec.parse("blob:3")
        with pytest.raises(K.KernelError):
            K.KernelSpec.parse("gaussian")
        with pytest.raises(K.KernelError):
            K.KernelSpec.parse("ring:4")


class TestDenseKernelType:
    def test_invariants(self):
        with pytest.raises(K.KernelError):
            K.DenseKernel(np.ones((4, 4)))
        with pytest.raises(K.KernelError):
            K.DenseKernel(np.ones((3, 5)))
        with pytest.raises(K.KernelError):
            K.DenseKernel(np.array([[np.nan]]))

    def test_embedded_keeps_center(self):
        k = K.delta_kernel(3).embedded(7)
        assert k.size == 7 and k.weights[3, 3] == 1.0

    def test_support_bbox(self):
        k = K.disk_kernel(6.0)
        xmin, xmax, ymin, ymax = k.support_bbox()
        assert xmin == -6 and xmax == 6 and ymin == -6 and ymax == 6


class TestPgmIO:
    def test_roundtrip_quantization_bound(self, tmp_path):
        k = K.gaussian_kernel(5)
        path = tmp_path / "g5.pgm"
        K.save_kernel_image(k, path)
        back = K.load_kernel_image(path)
        peak = k.weights.max()
        assert np.abs(back.weights - k.weights).max() <= peak / 65535.0
        assert abs(back.weights.sum() - 1.0) < 1e-12

    def test_all_zero_image_rejected(self, tmp_path):
        path = tmp_path / "zero.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n3 3\n255\n" + bytes(9))
        with pytest.raises(K.KernelError, match="empty support"):
            K.load_kernel_image(path)

    def test_non_square_rejected(self, tmp_path):
        path = tmp_path / "rect.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n5 4\n255\n" + bytes(20))
        with pytest.raises(K.KernelError, match="square"):
            K.load_kernel_image(path)

    def test_even_dimension_rejected(self, tmp_path):
        path = tmp_path / "even.pgm"
        with open(path, "wb") as fh:
            fh.write(b"P5\n4 4\n255\n" + bytes([255] * 16))
        with pytest.raises(K.KernelError, match="odd"):
            K.load_kernel_image(path)

    def test_ascii_p2_kernel(self, tmp_path):
        path = tmp_path / "k.pgm"
        with open(path, "w") as fh:
            fh.write("P2\n# a comment\n3 3\n255\n0 0 0 0 255 0 0 0 0\n")
        k = K.load_kernel_image(path)
        assert k.weights[1, 1] == 1.0

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\nnot numbers\n")
        with pytest.raises(K.KernelError):
            K.load_kernel_image(path)

    def test_image_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(6, 9))
        path = tmp_path / "img.pgm"
        K.write_image(img, path)
        back = K.read_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 65535.0 + 1e-12

    def test_ppm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(4, 5, 3))
        path = tmp_path / "img.ppm"
        K.write_image(img, path)
        back = K.read_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 65535.0 + 1e-12
