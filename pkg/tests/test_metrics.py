import math

import numpy as np
import pytest

from srde import Tensor, psnr, ssim
from srde.metrics import SSIM_SIGMA, SSIM_WINDOW


class TestPsnr:
    def test_identical_images_are_infinite(self):
        rng = np.random.default_rng(0)
        t = Tensor(rng.random((1, 1, 4, 4), dtype=np.float32))
        assert psnr(t, t) == math.inf

    def test_uniform_one_lsb_difference(self):
        a = Tensor(np.full((1, 1, 8, 8), 0.5, dtype=np.float32))
        b = Tensor(np.full((1, 1, 8, 8), 0.5 + 1 / 255.0, dtype=np.float32))
        assert abs(psnr(a, b) - 20 * math.log10(255)) < 0.01

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.random((1, 1, 5, 6), dtype=np.float32)
        b = rng.random((1, 1, 5, 6), dtype=np.float32)
        acc = 0.0
        for i in range(5):
            for j in range(6):
                d = float(a[0, 0, i, j]) - float(b[0, 0, i, j])
                acc += d * d
        want = 10 * math.log10(1.0 / (acc / 30))
        assert abs(psnr(Tensor(a), Tensor(b)) - want) < 1e-9

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        a = Tensor(rng.random((1, 1, 4, 4), dtype=np.float32))
        b = Tensor(rng.random((1, 1, 4, 4), dtype=np.float32))
        assert psnr(a, b) == psnr(b, a)

    def test_peak_argument(self):
        a = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        b = Tensor(np.full((1, 1, 4, 4), 1.0, dtype=np.float32))
        assert abs(psnr(a, b, peak=255.0) - psnr(a, b, peak=1.0) - 20 * math.log10(255)) < 1e-9

    def test_rejects_dim_mismatch(self):
        a = Tensor(np.zeros((1, 1, 4, 4), dtype=np.float32))
        b = Tensor(np.zeros((1, 1, 4, 5), dtype=np.float32))
        with pytest.raises(ValueError, match="mismatch"):
            psnr(a, b)


def ssim_oracle(pa, pb, peak=1.0):
    """Independent direct evaluation: explicit loops over window positions."""
    k = SSIM_WINDOW
    r = k // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    win = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * SSIM_SIGMA**2))
    win /= win.sum()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    h, w = pa.shape
    vals = []
    for y in range(h - k + 1):
        for x in range(w - k + 1):
            wa = pa[y : y + k, x : x + k]
            wb = pb[y : y + k, x : x + k]
            mu_a = float((win * wa).sum())
            mu_b = float((win * wb).sum())
            va = float((win * wa * wa).sum()) - mu_a * mu_a
            vb = float((win * wb * wb).sum()) - mu_b * mu_b
            cov = float((win * wa * wb).sum()) - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity_is_exactly_one(self):
        rng = np.random.default_rng(3)
        t = Tensor(rng.random((1, 1, 16, 16), dtype=np.float32))
        assert ssim(t, t) == 1.0

    def test_inverted_image_below_one(self):
        rng = np.random.default_rng(4)
        a = rng.random((1, 1, 16, 16), dtype=np.float32)
        assert ssim(Tensor(a), Tensor(1.0 - a)) < 1.0

    def test_matches_direct_oracle_16x16(self):
        rng = np.random.default_rng(5)
        a = rng.random((1, 1, 16, 16), dtype=np.float32)
        b = np.clip(a + 0.1 * rng.standard_normal((1, 1, 16, 16)), 0, 1).astype(np.float32)
        got = ssim(Tensor(a), Tensor(b))
        want = ssim_oracle(a[0, 0].astype(np.float64), b[0, 0].astype(np.float64))
        assert abs(got - want) < 1e-6

    def test_value_range(self):
        rng = np.random.default_rng(6)
        a = Tensor(rng.random((1, 1, 12, 12), dtype=np.float32))
        b = Tensor(rng.random((1, 1, 12, 12), dtype=np.float32))
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_rejects_small_images(self):
        t = Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32))
        with pytest.raises(ValueError, match="smaller than"):
            ssim(t, t)

    def test_rejects_dim_mismatch(self):
        a = Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32))
        b = Tensor(np.zeros((1, 1, 16, 12), dtype=np.float32))
        with pytest.raises(ValueError, match="mismatch"):
            ssim(a, b)
