import numpy as np
import pytest
from skimage.metrics import structural_similarity as sk_ssim

from dacelight.curves import CurveKind, apply_aac, map_raw_to_params
from dacelight.losses import (
    LossReport,
    LossWeights,
    curve_smoothness,
    loss_cs,
    loss_dn,
    loss_il,
    loss_rc,
    loss_wb,
    ssim,
    total_loss,
)
from dacelight.tensor import Tape, Tensor
from gradcheck import gradcheck


def uniform_image(r, g, b, h=4, w=4, dtype=np.float64):
    img = np.empty((3, h, w))
    img[0], img[1], img[2] = r, g, b
    return Tensor(img, dtype=dtype)


def reflectance_np(img):
    L = img.sum(axis=0)
    return img / (L + 1e-4)


class TestReflectanceConsistency:
    def test_identical_images(self):
        rng = np.random.default_rng(0)
        img = Tensor(rng.uniform(size=(3, 5, 5)), dtype=np.float64)
        assert loss_rc(img, img).item() == 0.0

    def test_uniform_brightening_near_zero(self):
        a = uniform_image(0.1, 0.1, 0.1)
        b = uniform_image(0.4, 0.4, 0.4)
        assert loss_rc(a, b).item() < 1e-4

    def test_color_swap_positive_matches_oracle(self):
        a = uniform_image(0.2, 0.1, 0.1)
        b = uniform_image(0.1, 0.2, 0.1)
        got = loss_rc(a, b).item()
        d = reflectance_np(a.data) - reflectance_np(b.data)
        want = sum((d[c] ** 2).mean() for c in range(3))
        assert got > 0
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0.1, 0.9, size=(3, 6, 6))  # L >= 0.1 everywhere
        t = Tensor(img, dtype=np.float64)
        for c in (0.5, 2.0):
            assert loss_rc(t, Tensor(img * c, dtype=np.float64)).item() < 1e-4


class TestWhiteBalance:
    def test_gray_is_zero(self):
        assert loss_wb(uniform_image(0.3, 0.3, 0.3)).item() == 0.0

    def test_pure_red(self):
        got = loss_wb(uniform_image(1, 0, 0)).item()
        np.testing.assert_allclose(got, 2.0 / 3.0, rtol=1e-10)

    def test_half_red_half_green(self):
        img = np.zeros((3, 2, 2))
        img[0, 0, :] = 1.0
        img[1, 1, :] = 1.0
        got = loss_wb(Tensor(img, dtype=np.float64)).item()
        np.testing.assert_allclose(got, 1.0 / 6.0, rtol=1e-10)


class TestIlluminance:
    def test_target_reached_is_zero(self):
        # gray original: R ~ (1/3,1/3,1/3) so E ~ 1
        orig = uniform_image(0.1, 0.1, 0.1)
        e = 1.0 - 3.0 * abs(0.1 / 0.3001 - 1.0 / 3.0)
        target_mean_channel = 0.8 * e  # with the default scale 3
        enhanced = uniform_image(*([target_mean_channel] * 3))
        assert loss_il(orig, enhanced).item() < 1e-12

    def test_literal_scale_example(self):
        # with scale 1 the loss is (y*E - 3g)^2, minimized at g = y*E/3
        orig = uniform_image(0.1, 0.1, 0.1)
        e = 1.0 - 3.0 * abs(0.1 / 0.3001 - 1.0 / 3.0)
        gs = np.linspace(0.05, 0.95, 181)
        losses = [loss_il(orig, uniform_image(g, g, g), illuminance_scale=1.0).item()
                  for g in gs]
        g_best = gs[int(np.argmin(losses))]
        assert abs(g_best - 0.8 * e / 3.0) < 0.01
        for g in (0.1, 0.5):
            want = (0.8 * e - 3.0 * g) ** 2
            got = loss_il(orig, uniform_image(g, g, g), illuminance_scale=1.0).item()
            np.testing.assert_allclose(got, want, rtol=1e-6)

    def test_all_black(self):
        blk = uniform_image(0, 0, 0)
        assert loss_il(blk, blk).item() == 0.0


class TestCurveSmoothness:
    def test_constant_maps_zero(self):
        maps = [Tensor(np.full((3, 5, 5), 0.4), dtype=np.float64)]
        assert curve_smoothness(maps).item() == 0.0
        assert loss_cs(maps, maps).item() == 0.0

    def test_ramp_matches_oracle(self):
        h, w = 5, 8
        ramp = np.tile(np.arange(w, dtype=np.float64) / w, (3, h, 1))
        got = curve_smoothness([Tensor(ramp, dtype=np.float64)]).item()
        dx = np.diff(ramp, axis=-1)
        want = (dx ** 2).sum() / (h * w)
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_checkerboard_is_maximal_binary(self):
        h = w = 8
        checker = np.indices((h, w)).sum(axis=0) % 2
        checker = np.broadcast_to(checker, (3, h, w)).astype(np.float64)
        cs_checker = curve_smoothness([Tensor(checker, dtype=np.float64)]).item()
        rng = np.random.default_rng(2)
        for _ in range(50):
            m = rng.integers(0, 2, size=(3, h, w)).astype(np.float64)
            assert curve_smoothness([Tensor(m, dtype=np.float64)]).item() <= cs_checker

    def test_sums_over_iterations(self):
        rng = np.random.default_rng(3)
        m = Tensor(rng.uniform(size=(3, 5, 5)), dtype=np.float64)
        one = curve_smoothness([m]).item()
        np.testing.assert_allclose(curve_smoothness([m, m, m]).item(), 3 * one,
                                   rtol=1e-12)


class TestSSIM:
    def test_identity(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.uniform(size=(3, 16, 16)), dtype=np.float64)
        assert ssim(a, a).item() == 1.0

    def test_constant_offset_monotone(self):
        vals = []
        for d in (0.0, 0.01, 0.05, 0.1, 0.2):
            a = uniform_image(0.5, 0.5, 0.5, h=16, w=16)
            b = uniform_image(0.5 + d, 0.5 + d, 0.5 + d, h=16, w=16)
            vals.append(ssim(a, b).item())
        assert vals[0] == 1.0
        assert all(vals[i] > vals[i + 1] for i in range(len(vals) - 1))

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(0.2, 0.8, size=(3, 24, 24))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        got = ssim(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).item()
        want = sk_ssim(a, b, channel_axis=0, data_range=1.0,
                       gaussian_weights=True, sigma=1.5,
                       use_sample_covariance=False)
        assert 0.0 < got < 1.0
        np.testing.assert_allclose(got, want, atol=1e-4)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = Tensor(rng.uniform(size=(3, 16, 16)), dtype=np.float64)
        b = Tensor(rng.uniform(size=(3, 16, 16)), dtype=np.float64)
        assert abs(ssim(a, b).item() - ssim(b, a).item()) < 1e-7

    def test_too_small_raises(self):
        a = Tensor(np.ones((3, 8, 8)))
        with pytest.raises(ValueError):
            ssim(a, a)


class TestDenoiseLoss:
    def test_identical_constant_images(self):
        a = uniform_image(0.5, 0.5, 0.5, h=16, w=16)
        np.testing.assert_allclose(loss_dn(a, a).item(), -10.0, rtol=1e-12)

    def test_identical_ramps(self):
        w = 16
        ramp = np.tile(np.arange(w, dtype=np.float64) / w, (3, w, 1))
        t = Tensor(ramp, dtype=np.float64)
        got = loss_dn(t, t).item()
        dx = np.zeros_like(ramp)
        dx[..., :-1] = np.diff(ramp, axis=-1)
        want = -10.0 + ((dx ** 2).mean() + 0.0) / 2.0
        np.testing.assert_allclose(got, want, rtol=1e-10)

    def test_ramp_vs_constant_matches_oracle(self):
        w = 16
        ramp = np.tile(np.arange(w, dtype=np.float64) / w, (3, w, 1))
        const = np.full_like(ramp, 0.5)
        i_e, i_d = Tensor(ramp, dtype=np.float64), Tensor(const, dtype=np.float64)
        got = loss_dn(i_e, i_d).item()
        s = ssim(i_e, i_d).item()
        dx = np.zeros_like(ramp)
        dx[..., :-1] = np.diff(ramp, axis=-1)
        grad_diff = (dx ** 2).mean() / 2.0  # constant image has zero gradient
        want = -10.0 * s + 40.0 * grad_diff + 0.0
        np.testing.assert_allclose(got, want, rtol=1e-10)


class TestTotalLoss:
    def test_all_zero_components(self):
        total, report = total_loss(0.0, 0.0, 0.0, 0.0, 0.0, dn=-10.0)
        assert total.item() == -10.0
        assert report.total == -10.0 and report.dn == -10.0

    def test_rc_weighting(self):
        total, report = total_loss(1e-4, 0.0, 0.0, 0.0, 0.0)
        np.testing.assert_allclose(total.item(), 2.0, rtol=1e-6)
        assert report.rc == pytest.approx(1e-4)

    def test_zero_weights_leave_dn(self):
        w = LossWeights(w_rc=0, w_wb=0, w_il=0, w_alpha=0, w_beta=0)
        total, _ = total_loss(1.0, 1.0, 1.0, 1.0, 1.0, dn=-3.5, weights=w)
        assert total.item() == -3.5

    def test_report_structure(self):
        _, report = total_loss(1.0, 2.0, 3.0, 4.0, 5.0, dn=6.0,
                               weights=LossWeights())
        w = LossWeights()
        want = (w.w_rc * 1 + w.w_wb * 2 + w.w_il * 3 + w.w_alpha * 4
                + w.w_beta * 5 + 6)
        assert report.total == pytest.approx(want)
        assert report.cs == pytest.approx(9.0)
        row = report.csv_row(7)
        assert row.startswith("7,") and len(row.split(",")) == 7

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(w_rc=-1.0)


class TestGroundTruthIsolation:
    def test_reference_image_rejected(self):
        img = Tensor(np.full((3, 4, 4), 0.5), dtype=np.float64)
        gt = Tensor(np.full((3, 4, 4), 0.5), dtype=np.float64, is_reference=True)
        for fn in (lambda: loss_rc(img, gt), lambda: loss_rc(gt, img),
                   lambda: loss_wb(gt), lambda: loss_il(gt, img)):
            with pytest.raises(ValueError, match="ground-truth"):
                fn()


class TestLossGradients:
    def test_each_loss_gradcheck(self):
        rng = np.random.default_rng(7)
        orig = Tensor(rng.uniform(0.05, 0.5, (3, 16, 16)), dtype=np.float64)
        enhanced = Tensor(rng.uniform(0.1, 0.9, (3, 16, 16)), requires_grad=True,
                          dtype=np.float64)
        other = Tensor(rng.uniform(0.1, 0.9, (3, 16, 16)), requires_grad=True,
                       dtype=np.float64)
        cases = {
            "rc": lambda: loss_rc(orig, enhanced),
            "wb": lambda: loss_wb(enhanced),
            "il": lambda: loss_il(orig, enhanced),
            "cs": lambda: curve_smoothness([enhanced]),
            "ssim": lambda: ssim(enhanced, other),
            "dn": lambda: loss_dn(enhanced, other),
        }
        for name, fn in cases.items():
            gradcheck(fn, [enhanced] if name in ("rc", "wb", "il", "cs")
                      else [enhanced, other], max_coords=8, rng=rng)

    def test_total_loss_through_raw_maps(self):
        """End-to-end gradient from the weighted total back to raw outputs."""
        rng = np.random.default_rng(8)
        orig = Tensor(rng.uniform(0.05, 0.5, (3, 16, 16)), dtype=np.float64)
        raw_a = Tensor(rng.standard_normal((3, 16, 16)) * 0.5, requires_grad=True,
                       dtype=np.float64)
        raw_b = Tensor(rng.standard_normal((3, 16, 16)) * 0.5, requires_grad=True,
                       dtype=np.float64)

        def fn():
            params = map_raw_to_params(raw_a, raw_b, CurveKind.LAEC)
            enhanced = apply_aac(orig, params)
            total, _ = total_loss(
                loss_rc(orig, enhanced), loss_wb(enhanced), loss_il(orig, enhanced),
                curve_smoothness([params.alpha]), curve_smoothness([params.beta]))
            return total

        gradcheck(fn, [raw_a, raw_b], max_coords=8, rng=rng, rtol=1e-4, atol=1e-4)
