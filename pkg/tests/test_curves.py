import math

import numpy as np
import pytest

from dacelight.curves import (
    ALPHA_RANGE,
    BETA_RANGE,
    CurveConstants,
    CurveKind,
    CurveParams,
    apply_aac,
    map_raw_to_params,
)
from dacelight.tensor import Tensor, mean, square
from gradcheck import gradcheck


def aac_scalar(i, alpha, beta, kind, k=15.0, delta=0.1):
    """Pointwise float oracle for the curve formulas."""
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    if kind is CurveKind.LAEC:
        c = sig(-k * (i - beta + delta)) * i * (beta - i)
    else:
        c = sig(k * (i - beta - delta)) * (1.0 - i) * (i - beta)
    return i + alpha / beta * c


def make_params(alpha, beta, kind, shape=(3, 2, 2), dtype=np.float64):
    return CurveParams(
        alpha=Tensor(np.full(shape, alpha), dtype=dtype),
        beta=Tensor(np.full(shape, beta), dtype=dtype),
        kind=kind,
    )


class TestRangeMapping:
    def test_laec_midpoint(self):
        p = map_raw_to_params(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((3, 2, 2))),
                              CurveKind.LAEC)
        np.testing.assert_allclose(p.alpha.data, 0.5)
        np.testing.assert_allclose(p.beta.data, 0.65)

    def test_laec_saturation(self):
        p = map_raw_to_params(Tensor(np.full((3, 1, 1), 40.0)),
                              Tensor(np.full((3, 1, 1), 40.0)), CurveKind.LAEC)
        np.testing.assert_allclose(p.alpha.data, 1.0, atol=1e-6)
        np.testing.assert_allclose(p.beta.data, 1.0, atol=1e-6)

    def test_hasc_midpoint(self):
        p = map_raw_to_params(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((3, 2, 2))),
                              CurveKind.HASC)
        np.testing.assert_allclose(p.alpha.data, -0.5)
        np.testing.assert_allclose(p.beta.data, 0.8, atol=1e-7)

    @pytest.mark.parametrize("kind", list(CurveKind))
    def test_boxes_always_respected(self, kind):
        rng = np.random.default_rng(1)
        raw = rng.standard_normal((2, 3, 4, 4)) * 10
        p = map_raw_to_params(Tensor(raw[0]), Tensor(raw[1]), kind)
        p.validate()


class TestApplyAAC:
    def test_laec_scalar_example(self):
        p = make_params(0.5, 0.8, CurveKind.LAEC)
        out = apply_aac(Tensor(np.full((3, 2, 2), 0.2), dtype=np.float64), p)
        np.testing.assert_allclose(out.data, 0.27497, atol=1e-4)

    def test_hasc_scalar_example(self):
        p = make_params(-1.0, 0.8, CurveKind.HASC)
        out = apply_aac(Tensor(np.full((3, 2, 2), 0.95), dtype=np.float64), p)
        np.testing.assert_allclose(out.data, 0.94363, atol=1e-4)

    @pytest.mark.parametrize("kind", list(CurveKind))
    def test_identity_at_alpha_zero(self, kind):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(3, 5, 5))
        beta = 0.8
        p = make_params(0.0, beta, kind, shape=(3, 5, 5), dtype=np.float32)
        out = apply_aac(Tensor(img), p)
        np.testing.assert_array_equal(out.data, img.astype(np.float32))

    @pytest.mark.parametrize("kind", list(CurveKind))
    def test_fixed_point_at_threshold(self, kind):
        beta = 0.75
        img = np.full((3, 4, 4), beta, dtype=np.float32)
        alpha = 1.0 if kind is CurveKind.LAEC else -1.0
        p = make_params(alpha, beta, kind, shape=(3, 4, 4), dtype=np.float32)
        out = apply_aac(Tensor(img), p)
        np.testing.assert_array_equal(out.data, img)

    def test_beta_zero_guarded(self):
        p = CurveParams(Tensor(np.zeros((3, 1, 1))), Tensor(np.zeros((3, 1, 1))),
                        CurveKind.LAEC)
        with pytest.raises(ValueError):
            apply_aac(Tensor(np.zeros((3, 1, 1))), p)

    @pytest.mark.parametrize("kind", list(CurveKind))
    def test_matches_scalar_oracle_on_grid(self, kind):
        intensities = np.linspace(0.0, 1.0, 101)
        alphas = np.linspace(*ALPHA_RANGE[kind], 11)
        betas = np.linspace(*BETA_RANGE[kind], 11)
        ii, aa, bb = np.meshgrid(intensities, alphas, betas, indexing="ij")
        shape = (3,) + ii.shape[:2]  # fold the beta axis into W, 3 channels
        img = np.broadcast_to(ii.reshape(1, 101, -1), (3, 101, 11 * 11))
        alpha = np.broadcast_to(aa.reshape(1, 101, -1), img.shape)
        beta = np.broadcast_to(bb.reshape(1, 101, -1), img.shape)
        p = CurveParams(Tensor(alpha.copy(), dtype=np.float64),
                        Tensor(beta.copy(), dtype=np.float64), kind)
        out = apply_aac(Tensor(img.copy(), dtype=np.float64), p).data

        oracle = np.empty_like(img)
        for idx in np.ndindex(101, 11 * 11):
            oracle[:, idx[0], idx[1]] = aac_scalar(
                img[0, idx[0], idx[1]], alpha[0, idx[0], idx[1]],
                beta[0, idx[0], idx[1]], kind)
        np.testing.assert_allclose(out, oracle, atol=1e-6)
        # single-application range stays near [0,1] on the legal boxes
        assert out.min() >= -0.05 and out.max() <= 1.05

    def test_laec_monotone_effect(self):
        intensities = np.linspace(0.0, 1.0, 101)
        for alpha in np.linspace(0.0, 1.0, 6):
            for beta in np.linspace(0.3, 1.0, 6):
                out = np.array([aac_scalar(i, alpha, beta, CurveKind.LAEC)
                                for i in intensities])
                below = intensities < beta
                assert np.all(out[below] >= intensities[below] - 1e-12)
                far_above = intensities > beta + 0.25
                np.testing.assert_allclose(out[far_above], intensities[far_above],
                                           atol=5e-3)

    def test_hasc_monotone_effect(self):
        intensities = np.linspace(0.0, 1.0, 101)
        for alpha in np.linspace(-1.0, 0.0, 6):
            for beta in np.linspace(0.7, 0.9, 6):
                out = np.array([aac_scalar(i, alpha, beta, CurveKind.HASC)
                                for i in intensities])
                above = intensities > beta
                assert np.all(out[above] <= intensities[above] + 1e-12)

    @pytest.mark.parametrize("kind", list(CurveKind))
    def test_gradcheck_all_inputs(self, kind):
        rng = np.random.default_rng(4)
        alo, ahi = ALPHA_RANGE[kind]
        blo, bhi = BETA_RANGE[kind]
        for _ in range(20):
            img = Tensor(rng.uniform(0.05, 0.95, (3, 4, 4)), requires_grad=True,
                         dtype=np.float64)
            alpha = Tensor(rng.uniform(alo + 0.05, ahi - 0.05, (3, 4, 4)),
                           requires_grad=True, dtype=np.float64)
            beta = Tensor(rng.uniform(blo + 0.05, bhi - 0.05, (3, 4, 4)),
                          requires_grad=True, dtype=np.float64)

            def fn():
                p = CurveParams(alpha, beta, kind)
                return mean(square(apply_aac(img, p)))

            gradcheck(fn, [img, alpha, beta], max_coords=10, rng=rng)


class TestCurveConstants:
    def test_defaults(self):
        c = CurveConstants()
        assert c.k == 15.0 and c.delta == 0.1

    def test_validation(self):
        with pytest.raises(ValueError):
            CurveConstants(k=-1.0)
        with pytest.raises(ValueError):
            CurveConstants(delta=1.5)
