"""Unsupervised training objectives and the weighted total.

Five loss families constrain the enhancement without ground truth:
reflectance consistency (color), white balance, illuminance level,
curve smoothness, and the denoiser objective built on differentiable
SSIM. All image-domain squared norms are means over pixels (channel
sums where a channel sum appears in the definition), so the published
weights are meaningful at any resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .retinex import channel_averages, decompose, illuminance_estimator
from .tensor import Tensor, as_tensor, conv2d, mean, reshape, spatial_gradient, square

# Default illuminance target level.
EXPECTED_ILLUMINANCE = 0.8

# Channel-sum illuminance lives in [0,3]; dividing by 3 puts it on the
# same scale as the target y*E <= 0.8. Scale 1 is the literal channel-sum
# reading, selectable for comparison.
DEFAULT_ILLUMINANCE_SCALE = 3.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective; y is the target illuminance level."""

    w_rc: float = 20000.0
    w_wb: float = 5.0
    w_il: float = 10.0
    w_alpha: float = 20000.0
    w_beta: float = 20000.0
    w_s: float = 10.0
    w_g: float = 40.0
    y: float = EXPECTED_ILLUMINANCE

    def __post_init__(self):
        for name in ("w_rc", "w_wb", "w_il", "w_alpha", "w_beta", "w_s", "w_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossReport:
    """Unweighted components plus the weighted total, as plain floats."""

    rc: float
    wb: float
    il: float
    cs_alpha: float
    cs_beta: float
    dn: float
    total: float

    @property
    def cs(self) -> float:
        return self.cs_alpha + self.cs_beta

    CSV_HEADER = "step,rc,wb,il,cs,dn,total"

    def csv_row(self, step: int) -> str:
        return (f"{step},{self.rc:.8g},{self.wb:.8g},{self.il:.8g},"
                f"{self.cs:.8g},{self.dn:.8g},{self.total:.8g}")


def _reject_reference(*tensors) -> None:
    for t in tensors:
        if isinstance(t, Tensor) and t.is_reference:
            raise ValueError(
                "a ground-truth reference image reached a loss function; "
                "training is unsupervised and must never consume ground truth")


def loss_rc(orig, enhanced) -> Tensor:
    """Reflectance consistency: keep the per-pixel color distribution.

    Sum over channels of the mean squared reflectance difference.
    """
    _reject_reference(orig, enhanced)
    r_o = decompose(orig).R
    r_e = decompose(enhanced).R
    # mean over [3,H,W] times 3 equals the per-channel means summed
    return mean(square(r_o - r_e)) * 3.0


def loss_wb(enhanced) -> Tensor:
    """White balance: push the per-channel intensity fractions toward 1/3."""
    _reject_reference(enhanced)
    a_r, a_g, a_b = channel_averages(enhanced)
    third = 1.0 / 3.0
    return square(a_r - third) + square(a_g - third) + square(a_b - third)


def loss_il(orig, enhanced, y: float = EXPECTED_ILLUMINANCE,
            illuminance_scale: float = DEFAULT_ILLUMINANCE_SCALE) -> Tensor:
    """Drive enhanced illuminance toward the estimate from the original.

    The target is y*E with E computed on the original image's
    reflectance; the enhanced channel-sum illuminance is divided by
    ``illuminance_scale`` (3 maps it to mean channel intensity, 1 keeps
    the raw channel sum).
    """
    _reject_reference(orig, enhanced)
    e = illuminance_estimator(decompose(orig).R)
    l_e = enhanced[0] + enhanced[1] + enhanced[2]
    return mean(square(y * e - l_e * (1.0 / illuminance_scale)))


def curve_smoothness(maps) -> Tensor:
    """Mean squared spatial gradient of parameter maps, summed over
    channels and iterations (Eq. structure: 1/N * sum_c |grad|^2)."""
    total = None
    for m in maps:
        m = as_tensor(m)
        n = m.data.shape[-1] * m.data.shape[-2]
        dx, dy = spatial_gradient(m)
        term = (square(dx) + square(dy)).sum() * (1.0 / n)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("curve_smoothness needs at least one map")
    return total


def loss_cs(alpha_maps, beta_maps) -> Tensor:
    """Curve smoothness over all alpha and beta maps of a forward pass."""
    return curve_smoothness(alpha_maps) + curve_smoothness(beta_maps)


def _gaussian_window(dtype) -> Tensor:
    half = _SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(k, k)
    win /= win.sum()
    return Tensor(win.reshape(1, 1, _SSIM_WINDOW, _SSIM_WINDOW), dtype=dtype)


def ssim(a, b) -> Tensor:
    """Mean structural similarity with the standard 11x11 Gaussian window.

    sigma=1.5, C1=0.01^2, C2=0.03^2, population covariance, computed on
    the valid interior and averaged over channels. Differentiable.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    c, h, w = a.shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {_SSIM_WINDOW}x"
                         f"{_SSIM_WINDOW} SSIM window")
    win = _gaussian_window(a.dtype)

    def blur(x):
        return conv2d(x, win, padding=0)

    total = None
    for ch in range(c):
        x = reshape(a[ch], (1, 1, h, w))
        y = reshape(b[ch], (1, 1, h, w))
        mu_x, mu_y = blur(x), blur(y)
        var_x = blur(x * x) - square(mu_x)
        var_y = blur(y * y) - square(mu_y)
        cov = blur(x * y) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
        den = (square(mu_x) + square(mu_y) + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
        s = mean(num / den)
        total = s if total is None else total + s
    return total * (1.0 / c)


def _mean_sq_gradient(x) -> Tensor:
    """Mean squared forward difference over both axes, channels, pixels."""
    dx, dy = spatial_gradient(x)
    return (mean(square(dx)) + mean(square(dy))) * 0.5


def _mean_sq_gradient_diff(x, y) -> Tensor:
    dxx, dxy = spatial_gradient(x)
    dyx, dyy = spatial_gradient(y)
    return (mean(square(dxx - dyx)) + mean(square(dxy - dyy))) * 0.5


def loss_dn(i_e, i_d, w_s: float = 10.0, w_g: float = 40.0) -> Tensor:
    """Denoiser objective: stay similar to the clean enhancement while
    matching its structure and suppressing residual gradients.

    i_e: enhancement of the clean image; i_d: denoised enhancement of
    the pseudo-noise-injected image.
    """
    _reject_reference(i_e, i_d)
    return (-w_s * ssim(i_e, i_d)
            + w_g * _mean_sq_gradient_diff(i_e, i_d)
            + _mean_sq_gradient(i_d))


def total_loss(rc, wb, il, cs_alpha, cs_beta, dn=0.0,
               weights: LossWeights = LossWeights()) -> tuple[Tensor, LossReport]:
    """Weighted sum of the components; the denoiser term enters unweighted
    (its internal w_s/w_g already scale it).

    Returns the differentiable total plus a float report of the
    unweighted components.
    """
    rc, wb, il = as_tensor(rc), as_tensor(wb), as_tensor(il)
    cs_alpha, cs_beta, dn = as_tensor(cs_alpha), as_tensor(cs_beta), as_tensor(dn)
    total = (weights.w_rc * rc + weights.w_wb * wb + weights.w_il * il
             + weights.w_alpha * cs_alpha + weights.w_beta * cs_beta + dn)
    report = LossReport(
        rc=float(rc.data), wb=float(wb.data), il=float(il.data),
        cs_alpha=float(cs_alpha.data), cs_beta=float(cs_beta.data),
        dn=float(dn.data), total=float(total.data),
    )
    return total, report
