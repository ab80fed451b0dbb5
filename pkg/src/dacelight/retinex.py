"""Illuminance/reflectance decomposition and derived statistics.

The decomposition normalizes by the channel sum: L = I_r + I_g + I_b and
R_c = I_c / (L + eps). Reflectance then carries the color distribution
per pixel (its channels sum to just under 1) and is, up to the eps
guard, invariant to uniform intensity scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import Tensor, absolute, as_tensor

EPSILON = 1e-4


@dataclass
class Decomposition:
    """Illuminance L[H,W] in [0,3] and reflectance R[3,H,W]."""

    L: Tensor
    R: Tensor
    epsilon: float = EPSILON


def decompose(image, epsilon: float = EPSILON) -> Decomposition:
    """Split an RGB image [3,H,W] into illuminance and reflectance."""
    image = as_tensor(image)
    L = image[0] + image[1] + image[2]
    R = image / (L + epsilon)
    return Decomposition(L=L, R=R, epsilon=epsilon)


def illuminance_estimator(R) -> Tensor:
    """Per-pixel illumination proxy from reflectance's distance to white.

    E = 1 - sum_c |R_c - 1/3|, in [-1/3, 1]. Neutral white reflectance
    gives 1; saturated colors can go negative and are left unclamped
    (the illuminance loss squares the difference anyway).
    """
    R = as_tensor(R)
    dist = (absolute(R[0] - 1.0 / 3.0) + absolute(R[1] - 1.0 / 3.0)
            + absolute(R[2] - 1.0 / 3.0))
    return 1.0 - dist


def channel_averages(image) -> tuple[Tensor, Tensor, Tensor]:
    """Fraction of total image intensity carried by each channel.

    A_c = sum(I_c) / sum_over_channels(sum(I_c')); the three fractions
    sum to 1. Raises on an all-black image (zero denominator).
    """
    image = as_tensor(image)
    total = image.sum()
    if float(total.data) == 0.0:
        raise ValueError("channel averages undefined for an all-black image")
    return (image[0].sum() / total, image[1].sum() / total,
            image[2].sum() / total)
