"""Pseudo-noise synthesis for denoiser training.

Dark regions of a low-light photo hide sensor noise that enhancement
amplifies; the simulation reproduces that by scaling Gaussian noise with
darkness: PN = (1 - I) * N(0, sigma), sigma drawn per channel.

The published sigma range [1, 5] is read in 8-bit intensity units and
divided by 255 for [0,1]-normalized images (a literal sigma of 5 on unit
range would be noise at five times full scale). Set ``literal_sigma`` to
reproduce the untranslated reading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor


@dataclass(frozen=True)
class NoiseConfig:
    sigma_lo: float = 1.0
    sigma_hi: float = 5.0
    literal_sigma: bool = False

    def __post_init__(self):
        if not 0 <= self.sigma_lo <= self.sigma_hi:
            raise ValueError("need 0 <= sigma_lo <= sigma_hi")


def pseudo_noise(image: np.ndarray, sigmas: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Darkness-scaled Gaussian noise field for a [3,H,W] image.

    ``sigmas`` are per-channel standard deviations already in normalized
    units. Pixels at full intensity receive exactly zero noise.
    """
    g = rng.standard_normal(image.shape) * sigmas[:, None, None]
    return (1.0 - image) * g


def inject_noise(image, cfg: NoiseConfig,
                 rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """Add pseudo-noise to an image and clamp to [0,1].

    Returns the noisy image and the per-channel sigmas actually used
    (in normalized units).
    """
    image = as_tensor(image)
    sigmas = rng.uniform(cfg.sigma_lo, cfg.sigma_hi, size=3)
    if not cfg.literal_sigma:
        sigmas = sigmas / 255.0
    noise = pseudo_noise(image.data.astype(np.float64), sigmas, rng)
    noisy = np.clip(image.data + noise.astype(image.dtype), 0.0, 1.0)
    return Tensor(noisy, dtype=image.dtype), sigmas
