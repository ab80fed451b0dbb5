"""Adaptive adjustment curves for per-pixel dynamic-range correction.

Two curve families share one form, out = I + alpha * (1/beta) * C(beta; I):

* LAEC (low-light area enhancement) lifts intensities below the
  threshold map beta, with alpha in [0,1] and beta in [0.3,1].
* HASC (high-light area suppression) damps intensities above beta,
  with alpha in [-1,0] and beta in [0.7,0.9].

A sigmoid gate S(-+k*(I - beta +- delta)) fades each curve out before
the threshold is reached, which keeps repeated applications from
oscillating around beta.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, sigmoid


class CurveKind(enum.Enum):
    LAEC = "laec"
    HASC = "hasc"


@dataclass(frozen=True)
class CurveConstants:
    """Gate sharpness and advance margin of the suppression sigmoid."""

    k: float = 15.0
    delta: float = 0.1

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("k must be positive")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must be in [0, 1)")


# Legal (alpha, beta) boxes per curve kind.
ALPHA_RANGE = {CurveKind.LAEC: (0.0, 1.0), CurveKind.HASC: (-1.0, 0.0)}
BETA_RANGE = {CurveKind.LAEC: (0.3, 1.0), CurveKind.HASC: (0.7, 0.9)}


@dataclass
class CurveParams:
    """Per-pixel, per-channel magnitude (alpha) and threshold (beta) maps."""

    alpha: Tensor
    beta: Tensor
    kind: CurveKind

    def validate(self, tol: float = 1e-6) -> None:
        alo, ahi = ALPHA_RANGE[self.kind]
        blo, bhi = BETA_RANGE[self.kind]
        a, b = self.alpha.data, self.beta.data
        if a.min() < alo - tol or a.max() > ahi + tol:
            raise ValueError(f"alpha outside [{alo}, {ahi}] for {self.kind}")
        if b.min() < blo - tol or b.max() > bhi + tol:
            raise ValueError(f"beta outside [{blo}, {bhi}] for {self.kind}")


def map_raw_to_params(raw_alpha, raw_beta, kind: CurveKind) -> CurveParams:
    """Squash unbounded network outputs into the legal parameter boxes.

    Sigmoid reparameterization keeps gradients alive at the box edges,
    unlike post-hoc clipping.
    """
    raw_alpha, raw_beta = as_tensor(raw_alpha), as_tensor(raw_beta)
    blo, bhi = BETA_RANGE[kind]
    if kind is CurveKind.LAEC:
        alpha = sigmoid(raw_alpha)
    else:
        alpha = -sigmoid(raw_alpha)
    beta = blo + (bhi - blo) * sigmoid(raw_beta)
    return CurveParams(alpha=alpha, beta=beta, kind=kind)


def apply_aac(image, params: CurveParams, consts: CurveConstants = CurveConstants()) -> Tensor:
    """Apply one adaptive adjustment curve iteration to an image.

    image: Tensor[3,H,W] in [0,1] (intermediate iterations may drift
    slightly outside; they are not clamped so gradients keep flowing).
    """
    image = as_tensor(image)
    alpha, beta = params.alpha, params.beta
    if np.any(beta.data == 0):
        # Unreachable under the box invariants, but division must stay guarded.
        raise ValueError("beta map contains zeros")
    k, delta = consts.k, consts.delta
    if params.kind is CurveKind.LAEC:
        gate = sigmoid(-k * (image - beta + delta))
        curve = gate * image * (beta - image)
    else:
        gate = sigmoid(k * (image - beta - delta))
        curve = gate * (1.0 - image) * (image - beta)
    return image + alpha * (1.0 / beta) * curve
