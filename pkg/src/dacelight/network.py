"""Curve-predicting modules, block fusion, and the two forward paths.

Training uses distinct modules per iteration (9 enhancement, 3
suppression) applied in a freshly shuffled order each step, so every
module learns to operate at any depth. For deployment the modules of a
block are averaged into one (weight/bias arithmetic mean) and applied
recurrently, which shrinks the network without retraining.

Module internals (the per-variant layer stacks below) are this
implementation's reconstruction; the published figure of the original
design was not available. Channel width 32 with 9/3 iterations follows
the reported ablation optimum, and the tiny stack is sized to keep the
fused bundle at a few hundred parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import fastpath
from .curves import CurveConstants, CurveKind, CurveParams, apply_aac, map_raw_to_params
from .tensor import Tensor, active_tape, clamp01, conv2d, reshape, tanh

VARIANTS = ("standard", "small", "tiny")

# DM trunk shapes per architecture variant: (out_channels, kernel) pairs.
_TRUNK = {
    "standard": ((32, 3), (32, 3)),
    "tiny": ((5, 3),),
}
_HEAD_KERNEL = {"standard": 3, "tiny": 1}

# Denoiser defaults; width 128 / depth 4 puts the standard bundle at the
# published parameter budget.
DN_WIDTH = 128
DN_DEPTH = 4


@dataclass
class ConvLayer:
    weight: Tensor
    bias: Tensor
    activation: Optional[str] = None  # "tanh" or None

    def __call__(self, x: Tensor) -> Tensor:
        kh = self.weight.shape[2]
        out = conv2d(x, self.weight, self.bias, padding=kh // 2)
        if self.activation == "tanh":
            out = tanh(out)
        return out

    def param_count(self) -> int:
        return self.weight.size + self.bias.size


def _conv_layer(rng, c_in, c_out, kernel, activation=None, weight_std=None,
                bias_value=0.0, dtype=np.float32) -> ConvLayer:
    if weight_std is None:
        weight_std = (c_in * kernel * kernel) ** -0.5
    w = rng.normal(0.0, weight_std, size=(c_out, c_in, kernel, kernel))
    b = np.full(c_out, bias_value)
    return ConvLayer(Tensor(w, requires_grad=True, dtype=dtype),
                     Tensor(b, requires_grad=True, dtype=dtype),
                     activation)


@dataclass
class ConvModule:
    """One curve-predicting module: shared trunk, raw alpha/beta heads."""

    trunk: list[ConvLayer]
    head_alpha: ConvLayer
    head_beta: ConvLayer
    arch_variant: str = "standard"

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """image[3,H,W] -> raw (alpha, beta) maps, each [3,H,W]."""
        c, h, w = image.shape
        x = reshape(image, (1, c, h, w))
        for layer in self.trunk:
            x = layer(x)
        raw_a = reshape(self.head_alpha(x), (3, h, w))
        raw_b = reshape(self.head_beta(x), (3, h, w))
        return raw_a, raw_b

    def layers(self) -> list[ConvLayer]:
        return [*self.trunk, self.head_alpha, self.head_beta]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers())

    def signature(self) -> tuple:
        return tuple((l.weight.shape, l.activation) for l in self.layers())

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.trunk):
            yield f"{prefix}.trunk{i}.weight", layer.weight
            yield f"{prefix}.trunk{i}.bias", layer.bias
        for name, layer in (("head_alpha", self.head_alpha),
                            ("head_beta", self.head_beta)):
            yield f"{prefix}.{name}.weight", layer.weight
            yield f"{prefix}.{name}.bias", layer.bias


def make_module(rng, arch_variant: str = "standard", dtype=np.float32,
                alpha_bias: float = -2.0) -> ConvModule:
    """Fresh module starting near the identity enhancement.

    The alpha head's bias starts negative so initial curve magnitudes are
    small, which keeps the unsupervised objective stable early on.
    """
    trunk = []
    c_in = 3
    for c_out, kernel in _TRUNK[arch_variant]:
        trunk.append(_conv_layer(rng, c_in, c_out, kernel, "tanh", dtype=dtype))
        c_in = c_out
    hk = _HEAD_KERNEL[arch_variant]
    head_a = _conv_layer(rng, c_in, 3, hk, weight_std=0.01, bias_value=alpha_bias,
                         dtype=dtype)
    head_b = _conv_layer(rng, c_in, 3, hk, weight_std=0.01, dtype=dtype)
    return ConvModule(trunk, head_a, head_b, arch_variant)


@dataclass
class Block:
    """A set of distinct modules sharing one curve kind (unfused)."""

    curve_kind: CurveKind
    modules: list[ConvModule]

    @property
    def iterations(self) -> int:
        return len(self.modules)

    def named_tensors(self, prefix: str):
        for i, m in enumerate(self.modules):
            yield from m.named_tensors(f"{prefix}.dm{i}")


@dataclass
class FusedBlock:
    """One averaged module applied recurrently."""

    curve_kind: CurveKind
    module: ConvModule
    iterations: int

    def named_tensors(self, prefix: str):
        yield from self.module.named_tensors(f"{prefix}.fused")


@dataclass
class DenoiseNet:
    """Residual denoiser: output = clamp01(input - predicted residual)."""

    layers: list[ConvLayer]

    def forward_residual(self, image: Tensor) -> Tensor:
        c, h, w = image.shape
        x = reshape(image, (1, c, h, w))
        for layer in self.layers:
            x = layer(x)
        return reshape(x, (c, h, w))

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def named_tensors(self, prefix: str = "dn"):
        for i, layer in enumerate(self.layers):
            yield f"{prefix}.conv{i}.weight", layer.weight
            yield f"{prefix}.conv{i}.bias", layer.bias


def make_denoiser(rng, width: int = DN_WIDTH, depth: int = DN_DEPTH,
                  dtype=np.float32) -> DenoiseNet:
    """Plain conv stack; the final layer starts at zero so the initial
    residual is zero and the denoiser begins as the identity."""
    layers = [_conv_layer(rng, 3, width, 3, "tanh", dtype=dtype)]
    for _ in range(depth):
        layers.append(_conv_layer(rng, width, width, 3, "tanh", dtype=dtype))
    final = _conv_layer(rng, width, 3, 3, weight_std=0.0, dtype=dtype)
    layers.append(final)
    return DenoiseNet(layers)


def denoise(image: Tensor, dn: DenoiseNet) -> Tensor:
    return clamp01(image - dn.forward_residual(image))


@dataclass
class ModelBundle:
    """The full model: enhancement blocks, suppression blocks, denoiser."""

    variant: str
    llae: Block | FusedBlock
    hlas: Block | FusedBlock
    dn: Optional[DenoiseNet] = None
    consts: CurveConstants = field(default_factory=CurveConstants)
    seed: int = 0

    @property
    def fused(self) -> bool:
        return isinstance(self.llae, FusedBlock)

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.llae.named_tensors("llae")
        yield from self.hlas.named_tensors("hlas")
        if self.dn is not None:
            yield from self.dn.named_tensors("dn")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def set_requires_grad(self, value: bool, part: str = "all") -> None:
        """part: 'all', 'ia' (both curve blocks) or 'dn'."""
        groups = []
        if part in ("all", "ia"):
            groups += [self.llae.named_tensors("llae"), self.hlas.named_tensors("hlas")]
        if part in ("all", "dn") and self.dn is not None:
            groups.append(self.dn.named_tensors("dn"))
        for group in groups:
            for _, t in group:
                t.requires_grad = value


def make_bundle(variant: str, seed: int = 0, llae_count: int = 9,
                hlas_count: int = 3, dn_width: int = DN_WIDTH,
                dn_depth: int = DN_DEPTH, dtype=np.float32,
                consts: CurveConstants = CurveConstants()) -> ModelBundle:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng(seed)
    arch = "tiny" if variant == "tiny" else "standard"
    llae = Block(CurveKind.LAEC,
                 [make_module(rng, arch, dtype) for _ in range(llae_count)])
    hlas = Block(CurveKind.HASC,
                 [make_module(rng, arch, dtype) for _ in range(hlas_count)])
    dn = make_denoiser(rng, dn_width, dn_depth, dtype) if variant == "standard" else None
    return ModelBundle(variant, llae, hlas, dn, consts, seed)


def _run_module(module: ConvModule, image: Tensor, kind: CurveKind,
                consts: CurveConstants) -> tuple[Tensor, CurveParams]:
    raw_a, raw_b = module.forward(image)
    params = map_raw_to_params(raw_a, raw_b, kind)
    return apply_aac(image, params, consts), params


def forward_train(image: Tensor, bundle: ModelBundle,
                  rng: np.random.Generator) -> tuple[Tensor, list[CurveParams]]:
    """Randomized-order pass through all distinct modules.

    Each module consumes the current intermediate image (pure
    recurrence). Returns the unclamped enhanced image and every
    iteration's curve parameters for the smoothness loss.
    """
    if bundle.fused:
        raise ValueError("forward_train needs an unfused bundle")
    trace: list[CurveParams] = []
    current = image
    for block in (bundle.llae, bundle.hlas):
        order = rng.permutation(len(block.modules))
        for idx in order:
            current, params = _run_module(block.modules[idx], current,
                                          block.curve_kind, bundle.consts)
            trace.append(params)
    return current, trace


def forward_fused(image: Tensor, bundle: ModelBundle,
                  use_denoiser: bool = True, prefer_fast: bool = True) -> Tensor:
    """Self-looping inference: the fused module of each block applied
    recurrently, then the denoiser, then a final clamp to [0,1].

    Small-channel modules run through the JIT kernels when numba is
    present (disable with prefer_fast=False); results agree with the
    tape-op path to float32 rounding.
    """
    if not bundle.fused:
        raise ValueError("forward_fused needs a fused bundle; call fuse_bundle first")
    current = image
    for block in (bundle.llae, bundle.hlas):
        fast = None
        if prefer_fast and active_tape() is None:
            fast = fastpath.run_fused_block(current.data, block, bundle.consts)
        if fast is not None:
            current = Tensor(fast, dtype=fast.dtype)
            continue
        for _ in range(block.iterations):
            current, _ = _run_module(block.module, current, block.curve_kind,
                                     bundle.consts)
    if bundle.dn is not None and use_denoiser:
        current = denoise(current, bundle.dn)
    return clamp01(current)


def fuse(block: Block) -> FusedBlock:
    """Average corresponding weights/biases of a block's modules.

    Accumulates in float64 so the result does not depend on module order.
    """
    if isinstance(block, FusedBlock):
        raise ValueError("block is already fused")
    sigs = {m.signature() for m in block.modules}
    if len(sigs) != 1:
        raise ValueError("cannot fuse architecturally different modules")
    template = block.modules[0]
    fused_layers = []
    for li, layer in enumerate(template.layers()):
        w = np.mean([m.layers()[li].weight.data for m in block.modules],
                    axis=0, dtype=np.float64).astype(layer.weight.dtype)
        b = np.mean([m.layers()[li].bias.data for m in block.modules],
                    axis=0, dtype=np.float64).astype(layer.bias.dtype)
        fused_layers.append(ConvLayer(Tensor(w, dtype=layer.weight.dtype),
                                      Tensor(b, dtype=layer.bias.dtype),
                                      layer.activation))
    n_trunk = len(template.trunk)
    module = ConvModule(fused_layers[:n_trunk], fused_layers[n_trunk],
                        fused_layers[n_trunk + 1], template.arch_variant)
    return FusedBlock(block.curve_kind, module, len(block.modules))


def fuse_bundle(bundle: ModelBundle) -> ModelBundle:
    if bundle.fused:
        raise ValueError("bundle is already fused")
    return ModelBundle(bundle.variant, fuse(bundle.llae), fuse(bundle.hlas),
                       bundle.dn, bundle.consts, bundle.seed)


def count_params(bundle: ModelBundle) -> int:
    """Trainable scalar count; a fused bundle counts each fused module once."""
    total = 0
    for block in (bundle.llae, bundle.hlas):
        if isinstance(block, FusedBlock):
            total += block.module.param_count()
        else:
            total += sum(m.param_count() for m in block.modules)
    if bundle.dn is not None:
        total += bundle.dn.param_count()
    return total
