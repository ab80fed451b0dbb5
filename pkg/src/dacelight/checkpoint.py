"""Bit-exact binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"DACE"
    version u32      currently 1
    variant u8       0=standard, 1=small, 2=tiny
    fused   u8       0 or 1
    records until EOF, each:
        name_len u32, name UTF-8, rank u32, dims u32[rank],
        float32 data (little-endian, row-major)

The same grammar serves unfused and fused bundles; fused blocks carry
their iteration counts as scalar records so round-trips preserve
non-default configurations.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .curves import CurveKind
from .network import (
    Block,
    ConvLayer,
    ConvModule,
    DenoiseNet,
    FusedBlock,
    ModelBundle,
    VARIANTS,
)
from .tensor import Tensor

MAGIC = b"DACE"
VERSION = 1

_VARIANT_TAG = {name: i for i, name in enumerate(VARIANTS)}
_TAG_VARIANT = {i: name for name, i in _VARIANT_TAG.items()}


class CheckpointError(Exception):
    pass


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(bundle: ModelBundle, path) -> None:
    records = list(bundle.named_tensors())
    if bundle.fused:
        records.append(("llae.iterations",
                        Tensor(np.array(float(bundle.llae.iterations)))))
        records.append(("hlas.iterations",
                        Tensor(np.array(float(bundle.hlas.iterations)))))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BB", _VARIANT_TAG[bundle.variant],
                             1 if bundle.fused else 0))
        for name, tensor in records:
            _write_record(fh, name, tensor.data)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def _read_records(fh) -> dict[str, np.ndarray]:
    records = {}
    while True:
        head = fh.read(4)
        if not head:
            return records
        if len(head) != 4:
            raise CheckpointError("truncated checkpoint")
        (name_len,) = struct.unpack("<I", head)
        name = _read_exact(fh, name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
        records[name] = data.reshape(dims).copy()


def _build_module(records: dict[str, np.ndarray], prefix: str,
                  arch_variant: str) -> ConvModule:
    trunk = []
    i = 0
    while f"{prefix}.trunk{i}.weight" in records:
        trunk.append(ConvLayer(Tensor(records[f"{prefix}.trunk{i}.weight"]),
                               Tensor(records[f"{prefix}.trunk{i}.bias"]),
                               "tanh"))
        i += 1
    if not trunk:
        raise CheckpointError(f"no trunk layers under {prefix!r}")
    heads = []
    for head in ("head_alpha", "head_beta"):
        key = f"{prefix}.{head}.weight"
        if key not in records:
            raise CheckpointError(f"missing {key!r}")
        heads.append(ConvLayer(Tensor(records[key]),
                               Tensor(records[f"{prefix}.{head}.bias"])))
    return ConvModule(trunk, heads[0], heads[1], arch_variant)


def _build_block(records, prefix: str, kind: CurveKind, fused: bool,
                 arch_variant: str):
    if fused:
        module = _build_module(records, f"{prefix}.fused", arch_variant)
        iters_key = f"{prefix}.iterations"
        if iters_key not in records:
            raise CheckpointError(f"missing {iters_key!r} in fused checkpoint")
        return FusedBlock(kind, module, int(records[iters_key]))
    modules = []
    i = 0
    while f"{prefix}.dm{i}.head_alpha.weight" in records:
        modules.append(_build_module(records, f"{prefix}.dm{i}", arch_variant))
        i += 1
    if not modules:
        raise CheckpointError(f"no modules under {prefix!r}")
    return Block(kind, modules)


def _build_denoiser(records) -> DenoiseNet | None:
    keys = sorted(k for k in records if k.startswith("dn.conv"))
    if not keys:
        return None
    n_layers = 1 + max(int(k.split(".")[1][4:]) for k in keys)
    layers = []
    for i in range(n_layers):
        activation = "tanh" if i < n_layers - 1 else None
        layers.append(ConvLayer(Tensor(records[f"dn.conv{i}.weight"]),
                                Tensor(records[f"dn.conv{i}.bias"]),
                                activation))
    return DenoiseNet(layers)


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        variant_tag, fused_flag = struct.unpack("<BB", _read_exact(fh, 2))
        if variant_tag not in _TAG_VARIANT:
            raise CheckpointError(f"unknown variant tag {variant_tag}")
        records = _read_records(fh)
    variant = _TAG_VARIANT[variant_tag]
    fused = bool(fused_flag)
    arch_variant = "tiny" if variant == "tiny" else "standard"
    llae = _build_block(records, "llae", CurveKind.LAEC, fused, arch_variant)
    hlas = _build_block(records, "hlas", CurveKind.HASC, fused, arch_variant)
    dn = _build_denoiser(records)
    return ModelBundle(variant, llae, hlas, dn)
