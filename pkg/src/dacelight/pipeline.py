"""Dataset ingestion, configuration, and the two training phases.

Training is unsupervised: the curve blocks train jointly on low-light
images alone, then the denoiser trains independently against
pseudo-noise with the curve blocks frozen. Ground-truth images, when a
dataset carries them, are tagged as reference tensors and any loss that
receives one raises.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .losses import (
    LossReport,
    LossWeights,
    curve_smoothness,
    loss_dn,
    loss_il,
    loss_rc,
    loss_wb,
    total_loss,
)
from .network import (
    DN_DEPTH,
    DN_WIDTH,
    ModelBundle,
    VARIANTS,
    denoise,
    forward_fused,
    forward_train,
    make_bundle,
)
from .noise import NoiseConfig, inject_noise
from .tensor import Tape, Tensor, clamp01

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class ConfigError(ValueError):
    """Invalid configuration: a usage error, not an IO failure."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, report: Optional[LossReport] = None):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    dataset_dir: str = "."
    resize: tuple[int, int] = (256, 256)
    epochs_ia: int = 100
    epochs_dn: int = 200
    learning_rate: float = 1e-4
    momentum: float = 0.9
    optimizer: str = "sgd"
    batch_size: int = 1
    variant: str = "standard"
    seed: int = 0
    illuminance_scale: float = 3.0
    literal_sigma: bool = False
    weights: LossWeights = field(default_factory=LossWeights)
    output: str = "model.dace"
    loss_log: Optional[str] = None
    checkpoint_every: int = 0
    train_denoiser: bool = True
    dn_width: int = DN_WIDTH
    dn_depth: int = DN_DEPTH

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if min(self.resize) < 11:
            raise ConfigError("resize dims must be >= 11 (SSIM window)")
        if self.epochs_ia <= 0 or self.epochs_dn <= 0:
            raise ConfigError("epoch counts must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be 'sgd' or 'adam'")
        if self.illuminance_scale not in (1.0, 3.0):
            raise ConfigError("illuminance_scale must be 1 or 3")


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}

# config key -> (target, parser); weight keys map into LossWeights
_WEIGHT_KEYS = {"w_rc", "w_wb", "w_il", "w_alpha", "w_beta", "w_s", "w_g", "y"}


def _parse_bool(s: str) -> bool:
    try:
        return _BOOL_VALUES[s.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {s!r}") from None


def _parse_resize(s: str) -> tuple[int, int]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"resize needs two comma-separated ints, got {s!r}")
    return int(parts[0]), int(parts[1])


def parse_config(text: str) -> TrainConfig:
    """Flat ``key = value`` format; '#' starts a comment."""
    cfg = TrainConfig()
    weights = {}
    parsers = {
        "dataset_dir": str, "resize": _parse_resize, "epochs_ia": int,
        "epochs_dn": int, "learning_rate": float, "momentum": float,
        "optimizer": str, "batch_size": int, "variant": str, "seed": int,
        "illuminance_scale": float, "literal_sigma": _parse_bool,
        "output": str, "loss_log": str, "checkpoint_every": int,
        "train_denoiser": _parse_bool, "dn_width": int, "dn_depth": int,
    }
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _WEIGHT_KEYS:
            weights[key] = float(value)
        elif key in parsers:
            try:
                cfg = replace(cfg, **{key: parsers[key](value)})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if weights:
        cfg = replace(cfg, weights=LossWeights(**{**asdict(LossWeights()),
                                                  **weights}))
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# -- images and datasets ------------------------------------------------------


def load_image(path, size: Optional[tuple[int, int]] = None,
               reference: bool = False) -> Tensor:
    """Decode an 8-bit image file to a [0,1]-normalized [3,H,W] tensor."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if size is not None:
                img = img.resize((size[1], size[0]), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise IOError(f"cannot load image {path}: {exc}") from exc
    return Tensor(np.moveaxis(arr, -1, 0), is_reference=reference)


def save_image(tensor, path) -> None:
    """Write a [3,H,W] tensor as an 8-bit PNG (or per-extension format)."""
    arr = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
    arr = np.clip(arr, 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB").save(path)


@dataclass
class Dataset:
    """Training images plus optional evaluation-only ground truth."""

    images: list[Path]
    ground_truth: Optional[list[Path]] = None

    def __post_init__(self):
        if self.ground_truth is not None and len(self.ground_truth) != len(self.images):
            raise ValueError("ground truth list must align with images")

    def __len__(self) -> int:
        return len(self.images)


def scan_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise IOError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise IOError(f"no images found in {directory}")
    return files


def load_dataset(directory) -> Dataset:
    return Dataset(images=scan_images(directory))


# -- optimizer ----------------------------------------------------------------


class SGD:
    """Plain gradient descent with optional momentum.

    With momentum 0 a step changes each weight by exactly -lr * grad.
    """

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self._velocity = [None] * len(params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if self.momentum == 0.0:
                p.data -= self.lr * p.grad
                continue
            v = self._velocity[i]
            v = p.grad.copy() if v is None else self.momentum * v + p.grad
            self._velocity[i] = v
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    """Adam with the usual defaults; useful when sigmoid-reparameterized
    heads leave plain SGD gradient-starved."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self._t
        bias2 = 1.0 - b2 ** self._t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self._m[i] = b1 * self._m[i] + (1.0 - b1) * p.grad
            self._v[i] = b2 * self._v[i] + (1.0 - b2) * p.grad * p.grad
            m_hat = self._m[i] / bias1
            v_hat = self._v[i] / bias2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def make_optimizer(name: str, params: list[Tensor], config: "TrainConfig"):
    if name == "sgd":
        return SGD(params, lr=config.learning_rate, momentum=config.momentum)
    if name == "adam":
        return Adam(params, lr=config.learning_rate)
    raise ConfigError(f"unknown optimizer {name!r}; expected 'sgd' or 'adam'")


# -- training -----------------------------------------------------------------


def _check_finite(value: float, report: Optional[LossReport], step: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(
            f"non-finite loss at step {step}: last report {report}", report)


class _LossLog:
    def __init__(self, path: Optional[str]):
        self._fh = None
        if path:
            self._fh = open(path, "w")
            self._fh.write(LossReport.CSV_HEADER + "\n")

    def write(self, step: int, report: LossReport) -> None:
        if self._fh:
            self._fh.write(report.csv_row(step) + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def _load_training_images(config: TrainConfig, dataset: Dataset) -> list[Tensor]:
    return [load_image(p, size=config.resize) for p in dataset.images]


def train_ia(config: TrainConfig, dataset: Dataset,
             bundle: Optional[ModelBundle] = None,
             callback=None) -> ModelBundle:
    """Joint training of all curve-predicting modules (denoiser untouched).

    Deterministic under a fixed seed: weight init, module order shuffles,
    and image order all derive from ``config.seed``.
    """
    config.validate()
    if bundle is None:
        bundle = make_bundle(config.variant, seed=config.seed,
                             dn_width=config.dn_width, dn_depth=config.dn_depth)
    if bundle.fused:
        raise ValueError("cannot train a fused bundle")
    images = _load_training_images(config, dataset)
    rng = np.random.default_rng(config.seed)
    bundle.set_requires_grad(True, part="ia")
    if bundle.dn is not None:
        bundle.set_requires_grad(False, part="dn")
    params = [t for name, t in bundle.named_tensors() if not name.startswith("dn.")]
    opt = make_optimizer(config.optimizer, params, config)
    log = _LossLog(config.loss_log)
    w = config.weights
    step = 0
    last_report = None
    try:
        for epoch in range(config.epochs_ia):
            for start in range(0, len(images), config.batch_size):
                batch = images[start:start + config.batch_size]
                with Tape() as tape:
                    total = None
                    reports = []
                    for img in batch:
                        enhanced, trace = forward_train(img, bundle, rng)
                        t, report = total_loss(
                            loss_rc(img, enhanced),
                            loss_wb(enhanced),
                            loss_il(img, enhanced, w.y, config.illuminance_scale),
                            curve_smoothness([p.alpha for p in trace]),
                            curve_smoothness([p.beta for p in trace]),
                            weights=w)
                        reports.append(report)
                        total = t if total is None else total + t
                    if len(batch) > 1:
                        total = total * (1.0 / len(batch))
                    last_report = _mean_report(reports)
                    _check_finite(last_report.total, last_report, step)
                    tape.backward(total)
                opt.step()
                opt.zero_grad()
                log.write(step, last_report)
                if callback is not None:
                    callback(step, last_report)
                step += 1
            if (config.checkpoint_every and config.output
                    and (epoch + 1) % config.checkpoint_every == 0):
                from .checkpoint import save_checkpoint
                save_checkpoint(bundle, config.output)
    finally:
        log.close()
    return bundle


def _mean_report(reports: list[LossReport]) -> LossReport:
    n = len(reports)
    return LossReport(*(sum(getattr(r, f) for r in reports) / n
                        for f in ("rc", "wb", "il", "cs_alpha", "cs_beta",
                                  "dn", "total")))


def _enhance_for_dn(image: Tensor, bundle: ModelBundle,
                    perm_seed: int) -> Tensor:
    """IA-only enhancement with a reproducible module order."""
    if bundle.fused:
        return forward_fused(image, bundle, use_denoiser=False)
    out, _ = forward_train(image, bundle, np.random.default_rng(perm_seed))
    return clamp01(out)


def train_dn(config: TrainConfig, dataset: Dataset, bundle: ModelBundle,
             callback=None):
    """Train the denoiser against pseudo-noise with the curve blocks frozen.

    Per step: enhance the clean image (target), enhance a noise-injected
    copy and denoise it, then minimize the denoising objective. The two
    enhancement passes share one module order so noise is the only
    difference between them.
    """
    config.validate()
    if bundle.dn is None:
        raise ValueError("bundle has no denoiser block")
    images = _load_training_images(config, dataset)
    rng = np.random.default_rng(config.seed + 1)
    bundle.set_requires_grad(False, part="ia")
    bundle.set_requires_grad(True, part="dn")
    noise_cfg = NoiseConfig(literal_sigma=config.literal_sigma)
    params = [t for name, t in bundle.named_tensors() if name.startswith("dn.")]
    opt = make_optimizer(config.optimizer, params, config)
    log = _LossLog(config.loss_log)
    w = config.weights
    step = 0
    try:
        for _ in range(config.epochs_dn):
            for img in images:
                perm_seed = int(rng.integers(2 ** 63))
                i_e = _enhance_for_dn(img, bundle, perm_seed)
                noisy, _ = inject_noise(img, noise_cfg, rng)
                noisy_enh = _enhance_for_dn(noisy, bundle, perm_seed)
                with Tape() as tape:
                    i_d = denoise(noisy_enh, bundle.dn)
                    value = loss_dn(i_e, i_d, w.w_s, w.w_g)
                    report = LossReport(0, 0, 0, 0, 0, float(value.data),
                                        float(value.data))
                    _check_finite(report.total, report, step)
                    tape.backward(value)
                opt.step()
                opt.zero_grad()
                log.write(step, report)
                if callback is not None:
                    callback(step, report)
                step += 1
    finally:
        log.close()
    return bundle.dn
