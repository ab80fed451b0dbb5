"""Self-supervised low-light image enhancement with adaptive curves.

The library trains tiny convolutional modules to predict per-pixel
adjustment-curve parameters from unpaired low-light images, fuses the
trained modules into a recurrent inference network, and optionally
denoises the result with a pseudo-noise-trained residual network.
"""

from .tensor import (
    Tape,
    Tensor,
    absolute,
    clamp01,
    conv2d,
    sigmoid,
    spatial_gradient,
    sqrt,
    square,
    tanh,
)
from .curves import (
    ALPHA_RANGE,
    BETA_RANGE,
    CurveConstants,
    CurveKind,
    CurveParams,
    apply_aac,
    map_raw_to_params,
)
from .retinex import Decomposition, channel_averages, decompose, illuminance_estimator
from .losses import (
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
from .network import (
    Block,
    ConvModule,
    DenoiseNet,
    FusedBlock,
    ModelBundle,
    count_params,
    denoise,
    forward_fused,
    forward_train,
    fuse,
    fuse_bundle,
    make_bundle,
    make_denoiser,
    make_module,
)
from .noise import NoiseConfig, inject_noise, pseudo_noise
from .metrics import (
    MetricReport,
    ciede2000,
    delta_e_2000,
    evaluate_pair,
    psnr,
    srgb_to_lab,
    ssim_eval,
    write_report,
)
from .pipeline import (
    ConfigError,
    Dataset,
    DivergenceError,
    SGD,
    TrainConfig,
    load_config,
    load_dataset,
    load_image,
    parse_config,
    save_image,
    train_dn,
    train_ia,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
