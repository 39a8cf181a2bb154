"""Block-convolution cascades: stride-equals-kernel 1-D networks built on numpy.

The package covers the whole pipeline: layer arithmetic with analytic
gradients (:mod:`blockconv.layers`), cascade assembly and structure
validation (:mod:`blockconv.network`), from-scratch AdamW training
(:mod:`blockconv.training`), classical recovery baselines
(:mod:`blockconv.baselines`), image-quality metrics
(:mod:`blockconv.metrics`), and reproducible compressive-sensing
experiments (:mod:`blockconv.experiments`). The ``blockconv`` command in
:mod:`blockconv.cli` drives it from config files.
"""

from .baselines import ArtConfig, LassoConfig, art_solve, lasso_solve, soft_threshold
from .errors import (
    BlockconvError,
    ConfigError,
    FormatError,
    NumericError,
    ParameterError,
    StructureError,
)
from .layers import ConvKernelBank, beta_project, nonoverlap_forward, overlap_forward, sigmoid
from .metrics import ImagePair, psnr, rre, ssim
from .network import (
    CascadeNet,
    OverlapSpec,
    StageSpec,
    backward,
    blockwise_lift,
    build_cascade,
    dump_model,
    forward,
    load_model,
    parse_model,
    save_model,
    validate_nonoverlap,
    validate_overlap,
)
from .numerics import SeededRng, gaussian_sample, matmul
from .training import (
    AdamWConfig,
    LossConfig,
    ScheduleConfig,
    TrainConfig,
    adamw_step,
    glorot_init,
    loss,
    loss_gradient,
    lr_at,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ArtConfig", "LassoConfig", "art_solve", "lasso_solve", "soft_threshold",
    "BlockconvError", "ConfigError", "FormatError", "NumericError",
    "ParameterError", "StructureError",
    "ConvKernelBank", "beta_project", "nonoverlap_forward", "overlap_forward", "sigmoid",
    "ImagePair", "psnr", "rre", "ssim",
    "CascadeNet", "OverlapSpec", "StageSpec", "backward", "blockwise_lift",
    "build_cascade", "dump_model", "forward", "load_model", "parse_model",
    "save_model", "validate_nonoverlap", "validate_overlap",
    "SeededRng", "gaussian_sample", "matmul",
    "AdamWConfig", "LossConfig", "ScheduleConfig", "TrainConfig",
    "adamw_step", "glorot_init", "loss", "loss_gradient", "lr_at", "train",
    "__version__",
]
