"""Residual denoising CNN engine with from-scratch training and inference.

The pieces, bottom up: `tensor` (array helpers and precision rules),
`rng` (seeded reproducible streams), `layers` (convolution, batch norm,
ReLU with hand-written gradients), `model` (network assembly, forward,
backward, serialization), `train` (loss, optimizers, epoch loop),
`degrade` (noise, bicubic blur, compression), `data` (image I/O, patches,
manifests), `metrics` (PSNR, SSIM, evaluation reports), and `cli`.
"""

from .data import PatchDataset, build_dataset, load_image, save_image
from .degrade import (
    Awgn,
    AwgnRange,
    Bicubic,
    BicubicChoice,
    Jpeg,
    JpegRange,
    MultiTask,
    degrade,
)
from .metrics import MetricReport, evaluate, psnr, ssim
from .model import (
    Model,
    NetworkSpec,
    build_network,
    denoise,
    forward,
    load_model,
    save_model,
)
from .rng import SeededRng
from .train import History, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Awgn",
    "AwgnRange",
    "Bicubic",
    "BicubicChoice",
    "History",
    "Jpeg",
    "JpegRange",
    "MetricReport",
    "Model",
    "MultiTask",
    "NetworkSpec",
    "PatchDataset",
    "SeededRng",
    "TrainConfig",
    "build_dataset",
    "build_network",
    "degrade",
    "denoise",
    "evaluate",
    "forward",
    "load_image",
    "load_model",
    "psnr",
    "save_image",
    "save_model",
    "ssim",
    "train",
    "__version__",
]
