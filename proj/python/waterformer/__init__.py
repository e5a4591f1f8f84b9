"""WaterFormer underwater image enhancement."""

from ._core import (
    ConfigError,
    DimensionError,
    DomainError,
    IncompatibleError,
    IngestionError,
    IntegrityError,
    Model,
    TrainingError,
    degrade,
    lr_at,
    nrmse,
    psnr,
    recover,
    rgb_to_yiq,
    ssim,
    uciqe,
    uiqm,
    water_type,
    yiq_to_rgb,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DomainError",
    "IncompatibleError",
    "IngestionError",
    "IntegrityError",
    "Model",
    "TrainingError",
    "degrade",
    "lr_at",
    "nrmse",
    "psnr",
    "recover",
    "rgb_to_yiq",
    "ssim",
    "uciqe",
    "uiqm",
    "water_type",
    "yiq_to_rgb",
]
