"""Audio-driven video synthesis: feature extraction, metrics and the training pipeline."""

from ._avsynth import (
    ConfigError,
    DependencyError,
    Error,
    IoError,
    ShapeError,
    default_config,
    frame_dir_checksum,
    log_mel,
    make_synthetic,
    mse,
    prepare,
    psnr,
    read_wav,
    render_pose,
    ssim,
    synthesize,
    train_all,
    write_wav,
)

__all__ = [
    "ConfigError",
    "DependencyError",
    "Error",
    "IoError",
    "ShapeError",
    "default_config",
    "frame_dir_checksum",
    "log_mel",
    "make_synthetic",
    "mse",
    "prepare",
    "psnr",
    "read_wav",
    "render_pose",
    "ssim",
    "synthesize",
    "train_all",
    "write_wav",
]
