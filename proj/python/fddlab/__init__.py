"""Python bindings for the fddlab core library."""

from ._core import (
    ConfigError,
    MissingDependency,
    NoiseSchedule,
    NumericalError,
    align,
    compare,
    config_hash,
    evaluate,
    gen_data,
    kbin_timesteps,
    kbin_valid,
    make_schedule,
    pretrain_backbone,
    psnr,
    random_scene,
    read_fdt1,
    resolved_config,
    selftest,
    train_edit,
    train_video,
    write_fdt1,
)

__all__ = [name for name in dir() if not name.startswith("_")]
