from ._fgpfe import (
    ConfigError,
    Error,
    IoError,
    Model,
    ShapeError,
    check_grad,
    default_config,
    gen_scene,
    load_points,
    make_labels,
    normalize_config,
    quantize,
    save_points,
)

__all__ = [
    "ConfigError",
    "Error",
    "IoError",
    "Model",
    "ShapeError",
    "check_grad",
    "default_config",
    "gen_scene",
    "load_points",
    "make_labels",
    "normalize_config",
    "quantize",
    "save_points",
]
