"""Python bindings for the korol C++ core."""

from ._korol import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    FormatError,
    KoopmanModel,
    KorolError,
    RankDeficientError,
    dct2,
    evaluate,
    fit,
    gen_demo,
    gen_demos,
    idct2,
    lift,
    lift_dim,
    load_koopman,
    model_checksum,
    parse_config,
    read_trajectory,
    train,
    unlift,
)

__all__ = [name for name in dir() if not name.startswith("_")]
