"""Parameter-free spatial attention toolkit (C++ core)."""

from ._pfsa import (
    ConfigError,
    ContractError,
    DimensionError,
    Error,
    IoError,
    ParseError,
    TrainingError,
    attention_map,
    cam_full_fc,
    cam_gap,
    cam_sa,
    cli,
    evaluate_protocol,
    gap,
    generate_toy,
    gradcheck,
    heatmap_levels,
    read_checkpoint,
    read_ppm,
    sa_backward,
    sa_forward,
    sa_jacobian,
    stripe_pool,
    write_checkpoint,
    write_ppm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
