"""Meta-learned quality priors for no-reference image quality assessment."""

from ._metaiqa import (
    RESULTS_HEADER,
    Config,
    MetaIQAError,
    Model,
    adam_trajectory,
    derive_seed,
    fractional_ranks,
    outer_update,
    plcc,
    run_protocol,
    run_protocol_csv,
    srocc,
)

__all__ = [
    "RESULTS_HEADER",
    "Config",
    "MetaIQAError",
    "Model",
    "adam_trajectory",
    "derive_seed",
    "fractional_ranks",
    "outer_update",
    "plcc",
    "run_protocol",
    "run_protocol_csv",
    "srocc",
]
