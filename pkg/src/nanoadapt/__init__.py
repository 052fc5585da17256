"""Pooled-query attention adaptor pipeline with complexity and caption metrics."""

__version__ = "0.1.0"

from .estimators import (
    AdaptiveSliceEncoder,
    MLPAdaptor,
    NanoTransformerAdaptor,
    PixelShuffleCompressor,
    ToyCaptioner,
    VanillaAttentionAdaptor,
)
from .exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    LengthError,
    NanoAdaptError,
    NumericError,
    UndefinedMetricError,
)
