"""Exact sampling of reflected Brownian motion in the orthant at a fixed time."""

__version__ = "0.1.0"

from .bridge_math import (  # noqa: E402
    Band,
    BandDensityParams,
    BridgeGeometry,
    SeriesBounds,
    gamma,
    gamma_bounds,
)
from .sampler import SampleResult, SamplerConfig, sample  # noqa: E402
from .skorokhod import Polyline, ReflectionSpec, reflect, validate_spec  # noqa: E402

__all__ = [
    "Band",
    "BandDensityParams",
    "BridgeGeometry",
    "Polyline",
    "ReflectionSpec",
    "SampleResult",
    "SamplerConfig",
    "SeriesBounds",
    "gamma",
    "gamma_bounds",
    "reflect",
    "sample",
    "validate_spec",
]
