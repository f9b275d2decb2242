"""Near-field beamfocusing toolkit.

Simulates spherical-wave channels for a BS ULA assisted by a RIS panel,
builds polar-grid beam codebooks, generates beam-scan feedback datasets,
and trains a small attention network that maps scan maps to device
coordinates. See README.md for the CLI entry points.
"""

__version__ = "0.1.0"

from .geometry import (
    ArrayGeometry,
    FieldRegion,
    PolarCoord,
    classify_region,
    rayleigh_distance,
    to_ris_frame,
)
from .channel import ChannelSet, NoiseModel, RisPhaseConfig, SimConfig

__all__ = [
    "ArrayGeometry",
    "ChannelSet",
    "FieldRegion",
    "NoiseModel",
    "PolarCoord",
    "RisPhaseConfig",
    "SimConfig",
    "classify_region",
    "rayleigh_distance",
    "to_ris_frame",
    "__version__",
]
