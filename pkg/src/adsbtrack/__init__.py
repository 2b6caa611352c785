"""Adaptive IMM Kalman tracking of ADS-B reports with a recurrent noise-scale network."""

__version__ = "0.1.0"

from .kalman import FilterDivergence
from .models import NoiseBounds, NoiseParams

__all__ = ["FilterDivergence", "NoiseBounds", "NoiseParams", "__version__"]
