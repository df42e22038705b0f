"""Integrated location sensing and communication simulation for ultra-massive MIMO.

Channel synthesis with near-field and beam-squint effects, compressive
channel estimation on a polar lattice, scatterer and UT localisation, and
squint-robust hybrid beamforming, plus a seeded Monte-Carlo harness.
"""

__version__ = "0.1.0"

from .config import SystemConfig, load_config, profile  # noqa: E402
from .kernels import BACKEND  # noqa: E402

__all__ = ["SystemConfig", "profile", "load_config", "BACKEND", "__version__"]
