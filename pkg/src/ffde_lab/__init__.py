"""Fractional fast diffusion lab - simulate du/dt = -A u^m on bounded domains and check its estimates."""

__version__ = "0.1.0"

from ffde_lab.core import ExperimentService
from ffde_lab.settings import ExperimentConfig, Settings

__all__ = ["ExperimentConfig", "ExperimentService", "Settings", "__version__"]
