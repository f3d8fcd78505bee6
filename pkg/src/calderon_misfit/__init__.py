"""Numerical probes of misfit-functional stability for the anisotropic
Calderon problem on layered box domains."""

from . import (conductivity, config, experiments, fem, geometry, kernels,
               misfit, presets, report, smallness)

__all__ = ["conductivity", "config", "experiments", "fem", "geometry",
           "kernels", "misfit", "presets", "report", "smallness"]

__version__ = "0.1.0"
