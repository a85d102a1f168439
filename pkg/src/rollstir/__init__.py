"""Heat transfer by boundary-layer convection rolls.

Modules
-------
flow
    Streamfunctions, cut-offs, velocity fields and structural checks.
pde
    Steady cell problem: exponentially fitted finite volumes and norms.
sde
    Monte Carlo exit and hitting times of the stirred diffusion.
averaging
    Level-set contours, period and averaged coefficients of the level variable.
scaling
    Peclet numbers, parameter sweeps and exponent fits.
cli
    Command-line entry point, configuration files and run manifests.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
