"""Wavelet-domain score diffusion for sparse-view fan-beam CT.

Modules, roughly in pipeline order:

* :mod:`sword.phantom` - image grids and analytic ellipse phantoms
* :mod:`sword.projector` - fan-beam geometry, Siddon projector, view masks
* :mod:`sword.fbp` - fan-beam filtered backprojection
* :mod:`sword.wavelet` - single-level Haar transform of sinograms
* :mod:`sword.diffusion` - noise schedule, perturbation, score matching
* :mod:`sword.scorenet` - trainable patch score network
* :mod:`sword.sampler` - predictor-corrector reconstruction
* :mod:`sword.metrics` - PSNR, SSIM, MSE
* :mod:`sword.io`, :mod:`sword.config`, :mod:`sword.pipeline`, :mod:`sword.cli`
"""
from .errors import (ConfigError, DivergenceError, FormatError, InvalidArgument,
                     SamplerDiverged, SwordError, TrainingDiverged)
from .phantom import GridSpec, Image, make_grid
from .projector import FanBeamGeometry, Sinogram, SparseSinogram, ViewMask, default_geometry

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DivergenceError", "FormatError", "InvalidArgument", "SamplerDiverged",
    "SwordError", "TrainingDiverged", "GridSpec", "Image", "make_grid", "FanBeamGeometry",
    "Sinogram", "SparseSinogram", "ViewMask", "default_geometry", "__version__",
]
