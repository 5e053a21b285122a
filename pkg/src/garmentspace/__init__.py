"""Garment design engine: sketches, pattern/body parameters, and draped
3D garments linked through one learned latent space.

Subpackages are deliberately flat: one module per subsystem (patterns,
mannequin, drape, correspond, shapespace, sketchpipe, neural, jointmodel,
styleretarget, datagen, server, cli).
"""

__version__ = "0.1.0"

from .patterns import GarmentType, GarmentParams, param_count, sample_params
from .mannequin import BodyShape, build_mannequin

__all__ = [
    "GarmentType",
    "GarmentParams",
    "BodyShape",
    "param_count",
    "sample_params",
    "build_mannequin",
    "__version__",
]
