"""trainkit: desk-scale model training and PFN export.

Trains a small GAN (generator + discriminator) and two digit
classifiers that differ in one training dimension (their optimizer),
then exports everything to the PFN directory format consumed by the
latentdiff engine.
"""

__version__ = "0.1.0"

from .export import ExportError, export_pfn
from .train import ExportBundle, train_toy_models

__all__ = ["__version__", "ExportError", "export_pfn", "ExportBundle",
           "train_toy_models"]
