"""latentdiff: black-box differential testing of classifier pairs.

Searches a generative model's latent space with a two-objective
evolutionary algorithm for inputs on which two classifiers of similar
accuracy disagree, then filters, measures, and exploits the results.
"""

__version__ = "0.1.0"

from .core import (
    ClassLabel,
    Image,
    LatentVector,
    ProbabilityVector,
    argmax_label,
    cosine_distance,
    euclidean_distance,
    is_triggering,
    pixel_digest,
)

__all__ = [
    "__version__",
    "ClassLabel",
    "Image",
    "LatentVector",
    "ProbabilityVector",
    "argmax_label",
    "cosine_distance",
    "euclidean_distance",
    "is_triggering",
    "pixel_digest",
]
