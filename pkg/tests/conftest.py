from __future__ import annotations

import numpy as np
import pytest

from latentdiff.core import Image, LatentVector


def make_image(arr) -> Image:
    """Grayscale Image from a 2-D array (or HxWxC from 3-D)."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        return Image(width=arr.shape[1], height=arr.shape[0], channels=1,
                     pixels=arr.ravel())
    return Image(width=arr.shape[1], height=arr.shape[0], channels=arr.shape[2],
                 pixels=arr.ravel())


def make_latent(*values, dim: int | None = None) -> LatentVector:
    v = np.array(values, dtype=np.float64)
    if dim is not None and v.size < dim:
        v = np.concatenate([v, np.zeros(dim - v.size)])
    return LatentVector(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
