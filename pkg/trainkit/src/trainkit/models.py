"""Torch model definitions for the toy bundle.

Every module is a plain nn.Sequential of exportable layers (see
export.SUPPORTED) so the PFN writer can walk them mechanically.
"""

from __future__ import annotations

import torch
from torch import nn

LATENT_DIM = 100
IMAGE_SIDE = 8


class Reshape(nn.Module):
    """Batch-preserving reshape to a fixed (C, H, W)."""

    def __init__(self, *shape: int):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(x.shape[0], *self.shape)


def build_generator(latent_dim: int = LATENT_DIM) -> nn.Sequential:
    """latent -> 8x8 grayscale in [-1, 1] (tanh; the engine rescales)."""
    return nn.Sequential(
        nn.Linear(latent_dim, 128),
        nn.ReLU(),
        nn.Linear(128, 32 * 2 * 2),
        nn.ReLU(),
        Reshape(32, 2, 2),
        nn.ConvTranspose2d(32, 16, kernel_size=4, stride=2, padding=1),
        nn.ReLU(),
        nn.ConvTranspose2d(16, 1, kernel_size=4, stride=2, padding=1),
        nn.Tanh(),
    )


def build_discriminator() -> nn.Sequential:
    """8x8 grayscale in [0, 1] -> realism score in (0, 1)."""
    return nn.Sequential(
        nn.Conv2d(1, 8, kernel_size=3, stride=2, padding=1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),
        nn.LeakyReLU(0.2),
        nn.Flatten(),
        nn.Linear(16 * 2 * 2, 1),
        nn.Sigmoid(),
    )


def build_classifier_trunk(variant: str) -> nn.Sequential:
    """Logit networks for the classifier pair.

    Both share the architecture; variant "b" adds a batchnorm stage (and
    is trained with a different optimizer upstream), mirroring the kind
    of single-dimension variation the engine is meant to probe.
    """
    layers = [nn.Conv2d(1, 8, kernel_size=3, stride=1, padding=1),
              nn.ReLU()]
    if variant == "b":
        layers.append(nn.BatchNorm2d(8))
    layers += [
        nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),
        nn.ReLU(),
        nn.Flatten(),
        nn.Linear(16 * 4 * 4, 10),
    ]
    return nn.Sequential(*layers)


def with_softmax(trunk: nn.Sequential) -> nn.Sequential:
    """Inference head: the exported classifier ends in softmax."""
    return nn.Sequential(*list(trunk), nn.Softmax(dim=-1))
