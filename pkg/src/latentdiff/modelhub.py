"""Model roles the search runs against, plus an analytic synthetic testbed.

Roles wrap black boxes: a generator (latent -> image), a pair of
classifiers (image -> probability vector), an optional discriminator
(image -> realism score), and a feature extractor (image -> vector).
Each may be backed by a PFN model directory or by the built-in testbed,
a closed-form Gaussian-blob world with known ground truth that makes a
full search run in seconds.

All roles are immutable and reentrant; concurrent evaluation workers
may share them freely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netrunner
from .core import Image, LatentVector, ProbabilityVector


class GeneratorRole:
    """latent -> Image, with declared latent dimension and bounds."""

    latent_dim: int
    latent_low: float
    latent_high: float
    image_shape: tuple[int, int, int]  # (height, width, channels)

    def generate(self, z: LatentVector) -> Image:
        raise NotImplementedError


class ClassifierRole:
    """Image -> ProbabilityVector over a declared class count."""

    n_classes: int

    def classify(self, image: Image) -> ProbabilityVector:
        raise NotImplementedError


class DiscriminatorRole:
    """Image -> realism score in [0, 1]."""

    def score(self, image: Image) -> float:
        raise NotImplementedError


class FeatureExtractorRole:
    """Image -> fixed-length real feature vector."""

    n_features: int

    def extract(self, image: Image) -> np.ndarray:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Synthetic testbed
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestbedConfig:
    """A WxW grayscale world containing one Gaussian blob.

    The first three latent components place the blob center (x, y) and
    set its amplitude.  Two classifiers split the image into quadrants
    at (threshold_x, W/2) on the intensity centroid; they differ only in
    their x thresholds, so they disagree exactly when the centroid falls
    in the band (threshold_a, threshold_b].  An exact ground-truth rule
    sits between them.
    """

    side: int = 16
    spread: float = 2.0
    threshold_a: float | None = None      # defaults to side / 2
    threshold_b: float | None = None      # defaults to side / 2 + 1.5
    threshold_truth: float | None = None  # defaults to side / 2 + 0.75
    tau: float = 2.0

    def __post_init__(self):
        if self.side < 4:
            raise ValueError("testbed side must be at least 4")
        if self.spread <= 0 or self.tau <= 0:
            raise ValueError("spread and tau must be positive")
        half = self.side / 2.0
        if self.threshold_a is None:
            object.__setattr__(self, "threshold_a", half)
        if self.threshold_b is None:
            object.__setattr__(self, "threshold_b", half + 1.5)
        if self.threshold_truth is None:
            object.__setattr__(self, "threshold_truth",
                               (self.threshold_a + self.threshold_b) / 2.0)
        if not (self.threshold_a < self.threshold_truth < self.threshold_b):
            raise ValueError("thresholds must satisfy a < truth < b")


def blob_center(z: LatentVector, cfg: TestbedConfig) -> tuple[float, float, float]:
    """Analytic (cx, cy, amplitude) encoded by the first three genes."""
    v = z.values
    if len(v) < 3:
        raise ValueError("testbed latents need at least 3 components")
    if np.any(v < -1.0) or np.any(v > 1.0):
        raise ValueError("testbed latents must lie in [-1, 1]")
    top = cfg.side - 1
    cx = (v[0] + 1.0) / 2.0 * top
    cy = (v[1] + 1.0) / 2.0 * top
    amp = 0.5 + 0.25 * (v[2] + 1.0)
    return float(cx), float(cy), float(amp)


def testbed_generate(z: LatentVector, cfg: TestbedConfig) -> Image:
    """Render the blob: I(x, y) = a * exp(-((x-cx)^2 + (y-cy)^2) / (2 s^2))."""
    cx, cy, amp = blob_center(z, cfg)
    coords = np.arange(cfg.side, dtype=np.float64)
    gx = np.exp(-((coords - cx) ** 2) / (2.0 * cfg.spread ** 2))
    gy = np.exp(-((coords - cy) ** 2) / (2.0 * cfg.spread ** 2))
    img = amp * np.outer(gy, gx)
    np.clip(img, 0.0, 1.0, out=img)
    return Image(width=cfg.side, height=cfg.side, channels=1,
                 pixels=img.astype(np.float32).ravel())


def _centroid(gray: np.ndarray) -> tuple[float, float, float]:
    """(cx_hat, cy_hat, mass); degenerate all-zero images report the center."""
    mass = float(gray.sum())
    side_y, side_x = gray.shape
    if mass <= 0.0:
        return (side_x - 0.0) / 2.0, (side_y - 0.0) / 2.0, 0.0
    xs = np.arange(side_x, dtype=np.float64)
    ys = np.arange(side_y, dtype=np.float64)
    cx = float((gray.sum(axis=0) @ xs) / mass)
    cy = float((gray.sum(axis=1) @ ys) / mass)
    return cx, cy, mass


def _quadrant_centers(threshold_x: float, cfg: TestbedConfig) -> np.ndarray:
    """Class centers placed symmetrically about (threshold_x, W/2) so the
    soft argmax switches exactly at the thresholds."""
    q = cfg.side / 4.0
    half = cfg.side / 2.0
    centers = []
    for y_sign in (-1.0, 1.0):
        for x_sign in (-1.0, 1.0):
            centers.append((threshold_x + x_sign * q, half + y_sign * q))
    return np.array(centers)  # class k = (x right?) + 2 * (y high?)


def quadrant_index(cx: float, cy: float, threshold_x: float, cfg: TestbedConfig) -> int:
    return int(cx > threshold_x) + 2 * int(cy > cfg.side / 2.0)


def testbed_classify(image: Image, threshold_x: float, cfg: TestbedConfig) -> ProbabilityVector:
    """Soft quadrant classifier on the pixel-mass centroid.

    p_k is proportional to exp(-d_k / tau) where d_k is the distance
    from the centroid to quadrant center k.  An all-zero image gets the
    uniform distribution.
    """
    gray = image.gray()
    cx, cy, mass = _centroid(gray)
    if mass <= 0.0:
        return ProbabilityVector(np.full(4, 0.25))
    centers = _quadrant_centers(threshold_x, cfg)
    d = np.sqrt((centers[:, 0] - cx) ** 2 + (centers[:, 1] - cy) ** 2)
    logits = -d / cfg.tau
    e = np.exp(logits - logits.max())
    return ProbabilityVector(e / e.sum())


def testbed_truth(z: LatentVector, cfg: TestbedConfig):
    """Exact quadrant of the analytic blob center under the truth threshold."""
    from .core import ClassLabel
    cx, cy, _ = blob_center(z, cfg)
    return ClassLabel(quadrant_index(cx, cy, cfg.threshold_truth, cfg))


def testbed_discriminator(image: Image) -> float:
    """1.0 when the brightest pixel lands in [0.4, 1.0], else 0.0."""
    peak = float(image.pixels.max()) if image.pixels.size else 0.0
    return 1.0 if 0.4 <= peak <= 1.0 else 0.0


def testbed_features(image: Image) -> np.ndarray:
    """[cx_hat, cy_hat, max pixel, mass-weighted spread]."""
    gray = image.gray()
    cx, cy, mass = _centroid(gray)
    if mass <= 0.0:
        return np.array([cx, cy, 0.0, 0.0])
    ys, xs = np.indices(gray.shape)
    r2 = (xs - cx) ** 2 + (ys - cy) ** 2
    spread = float(np.sqrt((gray * r2).sum() / mass))
    return np.array([cx, cy, float(gray.max()), spread])


class TestbedGenerator(GeneratorRole):
    def __init__(self, cfg: TestbedConfig, latent_dim: int = 100):
        if latent_dim < 3:
            raise ValueError("testbed generator needs latent_dim >= 3")
        self.cfg = cfg
        self.latent_dim = latent_dim
        self.latent_low = -1.0
        self.latent_high = 1.0
        self.image_shape = (cfg.side, cfg.side, 1)

    def generate(self, z: LatentVector) -> Image:
        return testbed_generate(z, self.cfg)


class TestbedClassifier(ClassifierRole):
    n_classes = 4

    def __init__(self, cfg: TestbedConfig, threshold_x: float):
        self.cfg = cfg
        self.threshold_x = float(threshold_x)

    def classify(self, image: Image) -> ProbabilityVector:
        return testbed_classify(image, self.threshold_x, self.cfg)


class TestbedDiscriminator(DiscriminatorRole):
    def score(self, image: Image) -> float:
        return testbed_discriminator(image)


class TestbedExtractor(FeatureExtractorRole):
    n_features = 4

    def __init__(self, cfg: TestbedConfig):
        self.cfg = cfg

    def extract(self, image: Image) -> np.ndarray:
        return testbed_features(image)


def testbed_roles(cfg: TestbedConfig, latent_dim: int = 100):
    """(generator, classifier_a, classifier_b, discriminator, extractor)."""
    return (TestbedGenerator(cfg, latent_dim),
            TestbedClassifier(cfg, cfg.threshold_a),
            TestbedClassifier(cfg, cfg.threshold_b),
            TestbedDiscriminator(),
            TestbedExtractor(cfg))


# ---------------------------------------------------------------------------
# PFN-backed roles
# ---------------------------------------------------------------------------

class RoleMismatchError(ValueError):
    """Loaded network's shape or activations do not fit the requested role."""


def _as_image(arr: np.ndarray) -> Image:
    if arr.ndim != 3:
        raise RoleMismatchError(f"generator output must be (C,H,W), got {arr.shape}")
    c, h, w = arr.shape
    if c not in (1, 3):
        raise RoleMismatchError(f"generator output channels must be 1 or 3, got {c}")
    pixels = np.clip(arr, 0.0, 1.0).transpose(1, 2, 0).ravel()
    return Image(width=w, height=h, channels=c, pixels=pixels)


def _image_input(image: Image, shape: tuple[int, ...]) -> np.ndarray:
    arr = image.as_array().transpose(2, 0, 1).astype(np.float32)  # (C,H,W)
    if len(shape) == 1:
        flat = arr.ravel()
        if flat.size != shape[0]:
            raise RoleMismatchError(
                f"image has {flat.size} values, network wants {shape[0]}")
        return flat
    if tuple(arr.shape) != shape:
        raise RoleMismatchError(
            f"image shape {arr.shape} does not match network input {shape}")
    return arr


class PfnGenerator(GeneratorRole):
    """Generator adapter; tanh outputs are rescaled from [-1, 1] to [0, 1]."""

    def __init__(self, path):
        net = netrunner.load_network(path)
        if len(net.input_shape) != 1:
            raise RoleMismatchError(
                f"generator network must take a flat latent, got {net.input_shape}")
        out = net.output_shape
        if len(out) != 3 or out[0] not in (1, 3):
            raise RoleMismatchError(
                f"generator network must emit (C,H,W) with 1 or 3 channels, got {out}")
        final = net.layers[-1].kind if net.layers else ""
        if final not in ("tanh", "sigmoid"):
            raise RoleMismatchError(
                f"generator network must end in tanh or sigmoid, got {final!r}")
        self.net = net
        self._rescale = final == "tanh"
        self.latent_dim = net.input_shape[0]
        lo, hi = net.metadata.get("latent_bounds", (-1.0, 1.0))
        self.latent_low = float(lo)
        self.latent_high = float(hi)
        self.image_shape = (out[1], out[2], out[0])

    def generate(self, z: LatentVector) -> Image:
        out = netrunner.infer(self.net, z.values.astype(np.float32))
        if self._rescale:
            out = (out + 1.0) / 2.0
        return _as_image(out)


class PfnClassifier(ClassifierRole):
    def __init__(self, path):
        net = netrunner.load_network(path)
        out = net.output_shape
        if len(out) != 1 or out[0] < 2:
            raise RoleMismatchError(
                f"classifier network must emit a class vector, got {out}")
        if not net.layers or net.layers[-1].kind != "softmax":
            raise RoleMismatchError("classifier network must end in softmax")
        self.net = net
        self.n_classes = out[0]

    def classify(self, image: Image) -> ProbabilityVector:
        probs = netrunner.infer(self.net, _image_input(image, self.net.input_shape))
        return ProbabilityVector(probs.astype(np.float64))


class PfnDiscriminator(DiscriminatorRole):
    def __init__(self, path):
        net = netrunner.load_network(path)
        out = net.output_shape
        if out != (1,):
            raise RoleMismatchError(
                f"discriminator network must emit a scalar, got {out}")
        if not net.layers or net.layers[-1].kind != "sigmoid":
            raise RoleMismatchError("discriminator network must end in sigmoid")
        self.net = net

    def score(self, image: Image) -> float:
        out = netrunner.infer(self.net, _image_input(image, self.net.input_shape))
        return float(np.clip(out[0], 0.0, 1.0))


class PfnExtractor(FeatureExtractorRole):
    def __init__(self, path):
        net = netrunner.load_network(path)
        out = net.output_shape
        if len(out) != 1:
            raise RoleMismatchError(
                f"extractor network must emit a flat vector, got {out}")
        self.net = net
        self.n_features = out[0]

    def extract(self, image: Image) -> np.ndarray:
        out = netrunner.infer(self.net, _image_input(image, self.net.input_shape))
        return out.astype(np.float64)


def pfn_generator(path) -> PfnGenerator:
    return PfnGenerator(path)


def pfn_classifier(path) -> PfnClassifier:
    return PfnClassifier(path)


def pfn_discriminator(path) -> PfnDiscriminator:
    return PfnDiscriminator(path)


def pfn_extractor(path) -> PfnExtractor:
    return PfnExtractor(path)
