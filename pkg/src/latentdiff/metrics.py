"""Quantitative measures for archives of generated inputs.

Covers run statistics (triggering counts, improvement over the initial
test set, coefficient of variation), entropy-based diversity of pooled
pixel values with its exponential "effective categories" form,
log-determinant geometric diversity of feature sets, and a bootstrap
estimator for validity ratios from hand-labeled samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Image, quantize_u8

DEGENERATE = float("-inf")


def shannon_entropy(images: list[Image]) -> float:
    """Entropy (nats) of the pooled 256-level pixel histogram."""
    if not images:
        raise ValueError("need at least one image")
    counts = np.zeros(256, dtype=np.int64)
    for img in images:
        counts += np.bincount(quantize_u8(img), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def exp_shannon(h: float) -> float:
    """e^H, the effective number of equally likely categories."""
    return math.exp(h)


def geometric_logdiv(features) -> float:
    """Log-determinant of the Gram matrix of L2-normalized feature rows.

    The determinant is the squared volume spanned by the normalized
    vectors; it collapses to zero (returned as -inf and reported as
    degenerate) whenever the rows are linearly dependent, e.g. when the
    set holds more vectors than feature dimensions or any duplicates.
    """
    V = np.asarray(features, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-D array")
    norms = np.linalg.norm(V, axis=1)
    norms[norms == 0.0] = 1.0
    V = V / norms[:, None]
    gram = V @ V.T
    eig = np.linalg.eigvalsh(gram)
    # rank tolerance: rounding noise must not disguise a singular Gram
    tol = gram.shape[0] * np.finfo(np.float64).eps * max(float(eig[-1]), 0.0)
    if eig[0] <= tol:
        return DEGENERATE
    return float(np.log(eig).sum())


def coefficient_of_variation(values) -> float:
    """Population standard deviation over mean, in percent."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need at least two values")
    mean = float(arr.mean())
    if mean == 0.0:
        raise ValueError("coefficient of variation is undefined for zero mean")
    return float(arr.std() / mean * 100.0)


def improvement_ratio(n_generated: int, n_initial: int) -> float:
    """Relative gain over the initially available triggering inputs, in percent."""
    if n_initial <= 0:
        raise ValueError("initial count must be positive")
    return (n_generated - n_initial) / n_initial * 100.0


def bootstrap_ratio_ci(labels, n_resamples: int = 1000, confidence: float = 0.95,
                       seed: int = 0) -> tuple[float, float, float]:
    """Bootstrap the valid fraction of a labeled sample.

    Resamples the labels with replacement n_resamples times and returns
    (mean ratio, lower, upper) at the requested confidence level.
    """
    arr = np.asarray(labels, dtype=bool)
    if arr.size == 0:
        raise ValueError("need at least one label")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(n_resamples, arr.size))
    ratios = arr[idx].mean(axis=1)
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(ratios, [alpha, 1.0 - alpha])
    return float(ratios.mean()), float(lo), float(hi)


@dataclass
class DiversityReport:
    sample_size: int
    repeats: int
    shannon_per_repeat: list[float]
    exp_shannon_per_repeat: list[float]
    geometric_per_repeat: list[float]
    seed: int
    used_full_archive: bool = False
    degenerate_geometric: int = 0

    @property
    def mean_shannon(self) -> float:
        return float(np.mean(self.shannon_per_repeat))

    @property
    def mean_exp_shannon(self) -> float:
        return float(np.mean(self.exp_shannon_per_repeat))

    @property
    def mean_geometric(self) -> float:
        finite = [g for g in self.geometric_per_repeat if g != DEGENERATE]
        return float(np.mean(finite)) if finite else DEGENERATE


def sampled_diversity_report(archive, extractor, sample: int = 1000,
                             repeats: int = 30, seed: int = 0) -> DiversityReport:
    """Repeatedly subsample the archive and average the diversity scores.

    When the archive is smaller than the requested sample, the full
    archive is measured once and the report is flagged accordingly.
    """
    records = archive.records
    if not records:
        raise ValueError("archive is empty")
    used_full = len(records) < sample
    if used_full:
        sample = len(records)
        repeats = 1
    rng = np.random.default_rng(seed)
    sh, esh, geo = [], [], []
    degenerate = 0
    for _ in range(repeats):
        if used_full:
            chosen = list(range(len(records)))
        else:
            chosen = rng.choice(len(records), size=sample, replace=False)
        images = [records[i].image for i in chosen]
        feats = np.stack([extractor.extract(img) for img in images])
        h = shannon_entropy(images)
        g = geometric_logdiv(feats)
        if g == DEGENERATE:
            degenerate += 1
        sh.append(h)
        esh.append(exp_shannon(h))
        geo.append(g)
    return DiversityReport(
        sample_size=sample, repeats=repeats,
        shannon_per_repeat=sh, exp_shannon_per_repeat=esh,
        geometric_per_repeat=geo, seed=seed,
        used_full_archive=used_full, degenerate_geometric=degenerate)
