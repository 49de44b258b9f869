"""Post-search validity filtering and byte-level dedup.

The pipeline order is fixed: dedup, then the discriminator gate, then
the structural-similarity gate against an operator-supplied reference
corpus.  It runs once, after the search has finished; in-loop filtering
is deliberately not offered.

SSIM here is the canonical mean-of-local-windows form: an 11x11
Gaussian window (sigma 1.5) slid with symmetric padding, constants
C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L = 1 for unit-range pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Image, pixel_digest

_WINDOW_SIZE = 11
_SIGMA = 1.5
_C1 = (0.01 * 1.0) ** 2
_C2 = (0.03 * 1.0) ** 2


def _gaussian_taps(size: int = _WINDOW_SIZE, sigma: float = _SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


_TAPS = _gaussian_taps()


def _window_filter(stack: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means over the last two axes, symmetric
    padding, output the same spatial size as the input."""
    pad = _WINDOW_SIZE // 2
    widths = [(0, 0)] * (stack.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(stack, widths, mode="symmetric")
    # separable: correlate along each spatial axis in turn (the window
    # axis lands at the end of the view either way)
    win = np.lib.stride_tricks.sliding_window_view(padded, _WINDOW_SIZE, axis=-1)
    out = win @ _TAPS
    win = np.lib.stride_tricks.sliding_window_view(out, _WINDOW_SIZE, axis=-2)
    return win @ _TAPS


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Local SSIM maps; inputs broadcast over leading axes."""
    mu_a = _window_filter(a)
    mu_b = _window_filter(b)
    var_a = _window_filter(a * a) - mu_a * mu_a
    var_b = _window_filter(b * b) - mu_b * mu_b
    cov = _window_filter(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2)
    den = (mu_a * mu_a + mu_b * mu_b + _C1) * (var_a + var_b + _C2)
    return num / den


def ssim(a: Image, b: Image) -> float:
    """Mean local structural similarity of two same-shape images.

    RGB images are reduced to grayscale by channel mean first.
    """
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")
    ga = a.gray()
    gb = b.gray()
    if np.array_equal(ga, gb):
        return 1.0
    return float(_ssim_maps(ga, gb).mean())


def max_ssim(image: Image, refs: list[Image]) -> float:
    """Highest SSIM between the image and any reference; exhaustive scan."""
    if not refs:
        raise ValueError("reference set must be non-empty")
    gray = image.gray()
    best = -np.inf
    stack = _ref_stack(refs, image.shape)
    # batch the windowed statistics over all references at once
    maps = _ssim_maps(gray[None, :, :], stack)
    best = float(maps.mean(axis=(1, 2)).max())
    if any(np.array_equal(gray, stack[i]) for i in range(stack.shape[0])):
        best = 1.0
    return best


def _ref_stack(refs: list[Image], shape) -> np.ndarray:
    for r in refs:
        if r.shape != shape:
            raise ValueError(f"reference shape {r.shape} does not match {shape}")
    return np.stack([r.gray() for r in refs])


@dataclass(frozen=True)
class RecordVerdict:
    record_id: str
    stage: str            # "kept", "duplicate", "discriminator", "ssim"
    discriminator_score: float | None = None
    ssim_score: float | None = None

    @property
    def kept(self) -> bool:
        return self.stage == "kept"


@dataclass
class FilterReport:
    input_count: int
    kept_count: int
    removed_duplicate: int
    removed_by_discriminator: int
    removed_by_ssim: int
    verdicts: list[RecordVerdict] = field(default_factory=list)

    def check(self):
        total = (self.kept_count + self.removed_duplicate
                 + self.removed_by_discriminator + self.removed_by_ssim)
        if total != self.input_count:
            raise ValueError(
                f"filter counts {total} do not partition input {self.input_count}")


def dedup(records) -> tuple[list, int]:
    """Keep the first record per image byte digest, preserving order."""
    seen = set()
    unique = []
    dup_count = 0
    for rec in records:
        digest = rec.content_hash if hasattr(rec, "content_hash") else pixel_digest(rec.image)
        if digest in seen:
            dup_count += 1
        else:
            seen.add(digest)
            unique.append(rec)
    return unique, dup_count


def discriminator_filter(records, disc, threshold: float = 0.5):
    """Keep records the discriminator scores at or above the threshold.

    Order-preserving; returns (kept, removed, scores by record id).
    """
    kept, removed, scores = [], [], {}
    for rec in records:
        try:
            s = float(disc.score(rec.image))
        except Exception as e:
            raise RuntimeError(
                f"discriminator failed on record {rec.record_id}; "
                f"{len(kept) + len(removed)} of {len(records)} scored") from e
        scores[rec.record_id] = s
        (kept if s >= threshold else removed).append(rec)
    return kept, removed, scores


def ssim_filter(records, refs: list[Image], threshold: float = 0.40,
                batch: int = 256):
    """Keep records whose best SSIM against the references clears the
    threshold.  Runs after the discriminator stage, on the final archive
    only.  Returns (kept, removed, scores by record id)."""
    if not refs:
        raise ValueError(
            "SSIM filtering needs a reference corpus; pass the models' "
            "test set or another trusted image directory")
    kept, removed, scores = [], [], {}
    if not records:
        return kept, removed, scores
    ref_stack = _ref_stack(refs, records[0].image.shape)
    ref_mu = _window_filter(ref_stack)
    ref_var = _window_filter(ref_stack * ref_stack) - ref_mu * ref_mu
    for lo in range(0, len(records), batch):
        chunk = records[lo:lo + batch]
        grays = np.stack([r.image.gray() for r in chunk])
        mu = _window_filter(grays)
        var = _window_filter(grays * grays) - mu * mu
        # cross terms pair every chunk image with every reference
        prod = _window_filter(grays[:, None, :, :] * ref_stack[None, :, :, :])
        cov = prod - mu[:, None] * ref_mu[None, :]
        num = (2.0 * mu[:, None] * ref_mu[None, :] + _C1) * (2.0 * cov + _C2)
        den = ((mu[:, None] ** 2 + ref_mu[None, :] ** 2 + _C1)
               * (var[:, None] + ref_var[None, :] + _C2))
        best = (num / den).mean(axis=(2, 3)).max(axis=1)
        for rec, s in zip(chunk, best):
            scores[rec.record_id] = float(s)
            (kept if s >= threshold else removed).append(rec)
    return kept, removed, scores


def run_filter_pipeline(records, disc=None, refs: list[Image] | None = None,
                        disc_threshold: float = 0.5,
                        ssim_threshold: float = 0.40) -> tuple[list, FilterReport]:
    """dedup -> discriminator -> SSIM, with a reconciled report.

    Either stage can be skipped by passing None for its dependency; the
    report accounts for every input record exactly once.
    """
    records = list(records)
    fate: dict[int, RecordVerdict] = {}   # keyed by object identity

    surviving, dup_count = dedup(records)
    unique_ids = {id(r) for r in surviving}
    for rec in records:
        if id(rec) not in unique_ids:
            fate[id(rec)] = RecordVerdict(rec.record_id, "duplicate")

    disc_scores: dict[str, float] = {}
    if disc is not None:
        surviving, removed, disc_scores = discriminator_filter(
            surviving, disc, disc_threshold)
        for rec in removed:
            fate[id(rec)] = RecordVerdict(
                rec.record_id, "discriminator",
                discriminator_score=disc_scores[rec.record_id])

    ssim_scores: dict[str, float] = {}
    if refs is not None:
        surviving, removed, ssim_scores = ssim_filter(
            surviving, refs, ssim_threshold)
        for rec in removed:
            fate[id(rec)] = RecordVerdict(
                rec.record_id, "ssim",
                discriminator_score=disc_scores.get(rec.record_id),
                ssim_score=ssim_scores[rec.record_id])

    for rec in surviving:
        fate[id(rec)] = RecordVerdict(
            rec.record_id, "kept",
            discriminator_score=disc_scores.get(rec.record_id),
            ssim_score=ssim_scores.get(rec.record_id))

    verdicts = [fate[id(rec)] for rec in records]
    report = FilterReport(
        input_count=len(records),
        kept_count=len(surviving),
        removed_duplicate=dup_count,
        removed_by_discriminator=sum(1 for v in verdicts if v.stage == "discriminator"),
        removed_by_ssim=sum(1 for v in verdicts if v.stage == "ssim"),
        verdicts=verdicts,
    )
    report.check()
    return surviving, report
