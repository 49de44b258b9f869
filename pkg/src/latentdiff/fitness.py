"""The two search objectives and the archive of triggering inputs they feed.

Divergence rewards pairs of classifier outputs that are far apart, with
a +1 bonus when the predicted labels actually differ, so every
label-disagreement scores above every agreement.  Diversity rewards
images far (in cosine distance) from the archive's current cluster
representatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

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


def divergence_fitness(pa, pb) -> float:
    """Euclidean distance between the output vectors, plus 1 if the
    argmax labels differ."""
    d = euclidean_distance(pa, pb)
    return d + 1.0 if is_triggering(pa, pb) else d


def diversity_fitness(image: Image, reps: list[Image]) -> float:
    """Minimum cosine distance from the image to any representative.

    An empty representative set means nothing has been archived yet, so
    every candidate is maximally novel (1.0).
    """
    if not reps:
        return 1.0
    flat = image.flat()
    best = np.inf
    for rep in reps:
        if rep.shape != image.shape:
            raise ValueError(
                f"representative shape {rep.shape} does not match image {image.shape}")
        d = cosine_distance(flat, rep.flat())
        if d < best:
            best = d
    return float(best)


@dataclass(frozen=True)
class TriggeringRecord:
    """Archived evidence of one disagreement."""

    record_id: str
    latent: LatentVector
    image: Image
    content_hash: str
    label_a: ClassLabel
    label_b: ClassLabel
    probs_a: ProbabilityVector
    probs_b: ProbabilityVector
    divergence: float
    diversity_at_insert: float
    generation: int
    evaluation_index: int

    def validate(self):
        if self.label_a == self.label_b:
            raise ValueError(f"record {self.record_id}: labels must differ")
        if self.divergence <= 1.0:
            raise ValueError(
                f"record {self.record_id}: divergence {self.divergence} must exceed 1")
        if argmax_label(self.probs_a) != self.label_a:
            raise ValueError(f"record {self.record_id}: label_a is not argmax of probs_a")
        if argmax_label(self.probs_b) != self.label_b:
            raise ValueError(f"record {self.record_id}: label_b is not argmax of probs_b")
        if self.content_hash != pixel_digest(self.image):
            raise ValueError(f"record {self.record_id}: content hash mismatch")


@dataclass
class Archive:
    """Append-only store of triggering records, deduplicated by image bytes.

    Single writer: insertion happens at the per-generation barrier.
    Records are never mutated once inserted.
    """

    records: list[TriggeringRecord] = field(default_factory=list)
    representatives: list[Image] = field(default_factory=list)
    total_evaluations: int = 0
    _hash_index: set = field(default_factory=set, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, content_hash: str) -> bool:
        return content_hash in self._hash_index


def archive_insert(archive: Archive, record: TriggeringRecord) -> bool:
    """Insert unless the image's byte digest is already present.

    Invariant violations are rejected loudly, never silently.
    """
    record.validate()
    if record.content_hash in archive._hash_index:
        return False
    archive._hash_index.add(record.content_hash)
    archive.records.append(record)
    return True


@dataclass(frozen=True)
class EvalResult:
    divergence: float
    diversity: float
    triggering: bool
    probs_a: ProbabilityVector
    probs_b: ProbabilityVector
    image: Image


def evaluate(z: LatentVector, generator, model_a, model_b,
             reps: list[Image], evaluation_index: int | None = None) -> EvalResult:
    """One generator call and one call per classifier; pure given a fixed
    representatives snapshot."""
    try:
        image = generator.generate(z)
        pa = model_a.classify(image)
        pb = model_b.classify(image)
    except Exception as e:
        if evaluation_index is not None:
            raise RuntimeError(f"evaluation {evaluation_index} failed: {e}") from e
        raise
    return EvalResult(
        divergence=divergence_fitness(pa, pb),
        diversity=diversity_fitness(image, reps),
        triggering=is_triggering(pa, pb),
        probs_a=pa,
        probs_b=pb,
        image=image,
    )


def make_record(z: LatentVector, result: EvalResult, generation: int,
                evaluation_index: int) -> TriggeringRecord:
    """Build the archive record for a triggering evaluation."""
    return TriggeringRecord(
        record_id=f"r{evaluation_index:08d}",
        latent=z,
        image=result.image,
        content_hash=pixel_digest(result.image),
        label_a=argmax_label(result.probs_a),
        label_b=argmax_label(result.probs_b),
        probs_a=result.probs_a,
        probs_b=result.probs_b,
        divergence=result.divergence,
        diversity_at_insert=result.diversity,
        generation=generation,
        evaluation_index=evaluation_index,
    )
