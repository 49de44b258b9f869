"""Model-selection harness built on the archive.

Turns triggering records plus ground-truth labels into a labeled
dataset of "which model was right here", trains a selector to predict
the winner from input features, and scores it on held-out examples.
Records where neither model matched the truth are excluded from
training but counted, since they carry no preference signal.

The reference learner is a k-nearest-neighbor vote (k=5, Euclidean on
per-dimension standardized features, majority vote).  It is
deterministic and has no training hyperparameters to tune; other
learners can be swapped in behind train/predict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ClassLabel


class Winner(str, Enum):
    MODEL_A = "MODEL_A"
    MODEL_B = "MODEL_B"


@dataclass(frozen=True)
class SelectionExample:
    features: np.ndarray
    winner: Winner
    record_id: str

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)


@dataclass
class SelectionDataset:
    examples: list[SelectionExample]
    n_both_wrong: int = 0
    both_wrong_ids: list[str] = field(default_factory=list)


def build_selection_dataset(archive, truth, extractor) -> SelectionDataset:
    """Label each triggering record with the model that matched the truth.

    ``truth`` maps record id to ClassLabel.  Missing labels are an
    error naming the record; records where the truth matches neither
    output are dropped and counted (both can never match, the labels
    differ by archive invariant).
    """
    examples = []
    both_wrong: list[str] = []
    for rec in archive.records:
        if rec.record_id not in truth:
            raise KeyError(f"no truth label for record {rec.record_id}")
        t = truth[rec.record_id]
        if not isinstance(t, ClassLabel):
            t = ClassLabel(int(t))
        if t == rec.label_a:
            winner = Winner.MODEL_A
        elif t == rec.label_b:
            winner = Winner.MODEL_B
        else:
            both_wrong.append(rec.record_id)
            continue
        examples.append(SelectionExample(
            features=extractor.extract(rec.image),
            winner=winner,
            record_id=rec.record_id,
        ))
    return SelectionDataset(examples=examples, n_both_wrong=len(both_wrong),
                            both_wrong_ids=both_wrong)


@dataclass
class Selector:
    """A trained k-NN winner predictor with its training metadata."""

    features: np.ndarray          # standardized training features
    winners: list[Winner]
    k: int
    offset: np.ndarray            # per-dimension mean of the training set
    scale: np.ndarray             # per-dimension std, 1 where degenerate
    learner: str = "knn"
    n_examples: int = 0
    seed: int = 0
    train_record_ids: list[str] = field(default_factory=list)

    def predict(self, features) -> Winner:
        x = (np.asarray(features, dtype=np.float64) - self.offset) / self.scale
        d2 = np.einsum("ij,ij->i", self.features - x, self.features - x)
        # order by (distance, index): equal distances prefer the lower
        # index so the neighbor set is reproducible
        order = np.lexsort((np.arange(d2.size), d2))
        top = order[:self.k]
        votes_a = sum(1 for i in top if self.winners[i] == Winner.MODEL_A)
        if votes_a * 2 == len(top):
            return self.winners[int(top[0])]  # tie: side with the nearest neighbor
        return Winner.MODEL_A if votes_a * 2 > len(top) else Winner.MODEL_B


def train_selector(examples: list[SelectionExample], k: int = 5,
                   seed: int = 0) -> Selector:
    """Fit the reference learner; deterministic given the examples."""
    if len(examples) < 2:
        raise ValueError("need at least two training examples")
    winners = [ex.winner for ex in examples]
    if len(set(winners)) < 2:
        raise ValueError("training set must contain both winners")
    X = np.stack([ex.features for ex in examples])
    offset = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return Selector(
        features=(X - offset) / scale,
        winners=winners,
        k=min(k, len(examples)),
        offset=offset,
        scale=scale,
        n_examples=len(examples),
        seed=seed,
        train_record_ids=[ex.record_id for ex in examples],
    )


def eval_selector(selector: Selector, holdout: list[SelectionExample]) -> float:
    """Fraction of holdout examples whose predicted winner is correct."""
    if not holdout:
        raise ValueError("holdout must be non-empty")
    hits = sum(1 for ex in holdout if selector.predict(ex.features) == ex.winner)
    return hits / len(holdout)


def majority_baseline(examples: list[SelectionExample]) -> float:
    """Accuracy of always predicting the most common winner."""
    if not examples:
        raise ValueError("need examples")
    n_a = sum(1 for ex in examples if ex.winner == Winner.MODEL_A)
    return max(n_a, len(examples) - n_a) / len(examples)
