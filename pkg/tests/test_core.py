from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentdiff.core import (
    ClassLabel,
    Image,
    LatentVector,
    ProbabilityVector,
    argmax_label,
    cosine_distance,
    euclidean_distance,
    is_triggering,
    pixel_digest,
    quantize_u8,
)

P1 = ProbabilityVector([0.05, 0.05, 0.05, 0.85])
Q1 = ProbabilityVector([0.15, 0.15, 0.15, 0.55])
P2 = ProbabilityVector([0.1, 0.2, 0.3, 0.4])
# this published example vector sums to 0.8; the comparisons must accept
# it as-is, so it stays a bare list rather than a ProbabilityVector
Q2 = [0.15, 0.25, 0.35, 0.05]


def test_argmax_label():
    assert argmax_label(P1) == ClassLabel(3)
    assert argmax_label(ProbabilityVector([1.0])) == ClassLabel(0)
    # tie broken toward the smallest index
    assert argmax_label(ProbabilityVector([0.4, 0.4, 0.2])) == ClassLabel(0)


def test_argmax_empty_rejected():
    with pytest.raises(ValueError):
        ProbabilityVector([])


def test_argmax_scale_invariant(rng):
    for _ in range(50):
        raw = rng.random(6) + 1e-9
        pv = ProbabilityVector(raw / raw.sum())
        scaled = ProbabilityVector(raw * 3.7 / (raw.sum() * 3.7))
        assert argmax_label(pv) == argmax_label(scaled)


def test_is_triggering():
    assert not is_triggering(P1, Q1)
    assert is_triggering(P2, Q2)
    half = ProbabilityVector([0.5, 0.5])
    assert not is_triggering(half, half)


def test_is_triggering_symmetric(rng):
    for _ in range(100):
        a = rng.random(5) + 1e-9
        b = rng.random(5) + 1e-9
        pa = ProbabilityVector(a / a.sum())
        pb = ProbabilityVector(b / b.sum())
        assert is_triggering(pa, pb) == is_triggering(pb, pa)


def test_is_triggering_length_mismatch():
    with pytest.raises(ValueError):
        is_triggering(ProbabilityVector([0.5, 0.5]), ProbabilityVector([1.0]))


def test_euclidean_distance_examples():
    assert euclidean_distance(P1, Q1) == pytest.approx(math.sqrt(0.12), abs=1e-12)
    assert euclidean_distance(P1, P1) == 0.0
    one_hot_a = ProbabilityVector([1.0, 0.0])
    one_hot_b = ProbabilityVector([0.0, 1.0])
    assert euclidean_distance(one_hot_a, one_hot_b) == pytest.approx(math.sqrt(2))


def test_euclidean_triangle_inequality(rng):
    for _ in range(200):
        raw = rng.random((3, 4)) + 1e-9
        a, b, c = (ProbabilityVector(r / r.sum()) for r in raw)
        assert euclidean_distance(a, c) <= (
            euclidean_distance(a, b) + euclidean_distance(b, c) + 1e-12)


def test_cosine_distance_examples():
    assert cosine_distance([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    assert cosine_distance([1, 0], [1, 1]) == pytest.approx(1 - 1 / math.sqrt(2))
    assert cosine_distance([0, 0], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        cosine_distance([1, 2], [1, 2, 3])


@given(st.lists(st.floats(min_value=0, max_value=1), min_size=2, max_size=16),
       st.lists(st.floats(min_value=0, max_value=1), min_size=2, max_size=16))
def test_cosine_distance_range_nonnegative(a, b):
    n = min(len(a), len(b))
    d = cosine_distance(a[:n], b[:n])
    assert -1e-12 <= d <= 1.0 + 1e-12


def test_probability_vector_invariants():
    with pytest.raises(ValueError):
        ProbabilityVector([0.5, 0.6])       # sums past tolerance
    with pytest.raises(ValueError):
        ProbabilityVector([-0.1, 1.1])      # negative entry
    ProbabilityVector([0.3, 0.7 + 5e-7])    # inside the 1e-6 budget


def test_image_invariants():
    with pytest.raises(ValueError):
        Image(width=2, height=2, channels=1, pixels=np.array([0.1, 0.2, 0.3]))
    with pytest.raises(ValueError):
        Image(width=1, height=1, channels=1, pixels=np.array([1.5]))
    with pytest.raises(ValueError):
        Image(width=1, height=1, channels=2, pixels=np.array([0.5, 0.5]))
    img = Image(width=2, height=1, channels=1, pixels=np.array([0.25, 0.75]))
    assert img.shape == (1, 2, 1)


def test_latent_vector_invariants():
    with pytest.raises(ValueError):
        LatentVector(np.array([]))
    with pytest.raises(ValueError):
        LatentVector(np.array([np.nan]))
    assert len(LatentVector(np.zeros(100))) == 100


def test_pixel_digest_tracks_quantized_bytes():
    a = Image(width=2, height=1, channels=1, pixels=np.array([0.4, 0.25]))
    b = Image(width=2, height=1, channels=1, pixels=np.array([0.4, 0.25]))
    assert pixel_digest(a) == pixel_digest(b)
    # sub-quantum perturbation collides, full-quantum step does not
    c = Image(width=2, height=1, channels=1, pixels=np.array([0.4 + 1e-9, 0.25]))
    d = Image(width=2, height=1, channels=1, pixels=np.array([0.4 + 1 / 255, 0.25]))
    assert pixel_digest(c) == pixel_digest(a)
    assert pixel_digest(d) != pixel_digest(a)
    assert quantize_u8(a).dtype == np.uint8
