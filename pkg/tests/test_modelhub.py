from __future__ import annotations

import math

import numpy as np
import pytest

from latentdiff.core import LatentVector, argmax_label, is_triggering
from latentdiff import modelhub as mh
from latentdiff.modelhub import (
    PfnClassifier,
    PfnDiscriminator,
    PfnGenerator,
    RoleMismatchError,
    TestbedConfig,
    blob_center,
)
from latentdiff.netrunner import build_network, save_network

from conftest import make_latent


@pytest.fixture(scope="module")
def cfg():
    return TestbedConfig()


def test_config_defaults_and_validation():
    cfg = TestbedConfig()
    assert (cfg.threshold_a, cfg.threshold_b, cfg.threshold_truth) == (8.0, 9.5, 8.75)
    with pytest.raises(ValueError):
        TestbedConfig(threshold_a=9.0, threshold_b=8.0)
    with pytest.raises(ValueError):
        TestbedConfig(spread=0.0)


def test_generate_center_blob(cfg):
    z = make_latent(0.0, 0.0, 1.0, dim=100)
    img = mh.testbed_generate(z, cfg)
    # blob at (7.5, 7.5), amplitude 1: closed form at pixel (7, 7)
    expected = math.exp(-((7 - 7.5) ** 2 + (7 - 7.5) ** 2) / (2 * cfg.spread ** 2))
    assert img.as_array()[7, 7, 0] == pytest.approx(expected, abs=1e-6)
    assert img.pixels.max() <= 1.0 and img.pixels.min() >= 0.0


def test_generate_corner_case(cfg):
    z = make_latent(-1.0, -1.0, -1.0, dim=3)
    img = mh.testbed_generate(z, cfg)
    assert blob_center(z, cfg) == (0.0, 0.0, 0.5)
    assert img.as_array()[0, 0, 0] == pytest.approx(0.5, abs=1e-7)


def test_generate_rejects_out_of_bounds(cfg):
    with pytest.raises(ValueError):
        mh.testbed_generate(make_latent(1.5, 0.0, 0.0), cfg)
    with pytest.raises(ValueError):
        mh.testbed_generate(make_latent(0.0, 0.0), cfg)   # too short


def test_generate_range_property(cfg, rng):
    for _ in range(50):
        img = mh.testbed_generate(LatentVector(rng.uniform(-1, 1, 3)), cfg)
        assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_classify_quadrant_centers(cfg):
    # blob dropped exactly on a quadrant center classifies as that quadrant
    for qx, qy, want in [(4.0, 4.0, 0), (12.0, 4.0, 1), (4.0, 12.0, 2), (12.0, 12.0, 3)]:
        z = make_latent(2 * qx / 15 - 1, 2 * qy / 15 - 1, 0.0)
        img = mh.testbed_generate(z, cfg)
        pv = mh.testbed_classify(img, cfg.threshold_a, cfg)
        assert argmax_label(pv).index == want


def test_classify_all_zero_uniform(cfg):
    from conftest import make_image
    img = make_image(np.zeros((16, 16)))
    pv = mh.testbed_classify(img, cfg.threshold_a, cfg)
    np.testing.assert_allclose(pv.probs, [0.25] * 4)


def test_truth_threshold_ordering(cfg):
    # in the band, exactly one classifier matches the exact rule
    gen, ma, mb, _, _ = mh.testbed_roles(cfg, latent_dim=3)
    for cx, winner_is_b in [(8.0 + 0.7, True), (8.0 + 1.2, False)]:
        z = make_latent(2 * cx / 15 - 1, 0.0, 0.0)
        truth = mh.testbed_truth(z, cfg)
        img = gen.generate(z)
        la = argmax_label(ma.classify(img))
        lb = argmax_label(mb.classify(img))
        assert la != lb
        assert (lb == truth) == winner_is_b
        assert (la == truth) == (not winner_is_b)
    # far left: everyone agrees
    z = make_latent(-1.0, 0.0, 0.0)
    img = gen.generate(z)
    assert argmax_label(ma.classify(img)) == argmax_label(mb.classify(img)) \
        == mh.testbed_truth(z, cfg)


def test_band_sweep_oracle(cfg):
    """10,000-point sweep: triggering exactly in (a, b], up to centroid
    estimation error below 0.05 pixels."""
    gen, ma, mb, _, _ = mh.testbed_roles(cfg, latent_dim=3)
    tol = 0.05
    mismatches_outside_tol = 0
    for cx in np.linspace(0.0, 15.0, 10_000):
        z = make_latent(2 * cx / 15 - 1, 0.0, 0.0)
        img = gen.generate(z)
        trig = is_triggering(ma.classify(img), mb.classify(img))
        in_band = cfg.threshold_a < cx <= cfg.threshold_b
        if trig != in_band:
            near_edge = (abs(cx - cfg.threshold_a) < tol
                         or abs(cx - cfg.threshold_b) < tol)
            if not near_edge:
                mismatches_outside_tol += 1
    assert mismatches_outside_tol == 0


def test_band_centroid_accuracy(cfg):
    gen = mh.testbed_roles(cfg, latent_dim=3)[0]
    for cx in np.linspace(7.0, 10.5, 500):
        z = make_latent(2 * cx / 15 - 1, 0.2, -0.3)
        feats = mh.testbed_features(gen.generate(z))
        assert abs(feats[0] - cx) < 0.05


def test_discriminator(cfg):
    from conftest import make_image
    assert mh.testbed_discriminator(make_image(np.zeros((16, 16)))) == 0.0
    assert mh.testbed_discriminator(make_image(np.full((16, 16), 0.39))) == 0.0
    gen = mh.testbed_roles(cfg, latent_dim=3)[0]
    rng = np.random.default_rng(7)
    for _ in range(20):
        img = gen.generate(LatentVector(rng.uniform(-1, 1, 3)))
        assert mh.testbed_discriminator(img) == 1.0   # amplitude at least 0.5


def test_features(cfg):
    from conftest import make_image
    gen = mh.testbed_roles(cfg, latent_dim=3)[0]
    img = gen.generate(make_latent(0.0, 0.0, 1.0))
    feats = mh.testbed_features(img)
    assert feats[0] == pytest.approx(7.5, abs=1e-6)
    assert feats[1] == pytest.approx(7.5, abs=1e-6)
    np.testing.assert_allclose(mh.testbed_features(make_image(np.zeros((16, 16)))),
                               [8.0, 8.0, 0.0, 0.0])
    # shifting the blob one pixel right moves the centroid by about one
    a = mh.testbed_features(gen.generate(make_latent(2 * 6 / 15 - 1, 0.0, 0.0)))
    b = mh.testbed_features(gen.generate(make_latent(2 * 7 / 15 - 1, 0.0, 0.0)))
    assert b[0] - a[0] == pytest.approx(1.0, abs=0.02)


def test_roles_deterministic(cfg, rng):
    gen, ma, mb, disc, ext = mh.testbed_roles(cfg, latent_dim=5)
    z = LatentVector(rng.uniform(-1, 1, 5))
    img1, img2 = gen.generate(z), gen.generate(z)
    np.testing.assert_array_equal(img1.pixels, img2.pixels)
    np.testing.assert_array_equal(ma.classify(img1).probs, ma.classify(img2).probs)
    assert disc.score(img1) == disc.score(img2)
    np.testing.assert_array_equal(ext.extract(img1), ext.extract(img2))


# ---------------------------------------------------------------------------
# PFN adapters
# ---------------------------------------------------------------------------

def _tanh_generator_dir(tmp_path, latent=4, side=4):
    n_out = side * side
    w = np.zeros((n_out, latent), dtype=np.float32)
    b = np.linspace(-2, 2, n_out).astype(np.float32)
    net = build_network([latent], [
        ("dense", {"in_features": latent, "out_features": n_out}, [w, b]),
        ("reshape", {"shape": (1, side, side)}, []),
        ("tanh", {}, []),
    ], metadata={"latent_bounds": [-1.0, 1.0]})
    return save_network(net, tmp_path / "gen")


def test_pfn_generator_rescales_tanh(tmp_path):
    gen = PfnGenerator(_tanh_generator_dir(tmp_path))
    assert gen.latent_dim == 4
    img = gen.generate(make_latent(0.0, 0.0, 0.0, 0.0))
    # bias -2 saturates tanh near -1, which must map to pixel ~0
    assert img.as_array().ravel()[0] == pytest.approx((math.tanh(-2) + 1) / 2, abs=1e-6)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0


def test_pfn_generator_requires_known_activation(tmp_path):
    net = build_network([4], [
        ("dense", {"in_features": 4, "out_features": 16},
         [np.zeros((16, 4), np.float32), np.zeros(16, np.float32)]),
        ("reshape", {"shape": (1, 4, 4)}, []),
    ])
    save_network(net, tmp_path / "g2")
    with pytest.raises(RoleMismatchError, match="tanh or sigmoid"):
        PfnGenerator(tmp_path / "g2")


def test_pfn_classifier_softmax_contract(tmp_path, rng):
    w = rng.normal(size=(3, 16)).astype(np.float32)
    b = np.zeros(3, dtype=np.float32)
    net = build_network([16], [
        ("dense", {"in_features": 16, "out_features": 3}, [w, b]),
        ("softmax", {}, []),
    ])
    save_network(net, tmp_path / "clf")
    clf = PfnClassifier(tmp_path / "clf")
    assert clf.n_classes == 3
    from conftest import make_image
    img = make_image(rng.random((4, 4)).astype(np.float32))
    pv = clf.classify(img)
    assert abs(float(pv.probs.sum()) - 1.0) < 1e-9


def test_pfn_classifier_requires_softmax(tmp_path):
    net = build_network([16], [
        ("dense", {"in_features": 16, "out_features": 3},
         [np.zeros((3, 16), np.float32), np.zeros(3, np.float32)])])
    save_network(net, tmp_path / "c2")
    with pytest.raises(RoleMismatchError, match="softmax"):
        PfnClassifier(tmp_path / "c2")


def test_pfn_extractor(tmp_path, rng):
    w = rng.normal(size=(6, 16)).astype(np.float32)
    b = np.zeros(6, dtype=np.float32)
    net = build_network([16], [
        ("dense", {"in_features": 16, "out_features": 6}, [w, b]),
        ("relu", {}, []),
    ])
    save_network(net, tmp_path / "ext")
    ext = mh.pfn_extractor(tmp_path / "ext")
    assert ext.n_features == 6
    from conftest import make_image
    img = make_image(rng.random((4, 4)).astype(np.float32))
    feats = ext.extract(img)
    assert feats.shape == (6,)
    np.testing.assert_array_equal(feats, ext.extract(img))


def test_band_exactly_one_classifier_correct(cfg):
    """Sweeping the band interior: the classifiers disagree and exactly
    one matches the exact rule (away from the threshold boundaries)."""
    gen, ma, mb, _, _ = mh.testbed_roles(cfg, latent_dim=3)
    margin = 0.05
    for cx in np.linspace(cfg.threshold_a + margin, cfg.threshold_b - margin, 300):
        if abs(cx - cfg.threshold_truth) < margin:
            continue
        z = make_latent(2 * cx / 15 - 1, 0.1, -0.2)
        truth = mh.testbed_truth(z, cfg)
        img = gen.generate(z)
        la = argmax_label(ma.classify(img))
        lb = argmax_label(mb.classify(img))
        assert la != lb
        assert (la == truth) + (lb == truth) == 1


def test_pfn_discriminator_clamped(tmp_path):
    net = build_network([16], [
        ("dense", {"in_features": 16, "out_features": 1},
         [np.full((1, 16), 5.0, np.float32), np.zeros(1, np.float32)]),
        ("sigmoid", {}, []),
    ])
    save_network(net, tmp_path / "disc")
    disc = PfnDiscriminator(tmp_path / "disc")
    from conftest import make_image
    img = make_image(np.ones((4, 4), dtype=np.float32))
    assert 0.0 <= disc.score(img) <= 1.0
