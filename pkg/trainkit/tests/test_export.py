from __future__ import annotations

import numpy as np
import pytest
import torch
from torch import nn

from trainkit.export import ExportError, export_pfn
from trainkit.models import (
    LATENT_DIM,
    build_classifier_trunk,
    build_discriminator,
    build_generator,
    with_softmax,
)

from latentdiff import netrunner


def _max_diff(module, pfn_dir, input_shape, n=20, seed=0):
    net = netrunner.load_network(pfn_dir)
    rng = np.random.default_rng(seed)
    module.eval()
    worst = 0.0
    for _ in range(n):
        x = rng.standard_normal(input_shape).astype(np.float32)
        with torch.no_grad():
            want = module(torch.from_numpy(x[None]))[0].numpy()
        got = netrunner.infer(net, x)
        worst = max(worst, float(np.abs(got.reshape(want.shape) - want).max()))
    return worst


def test_generator_round_trip(tmp_path):
    torch.manual_seed(0)
    g = build_generator()
    export_pfn(g, [LATENT_DIM], tmp_path / "g",
               metadata={"latent_bounds": [-1.0, 1.0]})
    assert _max_diff(g, tmp_path / "g", (LATENT_DIM,)) < 1e-4


def test_discriminator_round_trip(tmp_path):
    torch.manual_seed(1)
    d = build_discriminator()
    export_pfn(d, [1, 8, 8], tmp_path / "d")
    assert _max_diff(d, tmp_path / "d", (1, 8, 8)) < 1e-4


@pytest.mark.parametrize("variant", ["a", "b"])
def test_classifier_round_trip(tmp_path, variant):
    torch.manual_seed(2)
    trunk = build_classifier_trunk(variant)
    # exercise non-trivial batchnorm running stats in variant b
    trunk.train()
    with torch.no_grad():
        for _ in range(3):
            trunk(torch.rand(16, 1, 8, 8))
    clf = with_softmax(trunk)
    export_pfn(clf, [1, 8, 8], tmp_path / "c")
    assert _max_diff(clf, tmp_path / "c", (1, 8, 8)) < 1e-4


def test_export_deterministic(tmp_path):
    torch.manual_seed(3)
    g = build_generator()
    export_pfn(g, [LATENT_DIM], tmp_path / "one")
    export_pfn(g, [LATENT_DIM], tmp_path / "two")
    assert (tmp_path / "one" / "weights.bin").read_bytes() == \
        (tmp_path / "two" / "weights.bin").read_bytes()
    assert (tmp_path / "one" / "model.json").read_bytes() == \
        (tmp_path / "two" / "model.json").read_bytes()


def test_unsupported_layer_is_loud(tmp_path):
    model = nn.Sequential(nn.Linear(4, 4), nn.MaxPool1d(2))
    with pytest.raises(ExportError, match="MaxPool1d"):
        export_pfn(model, [4], tmp_path / "bad")


def test_flipped_byte_fails_engine_load(tmp_path):
    torch.manual_seed(4)
    d = build_discriminator()
    out = export_pfn(d, [1, 8, 8], tmp_path / "d")
    blob_path = out / "weights.bin"
    raw = bytearray(blob_path.read_bytes())
    raw[100] ^= 0x01
    blob_path.write_bytes(bytes(raw))
    with pytest.raises(netrunner.PfnError):
        netrunner.load_network(out)


def test_dense_only_round_trip_bit_exact(tmp_path):
    torch.manual_seed(5)
    model = nn.Sequential(nn.Linear(6, 4), nn.Tanh(), nn.Linear(4, 2))
    out = export_pfn(model, [6], tmp_path / "m")
    loaded = netrunner.load_network(out)
    want = np.concatenate([
        model[0].weight.detach().numpy().ravel(),
        model[0].bias.detach().numpy().ravel(),
        model[2].weight.detach().numpy().ravel(),
        model[2].bias.detach().numpy().ravel(),
    ]).astype("<f4")
    got = np.frombuffer(loaded.blob, dtype="<f4")
    np.testing.assert_array_equal(got, want)


def test_weight_counts_match_header(tmp_path):
    torch.manual_seed(6)
    g = build_generator()
    out = export_pfn(g, [LATENT_DIM], tmp_path / "g")
    net = netrunner.load_network(out)
    declared = sum(layer.count for layer in net.layers)
    torch_params = sum(p.numel() for p in g.parameters())
    assert declared == torch_params
