"""Torch-to-PFN export.

Writes the PFN directory contract directly: ``model.json`` with ordered
layer specs carrying explicit byte offsets and float32 counts, and
``weights.bin`` as the ``PFN1`` magic followed by all parameters
concatenated in layer order, row-major little-endian binary32.  The
layouts match the engine's documented expectations (dense weights
``(out, in)``, conv ``(out_c, in_c, kh, kw)``, transposed conv
``(in_c, out_c, kh, kw)``, batchnorm gamma/beta/mean/var).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .models import Reshape

MAGIC = b"PFN1"

SUPPORTED = (
    "Linear", "Conv2d", "ConvTranspose2d", "BatchNorm1d", "BatchNorm2d",
    "ReLU", "LeakyReLU", "Tanh", "Sigmoid", "Softmax", "Flatten", "Reshape",
)


class ExportError(ValueError):
    """A module contains a layer the PFN format cannot carry."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _entry_for(layer: nn.Module) -> tuple[dict, list[np.ndarray]]:
    """(header entry without offsets, parameter tensors in blob order)."""
    def f32(t: torch.Tensor) -> np.ndarray:
        return t.detach().cpu().numpy().astype("<f4")

    if isinstance(layer, nn.Linear):
        return ({"kind": "dense", "in_features": layer.in_features,
                 "out_features": layer.out_features},
                [f32(layer.weight), f32(layer.bias)])
    if isinstance(layer, nn.Conv2d):
        kh, kw = _pair(layer.kernel_size)
        sh, sw = _pair(layer.stride)
        ph, pw = _pair(layer.padding)
        if sh != sw or ph != pw:
            raise ExportError("conv2d export needs square stride and padding")
        return ({"kind": "conv2d", "in_channels": layer.in_channels,
                 "out_channels": layer.out_channels, "kernel": [kh, kw],
                 "stride": sh, "padding": ph},
                [f32(layer.weight), f32(layer.bias)])
    if isinstance(layer, nn.ConvTranspose2d):
        kh, kw = _pair(layer.kernel_size)
        sh, sw = _pair(layer.stride)
        ph, pw = _pair(layer.padding)
        if sh != sw or ph != pw:
            raise ExportError("conv2d_transpose export needs square stride "
                              "and padding")
        return ({"kind": "conv2d_transpose", "in_channels": layer.in_channels,
                 "out_channels": layer.out_channels, "kernel": [kh, kw],
                 "stride": sh, "padding": ph},
                [f32(layer.weight), f32(layer.bias)])
    if isinstance(layer, (nn.BatchNorm1d, nn.BatchNorm2d)):
        return ({"kind": "batchnorm", "num_features": layer.num_features,
                 "epsilon": float(layer.eps)},
                [f32(layer.weight), f32(layer.bias),
                 f32(layer.running_mean), f32(layer.running_var)])
    if isinstance(layer, nn.ReLU):
        return {"kind": "relu"}, []
    if isinstance(layer, nn.LeakyReLU):
        return {"kind": "leaky_relu", "alpha": float(layer.negative_slope)}, []
    if isinstance(layer, nn.Tanh):
        return {"kind": "tanh"}, []
    if isinstance(layer, nn.Sigmoid):
        return {"kind": "sigmoid"}, []
    if isinstance(layer, nn.Softmax):
        return {"kind": "softmax"}, []
    if isinstance(layer, nn.Flatten):
        return {"kind": "flatten"}, []
    if isinstance(layer, Reshape):
        return {"kind": "reshape", "shape": list(layer.shape)}, []
    raise ExportError(
        f"cannot export layer {type(layer).__name__}; supported: "
        f"{', '.join(SUPPORTED)}")


def export_pfn(model: nn.Sequential, input_shape, out_dir,
               metadata: dict | None = None) -> Path:
    """Write a PFN directory for a sequential model.

    The model is exported in inference mode (batchnorm running stats);
    export is deterministic for a given trained model.
    """
    model = model.eval()
    entries = []
    chunks: list[bytes] = []
    offset = 0
    for layer in model:
        entry, tensors = _entry_for(layer)
        count = 0
        for t in tensors:
            arr = np.ascontiguousarray(t, dtype="<f4")
            chunks.append(arr.tobytes())
            count += arr.size
        if count:
            entry["offset"] = offset
            entry["count"] = count
            offset += count * 4
        entries.append(entry)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blob = b"".join(chunks)
    header = {
        "format": "PFN1",
        "input_shape": list(input_shape),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "layers": entries,
        "metadata": metadata or {},
    }
    (out / "model.json").write_text(json.dumps(header, indent=2) + "\n",
                                    encoding="utf-8")
    (out / "weights.bin").write_bytes(MAGIC + blob)
    return out
