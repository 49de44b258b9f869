"""Inference-only execution of portable feed-forward networks.

Models trained elsewhere are exchanged through the PFN on-disk format:
a directory holding

* ``model.json``  -- UTF-8 header with the input shape and the ordered
  layer specs, each parametric layer carrying the explicit byte offset
  and float32 count of its parameters inside the weight blob;
* ``weights.bin`` -- the magic bytes ``PFN1`` followed by every
  parameter tensor concatenated in layer order, row-major,
  little-endian IEEE-754 binary32.

Parameter layout per layer kind (in blob order):

* ``dense``            weight ``(out, in)`` then bias ``(out,)``
* ``conv2d``           weight ``(out_c, in_c, kh, kw)`` then bias ``(out_c,)``
* ``conv2d_transpose`` weight ``(in_c, out_c, kh, kw)`` then bias ``(out_c,)``
* ``batchnorm``        gamma, beta, running mean, running variance,
                       each ``(num_features,)``; epsilon lives in the header

Convolution is cross-correlation (no kernel flip), matching mainstream
training frameworks so exported weights are usable verbatim.  All other
kinds (``flatten``, ``reshape``, ``relu``, ``leaky_relu``, ``tanh``,
``sigmoid``, ``softmax``) carry no parameters.  Anything else fails at
load time, never silently.  See ``docs/formats.md`` for a worked
byte-level example.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PFN1"

SUPPORTED_KINDS = frozenset({
    "dense", "conv2d", "conv2d_transpose", "flatten", "reshape",
    "relu", "leaky_relu", "tanh", "sigmoid", "softmax", "batchnorm",
})


class PfnError(Exception):
    """Base class for PFN load/validation failures."""


class PfnFormatError(PfnError):
    """Missing files, bad magic, malformed header, bad offsets or counts."""


class PfnBlobError(PfnError):
    """Weight blob length does not match the declared parameter counts."""


class PfnShapeError(PfnError):
    """Consecutive layer shapes are incompatible."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a kind plus its per-kind shape attributes.

    ``offset`` is the byte offset of the layer's parameters inside the
    blob's parameter region (byte 0 = first byte after the magic);
    ``count`` is its number of float32 parameters.  Both are zero for
    parameter-free kinds.
    """

    kind: str
    attrs: dict = field(default_factory=dict)
    offset: int = 0
    count: int = 0


@dataclass(frozen=True)
class Network:
    """A validated, immutable feed-forward model ready for inference."""

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    metadata: dict
    params: tuple[dict, ...]   # per layer: arrays keyed by tensor name
    blob: bytes                # raw parameter region (after the magic)

    @property
    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _propagate_shape(i, layer, shape)
        return shape


def _require(cond: bool, err: type[PfnError], msg: str):
    if not cond:
        raise err(msg)


def _layer_name(i: int, layer: LayerSpec) -> str:
    return f"layer {i} ({layer.kind})"


def _param_count(layer: LayerSpec) -> int:
    a = layer.attrs
    if layer.kind == "dense":
        return a["out_features"] * a["in_features"] + a["out_features"]
    if layer.kind == "conv2d":
        kh, kw = a["kernel"]
        return a["out_channels"] * a["in_channels"] * kh * kw + a["out_channels"]
    if layer.kind == "conv2d_transpose":
        kh, kw = a["kernel"]
        return a["in_channels"] * a["out_channels"] * kh * kw + a["out_channels"]
    if layer.kind == "batchnorm":
        return 4 * a["num_features"]
    return 0


def _validate_attrs(i: int, layer: LayerSpec):
    name = _layer_name(i, layer)
    a = layer.attrs
    def need(key):
        _require(key in a, PfnFormatError, f"{name}: missing attribute {key!r}")
        return a[key]
    if layer.kind == "dense":
        _require(need("in_features") >= 1 and need("out_features") >= 1,
                 PfnFormatError, f"{name}: feature widths must be >= 1")
    elif layer.kind in ("conv2d", "conv2d_transpose"):
        kh, kw = need("kernel")
        _require(kh >= 1 and kw >= 1, PfnFormatError, f"{name}: kernel must be >= 1")
        _require(need("in_channels") >= 1 and need("out_channels") >= 1,
                 PfnFormatError, f"{name}: channel counts must be >= 1")
        _require(need("stride") >= 1, PfnFormatError, f"{name}: stride must be >= 1")
        _require(need("padding") >= 0, PfnFormatError, f"{name}: padding must be >= 0")
    elif layer.kind == "batchnorm":
        _require(need("num_features") >= 1, PfnFormatError,
                 f"{name}: num_features must be >= 1")
        _require(need("epsilon") > 0, PfnFormatError, f"{name}: epsilon must be > 0")
    elif layer.kind == "leaky_relu":
        need("alpha")
    elif layer.kind == "reshape":
        shape = need("shape")
        _require(all(int(s) >= 1 for s in shape), PfnFormatError,
                 f"{name}: reshape dims must be >= 1")


def _propagate_shape(i: int, layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape of one layer, raising PfnShapeError on mismatch."""
    name = _layer_name(i, layer)
    a = layer.attrs
    if layer.kind == "dense":
        _require(len(shape) == 1, PfnShapeError, f"{name}: needs a flat input, got {shape}")
        _require(shape[0] == a["in_features"], PfnShapeError,
                 f"{name}: expects width {a['in_features']}, got {shape[0]}")
        return (a["out_features"],)
    if layer.kind == "conv2d":
        _require(len(shape) == 3, PfnShapeError, f"{name}: needs (C,H,W) input, got {shape}")
        c, h, w = shape
        _require(c == a["in_channels"], PfnShapeError,
                 f"{name}: expects {a['in_channels']} channels, got {c}")
        kh, kw = a["kernel"]
        s, p = a["stride"], a["padding"]
        oh = (h + 2 * p - kh) // s + 1
        ow = (w + 2 * p - kw) // s + 1
        _require(oh >= 1 and ow >= 1, PfnShapeError,
                 f"{name}: kernel {kh}x{kw} too large for input {h}x{w} with padding {p}")
        return (a["out_channels"], oh, ow)
    if layer.kind == "conv2d_transpose":
        _require(len(shape) == 3, PfnShapeError, f"{name}: needs (C,H,W) input, got {shape}")
        c, h, w = shape
        _require(c == a["in_channels"], PfnShapeError,
                 f"{name}: expects {a['in_channels']} channels, got {c}")
        kh, kw = a["kernel"]
        s, p = a["stride"], a["padding"]
        oh = (h - 1) * s - 2 * p + kh
        ow = (w - 1) * s - 2 * p + kw
        _require(oh >= 1 and ow >= 1, PfnShapeError,
                 f"{name}: transpose output collapses for input {h}x{w}")
        return (a["out_channels"], oh, ow)
    if layer.kind == "flatten":
        return (int(np.prod(shape)),)
    if layer.kind == "reshape":
        target = tuple(int(s) for s in a["shape"])
        _require(int(np.prod(shape)) == int(np.prod(target)), PfnShapeError,
                 f"{name}: cannot reshape {shape} to {target}")
        return target
    if layer.kind == "batchnorm":
        n = a["num_features"]
        if len(shape) == 3:
            _require(shape[0] == n, PfnShapeError,
                     f"{name}: expects {n} channels, got {shape[0]}")
        else:
            _require(shape == (n,), PfnShapeError,
                     f"{name}: expects {n} features, got {shape}")
        return shape
    if layer.kind == "softmax":
        _require(len(shape) == 1, PfnShapeError, f"{name}: needs a flat input, got {shape}")
        return shape
    # relu / leaky_relu / tanh / sigmoid preserve shape
    return shape


def _slice_params(i: int, layer: LayerSpec, flat: np.ndarray) -> dict:
    """Views into the float32 parameter buffer for one layer."""
    a = layer.attrs
    pos = layer.offset // 4
    def grab(shape):
        nonlocal pos
        n = int(np.prod(shape))
        arr = flat[pos:pos + n].reshape(shape)
        pos += n
        return arr
    if layer.kind == "dense":
        return {"weight": grab((a["out_features"], a["in_features"])),
                "bias": grab((a["out_features"],))}
    if layer.kind == "conv2d":
        kh, kw = a["kernel"]
        return {"weight": grab((a["out_channels"], a["in_channels"], kh, kw)),
                "bias": grab((a["out_channels"],))}
    if layer.kind == "conv2d_transpose":
        kh, kw = a["kernel"]
        return {"weight": grab((a["in_channels"], a["out_channels"], kh, kw)),
                "bias": grab((a["out_channels"],))}
    if layer.kind == "batchnorm":
        n = a["num_features"]
        return {"gamma": grab((n,)), "beta": grab((n,)),
                "mean": grab((n,)), "var": grab((n,))}
    return {}


def _assemble(input_shape, layers: list[LayerSpec], blob: bytes, metadata: dict) -> Network:
    """Validate specs against the blob and chain shapes; the single gate
    every load path goes through."""
    expected_offset = 0
    for i, layer in enumerate(layers):
        _require(layer.kind in SUPPORTED_KINDS, PfnFormatError,
                 f"{_layer_name(i, layer)}: unsupported kind {layer.kind!r}; "
                 f"supported: {sorted(SUPPORTED_KINDS)}")
        _validate_attrs(i, layer)
        want = _param_count(layer)
        _require(layer.count == want, PfnFormatError,
                 f"{_layer_name(i, layer)}: declares {layer.count} parameters, "
                 f"kind requires {want}")
        if want:
            _require(layer.offset == expected_offset, PfnFormatError,
                     f"{_layer_name(i, layer)}: offset {layer.offset} != expected "
                     f"{expected_offset} (parameters are concatenated in layer order)")
        expected_offset += want * 4
    _require(len(blob) == expected_offset, PfnBlobError,
             f"weight blob holds {len(blob)} parameter bytes, "
             f"layer specs require {expected_offset}")

    shape = tuple(int(s) for s in input_shape)
    _require(len(shape) in (1, 3) and all(s >= 1 for s in shape),
             PfnShapeError, f"input shape must be flat or (C,H,W), got {shape}")
    for i, layer in enumerate(layers):
        shape = _propagate_shape(i, layer, shape)

    flat = np.frombuffer(blob, dtype="<f4")
    flat.setflags(write=False)
    params = tuple(_slice_params(i, layer, flat) for i, layer in enumerate(layers))
    return Network(layers=tuple(layers), input_shape=tuple(int(s) for s in input_shape),
                   metadata=dict(metadata), params=params, blob=bytes(blob))


def build_network(input_shape, layer_arrays, metadata=None) -> Network:
    """Assemble a Network in memory.

    ``layer_arrays`` is a list of ``(kind, attrs, tensors)`` where
    ``tensors`` is the list of parameter arrays in blob order for that
    kind (empty for parameter-free kinds).  Offsets and counts are
    computed here.
    """
    layers = []
    chunks = []
    offset = 0
    for kind, attrs, tensors in layer_arrays:
        count = 0
        for t in tensors:
            arr = np.ascontiguousarray(t, dtype="<f4")
            chunks.append(arr.tobytes())
            count += arr.size
        layers.append(LayerSpec(kind=kind, attrs=dict(attrs), offset=offset, count=count))
        offset += count * 4
    return _assemble(input_shape, layers, b"".join(chunks), metadata or {})


def load_network(path) -> Network:
    """Load and fully validate a PFN model directory."""
    root = Path(path)
    header_path = root / "model.json"
    blob_path = root / "weights.bin"
    _require(header_path.is_file(), PfnFormatError, f"missing {header_path}")
    _require(blob_path.is_file(), PfnFormatError, f"missing {blob_path}")

    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise PfnFormatError(f"{header_path}: invalid JSON: {e}") from e
    _require(header.get("format") == "PFN1", PfnFormatError,
             f"{header_path}: format field must be 'PFN1'")
    _require("input_shape" in header and "layers" in header, PfnFormatError,
             f"{header_path}: needs input_shape and layers")

    raw = blob_path.read_bytes()
    _require(raw[:4] == MAGIC, PfnFormatError,
             f"{blob_path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    declared = header.get("blob_sha256")
    if declared is not None:
        actual = hashlib.sha256(raw[4:]).hexdigest()
        _require(actual == declared, PfnBlobError,
                 f"{blob_path}: parameter bytes hash to {actual[:12]}..., "
                 f"header declares {str(declared)[:12]}... (corrupt export?)")

    layers = []
    for i, entry in enumerate(header["layers"]):
        _require(isinstance(entry, dict) and "kind" in entry, PfnFormatError,
                 f"layer {i}: each layer entry needs a 'kind'")
        attrs = {k: v for k, v in entry.items() if k not in ("kind", "offset", "count")}
        if "kernel" in attrs:
            attrs["kernel"] = tuple(int(v) for v in attrs["kernel"])
        layers.append(LayerSpec(kind=entry["kind"], attrs=attrs,
                                offset=int(entry.get("offset", 0)),
                                count=int(entry.get("count", 0))))
    return _assemble(header["input_shape"], layers, raw[4:],
                     header.get("metadata", {}))


def save_network(net: Network, path) -> Path:
    """Write a Network back to a PFN directory (byte-identical blob)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer in net.layers:
        entry = {"kind": layer.kind}
        for k, v in layer.attrs.items():
            entry[k] = list(v) if isinstance(v, tuple) else v
        if layer.count:
            entry["offset"] = layer.offset
            entry["count"] = layer.count
        entries.append(entry)
    header = {
        "format": "PFN1",
        "input_shape": list(net.input_shape),
        "blob_sha256": hashlib.sha256(net.blob).hexdigest(),
        "layers": entries,
        "metadata": net.metadata,
    }
    (root / "model.json").write_text(
        json.dumps(header, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    (root / "weights.bin").write_bytes(MAGIC + net.blob)
    return root


def _softmax(x: np.ndarray) -> np.ndarray:
    # float64 throughout: probability outputs must sum to 1 within 1e-9,
    # which float32 rounding cannot guarantee
    e = np.exp(x.astype(np.float64) - float(np.max(x)))
    return e / e.sum()


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
            stride: int, padding: int) -> np.ndarray:
    c, h, w = x.shape
    out_c, _, kh, kw = weight.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]           # (C, OH, OW, kh, kw)
    _, oh, ow = windows.shape[0], windows.shape[1], windows.shape[2]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * kh * kw)
    out = cols @ weight.reshape(out_c, -1).T + bias
    return out.reshape(oh, ow, out_c).transpose(2, 0, 1)


def _conv2d_transpose(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                      stride: int, padding: int) -> np.ndarray:
    in_c, h, w = x.shape
    _, out_c, kh, kw = weight.shape
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    full = np.zeros((out_c, full_h, full_w), dtype=np.float32)
    for di in range(kh):
        for dj in range(kw):
            # contribution of tap (di, dj): y[o, i*s+di, j*s+dj] += W[c,o,di,dj] x[c,i,j]
            contrib = np.tensordot(weight[:, :, di, dj], x, axes=([0], [0]))
            full[:, di:di + (h - 1) * stride + 1:stride,
                 dj:dj + (w - 1) * stride + 1:stride] += contrib
    out = full[:, padding:full_h - padding, padding:full_w - padding]
    return out + bias[:, None, None]


def infer(net: Network, x) -> np.ndarray:
    """Deterministic forward pass in float32.

    Identical network and input give bit-identical output across runs.
    """
    arr = np.asarray(x, dtype=np.float32)
    if tuple(arr.shape) != net.input_shape:
        raise PfnShapeError(
            f"input shape {tuple(arr.shape)} does not match "
            f"network input {net.input_shape}")
    dtype = np.float32
    for i, layer in enumerate(net.layers):
        p = net.params[i]
        kind = layer.kind
        if kind == "dense":
            arr = p["weight"] @ arr + p["bias"]
        elif kind == "conv2d":
            arr = _conv2d(arr, p["weight"], p["bias"],
                          layer.attrs["stride"], layer.attrs["padding"])
        elif kind == "conv2d_transpose":
            arr = _conv2d_transpose(arr, p["weight"], p["bias"],
                                    layer.attrs["stride"], layer.attrs["padding"])
        elif kind == "flatten":
            arr = arr.reshape(-1)
        elif kind == "reshape":
            arr = arr.reshape(tuple(layer.attrs["shape"]))
        elif kind == "relu":
            arr = np.maximum(arr, 0)
        elif kind == "leaky_relu":
            alpha = np.float32(layer.attrs["alpha"])
            arr = np.where(arr >= 0, arr, alpha * arr)
        elif kind == "tanh":
            arr = np.tanh(arr)
        elif kind == "sigmoid":
            arr = 1.0 / (1.0 + np.exp(-arr))
        elif kind == "softmax":
            arr = _softmax(arr)
            dtype = np.float64   # probability outputs keep full precision
        elif kind == "batchnorm":
            scale = p["gamma"] / np.sqrt(p["var"] + np.float32(layer.attrs["epsilon"]))
            shift = p["beta"] - p["mean"] * scale
            if arr.ndim == 3:
                arr = arr * scale[:, None, None] + shift[:, None, None]
            else:
                arr = arr * scale + shift
        arr = arr.astype(dtype, copy=False)
    return arr
