"""Encoder-decoder regressor mapping envelope images to parameter maps.

The encoder halves the axial axis four times (channels 16/32/64/128); the
decoder upsamples back to axial/R with skip concatenations from the encoder
activations at matching resolution. All layers use ELU except the final 1x1
linear convolution. Lateral strides are 1 throughout, so the network is fully
convolutional laterally.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core import make_rng
from ..io import parse_tensor, tensor_bytes
from .layers import ConcatLayer, ConvLayer, ConvTransposeLayer, EluLayer

ENCODER_CHANNELS = (16, 32, 64, 128)
DECODER_CHANNELS = (64, 32, 16)
KERNEL_LAT_AX = (3, 7)
TOTAL_ENCODER_STRIDE = 16


@dataclass(frozen=True)
class LayerSpec:
    """kernel and stride are (lateral, axial), matching image conventions."""

    name: str
    kind: str  # conv | transposed-conv | activation | skip-concat | linear-output
    channels_in: int = 0
    channels_out: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    skip_from: str = ""

    def __post_init__(self):
        if any(s not in (1, 2) for s in self.stride):
            raise ValueError("strides must be 1 or 2")
        if any(k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel sizes must be odd")


def build_network(R: int = 4) -> tuple[LayerSpec, ...]:
    """Layer list for axial coarsening factor R (2, 4 or 8)."""
    if R not in (2, 4, 8):
        raise ValueError("R must be one of 2, 4, 8")
    specs = []
    c_prev = 1
    for i, c in enumerate(ENCODER_CHANNELS, start=1):
        specs.append(
            LayerSpec(f"enc{i}", "conv", c_prev, c, KERNEL_LAT_AX, (1, 2))
        )
        specs.append(LayerSpec(f"enc{i}_act", "activation", c, c))
        c_prev = c
    n_dec = int(np.log2(TOTAL_ENCODER_STRIDE // R))
    for i in range(1, n_dec + 1):
        c = DECODER_CHANNELS[i - 1]
        specs.append(
            LayerSpec(f"dec{i}", "transposed-conv", c_prev, c, KERNEL_LAT_AX, (1, 2))
        )
        specs.append(LayerSpec(f"dec{i}_act", "activation", c, c))
        skip = f"enc{len(ENCODER_CHANNELS) - i}_act"
        skip_c = ENCODER_CHANNELS[len(ENCODER_CHANNELS) - i - 1]
        specs.append(
            LayerSpec(f"skip{i}", "skip-concat", c, c + skip_c, skip_from=skip)
        )
        c_prev = c + skip_c
    specs.append(LayerSpec("out", "linear-output", c_prev, 1, (1, 1), (1, 1)))
    return tuple(specs)


def _make_layer(spec: LayerSpec):
    kl, ka = spec.kernel
    sl, sa = spec.stride
    if spec.kind in ("conv", "linear-output"):
        return ConvLayer(spec.name, spec.channels_in, spec.channels_out, (ka, kl), (sa, sl))
    if spec.kind == "transposed-conv":
        return ConvTransposeLayer(
            spec.name, spec.channels_in, spec.channels_out, (ka, kl), (sa, sl)
        )
    if spec.kind == "activation":
        return EluLayer(spec.name)
    if spec.kind == "skip-concat":
        return ConcatLayer(spec.name, spec.skip_from)
    raise ValueError(f"unknown layer kind {spec.kind!r}")


OUTPUT_BIAS_INIT = 0.5  # prior mean of the uniform mu distribution


def init_tensors(specs, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform fan-in initialization, deterministic in the seed. The output
    bias starts at the target prior mean so no capacity is spent learning the
    global offset."""
    rng = make_rng(seed, 0)
    tensors = {}
    for spec in specs:
        tensors.update(_make_layer(spec).init_params(rng, dtype))
    if specs and specs[-1].kind == "linear-output":
        name = f"{specs[-1].name}.b"
        tensors[name] = tensors[name] + np.asarray(OUTPUT_BIAS_INIT, dtype=dtype)
    return tensors


def architecture_hash(specs) -> str:
    doc = json.dumps([vars(s) | {} for s in specs], sort_keys=True, default=str)
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class NetworkWeights:
    """Named parameter tensors plus the metadata needed to reuse them."""

    specs: tuple[LayerSpec, ...]
    tensors: dict[str, np.ndarray]
    R: int
    reference_mean: float = 0.0
    seed: int = 0
    iterations: int = 0

    @property
    def arch_hash(self) -> str:
        return architecture_hash(self.specs)

    def astype(self, dtype) -> "NetworkWeights":
        return replace(self, tensors={k: v.astype(dtype) for k, v in self.tensors.items()})


def new_network(R: int = 4, seed: int = 0, dtype=np.float32) -> NetworkWeights:
    specs = build_network(R)
    return NetworkWeights(specs, init_tensors(specs, seed, dtype), R=R, seed=seed)


def axial_stride(specs) -> int:
    s = 1
    for spec in specs:
        if spec.kind in ("conv", "linear-output"):
            s *= spec.stride[1]
    return s


def _required_skips(specs) -> set:
    return {s.skip_from for s in specs if s.kind == "skip-concat"}


def forward_network(specs, tensors, x, want_cache=False):
    """Run the network on a (batch, lateral, axial, channels) batch; returns
    (y, cache_or_None)."""
    if x.shape[2] % axial_stride(specs) != 0:
        raise ValueError(
            f"axial size {x.shape[2]} not divisible by total stride {axial_stride(specs)}"
        )
    keep = _required_skips(specs)
    cache = {} if want_cache else None
    saved = {}
    h = x
    for spec in specs:
        layer = _make_layer(spec)
        if spec.kind == "skip-concat":
            h = layer.forward(tensors, h, saved[spec.skip_from], cache)
        else:
            h = layer.forward(tensors, h, cache)
        if spec.name in keep:
            saved[spec.name] = h
    return h, cache


def backward_network(specs, tensors, cache, gy):
    """Reverse-mode gradients of every parameter tensor; returns grads dict."""
    grads = {}
    pending = {}
    g = gy
    for i in range(len(specs) - 1, -1, -1):
        spec = specs[i]
        layer = _make_layer(spec)
        if spec.kind == "skip-concat":
            g, g_skip = layer.backward(tensors, cache, g, grads)
            if spec.skip_from in pending:
                pending[spec.skip_from] = pending[spec.skip_from] + g_skip
            else:
                pending[spec.skip_from] = g_skip
        else:
            g = layer.backward(tensors, cache, g, grads)
        if i > 0:
            prev = specs[i - 1].name
            if prev in pending:
                g = g + pending.pop(prev)
    return grads


def predict_raw(weights: NetworkWeights, env_values: np.ndarray) -> np.ndarray:
    """Unclamped parameter-map estimate for a single (axial, lateral) envelope."""
    dtype = next(iter(weights.tensors.values())).dtype
    x = np.ascontiguousarray(np.asarray(env_values, dtype=dtype).T)[None, :, :, None]
    y, _ = forward_network(weights.specs, weights.tensors, x)
    return y[0, :, :, 0].T


def loss_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error and its subgradient w.r.t. pred (sign(0) = 0)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def parameter_count(tensors) -> int:
    return int(sum(v.size for v in tensors.values()))


def save_weights(path, weights: NetworkWeights) -> None:
    """Multi-tensor container: JSON manifest + concatenated tensor blobs."""
    blobs = []
    entries = []
    offset = 0
    for name in sorted(weights.tensors):
        v = weights.tensors[name]
        blob = tensor_bytes(
            v.reshape(-1, v.shape[-1]).astype(np.float32), (0.0, 0.0), "weights"
        )
        entries.append(
            {"name": name, "offset": offset, "length": len(blob), "shape": list(v.shape)}
        )
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {
            "architecture": [vars(s) | {} for s in weights.specs],
            "arch_hash": weights.arch_hash,
            "R": weights.R,
            "reference_mean": weights.reference_mean,
            "training_seed": weights.seed,
            "iterations": weights.iterations,
            "entries": entries,
        }
    ).encode("utf-8")
    Path(path).write_bytes(struct.pack("<Q", len(manifest)) + manifest + b"".join(blobs))


def load_weights(path) -> NetworkWeights:
    raw = Path(path).read_bytes()
    (mlen,) = struct.unpack("<Q", raw[:8])
    manifest = json.loads(raw[8 : 8 + mlen].decode("utf-8"))
    base = 8 + mlen
    specs = tuple(
        LayerSpec(
            name=a["name"],
            kind=a["kind"],
            channels_in=a["channels_in"],
            channels_out=a["channels_out"],
            kernel=tuple(a["kernel"]),
            stride=tuple(a["stride"]),
            skip_from=a.get("skip_from", ""),
        )
        for a in manifest["architecture"]
    )
    tensors = {}
    for e in manifest["entries"]:
        blob = raw[base + e["offset"] : base + e["offset"] + e["length"]]
        values, _, _ = parse_tensor(blob)
        tensors[e["name"]] = values.reshape(e["shape"])
    w = NetworkWeights(
        specs,
        tensors,
        R=manifest["R"],
        reference_mean=manifest["reference_mean"],
        seed=manifest["training_seed"],
        iterations=manifest["iterations"],
    )
    if w.arch_hash != manifest["arch_hash"]:
        raise ValueError("weights file architecture hash mismatch")
    return w
