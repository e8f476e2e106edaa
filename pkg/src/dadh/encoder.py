"""Feature encoders: plain MLPs with tanh hidden layers and a raw affine
output row per code bit. Explicit forward/backward in float64; the training
objective applies tanh to the outputs itself."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from dadh.errors import DataError, NumericError

CHECKPOINT_MAGIC = b"DADHMODL"
CHECKPOINT_VERSION = 1
STREAM_COUNT = 2


class MlpEncoder:
    """Weight matrices are (fan_out, fan_in); forward is x @ W.T + b."""

    def __init__(self, layer_dims, weights, biases):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ValueError(f"bad layer dims {layer_dims}")
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise ValueError("one weight and bias block per layer required")
        for i, (fan_in, fan_out) in enumerate(zip(layer_dims, layer_dims[1:])):
            if weights[i].shape != (fan_out, fan_in):
                raise ValueError(
                    f"layer {i}: weight shape {weights[i].shape} != {(fan_out, fan_in)}"
                )
            if biases[i].shape != (fan_out,):
                raise ValueError(f"layer {i}: bias shape {biases[i].shape} != {(fan_out,)}")
        self.layer_dims = layer_dims
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_encoder(layer_dims, seed) -> MlpEncoder:
    """Zero biases; weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = tuple(int(d) for d in layer_dims)
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpEncoder(dims, weights, biases)


@dataclass
class ForwardCache:
    """Per-layer inputs captured during forward, consumed once by backward."""

    encoder: MlpEncoder
    version: int
    layer_inputs: list


@dataclass
class EncoderGrads:
    d_weights: list
    d_biases: list


def forward(enc: MlpEncoder, xb) -> tuple[np.ndarray, ForwardCache]:
    """Batch forward pass. Returns raw (m, output_dim) scores plus the
    activation cache backward needs."""
    xb = np.atleast_2d(np.asarray(xb, dtype=np.float64))
    if xb.ndim != 2 or xb.shape[1] != enc.input_dim:
        raise ValueError(f"input shape {xb.shape} incompatible with dim {enc.input_dim}")
    layer_inputs = [xb]
    a = xb
    for i in range(enc.n_layers):
        z = a @ enc.weights[i].T + enc.biases[i]
        if i < enc.n_layers - 1:
            a = np.tanh(z)
            layer_inputs.append(a)
        else:
            a = z
    return a, ForwardCache(encoder=enc, version=enc.version, layer_inputs=layer_inputs)


def backward(enc: MlpEncoder, cache: ForwardCache, d_out) -> EncoderGrads:
    """Backpropagate d(loss)/d(raw outputs) to parameter gradients."""
    if cache.encoder is not enc:
        raise RuntimeError("activation cache belongs to a different encoder")
    if cache.version != enc.version:
        raise RuntimeError("stale activation cache: encoder was updated after forward")
    d_out = np.asarray(d_out, dtype=np.float64)
    m = cache.layer_inputs[0].shape[0]
    if d_out.shape != (m, enc.output_dim):
        raise ValueError(f"d_out shape {d_out.shape} != {(m, enc.output_dim)}")
    d_weights = [None] * enc.n_layers
    d_biases = [None] * enc.n_layers
    delta = d_out
    for i in range(enc.n_layers - 1, -1, -1):
        d_weights[i] = delta.T @ cache.layer_inputs[i]
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            a = cache.layer_inputs[i]
            delta = (delta @ enc.weights[i]) * (1.0 - a * a)
    return EncoderGrads(d_weights=d_weights, d_biases=d_biases)


def sgd_step(enc: MlpEncoder, grads: EncoderGrads, lr: float) -> None:
    """In-place descent step; refuses non-finite gradients before touching
    any parameter."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(grads.d_weights) != enc.n_layers or len(grads.d_biases) != enc.n_layers:
        raise ValueError("gradient block count does not match encoder layers")
    for i in range(enc.n_layers):
        if grads.d_weights[i].shape != enc.weights[i].shape:
            raise ValueError(f"layer {i}: weight gradient shape mismatch")
        if grads.d_biases[i].shape != enc.biases[i].shape:
            raise ValueError(f"layer {i}: bias gradient shape mismatch")
        if not (np.isfinite(grads.d_weights[i]).all() and np.isfinite(grads.d_biases[i]).all()):
            raise NumericError(f"non-finite gradient in layer {i}")
    for i in range(enc.n_layers):
        enc.weights[i] -= lr * grads.d_weights[i]
        enc.biases[i] -= lr * grads.d_biases[i]
    enc.version += 1


def save_checkpoint(path, enc_f: MlpEncoder, enc_g: MlpEncoder) -> None:
    """Two-stream checkpoint, little-endian: header, then per stream the
    layer dim list as u32 followed by all weights then all biases as f64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sII", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, STREAM_COUNT))
        for enc in (enc_f, enc_g):
            fh.write(struct.pack("<I", len(enc.layer_dims)))
            fh.write(np.asarray(enc.layer_dims, dtype="<u4").tobytes())
            for block in (enc.weights, enc.biases):
                for arr in block:
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, count, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise DataError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> tuple[MlpEncoder, MlpEncoder]:
    with open(path, "rb") as fh:
        magic, version, streams = struct.unpack("<8sII", _read_exact(fh, 16, "header"))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        if streams != STREAM_COUNT:
            raise DataError(f"expected {STREAM_COUNT} encoder streams, found {streams}")
        encoders = []
        for s in range(streams):
            (count,) = struct.unpack("<I", _read_exact(fh, 4, f"stream {s} dim count"))
            if count < 2:
                raise DataError(f"stream {s}: need at least 2 layer dims, found {count}")
            dims = np.frombuffer(_read_exact(fh, 4 * count, f"stream {s} dims"), dtype="<u4")
            if dims.min() < 1:
                raise DataError(f"stream {s}: zero layer width")
            dims = [int(d) for d in dims]
            weights, biases = [], []
            for fan_in, fan_out in zip(dims, dims[1:]):
                buf = _read_exact(fh, 8 * fan_out * fan_in, f"stream {s} weights")
                weights.append(np.frombuffer(buf, dtype="<f8").reshape(fan_out, fan_in).copy())
            for _, fan_out in zip(dims, dims[1:]):
                buf = _read_exact(fh, 8 * fan_out, f"stream {s} biases")
                biases.append(np.frombuffer(buf, dtype="<f8").copy())
            encoders.append(MlpEncoder(dims, weights, biases))
        if fh.read(1):
            raise DataError("trailing bytes after checkpoint payload")
    return encoders[0], encoders[1]
