"""Dense layers, parameter init, Adam/SGD optimizers, minibatching, model files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError, FormatError, ShapeError, UnsupportedVersionError

LEAK = 0.2  # slope of every leaky ReLU in the architectures used here


class Activation(Enum):
    LINEAR = "linear"
    LEAKY_RELU = "leaky_relu"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"

    def apply(self, x: ad.Node) -> ad.Node:
        if self is Activation.LINEAR:
            return ad.linear(x)
        if self is Activation.LEAKY_RELU:
            return ad.leaky_relu(x, LEAK)
        if self is Activation.RELU:
            return ad.relu(x)
        if self is Activation.TANH:
            return ad.tanh(x)
        return ad.sigmoid(x)


def _as_activation(a) -> Activation:
    if isinstance(a, Activation):
        return a
    try:
        return Activation(a)
    except ValueError:
        raise ConfigError(f"unknown activation {a!r}") from None


# serialization codes, part of the on-disk format
_ACT_CODES = {
    Activation.LINEAR: 0,
    Activation.LEAKY_RELU: 1,
    Activation.RELU: 2,
    Activation.TANH: 3,
    Activation.SIGMOID: 4,
}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}

MODEL_MAGIC = b"GMGN"
MODEL_VERSION = 1


@dataclass
class DenseLayer:
    weight: ad.Node  # (in_dim, out_dim)
    bias: ad.Node  # (1, out_dim)
    activation: Activation

    @property
    def in_dim(self) -> int:
        return self.weight.value.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.value.shape[1]


@dataclass
class Mlp:
    layers: list[DenseLayer] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[ad.Node]:
        params = []
        for layer in self.layers:
            params.append(layer.weight)
            params.append(layer.bias)
        return params

    def forward(self, x: ad.Node) -> ad.Node:
        if x.value.shape[1] != self.input_dim:
            raise ShapeError(f"forward input has {x.value.shape[1]} cols, model expects {self.input_dim}")
        h = x
        for layer in self.layers:
            h = ad.broadcast_add_rowvec(ad.matmul(h, layer.weight), layer.bias)
            h = layer.activation.apply(h)
        return h

    def forward_array(self, rows: np.ndarray) -> np.ndarray:
        """Forward pass on raw rows, outside any gradient graph."""
        return self.forward(ad.constant(rows)).value

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def parameter_bytes(self) -> bytes:
        """Canonical byte string of all parameters, for frozen-model hashing."""
        return b"".join(np.ascontiguousarray(p.value).tobytes() for p in self.parameters())


def init_mlp(dims, activations, seed: int, name: str = "mlp") -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic per seed.

    dims is the full width chain (input through output); activations has one
    entry per layer (len(dims) - 1).
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"dims must be positive, got {dims}")
    acts = [_as_activation(a) for a in activations]
    if len(acts) != len(dims) - 1:
        raise ConfigError(f"{len(dims) - 1} layers but {len(acts)} activations")

    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append(
            DenseLayer(
                weight=ad.parameter(w, name=f"{name}.layer{i}.weight"),
                bias=ad.parameter(np.zeros((1, fan_out)), name=f"{name}.layer{i}.bias"),
                activation=acts[i],
            )
        )
    return Mlp(layers)


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._moments: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params) -> None:
        self.step_count += 1
        t = self.step_count
        for p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for {p.name or 'parameter'}", parameter=p.name)
            m, v = self._moments.get(id(p), (np.zeros_like(p.value), np.zeros_like(p.value)))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._moments[id(p)] = (m, v)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


class Sgd:
    """Plain SGD, available for exact-figure replication runs."""

    def __init__(self, lr: float = 0.001):
        self.lr = lr
        self.step_count = 0

    def step(self, params) -> None:
        self.step_count += 1
        for p in params:
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for {p.name or 'parameter'}", parameter=p.name)
            p.value = p.value - self.lr * g
            p.grad = None


def make_optimizer(kind: str, lr: float = 0.001):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr)
    raise ConfigError(f"unknown optimizer kind {kind!r}")


def minibatch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering every sample exactly once (short tail kept)."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------------------
# model files
#
# Layout (all integers little-endian):
#   magic "GMGN" | version u16 | layer count u16
#   per layer: in_dim u32 | out_dim u32 | activation u8
#              | weight f64 row-major | bias f64


def mlp_to_bytes(m: Mlp) -> bytes:
    parts = [struct.pack("<4sHH", MODEL_MAGIC, MODEL_VERSION, len(m.layers))]
    for layer in m.layers:
        parts.append(struct.pack("<IIB", layer.in_dim, layer.out_dim, _ACT_CODES[layer.activation]))
        parts.append(np.ascontiguousarray(layer.weight.value).astype("<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias.value).astype("<f8").tobytes())
    return b"".join(parts)


class ByteReader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated (needed {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def mlp_from_reader(r: ByteReader, name: str = "mlp") -> Mlp:
    magic, version, n_layers = r.unpack("<4sHH")
    if magic != MODEL_MAGIC:
        raise FormatError(f"{r.what}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"{r.what}: format version {version}, expected {MODEL_VERSION}")
    layers = []
    prev_out = None
    for i in range(n_layers):
        in_dim, out_dim, act_code = r.unpack("<IIB")
        if act_code not in _CODE_ACTS:
            raise FormatError(f"{r.what}: unknown activation code {act_code}")
        if prev_out is not None and in_dim != prev_out:
            raise FormatError(f"{r.what}: layer {i} in_dim {in_dim} does not chain from {prev_out}")
        if in_dim < 1 or out_dim < 1:
            raise FormatError(f"{r.what}: layer {i} has empty dims {in_dim}x{out_dim}")
        w = np.frombuffer(r.take(8 * in_dim * out_dim), dtype="<f8").reshape(in_dim, out_dim)
        b = np.frombuffer(r.take(8 * out_dim), dtype="<f8").reshape(1, out_dim)
        layers.append(
            DenseLayer(
                weight=ad.parameter(w.copy(), name=f"{name}.layer{i}.weight"),
                bias=ad.parameter(b.copy(), name=f"{name}.layer{i}.bias"),
                activation=_CODE_ACTS[act_code],
            )
        )
        prev_out = out_dim
    if not layers:
        raise FormatError(f"{r.what}: zero layers")
    return Mlp(layers)


def save_model(m: Mlp, path) -> None:
    with open(path, "wb") as f:
        f.write(mlp_to_bytes(m))


def load_model(path) -> Mlp:
    with open(path, "rb") as f:
        data = f.read()
    r = ByteReader(data, str(path))
    m = mlp_from_reader(r)
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return m
