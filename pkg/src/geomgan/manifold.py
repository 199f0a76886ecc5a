"""Per-domain autoencoder training and the latent map it exposes.

The autoencoder is trained once, before any adversarial training, and then
frozen; its latent layer is the manifold representation that partitioning
and the geometry loss work on.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ConfigError, DivergenceError, FormatError, ShapeError, UnsupportedVersionError

MANIFOLD_MAGIC = b"GMMF"
MANIFOLD_VERSION = 1


@dataclass
class TrainingReport:
    final_mse: float
    epochs_run: int


@dataclass
class ManifoldModel:
    encoder: nn.Mlp
    decoder: nn.Mlp
    latent_dim: int
    training_report: TrainingReport

    def parameter_hash(self) -> str:
        """SHA-256 of all parameter bytes; constant while the model stays frozen."""
        h = hashlib.sha256()
        h.update(self.encoder.parameter_bytes())
        h.update(self.decoder.parameter_bytes())
        return h.hexdigest()


def split_dims(dims) -> tuple[list[int], list[int]]:
    """Split a full width chain into encoder/decoder chains at the smallest
    interior entry (the latent layer; it may be wider than the data itself)."""
    dims = [int(d) for d in dims]
    if len(dims) < 3:
        raise ConfigError(f"autoencoder dims need input, latent and output entries, got {dims}")
    if dims[0] != dims[-1]:
        raise ConfigError(f"autoencoder input and output widths differ: {dims[0]} vs {dims[-1]}")
    i_min = 1 + int(np.argmin(dims[1:-1]))
    return dims[: i_min + 1], dims[i_min:]


def _coder_activations(n_layers: int) -> list[str]:
    # leaky ReLU everywhere except the final (latent or output) layer, which is linear
    return ["leaky_relu"] * (n_layers - 1) + ["linear"]


def train_autoencoder(
    data,
    dims,
    epochs: int = 200,
    seed: int = 0,
    lr: float = 0.001,
    batch_size: int = 200,
    early_stop_delta: float = 1e-6,
    early_stop_patience: int = 10,
    optimizer: str = "adam",
    standardize_latent: bool = True,
) -> ManifoldModel:
    """Train a dense autoencoder on Dataset rows and return it frozen.

    Stops early once the epoch reconstruction MSE has improved by less than
    early_stop_delta for early_stop_patience consecutive epochs.

    With standardize_latent, a per-dimension affine is folded into the linear
    latent layer (and its exact inverse into the decoder input layer) so the
    training data's latent representation has zero mean and unit variance per
    dimension. Reconstructions are unchanged; latent Euclidean distances stop
    depending on arbitrary per-dimension scales the encoder happened to pick.
    """
    rows = np.asarray(data.rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise ConfigError("cannot train an autoencoder on an empty dataset")
    enc_dims, dec_dims = split_dims(dims)
    if enc_dims[0] != rows.shape[1]:
        raise ConfigError(f"dims start at {enc_dims[0]} but data has {rows.shape[1]} features")

    encoder = nn.init_mlp(enc_dims, _coder_activations(len(enc_dims) - 1), seed=seed, name="encoder")
    decoder = nn.init_mlp(dec_dims, _coder_activations(len(dec_dims) - 1), seed=seed + 1, name="decoder")
    params = encoder.parameters() + decoder.parameters()
    opt = nn.make_optimizer(optimizer, lr=lr)
    rng = np.random.default_rng(seed)

    history: list[float] = []
    epochs_run = 0
    for epoch in range(epochs):
        epoch_losses = []
        for idx in nn.minibatch_indices(rows.shape[0], min(batch_size, rows.shape[0]), rng):
            x = ad.constant(rows[idx])
            recon = decoder.forward(encoder.forward(x))
            loss = ad.mse(recon, x)
            value = float(loss.value[0, 0])
            if not np.isfinite(value):
                raise DivergenceError(f"autoencoder loss non-finite at epoch {epoch}", epoch=epoch)
            epoch_losses.append(value)
            ad.zero_gradients(params)
            ad.backward(loss)
            opt.step(params)
        epochs_run = epoch + 1
        history.append(float(np.mean(epoch_losses)))
        # stop once the MSE has improved by less than delta over the last
        # early_stop_patience epochs
        if len(history) > early_stop_patience:
            if history[-1 - early_stop_patience] - history[-1] < early_stop_delta:
                break

    if standardize_latent:
        _standardize_latent_layer(encoder, decoder, rows)

    encoder.freeze()
    decoder.freeze()
    model = ManifoldModel(
        encoder=encoder,
        decoder=decoder,
        latent_dim=enc_dims[-1],
        training_report=TrainingReport(final_mse=float("nan"), epochs_run=epochs_run),
    )
    model.training_report.final_mse = reconstruction_mse(model, rows)
    return model


def _standardize_latent_layer(encoder: nn.Mlp, decoder: nn.Mlp, rows: np.ndarray) -> None:
    """Fold z' = (z - mu) / sigma into the encoder's final linear layer and the
    exact inverse into the decoder's first layer. Requires the linear latent
    activation this module always uses."""
    z = encoder.forward_array(rows)
    mu = z.mean(axis=0)
    sigma = np.maximum(z.std(axis=0), 1e-8)

    latent = encoder.layers[-1]
    latent.weight.value = latent.weight.value / sigma
    latent.bias.value = (latent.bias.value - mu) / sigma

    first = decoder.layers[0]
    new_weight = sigma[:, None] * first.weight.value
    first.bias.value = first.bias.value + mu @ first.weight.value
    first.weight.value = new_weight


def reconstruction_mse(m: ManifoldModel, rows: np.ndarray) -> float:
    recon = decode(m, encode(m, rows))
    return float(((recon - rows) ** 2).mean())


def encode(m: ManifoldModel, rows: np.ndarray) -> np.ndarray:
    """Latent representation of raw rows, detached from any gradient graph."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != m.encoder.input_dim:
        raise ShapeError(f"encode expects (*, {m.encoder.input_dim}) rows, got {rows.shape}")
    return m.encoder.forward_array(rows)


def decode(m: ManifoldModel, latents: np.ndarray) -> np.ndarray:
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != m.latent_dim:
        raise ShapeError(f"decode expects (*, {m.latent_dim}) latents, got {latents.shape}")
    return m.decoder.forward_array(latents)


def encode_node(m: ManifoldModel, x: ad.Node) -> ad.Node:
    """In-graph encoding: gradients flow through to x, never into the frozen encoder."""
    return m.encoder.forward(x)


# ---------------------------------------------------------------------------
# persistence: GMMF header with latent_dim, then encoder and decoder Mlp blocks


def save_manifold(m: ManifoldModel, path) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<4sHI", MANIFOLD_MAGIC, MANIFOLD_VERSION, m.latent_dim))
        f.write(struct.pack("<dI", m.training_report.final_mse, m.training_report.epochs_run))
        f.write(nn.mlp_to_bytes(m.encoder))
        f.write(nn.mlp_to_bytes(m.decoder))


def load_manifold(path) -> ManifoldModel:
    with open(path, "rb") as f:
        data = f.read()
    r = nn.ByteReader(data, str(path))
    magic, version, latent_dim = r.unpack("<4sHI")
    if magic != MANIFOLD_MAGIC:
        raise FormatError(f"{path}: bad manifold magic {magic!r}")
    if version != MANIFOLD_VERSION:
        raise UnsupportedVersionError(f"{path}: manifold version {version}, expected {MANIFOLD_VERSION}")
    final_mse, epochs_run = r.unpack("<dI")
    encoder = nn.mlp_from_reader(r, name="encoder")
    decoder = nn.mlp_from_reader(r, name="decoder")
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    if encoder.output_dim != latent_dim or decoder.input_dim != latent_dim:
        raise FormatError(f"{path}: latent_dim {latent_dim} does not match coder dims")
    if decoder.output_dim != encoder.input_dim:
        raise FormatError(f"{path}: decoder output {decoder.output_dim} != encoder input {encoder.input_dim}")
    encoder.freeze()
    decoder.freeze()
    return ManifoldModel(
        encoder=encoder,
        decoder=decoder,
        latent_dim=latent_dim,
        training_report=TrainingReport(final_mse=final_mse, epochs_run=epochs_run),
    )
