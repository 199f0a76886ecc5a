"""Single-domain geometry-sampling GAN.

The adversarial losses take per-sample weights; with the reciprocal-count
importance weights every occupied latent region contributes equal loss mass,
with uniform weights the losses reduce bit-for-bit to a standard GAN's.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from . import nn
from . import partition as pt
from .errors import ConfigError, DivergenceError

LOSS_KINDS = ("classic_sigmoid", "score_difference")
WEIGHT_MODES = ("importance", "uniform", "random")


@dataclass
class GanConfig:
    noise_dim: int = 10
    gen_dims: list[int] = field(default_factory=list)  # noise_dim .. data_dim
    disc_dims: list[int] = field(default_factory=list)  # data_dim .. 1
    lr: float = 0.001
    batch_size: int = 200
    disc_steps_per_gen_step: int = 1
    loss_kind: str = "classic_sigmoid"
    weight_mode: str = "importance"
    weight_generator_side: bool = True
    gen_output_activation: str = "linear"
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.disc_steps_per_gen_step < 1:
            raise ConfigError("disc_steps_per_gen_step must be >= 1")


@dataclass
class TrainLogEntry:
    epoch: int
    gen_loss: float
    disc_loss: float
    gen_loss_uniform: float
    disc_loss_uniform: float
    wall_time: float


@dataclass
class TrainLog:
    entries: list[TrainLogEntry] = field(default_factory=list)
    # generator parameter snapshots taken during training (see train_mg_gan's
    # snapshot_every); the weighted objective is flat across covering
    # configurations, so single end-of-run iterates wander and sampling pools
    # over snapshots instead
    generator_snapshots: list = field(default_factory=list)

    def to_csv(self, path, include_wall_time: bool = True) -> None:
        fields = ["epoch", "gen_loss", "disc_loss", "gen_loss_uniform", "disc_loss_uniform"]
        if include_wall_time:
            fields.append("wall_time")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(fields)
            for e in self.entries:
                row = asdict(e)
                writer.writerow([repr(float(row[k])) if k != "epoch" else row[k] for k in fields])


def sample_noise(n: int, noise_dim: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ConfigError("need at least one noise row")
    return np.random.default_rng(seed).standard_normal((n, noise_dim))


# ---------------------------------------------------------------------------
# losses


def discriminator_loss(d_real: ad.Node, d_fake: ad.Node, w_real, w_fake, loss_kind: str) -> ad.Node:
    """Weighted discriminator objective to minimize.

    classic_sigmoid treats scores as logits of "is real" (real -> 1, fake -> 0);
    score_difference is mean fake score minus mean real score.
    """
    if loss_kind == "classic_sigmoid":
        real_term = ad.bce_with_logits(d_real, np.ones_like(d_real.value), w_real)
        fake_term = ad.bce_with_logits(d_fake, np.zeros_like(d_fake.value), w_fake)
        return ad.add(real_term, fake_term)
    if loss_kind == "score_difference":
        return ad.sub(ad.weighted_mean(d_fake, w_fake), ad.weighted_mean(d_real, w_real))
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


def generator_loss(d_fake: ad.Node, w_fake, loss_kind: str) -> ad.Node:
    """Weighted generator objective (non-saturating in the classic form)."""
    if loss_kind == "classic_sigmoid":
        return ad.bce_with_logits(d_fake, np.ones_like(d_fake.value), w_fake)
    if loss_kind == "score_difference":
        return ad.scalar_mul(-1.0, ad.weighted_mean(d_fake, w_fake))
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


# ---------------------------------------------------------------------------
# training


def _mlp_activations(n_layers: int, output: str) -> list[str]:
    return ["leaky_relu"] * (n_layers - 1) + [output]


def init_gan_networks(cfg: GanConfig, data_dim: int) -> tuple[nn.Mlp, nn.Mlp]:
    """Generator noise->data and discriminator data->score, deterministic per seed."""
    gen_dims = list(cfg.gen_dims) or [cfg.noise_dim, 200, 100, data_dim]
    disc_dims = list(cfg.disc_dims) or [data_dim, 200, 100, 1]
    if gen_dims[0] != cfg.noise_dim:
        raise ConfigError(f"gen_dims start at {gen_dims[0]}, noise_dim is {cfg.noise_dim}")
    if gen_dims[-1] != data_dim:
        raise ConfigError(f"gen_dims end at {gen_dims[-1]}, data dim is {data_dim}")
    if disc_dims[0] != data_dim or disc_dims[-1] != 1:
        raise ConfigError(f"disc_dims must run {data_dim}..1, got {disc_dims}")
    gen = nn.init_mlp(
        gen_dims,
        _mlp_activations(len(gen_dims) - 1, cfg.gen_output_activation),
        seed=cfg.seed,
        name="gen",
    )
    # final layer linear: scores are logits (classic) or raw critic values
    disc = nn.init_mlp(
        disc_dims, _mlp_activations(len(disc_dims) - 1, "linear"), seed=cfg.seed + 1, name="disc"
    )
    return gen, disc


def fake_batch_weights(
    rows: np.ndarray,
    manifold: mf.ManifoldModel,
    partition: pt.Partition,
) -> np.ndarray:
    """Importance weights of generated rows: in-batch region counts against the
    target domain's partition of its manifold."""
    latents = mf.encode(manifold, rows)
    return pt.compute_weights(partition, latents).weights


def _batch_weights(mode, rows, manifold, partition, rng):
    if mode == "importance":
        return fake_batch_weights(rows, manifold, partition)
    if mode == "uniform":
        return np.ones(rows.shape[0])
    return rng.uniform(0.0, 1.0, size=rows.shape[0]) + 1e-12  # random, kept positive


def train_mg_gan(
    data,
    manifold: mf.ManifoldModel,
    partition: pt.Partition,
    cfg: GanConfig,
    epochs: int,
    snapshot_every: int = 0,
    snapshot_from: int = 0,
) -> tuple[nn.Mlp, nn.Mlp, TrainLog]:
    """Alternating weighted GAN training on one domain.

    Real-sample weights come from the full-dataset partition counts, indexed
    per minibatch; generated-sample weights are recomputed per minibatch from
    the generated rows themselves.

    With snapshot_every > 0, a frozen copy of the generator is stored in the
    log after every such many epochs (starting once snapshot_from epochs have
    run); pooling samples across snapshots averages out the drift the flat
    weighted objective permits between equally-optimal configurations.
    """
    cfg.validate()
    rows = np.asarray(data.rows, dtype=np.float64)
    gen, disc = init_gan_networks(cfg, rows.shape[1])
    gen_params, disc_params = gen.parameters(), disc.parameters()
    opt_gen = nn.make_optimizer(cfg.optimizer, lr=cfg.lr)
    opt_disc = nn.make_optimizer(cfg.optimizer, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    log = TrainLog()

    if cfg.weight_mode == "importance":
        real_w_full = pt.compute_weights(partition, mf.encode(manifold, rows)).weights
    else:
        real_w_full = np.ones(rows.shape[0])

    batch = min(cfg.batch_size, rows.shape[0])
    for epoch in range(epochs):
        t0 = time.perf_counter()
        d_losses, g_losses, d_unif, g_unif = [], [], [], []
        for idx in nn.minibatch_indices(rows.shape[0], batch, rng):
            x = rows[idx]
            if cfg.weight_mode == "random":
                w_real = rng.uniform(0.0, 1.0, size=x.shape[0]) + 1e-12
            else:
                w_real = real_w_full[idx]

            for _ in range(cfg.disc_steps_per_gen_step):
                z = rng.standard_normal((x.shape[0], cfg.noise_dim))
                fake_rows = gen.forward_array(z)
                w_fake = _batch_weights(cfg.weight_mode, fake_rows, manifold, partition, rng)
                d_real = disc.forward(ad.constant(x))
                d_fake = disc.forward(ad.constant(fake_rows))
                loss_d = discriminator_loss(d_real, d_fake, w_real, w_fake, cfg.loss_kind)
                _check_finite(loss_d, epoch, "discriminator")
                d_losses.append(float(loss_d.value[0, 0]))
                d_unif.append(
                    float(
                        discriminator_loss(
                            d_real.detach(), d_fake.detach(),
                            np.ones_like(w_real), np.ones_like(w_fake), cfg.loss_kind,
                        ).value[0, 0]
                    )
                )
                ad.zero_gradients(disc_params)
                ad.backward(loss_d)
                opt_disc.step(disc_params)

            z = rng.standard_normal((x.shape[0], cfg.noise_dim))
            fake = gen.forward(ad.constant(z))
            w_fake = _batch_weights(cfg.weight_mode, fake.value, manifold, partition, rng)
            if not cfg.weight_generator_side:
                w_fake = np.ones(fake.value.shape[0])
            d_fake = disc.forward(fake)
            loss_g = generator_loss(d_fake, w_fake, cfg.loss_kind)
            _check_finite(loss_g, epoch, "generator")
            g_losses.append(float(loss_g.value[0, 0]))
            g_unif.append(
                float(generator_loss(d_fake.detach(), np.ones_like(w_fake), cfg.loss_kind).value[0, 0])
            )
            ad.zero_gradients(gen_params + disc_params)
            ad.backward(loss_g)
            opt_gen.step(gen_params)

        log.entries.append(
            TrainLogEntry(
                epoch=epoch,
                gen_loss=float(np.mean(g_losses)),
                disc_loss=float(np.mean(d_losses)),
                gen_loss_uniform=float(np.mean(g_unif)),
                disc_loss_uniform=float(np.mean(d_unif)),
                wall_time=time.perf_counter() - t0,
            )
        )
        if snapshot_every > 0 and epoch + 1 >= snapshot_from and (epoch + 1) % snapshot_every == 0:
            log.generator_snapshots.append(_copy_mlp(gen))
    return gen, disc, log


def _copy_mlp(m: nn.Mlp) -> nn.Mlp:
    layers = [
        nn.DenseLayer(
            weight=ad.constant(layer.weight.value.copy(), name=layer.weight.name),
            bias=ad.constant(layer.bias.value.copy(), name=layer.bias.name),
            activation=layer.activation,
        )
        for layer in m.layers
    ]
    return nn.Mlp(layers)


def generate_pooled(snapshots, n: int, noise_dim: int, seed: int) -> np.ndarray:
    """Draw ~n rows split evenly across generator snapshots."""
    if not snapshots:
        raise ConfigError("no generator snapshots to sample from")
    per = max(n // len(snapshots), 1)
    parts = [gen.forward_array(sample_noise(per, noise_dim, seed + i)) for i, gen in enumerate(snapshots)]
    return np.vstack(parts)


def _check_finite(loss: ad.Node, epoch: int, which: str) -> None:
    if not np.isfinite(loss.value[0, 0]):
        raise DivergenceError(f"{which} loss non-finite at epoch {epoch}", epoch=epoch)


def generate(gen: nn.Mlp, n: int, noise_dim: int, seed: int) -> np.ndarray:
    """Sample n rows from a trained generator."""
    return gen.forward_array(sample_noise(n, noise_dim, seed))
