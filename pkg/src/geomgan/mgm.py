"""Cycle-consistent two-domain GAN with density-balancing weights and an
explicit latent-geometry preservation penalty.

Two data->data generators and two discriminators train adversarially; the
per-sample weights make each discriminator blind to within-region density,
and the geometry loss penalizes changes in pairwise latent distances under
the mapping. Baselines (plain GAN, cycle GAN, random weights) are config
variants of the same trainer, not separate code paths.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gan
from . import manifold as mf
from . import nn
from . import partition as pt
from .errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)

CYCLE_NORMS = ("l1", "l2")
VARIANTS = ("mgm", "gan", "cycle_gan", "random_weights")


@dataclass
class MgmConfig:
    gen_dims_xy: list[int] = field(default_factory=list)  # D_X .. D_Y, bottleneck shaped
    gen_dims_yx: list[int] = field(default_factory=list)
    disc_dims_x: list[int] = field(default_factory=list)  # D_X .. 1
    disc_dims_y: list[int] = field(default_factory=list)
    lr: float = 0.001
    batch_size: int = 200
    disc_steps_per_gen_step: int = 1
    lambda_cycle: float = 1.0
    lambda_identity: float = 0.1
    lambda_mg: float = 0.1
    loss_kind: str = "classic_sigmoid"
    weight_mode: str = "importance"
    weight_generator_side: bool = True
    cycle_norm: str = "l1"
    gen_output_activation: str = "linear"
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.loss_kind not in gan.LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {gan.LOSS_KINDS}, got {self.loss_kind!r}")
        if self.weight_mode not in gan.WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {gan.WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.cycle_norm not in CYCLE_NORMS:
            raise ConfigError(f"cycle_norm must be one of {CYCLE_NORMS}, got {self.cycle_norm!r}")
        if min(self.lambda_cycle, self.lambda_identity, self.lambda_mg) < 0:
            raise ConfigError("loss coefficients must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")

    @classmethod
    def variant(cls, name: str, **overrides) -> "MgmConfig":
        """The four model variants compared in the experiments."""
        if name == "mgm":
            cfg = cls()
        elif name == "gan":
            cfg = cls(weight_mode="uniform", lambda_cycle=0.0, lambda_identity=0.0, lambda_mg=0.0)
        elif name == "cycle_gan":
            cfg = cls(weight_mode="uniform", lambda_mg=0.0)
        elif name == "random_weights":
            cfg = cls(weight_mode="random")
        else:
            raise ConfigError(f"unknown variant {name!r}, expected one of {VARIANTS}")
        for k, v in overrides.items():
            if not hasattr(cfg, k):
                raise ConfigError(f"unknown config key {k!r}")
            setattr(cfg, k, v)
        cfg.validate()
        return cfg


@dataclass
class MgmModel:
    gen_xy: nn.Mlp
    gen_yx: nn.Mlp
    disc_x: nn.Mlp
    disc_y: nn.Mlp
    manifold_x: mf.ManifoldModel
    manifold_y: mf.ManifoldModel
    partition_x: pt.Partition
    partition_y: pt.Partition
    lambda_cycle: float = 1.0
    lambda_identity: float = 0.1
    lambda_mg: float = 0.1


def map_x_to_y(model: MgmModel, rows: np.ndarray) -> np.ndarray:
    return model.gen_xy.forward_array(np.asarray(rows, dtype=np.float64))


def map_y_to_x(model: MgmModel, rows: np.ndarray) -> np.ndarray:
    return model.gen_yx.forward_array(np.asarray(rows, dtype=np.float64))


# ---------------------------------------------------------------------------
# loss terms


def _norm_loss(a: ad.Node, b: ad.Node, norm: str) -> ad.Node:
    return ad.l1(a, b) if norm == "l1" else ad.mse(a, b)


def cycle_loss(x_rows: np.ndarray, gen_xy: nn.Mlp, gen_yx: nn.Mlp, norm: str = "l1") -> ad.Node:
    """Round-trip penalty for one direction: gen_yx(gen_xy(x)) vs x."""
    x = ad.constant(np.asarray(x_rows, dtype=np.float64))
    return _norm_loss(gen_yx.forward(gen_xy.forward(x)), x, norm)


def identity_loss(x_rows: np.ndarray, gen_to_x: nn.Mlp, norm: str = "l1") -> ad.Node | None:
    """Penalty on a generator changing rows already in its output domain.

    Returns None (excluded, with a warning) when input/output widths differ.
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    if gen_to_x.input_dim != gen_to_x.output_dim or gen_to_x.input_dim != x_rows.shape[1]:
        log.warning(
            "identity loss skipped: generator maps %d -> %d features, batch has %d",
            gen_to_x.input_dim, gen_to_x.output_dim, x_rows.shape[1],
        )
        return None
    x = ad.constant(x_rows)
    return _norm_loss(gen_to_x.forward(x), x, norm)


def manifold_geometry_loss(
    x_rows: np.ndarray,
    gen_xy: nn.Mlp,
    manifold_x: mf.ManifoldModel,
    manifold_y: mf.ManifoldModel,
) -> ad.Node:
    """Mean squared change of pairwise latent distances under the mapping.

    Source latents come from the source manifold (gradient-detached); mapped
    rows live in the target data space, so their latents come from the target
    manifold with gradients flowing back into the generator.
    """
    x_rows = np.asarray(x_rows, dtype=np.float64)
    if x_rows.shape[0] < 2:
        raise ConfigError("manifold geometry loss needs a batch of at least 2 rows")
    mapped = gen_xy.forward(ad.constant(x_rows))
    return _geometry_term(x_rows, mapped, manifold_x, manifold_y)


def _geometry_term(
    x_rows: np.ndarray,
    mapped: ad.Node,
    manifold_x: mf.ManifoldModel,
    manifold_y: mf.ManifoldModel,
) -> ad.Node:
    b = x_rows.shape[0]
    src_d = _pairwise_numpy(mf.encode(manifold_x, x_rows))
    mapped_latents = mf.encode_node(manifold_y, mapped)
    map_d = ad.pairwise_dists(mapped_latents)
    diff = ad.sub(ad.constant(src_d), map_d)
    sq = ad.elementwise_mul(diff, diff)
    off_diag = ad.constant(np.ones((b, b)) - np.eye(b))
    # off-diagonal sum counts each unordered pair twice; dividing by b(b-1)
    # averages over the b(b-1)/2 pairs
    return ad.scalar_mul(1.0 / (b * (b - 1)), ad.reduce_sum(ad.elementwise_mul(sq, off_diag)))


def _pairwise_numpy(z: np.ndarray) -> np.ndarray:
    sq = (z * z).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    return np.sqrt(d2)


# ---------------------------------------------------------------------------
# training


def generator_total_loss(
    x: np.ndarray,
    y: np.ndarray,
    gen_xy: nn.Mlp,
    gen_yx: nn.Mlp,
    disc_x: nn.Mlp,
    disc_y: nn.Mlp,
    manifold_x: mf.ManifoldModel,
    manifold_y: mf.ManifoldModel,
    partition_x: pt.Partition,
    partition_y: pt.Partition,
    cfg: MgmConfig,
    rng: np.random.Generator,
) -> tuple[ad.Node, dict]:
    """Joint generator objective: weighted adversarial terms plus the cycle,
    identity and geometry penalties at their configured coefficients.

    Returns the scalar node and the component values that went into it.
    Generator forwards are shared across terms; separate evaluation of each
    public loss op on the same batch reproduces the same component values.
    """
    x_node, y_node = ad.constant(x), ad.constant(y)
    mapped_y = gen_xy.forward(x_node)  # lives in Y
    mapped_x = gen_yx.forward(y_node)  # lives in X

    wf_y = _fake_weights(cfg, mapped_y.value, manifold_y, partition_y, rng)
    wf_x = _fake_weights(cfg, mapped_x.value, manifold_x, partition_x, rng)
    if not cfg.weight_generator_side:
        wf_y = np.ones(mapped_y.value.shape[0])
        wf_x = np.ones(mapped_x.value.shape[0])
    d_fake_y = disc_y.forward(mapped_y)
    d_fake_x = disc_x.forward(mapped_x)
    adv = ad.add(
        gan.generator_loss(d_fake_y, wf_y, cfg.loss_kind),
        gan.generator_loss(d_fake_x, wf_x, cfg.loss_kind),
    )
    total = adv
    comps = {"adv": float(adv.value[0, 0]), "cycle": 0.0, "identity": 0.0, "mg": 0.0}

    if cfg.lambda_cycle > 0:
        cyc = ad.add(
            _norm_loss(gen_yx.forward(mapped_y), x_node, cfg.cycle_norm),
            _norm_loss(gen_xy.forward(mapped_x), y_node, cfg.cycle_norm),
        )
        total = ad.add(total, ad.scalar_mul(cfg.lambda_cycle, cyc))
        comps["cycle"] = float(cyc.value[0, 0])
    if cfg.lambda_identity > 0 and x.shape[1] == y.shape[1]:
        ident = ad.add(
            _norm_loss(gen_yx.forward(x_node), x_node, cfg.cycle_norm),
            _norm_loss(gen_xy.forward(y_node), y_node, cfg.cycle_norm),
        )
        total = ad.add(total, ad.scalar_mul(cfg.lambda_identity, ident))
        comps["identity"] = float(ident.value[0, 0])
    if cfg.lambda_mg > 0:
        mg = ad.add(
            _geometry_term(x, mapped_y, manifold_x, manifold_y),
            _geometry_term(y, mapped_x, manifold_y, manifold_x),
        )
        total = ad.add(total, ad.scalar_mul(cfg.lambda_mg, mg))
        comps["mg"] = float(mg.value[0, 0])

    comps["gen_total"] = float(total.value[0, 0])
    comps["adv_uniform"] = float(
        ad.add(
            gan.generator_loss(d_fake_y.detach(), np.ones(len(wf_y)), cfg.loss_kind),
            gan.generator_loss(d_fake_x.detach(), np.ones(len(wf_x)), cfg.loss_kind),
        ).value[0, 0]
    )
    return total, comps


@dataclass
class MgmLogEntry:
    epoch: int
    gen_total: float
    adv: float
    cycle: float
    identity: float
    mg: float
    disc_x: float
    disc_y: float
    adv_uniform: float
    wall_time: float


@dataclass
class MgmTrainLog:
    entries: list[MgmLogEntry] = field(default_factory=list)

    def to_csv(self, path, include_wall_time: bool = True) -> None:
        fields = ["epoch", "gen_total", "adv", "cycle", "identity", "mg",
                  "disc_x", "disc_y", "adv_uniform"]
        if include_wall_time:
            fields.append("wall_time")
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(fields)
            for e in self.entries:
                row = asdict(e)
                writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in fields[1:]])


def _default_gen_dims(d_in: int, d_out: int) -> list[int]:
    mid = max(min(d_in, d_out) // 2, 2)
    return [d_in, 4 * mid, 2 * mid, mid, 2 * mid, 4 * mid, d_out]


def init_mgm_networks(cfg: MgmConfig, d_x: int, d_y: int):
    gen_dims_xy = list(cfg.gen_dims_xy) or _default_gen_dims(d_x, d_y)
    gen_dims_yx = list(cfg.gen_dims_yx) or _default_gen_dims(d_y, d_x)
    disc_dims_x = list(cfg.disc_dims_x) or [d_x, 200, 100, 1]
    disc_dims_y = list(cfg.disc_dims_y) or [d_y, 200, 100, 1]
    if gen_dims_xy[0] != d_x or gen_dims_xy[-1] != d_y:
        raise ConfigError(f"gen_dims_xy must run {d_x}..{d_y}, got {gen_dims_xy}")
    if gen_dims_yx[0] != d_y or gen_dims_yx[-1] != d_x:
        raise ConfigError(f"gen_dims_yx must run {d_y}..{d_x}, got {gen_dims_yx}")
    if disc_dims_x[0] != d_x or disc_dims_x[-1] != 1:
        raise ConfigError(f"disc_dims_x must run {d_x}..1, got {disc_dims_x}")
    if disc_dims_y[0] != d_y or disc_dims_y[-1] != 1:
        raise ConfigError(f"disc_dims_y must run {d_y}..1, got {disc_dims_y}")

    def acts(dims, out):
        return ["leaky_relu"] * (len(dims) - 2) + [out]

    gen_xy = nn.init_mlp(gen_dims_xy, acts(gen_dims_xy, cfg.gen_output_activation), cfg.seed, name="gen_xy")
    gen_yx = nn.init_mlp(gen_dims_yx, acts(gen_dims_yx, cfg.gen_output_activation), cfg.seed + 1, name="gen_yx")
    disc_x = nn.init_mlp(disc_dims_x, acts(disc_dims_x, "linear"), cfg.seed + 2, name="disc_x")
    disc_y = nn.init_mlp(disc_dims_y, acts(disc_dims_y, "linear"), cfg.seed + 3, name="disc_y")
    return gen_xy, gen_yx, disc_x, disc_y


def _real_weights(cfg, rows, manifold, partition):
    if cfg.weight_mode == "importance":
        return pt.compute_weights(partition, mf.encode(manifold, rows)).weights
    return np.ones(rows.shape[0])


def _fake_weights(cfg, rows, manifold, partition, rng):
    if cfg.weight_mode == "importance":
        return gan.fake_batch_weights(rows, manifold, partition)
    if cfg.weight_mode == "random":
        return rng.uniform(0.0, 1.0, size=rows.shape[0]) + 1e-12
    return np.ones(rows.shape[0])


def train_mgm(
    data_x,
    data_y,
    manifold_x: mf.ManifoldModel,
    manifold_y: mf.ManifoldModel,
    partition_x: pt.Partition,
    partition_y: pt.Partition,
    cfg: MgmConfig,
    epochs: int,
) -> tuple[MgmModel, MgmTrainLog]:
    """Alternating updates: both discriminators, then both generators jointly.

    Real-sample weights are fixed from each domain's full-dataset partition
    counts; generated-sample weights are recomputed per minibatch against the
    target domain's partition. The manifolds stay byte-frozen throughout.
    """
    cfg.validate()
    rows_x = np.asarray(data_x.rows, dtype=np.float64)
    rows_y = np.asarray(data_y.rows, dtype=np.float64)
    gen_xy, gen_yx, disc_x, disc_y = init_mgm_networks(cfg, rows_x.shape[1], rows_y.shape[1])

    frozen_hash = (manifold_x.parameter_hash(), manifold_y.parameter_hash())

    gen_params = gen_xy.parameters() + gen_yx.parameters()
    disc_x_params, disc_y_params = disc_x.parameters(), disc_y.parameters()
    all_params = gen_params + disc_x_params + disc_y_params
    opt_gen = nn.make_optimizer(cfg.optimizer, lr=cfg.lr)
    opt_dx = nn.make_optimizer(cfg.optimizer, lr=cfg.lr)
    opt_dy = nn.make_optimizer(cfg.optimizer, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    train_log = MgmTrainLog()

    w_x_full = _real_weights(cfg, rows_x, manifold_x, partition_x)
    w_y_full = _real_weights(cfg, rows_y, manifold_y, partition_y)

    batch = min(cfg.batch_size, rows_x.shape[0], rows_y.shape[0])
    identity_applies = rows_x.shape[1] == rows_y.shape[1]
    if not identity_applies and cfg.lambda_identity > 0:
        log.warning("identity loss inactive: domains have %d and %d features",
                    rows_x.shape[1], rows_y.shape[1])

    for epoch in range(epochs):
        t0 = time.perf_counter()
        sums = {"gen_total": 0.0, "adv": 0.0, "cycle": 0.0, "identity": 0.0,
                "mg": 0.0, "disc_x": 0.0, "disc_y": 0.0, "adv_uniform": 0.0}
        batches_x = nn.minibatch_indices(rows_x.shape[0], batch, rng)
        batches_y = nn.minibatch_indices(rows_y.shape[0], batch, rng)
        n_steps = min(len(batches_x), len(batches_y))
        for step in range(n_steps):
            idx_x, idx_y = batches_x[step], batches_y[step]
            x, y = rows_x[idx_x], rows_y[idx_y]
            if cfg.weight_mode == "random":
                w_x = rng.uniform(0.0, 1.0, size=x.shape[0]) + 1e-12
                w_y = rng.uniform(0.0, 1.0, size=y.shape[0]) + 1e-12
            else:
                w_x, w_y = w_x_full[idx_x], w_y_full[idx_y]

            # --- discriminators
            for _ in range(cfg.disc_steps_per_gen_step):
                fake_x = gen_yx.forward_array(y)
                fake_y = gen_xy.forward_array(x)
                wf_x = _fake_weights(cfg, fake_x, manifold_x, partition_x, rng)
                wf_y = _fake_weights(cfg, fake_y, manifold_y, partition_y, rng)

                loss_dx = gan.discriminator_loss(
                    disc_x.forward(ad.constant(x)), disc_x.forward(ad.constant(fake_x)),
                    w_x, wf_x, cfg.loss_kind,
                )
                _ensure_finite(loss_dx, epoch, "disc_x")
                ad.zero_gradients(disc_x_params)
                ad.backward(loss_dx)
                opt_dx.step(disc_x_params)

                loss_dy = gan.discriminator_loss(
                    disc_y.forward(ad.constant(y)), disc_y.forward(ad.constant(fake_y)),
                    w_y, wf_y, cfg.loss_kind,
                )
                _ensure_finite(loss_dy, epoch, "disc_y")
                ad.zero_gradients(disc_y_params)
                ad.backward(loss_dy)
                opt_dy.step(disc_y_params)
                sums["disc_x"] += float(loss_dx.value[0, 0])
                sums["disc_y"] += float(loss_dy.value[0, 0])

            # --- generators (joint update, shared forwards)
            total, comps = generator_total_loss(
                x, y, gen_xy, gen_yx, disc_x, disc_y,
                manifold_x, manifold_y, partition_x, partition_y, cfg, rng,
            )
            _ensure_finite(total, epoch, "generator")
            ad.zero_gradients(all_params)
            ad.backward(total)
            opt_gen.step(gen_params)
            for key in ("gen_total", "adv", "cycle", "identity", "mg", "adv_uniform"):
                sums[key] += comps[key]

        denom_d = max(n_steps * cfg.disc_steps_per_gen_step, 1)
        denom_g = max(n_steps, 1)
        train_log.entries.append(
            MgmLogEntry(
                epoch=epoch,
                gen_total=sums["gen_total"] / denom_g,
                adv=sums["adv"] / denom_g,
                cycle=sums["cycle"] / denom_g,
                identity=sums["identity"] / denom_g,
                mg=sums["mg"] / denom_g,
                disc_x=sums["disc_x"] / denom_d,
                disc_y=sums["disc_y"] / denom_d,
                adv_uniform=sums["adv_uniform"] / denom_g,
                wall_time=time.perf_counter() - t0,
            )
        )

    after = (manifold_x.parameter_hash(), manifold_y.parameter_hash())
    assert after == frozen_hash, "internal error: manifold parameters changed during MGM training"

    model = MgmModel(
        gen_xy=gen_xy, gen_yx=gen_yx, disc_x=disc_x, disc_y=disc_y,
        manifold_x=manifold_x, manifold_y=manifold_y,
        partition_x=partition_x, partition_y=partition_y,
        lambda_cycle=cfg.lambda_cycle, lambda_identity=cfg.lambda_identity, lambda_mg=cfg.lambda_mg,
    )
    return model, train_log


def _ensure_finite(loss: ad.Node, epoch: int, which: str) -> None:
    if not np.isfinite(loss.value[0, 0]):
        raise DivergenceError(f"{which} loss non-finite at epoch {epoch}", epoch=epoch)


# ---------------------------------------------------------------------------
# model bundles


def save_mgm_bundle(model: MgmModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_model(model.gen_xy, out / "gen_xy.gmgn")
    nn.save_model(model.gen_yx, out / "gen_yx.gmgn")
    nn.save_model(model.disc_x, out / "disc_x.gmgn")
    nn.save_model(model.disc_y, out / "disc_y.gmgn")
    mf.save_manifold(model.manifold_x, out / "manifold_x.gmmf")
    mf.save_manifold(model.manifold_y, out / "manifold_y.gmmf")
    pt.export_partition(model.partition_x, out / "partition_x_centroids.csv", out / "partition_x.json")
    pt.export_partition(model.partition_y, out / "partition_y_centroids.csv", out / "partition_y.json")
    manifest = {
        "kind": "mgm_bundle",
        "lambda_cycle": model.lambda_cycle,
        "lambda_identity": model.lambda_identity,
        "lambda_mg": model.lambda_mg,
    }
    with open(out / "bundle.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_mgm_bundle(out_dir) -> MgmModel:
    out = Path(out_dir)
    with open(out / "bundle.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    return MgmModel(
        gen_xy=nn.load_model(out / "gen_xy.gmgn"),
        gen_yx=nn.load_model(out / "gen_yx.gmgn"),
        disc_x=nn.load_model(out / "disc_x.gmgn"),
        disc_y=nn.load_model(out / "disc_y.gmgn"),
        manifold_x=mf.load_manifold(out / "manifold_x.gmmf"),
        manifold_y=mf.load_manifold(out / "manifold_y.gmmf"),
        partition_x=pt.load_partition(out / "partition_x_centroids.csv", out / "partition_x.json"),
        partition_y=pt.load_partition(out / "partition_y_centroids.csv", out / "partition_y.json"),
        lambda_cycle=float(manifest["lambda_cycle"]),
        lambda_identity=float(manifest["lambda_identity"]),
        lambda_mg=float(manifest["lambda_mg"]),
    )
