import numpy as np
import pytest

from geomgan import autodiff as ad
from geomgan import gan
from geomgan import manifold as mf
from geomgan import mgm
from geomgan import nn
from geomgan import partition as pt
from geomgan.data import Dataset
from geomgan.errors import ConfigError


def linear_mlp(w, b=None, name="lin"):
    w = np.asarray(w, dtype=np.float64)
    m = nn.init_mlp([w.shape[0], w.shape[1]], ["linear"], seed=0, name=name)
    m.layers[0].weight.value = w
    m.layers[0].bias.value = (
        np.zeros((1, w.shape[1])) if b is None else np.asarray(b, dtype=np.float64).reshape(1, -1)
    )
    return m


def identity_mlp(d, name="id"):
    return linear_mlp(np.eye(d), name=name)


def identity_manifold(d):
    model = mf.ManifoldModel(
        encoder=identity_mlp(d, "enc"),
        decoder=identity_mlp(d, "dec"),
        latent_dim=d,
        training_report=mf.TrainingReport(final_mse=0.0, epochs_run=0),
    )
    model.encoder.freeze()
    model.decoder.freeze()
    return model


class TestCycleLoss:
    def test_identity_generators_zero(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        loss = mgm.cycle_loss(x, identity_mlp(3), identity_mlp(3))
        assert loss.value[0, 0] == 0.0

    def test_exact_inverse_linear_maps(self):
        a = np.array([[2.0, 1.0], [0.0, 1.0]])
        x = np.random.default_rng(1).normal(size=(5, 2))
        loss = mgm.cycle_loss(x, linear_mlp(a), linear_mlp(np.linalg.inv(a)))
        assert loss.value[0, 0] < 1e-12

    def test_shift_then_identity_gives_mean_abs_shift(self):
        c = np.array([0.5, -1.5])
        x = np.random.default_rng(2).normal(size=(7, 2))
        shift = linear_mlp(np.eye(2), b=c)
        loss = mgm.cycle_loss(x, shift, identity_mlp(2))
        assert loss.value[0, 0] == pytest.approx(np.abs(c).mean())

    def test_l2_norm_option(self):
        c = np.array([2.0, 0.0])
        x = np.zeros((4, 2))
        loss = mgm.cycle_loss(x, linear_mlp(np.eye(2), b=c), identity_mlp(2), norm="l2")
        assert loss.value[0, 0] == pytest.approx(2.0)  # mean of (2^2, 0)


class TestIdentityLoss:
    def test_identity_generator_zero(self):
        x = np.random.default_rng(3).normal(size=(5, 4))
        assert mgm.identity_loss(x, identity_mlp(4)).value[0, 0] == 0.0

    def test_constant_generator_on_centered_data(self):
        k = np.array([1.0, -2.0])
        x = np.array([[1.0, 1.0], [-1.0, -1.0]])  # centered
        const_gen = linear_mlp(np.zeros((2, 2)), b=k)
        loss = mgm.identity_loss(x, const_gen)
        assert loss.value[0, 0] == pytest.approx(np.abs(k - x).mean())

    def test_mismatched_dims_excluded_with_warning(self, caplog):
        x = np.zeros((3, 2))
        rect = linear_mlp(np.zeros((2, 3)))
        with caplog.at_level("WARNING"):
            assert mgm.identity_loss(x, rect) is None
        assert "identity loss skipped" in caplog.text


class TestManifoldGeometryLoss:
    def test_identity_latents_exactly_zero(self):
        x = np.random.default_rng(4).normal(size=(6, 2))
        loss = mgm.manifold_geometry_loss(x, identity_mlp(2), identity_manifold(2), identity_manifold(2))
        assert loss.value[0, 0] == 0.0

    def test_rigid_translation_zero(self):
        x = np.random.default_rng(5).normal(size=(6, 2))
        shift = linear_mlp(np.eye(2), b=np.array([3.0, -7.0]))
        loss = mgm.manifold_geometry_loss(x, shift, identity_manifold(2), identity_manifold(2))
        assert loss.value[0, 0] < 1e-24

    def test_collapse_pair_gives_squared_distance(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])  # latent distance 5
        collapse = linear_mlp(np.zeros((2, 2)), b=np.array([1.0, 1.0]))
        loss = mgm.manifold_geometry_loss(x, collapse, identity_manifold(2), identity_manifold(2))
        assert loss.value[0, 0] == pytest.approx(25.0)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(8, 2))
        gen = linear_mlp(rng.normal(size=(2, 2)))
        a = mgm.manifold_geometry_loss(x, gen, identity_manifold(2), identity_manifold(2)).value[0, 0]
        b = mgm.manifold_geometry_loss(x[::-1], gen, identity_manifold(2), identity_manifold(2)).value[0, 0]
        assert b == pytest.approx(a, rel=1e-12)

    def test_batch_of_one_rejected(self):
        with pytest.raises(ConfigError):
            mgm.manifold_geometry_loss(
                np.zeros((1, 2)), identity_mlp(2), identity_manifold(2), identity_manifold(2)
            )

    def test_gradient_reaches_generator_not_manifold(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(5, 2))
        gen = linear_mlp(rng.normal(size=(2, 2)))
        man = identity_manifold(2)
        loss = mgm.manifold_geometry_loss(x, gen, man, man)
        ad.backward(loss)
        assert gen.layers[0].weight.grad is not None
        assert man.encoder.layers[0].weight.grad is None


def two_blob_dataset(seed, shift=(0.0, 0.0), freqs=(0.5, 0.5), n=600):
    rng = np.random.default_rng(seed)
    comp = rng.choice(2, size=n, p=list(freqs))
    means = np.array([[0.0, 0.0], [6.0, 6.0]]) + np.asarray(shift)
    rows = means[comp] + 0.5 * rng.standard_normal((n, 2))
    return Dataset(rows=rows, labels=comp)


def build_domain(data, seed):
    model = mf.train_autoencoder(data, [2, 16, 2, 16, 2], epochs=60, seed=seed, lr=0.005)
    k, part = pt.select_k_bic(mf.encode(model, data.rows), (1, 6), seed=seed)
    return model, part


def small_cfg(**overrides):
    base = dict(
        gen_dims_xy=[2, 16, 8, 16, 2],
        gen_dims_yx=[2, 16, 8, 16, 2],
        disc_dims_x=[2, 32, 16, 1],
        disc_dims_y=[2, 32, 16, 1],
        batch_size=100,
        lr=0.002,
        seed=0,
    )
    base.update(overrides)
    variant = base.pop("variant", "mgm")
    return mgm.MgmConfig.variant(variant, **base)


@pytest.fixture(scope="module")
def identical_domains():
    data_x = two_blob_dataset(seed=10)
    data_y = two_blob_dataset(seed=11)
    man_x, part_x = build_domain(data_x, seed=1)
    man_y, part_y = build_domain(data_y, seed=2)
    return data_x, data_y, man_x, man_y, part_x, part_y


class TestGeneratorTotalLoss:
    def test_linear_combination_of_components(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        cfg = small_cfg(weight_mode="uniform")
        gen_xy, gen_yx, disc_x, disc_y = mgm.init_mgm_networks(cfg, 2, 2)
        x, y = data_x.rows[:40], data_y.rows[:40]
        rng = np.random.default_rng(0)
        total, comps = mgm.generator_total_loss(
            x, y, gen_xy, gen_yx, disc_x, disc_y, man_x, man_y, part_x, part_y, cfg, rng
        )
        expected = (
            comps["adv"]
            + cfg.lambda_cycle * comps["cycle"]
            + cfg.lambda_identity * comps["identity"]
            + cfg.lambda_mg * comps["mg"]
        )
        assert total.value[0, 0] == pytest.approx(expected, abs=1e-12)

        # components reproduce from the public single-direction ops
        adv_sep = (
            gan.generator_loss(
                disc_y.forward(ad.constant(gen_xy.forward_array(x))), np.ones(40), cfg.loss_kind
            ).value[0, 0]
            + gan.generator_loss(
                disc_x.forward(ad.constant(gen_yx.forward_array(y))), np.ones(40), cfg.loss_kind
            ).value[0, 0]
        )
        cyc_sep = (
            mgm.cycle_loss(x, gen_xy, gen_yx).value[0, 0]
            + mgm.cycle_loss(y, gen_yx, gen_xy).value[0, 0]
        )
        id_sep = (
            mgm.identity_loss(x, gen_yx).value[0, 0] + mgm.identity_loss(y, gen_xy).value[0, 0]
        )
        mg_sep = (
            mgm.manifold_geometry_loss(x, gen_xy, man_x, man_y).value[0, 0]
            + mgm.manifold_geometry_loss(y, gen_yx, man_y, man_x).value[0, 0]
        )
        assert comps["adv"] == pytest.approx(adv_sep, abs=1e-12)
        assert comps["cycle"] == pytest.approx(cyc_sep, abs=1e-12)
        assert comps["identity"] == pytest.approx(id_sep, abs=1e-12)
        assert comps["mg"] == pytest.approx(mg_sep, abs=1e-12)


class TestTraining:
    def test_epochs_zero_returns_initialized_model(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        cfg = small_cfg()
        model, log = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, cfg, epochs=0)
        gen_xy0, gen_yx0, _, _ = mgm.init_mgm_networks(cfg, 2, 2)
        assert model.gen_xy.parameter_bytes() == gen_xy0.parameter_bytes()
        assert model.gen_yx.parameter_bytes() == gen_yx0.parameter_bytes()
        assert log.entries == []

    def test_deterministic_per_seed(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        a, _ = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=2)
        b, _ = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=2)
        assert a.gen_xy.parameter_bytes() == b.gen_xy.parameter_bytes()

    def test_manifolds_byte_stable_across_training(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        before = (man_x.parameter_hash(), man_y.parameter_hash())
        mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=2)
        assert (man_x.parameter_hash(), man_y.parameter_hash()) == before

    def test_identical_domains_stay_near_identity(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        model, _ = mgm.train_mgm(
            data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=60
        )
        mapped = mgm.map_x_to_y(model, data_x.rows)
        displacement = np.linalg.norm(mapped - data_x.rows, axis=1).mean()
        diam = np.linalg.norm(data_x.rows.max(axis=0) - data_x.rows.min(axis=0))
        assert displacement < 0.1 * diam

    def test_zeroed_coefficients_match_plain_two_gan_loop(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        cfg = small_cfg(variant="gan")
        model, _ = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, cfg, epochs=2)

        # independent plain two-GAN loop with the same seed and update order
        gen_xy, gen_yx, disc_x, disc_y = mgm.init_mgm_networks(cfg, 2, 2)
        opt_gen = nn.Adam(lr=cfg.lr)
        opt_dx, opt_dy = nn.Adam(lr=cfg.lr), nn.Adam(lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        rows_x, rows_y = data_x.rows, data_y.rows
        for _ in range(2):
            bx = nn.minibatch_indices(rows_x.shape[0], cfg.batch_size, rng)
            by = nn.minibatch_indices(rows_y.shape[0], cfg.batch_size, rng)
            for idx_x, idx_y in zip(bx, by):
                x, y = rows_x[idx_x], rows_y[idx_y]
                ones = np.ones(x.shape[0])
                fake_x, fake_y = gen_yx.forward_array(y), gen_xy.forward_array(x)
                ldx = gan.discriminator_loss(
                    disc_x.forward(ad.constant(x)), disc_x.forward(ad.constant(fake_x)),
                    ones, ones, cfg.loss_kind)
                ad.zero_gradients(disc_x.parameters())
                ad.backward(ldx)
                opt_dx.step(disc_x.parameters())
                ldy = gan.discriminator_loss(
                    disc_y.forward(ad.constant(y)), disc_y.forward(ad.constant(fake_y)),
                    ones, ones, cfg.loss_kind)
                ad.zero_gradients(disc_y.parameters())
                ad.backward(ldy)
                opt_dy.step(disc_y.parameters())

                mapped_y = gen_xy.forward(ad.constant(x))
                mapped_x = gen_yx.forward(ad.constant(y))
                adv = ad.add(
                    gan.generator_loss(disc_y.forward(mapped_y), ones, cfg.loss_kind),
                    gan.generator_loss(disc_x.forward(mapped_x), ones, cfg.loss_kind),
                )
                params = gen_xy.parameters() + gen_yx.parameters()
                ad.zero_gradients(params + disc_x.parameters() + disc_y.parameters())
                ad.backward(adv)
                opt_gen.step(params)

        assert model.gen_xy.parameter_bytes() == gen_xy.parameter_bytes()
        assert model.gen_yx.parameter_bytes() == gen_yx.parameter_bytes()
        assert model.disc_x.parameter_bytes() == disc_x.parameter_bytes()


class TestMapping:
    def test_row_count_and_determinism(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        model, _ = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=1)
        mapped = mgm.map_x_to_y(model, data_x.rows)
        assert mapped.shape == data_x.rows.shape
        assert mgm.map_x_to_y(model, data_x.rows).tobytes() == mapped.tobytes()

    def test_round_trip_within_trained_cycle_loss(self, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        model, log = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=20)
        back = mgm.map_y_to_x(model, mgm.map_x_to_y(model, data_x.rows))
        roundtrip_l1 = np.abs(back - data_x.rows).mean()
        # the logged cycle component covers both directions on weighted batches
        assert roundtrip_l1 <= log.entries[-1].cycle + 0.25


class TestBundle:
    def test_save_load_round_trip(self, tmp_path, identical_domains):
        data_x, data_y, man_x, man_y, part_x, part_y = identical_domains
        model, _ = mgm.train_mgm(data_x, data_y, man_x, man_y, part_x, part_y, small_cfg(), epochs=1)
        mgm.save_mgm_bundle(model, tmp_path / "bundle")
        back = mgm.load_mgm_bundle(tmp_path / "bundle")
        assert back.gen_xy.parameter_bytes() == model.gen_xy.parameter_bytes()
        assert back.partition_x.id == model.partition_x.id
        assert back.lambda_mg == model.lambda_mg
        np.testing.assert_array_equal(
            mgm.map_x_to_y(back, data_x.rows[:5]), mgm.map_x_to_y(model, data_x.rows[:5])
        )


class TestConfig:
    def test_variants(self):
        assert mgm.MgmConfig.variant("gan").lambda_cycle == 0.0
        assert mgm.MgmConfig.variant("cycle_gan").lambda_mg == 0.0
        assert mgm.MgmConfig.variant("cycle_gan").weight_mode == "uniform"
        assert mgm.MgmConfig.variant("random_weights").weight_mode == "random"
        mgm_cfg = mgm.MgmConfig.variant("mgm")
        assert (mgm_cfg.lambda_cycle, mgm_cfg.lambda_identity, mgm_cfg.lambda_mg) == (1.0, 0.1, 0.1)
        with pytest.raises(ConfigError):
            mgm.MgmConfig.variant("wgan")
        with pytest.raises(ConfigError):
            mgm.MgmConfig.variant("mgm", nonexistent_key=1)
