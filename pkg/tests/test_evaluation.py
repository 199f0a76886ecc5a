import numpy as np
import pytest

from geomgan import evaluation as ev
from geomgan import partition as pt
from geomgan.data import Dataset
from geomgan.errors import ConfigError


def labeled(rows, labels):
    return Dataset(rows=np.asarray(rows, dtype=float), labels=np.asarray(labels))


class TestNnLabelTransfer:
    def test_exact_match_takes_that_label(self):
        target = labeled([[0.0, 0.0], [5.0, 5.0]], [3, 8])
        out = ev.nn_label_transfer(np.array([[5.0, 5.0]]), target)
        assert out.tolist() == [8]

    def test_tie_takes_lowest_index(self):
        target = labeled([[1.0, 0.0], [-1.0, 0.0]], [4, 9])
        out = ev.nn_label_transfer(np.array([[0.0, 0.0]]), target)
        assert out.tolist() == [4]

    def test_five_point_hand_dataset_matches_brute_force(self):
        rng = np.random.default_rng(0)
        target = labeled(rng.normal(size=(5, 3)), [0, 1, 2, 1, 0])
        mapped = rng.normal(size=(7, 3))
        got = ev.nn_label_transfer(mapped, target)
        # brute-force oracle via a full distance table
        table = np.linalg.norm(mapped[:, None, :] - target.rows[None, :, :], axis=2)
        expected = target.labels[table.argmin(axis=1)]
        np.testing.assert_array_equal(got, expected)

    def test_order_invariance_off_ties(self):
        rng = np.random.default_rng(1)
        target = labeled(rng.normal(size=(20, 2)), rng.integers(0, 3, 20))
        mapped = rng.normal(size=(10, 2))
        base = ev.nn_label_transfer(mapped, target)
        perm = rng.permutation(20)
        shuffled = labeled(target.rows[perm], target.labels[perm])
        np.testing.assert_array_equal(ev.nn_label_transfer(mapped, shuffled), base)

    def test_unlabeled_target_rejected(self):
        with pytest.raises(ConfigError):
            ev.nn_label_transfer(np.zeros((1, 2)), Dataset(rows=np.zeros((3, 2))))

    def test_chunking_matches_unchunked(self):
        rng = np.random.default_rng(2)
        target = labeled(rng.normal(size=(30, 2)), rng.integers(0, 4, 30))
        mapped = rng.normal(size=(25, 2))
        np.testing.assert_array_equal(
            ev.nn_label_transfer(mapped, target, chunk=4), ev.nn_label_transfer(mapped, target)
        )


class TestFScores:
    def test_perfect_prediction(self):
        truth = np.array([0, 1, 1, 2])
        assert ev.f_score(truth, truth, 1) == 1.0
        assert ev.macro_f(truth, truth) == 1.0

    def test_never_predicted_class_zero(self):
        pred = np.array([0, 0, 0])
        truth = np.array([1, 1, 0])
        assert ev.f_score(pred, truth, 1) == 0.0

    def test_hand_case_two_thirds(self):
        # TP=2, FP=1, FN=1 for class 1
        pred = np.array([1, 1, 1, 0])
        truth = np.array([1, 1, 0, 1])
        assert ev.f_score(pred, truth, 1) == pytest.approx(2 / 3)

    def test_macro_under_matching_permutation(self):
        truth = np.array([0, 0, 1, 1, 2, 2])
        relabeled = np.array([1, 1, 2, 2, 0, 0])  # permutation sigma = (0->1,1->2,2->0)
        assert ev.macro_f(relabeled, np.array([1, 1, 2, 2, 0, 0])) == 1.0
        assert ev.macro_f(relabeled, truth) == 0.0


class TestConfusion:
    def test_identity_is_diagonal(self):
        truth = np.array([0, 1, 2, 1])
        m = ev.confusion_matrix(truth, truth, [0, 1, 2])
        np.testing.assert_array_equal(m, np.diag([1, 2, 1]))

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(3)
        truth = rng.integers(0, 4, 50)
        pred = rng.integers(0, 4, 50)
        m = ev.confusion_matrix(pred, truth, range(4))
        assert int(m.sum()) == 50
        np.testing.assert_array_equal(m.sum(axis=1), np.bincount(truth, minlength=4))

    def test_six_point_hand_tally(self):
        truth = [0, 0, 1, 1, 1, 2]
        pred = [0, 1, 1, 1, 2, 2]
        m = ev.confusion_matrix(pred, truth, [0, 1, 2])
        np.testing.assert_array_equal(m, [[1, 1, 0], [0, 2, 1], [0, 0, 1]])


class TestPopulationMeanR2:
    def test_exact_match_gives_one(self):
        rng = np.random.default_rng(4)
        src = labeled(rng.normal(size=(10, 4)), [0] * 5 + [1] * 5)
        tgt = labeled(rng.normal(size=(8, 4)), [0] * 4 + [1] * 4)
        mapped = src.rows.copy()
        mapped[src.labels == 0] = tgt.rows[tgt.labels == 0].mean(axis=0)
        _, after = ev.population_mean_r2(src, mapped, tgt, lambda d: d.labels == 0)
        assert after == pytest.approx(1.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(5)
        src = labeled(rng.normal(size=(10, 4)), [0] * 10)
        tgt = labeled(rng.normal(size=(10, 4)), [0] * 10)
        mapped = 3.0 * tgt.rows.mean(axis=0) + 2.0 + np.zeros_like(src.rows)
        _, after = ev.population_mean_r2(src, mapped, tgt, lambda d: d.labels == 0)
        assert after == pytest.approx(1.0)

    def test_four_feature_hand_example(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        u = np.array([1.1, 2.3, 2.8, 4.2])
        src = labeled(np.zeros((2, 4)), [0, 0])
        tgt = labeled(np.vstack([t, t]), [0, 0])
        mapped = np.vstack([u, u])
        _, after = ev.population_mean_r2(src, mapped, tgt, lambda d: d.labels == 0)
        tc = t - t.mean()
        uc = u - u.mean()
        expected = (tc @ uc) ** 2 / ((tc @ tc) * (uc @ uc))
        assert after == pytest.approx(expected, rel=1e-12)

    def test_empty_population_rejected(self):
        src = labeled(np.zeros((2, 3)), [0, 0])
        with pytest.raises(ConfigError):
            ev.population_mean_r2(src, np.zeros((2, 3)), src, lambda d: d.labels == 7)


class TestKde:
    def test_single_point_peak_and_symmetry(self):
        g = ev.kde_grid(np.array([[0.0, 0.0]]), bandwidth=0.3, grid=((-2, 2), (-2, 2), 41))
        iy, ix = np.unravel_index(np.argmax(g.density), g.density.shape)
        assert g.xs[ix] == pytest.approx(0.0, abs=1e-12)
        assert g.ys[iy] == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(g.density, g.density[::-1, :], atol=1e-12)
        np.testing.assert_allclose(g.density, g.density[:, ::-1], atol=1e-12)

    def test_integral_near_one(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(400, 2))
        g = ev.kde_grid(pts, grid=((-6, 6), (-6, 6), 101))
        assert g.integral() == pytest.approx(1.0, abs=0.02)

    def test_doubling_bandwidth_lowers_peak(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(100, 2))
        lo = ev.kde_grid(pts, bandwidth=0.2, grid=((-4, 4), (-4, 4), 81))
        hi = ev.kde_grid(pts, bandwidth=0.4, grid=((-4, 4), (-4, 4), 81))
        assert hi.density.max() < lo.density.max()

    def test_csv_export(self, tmp_path):
        g = ev.kde_grid(np.zeros((1, 2)), bandwidth=0.5, grid=((-1, 1), (-1, 1), 3))
        path = tmp_path / "kde.csv"
        g.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,density"
        assert len(lines) == 1 + 9


class TestEntropy:
    def test_uniform_occupancy_is_log_k(self):
        p = pt.Partition(
            centroids=np.array([[0.0], [10.0], [20.0]]), region_counts=np.array([1, 1, 1]), k=3
        )
        latents = np.array([[0.0], [10.0], [20.0], [0.1], [10.1], [19.9]])
        assert ev.region_occupancy_entropy(p, latents) == pytest.approx(np.log(3))

    def test_single_region_zero(self):
        p = pt.Partition(centroids=np.array([[0.0], [10.0]]), region_counts=np.array([2, 0]), k=2)
        assert ev.region_occupancy_entropy(p, np.zeros((5, 1))) == 0.0


class TestReport:
    def test_json_round_trip(self, tmp_path):
        r = ev.EvalReport(
            f_scores={"mgm": {"domain1": {"0": 0.9}}},
            confusion={"mgm": {"domain1": [[1, 0], [0, 1]]}},
            r_squared={"shifted": {"before": 0.8, "after": 0.97}},
            metadata={"seed": 1, "config_hash": ev.config_hash({"a": 1})},
        )
        path = tmp_path / "report.json"
        r.save(path)
        back = ev.EvalReport.load(path)
        assert back.to_json() == r.to_json()

    def test_config_hash_stable_and_order_free(self):
        assert ev.config_hash({"a": 1, "b": [2, 3]}) == ev.config_hash({"b": [2, 3], "a": 1})
