import numpy as np
import pytest

import oracles
from postergenre.ensemble import (EnsembleWeights, ensemble_scores, grid_search_weights, selection_score,
                                  simplex_lattice)


def random_scores(rng, n=50, d=13):
    return [rng.random((n, d)) for _ in range(3)]


def random_truth(rng, n=50, d=13):
    y = np.zeros((n, d), dtype=np.int64)
    for i in range(n):
        y[i, rng.choice(d, size=rng.integers(1, 4), replace=False)] = 1
    return y


class TestWeights:
    @pytest.mark.parametrize("alpha", [(0.5, 0.5, 0.5), (-0.1, 0.6, 0.5), (1.0, 0.0)])
    def test_invalid(self, alpha):
        with pytest.raises(ValueError):
            EnsembleWeights(alpha)

    def test_file_round_trip(self, tmp_path):
        w = EnsembleWeights((0.15, 0.35, 0.5))
        w.save(tmp_path / "w.txt")
        assert (tmp_path / "w.txt").read_text() == "0.15\n0.35\n0.5\n"
        assert EnsembleWeights.load(tmp_path / "w.txt") == w


class TestFusion:
    def test_vertex(self):
        rng = np.random.default_rng(0)
        r1, r2, r3 = random_scores(rng, 4, 5)
        assert np.array_equal(ensemble_scores(r1, r2, r3, EnsembleWeights((1.0, 0.0, 0.0))), r1)
        assert np.array_equal(ensemble_scores(r1, r2, r3, EnsembleWeights((0.0, 0.0, 1.0))), r3)

    def test_equal_inputs(self):
        v = np.array([0.5, 0.25, 0.125])
        for alpha in simplex_lattice(0.25):
            np.testing.assert_allclose(ensemble_scores(v, v, v, EnsembleWeights(alpha)), v, rtol=1e-15)

    def test_scalar_example(self):
        out = ensemble_scores([0.8], [0.4], [0.1], EnsembleWeights((0.5, 0.3, 0.2)))
        np.testing.assert_allclose(out, [0.54], atol=1e-15)

    def test_genre_permutation_and_affinity(self):
        rng = np.random.default_rng(1)
        r1, r2, r3 = random_scores(rng, 3, 6)
        w = EnsembleWeights((0.2, 0.3, 0.5))
        perm = rng.permutation(6)
        np.testing.assert_array_equal(ensemble_scores(r1[:, perm], r2[:, perm], r3[:, perm], w),
                                      ensemble_scores(r1, r2, r3, w)[:, perm])
        shift = rng.random((3, 6))
        np.testing.assert_allclose(ensemble_scores(r1 + shift, r2, r3, w) - ensemble_scores(r1, r2, r3, w),
                                   0.2 * shift, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ensemble_scores(np.zeros(3), np.zeros(3), np.zeros(4), EnsembleWeights((1.0, 0.0, 0.0)))


class TestLattice:
    def test_half_step(self):
        assert list(simplex_lattice(0.5)) == [(0.0, 0.0, 1.0), (0.0, 0.5, 0.5), (0.0, 1.0, 0.0),
                                              (0.5, 0.0, 0.5), (0.5, 0.5, 0.0), (1.0, 0.0, 0.0)]

    def test_default_step_size(self):
        pts = list(simplex_lattice(0.05))
        assert len(pts) == 231
        assert all(abs(sum(p) - 1) < 1e-12 and min(p) >= 0 for p in pts)

    def test_step_must_divide(self):
        with pytest.raises(ValueError):
            list(simplex_lattice(0.3))


class TestGridSearch:
    def test_dominant_model_wins(self):
        rng = np.random.default_rng(2)
        truth = random_truth(rng, 30, 6)
        perfect = truth * 0.9 + 0.05
        noise = [rng.random((30, 6)) for _ in range(2)]
        w = grid_search_weights([perfect, *noise], truth, step=0.1)
        assert w.alpha == (1.0, 0.0, 0.0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        truth = random_truth(rng, 12, 5)
        base = random_scores(rng, 12, 5)
        for metric in ("BA", "FM", "HL"):
            w = grid_search_weights(base, truth, step=0.25, metric=metric)
            assert w.alpha == oracles.grid_optimum([b.tolist() for b in base], truth.tolist(), 4, metric)

    def test_ties_go_to_smallest(self):
        # identical base models: every lattice point ties
        rng = np.random.default_rng(4)
        s = rng.random((10, 5))
        assert grid_search_weights([s, s, s], random_truth(rng, 10, 5), step=0.5).alpha == (0.0, 0.0, 1.0)

    def test_selection_score_hl_is_negated(self):
        truth = np.array([[1, 1, 1, 0]])
        assert selection_score(np.array([[0.9, 0.8, 0.7, 0.1]]), truth, "HL") == 0.0

    def test_errors(self):
        rng = np.random.default_rng(5)
        s = random_scores(rng, 4, 5)
        with pytest.raises(ValueError):
            grid_search_weights(s, np.zeros((0, 5)))
        with pytest.raises(ValueError):
            grid_search_weights(s, random_truth(rng, 4, 5), metric="AUC")
        with pytest.raises(ValueError):
            grid_search_weights(s[:2], random_truth(rng, 4, 5))
