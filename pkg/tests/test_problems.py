"""Loss oracle contracts: analytic gradients, planted structure, determinism."""

import numpy as np
import pytest

from lozo.linalg import LayerShape, ParamSet, frobenius_norm, numeric_rank
from lozo.optimizers import OptimizerConfig, run
from lozo.problems import (
    gradient_rank_profile,
    make_logistic,
    make_planted_low_rank,
    make_quadratic,
    make_tiny_mlp,
)
from lozo.sampling import sample_gaussian

from oracles import finite_difference_grad


def rel_grad_error(analytic, fd):
    num = np.sqrt(sum(float(np.vdot(a - b, a - b)) for a, b in zip(analytic, fd)))
    den = np.sqrt(sum(float(np.vdot(b, b)) for b in fd))
    return num / max(den, 1e-30)


class TestQuadratic:
    shapes = [LayerShape(5, 4, 2)]

    def test_minimizer(self):
        oracle = make_quadratic(self.shapes, data_seed=1, noise_scale=0.0, num_samples=3)
        x = ParamSet([oracle.targets[0].copy()], self.shapes)
        assert oracle.evaluate(x, 0) == pytest.approx(0.0, abs=1e-12)
        assert frobenius_norm(oracle.analytic_grad(x, 0).layers[0]) == pytest.approx(0.0, abs=1e-12)

    def test_gradient_identity(self):
        oracle = make_quadratic(self.shapes, data_seed=1, noise_scale=0.0, num_samples=3)
        delta = sample_gaussian(5, 5, 4)
        x = ParamSet([oracle.targets[0] + delta], self.shapes)
        np.testing.assert_allclose(oracle.analytic_grad(x, 0).layers[0], delta, rtol=1e-12)

    def test_noise_is_mean_centered(self):
        oracle = make_quadratic(self.shapes, data_seed=2, noise_scale=0.7, num_samples=5)
        x = ParamSet([sample_gaussian(9, 5, 4)], self.shapes)
        mean_grad = sum(oracle.analytic_grad(x, xi).layers[0] for xi in range(5)) / 5
        np.testing.assert_allclose(mean_grad, x.layers[0] - oracle.targets[0], atol=1e-12)


class TestPlantedLowRank:
    def test_zero_residuals_zero_gradient(self):
        oracle = make_planted_low_rank(LayerShape(10, 8, 2), 2, data_seed=3, num_batches=6)
        x = ParamSet([oracle.planted.copy()], [LayerShape(10, 8, 2)])
        for xi in range(6):
            assert frobenius_norm(oracle.analytic_grad(x, xi).layers[0]) < 1e-10

    def test_rank_one_with_single_pair(self):
        oracle = make_planted_low_rank(LayerShape(10, 8, 3), 1, data_seed=4, num_batches=4)
        x = ParamSet([sample_gaussian(11, 10, 8)], [LayerShape(10, 8, 3)])
        g = oracle.analytic_grad(x, 0).layers[0]
        assert numeric_rank(g, 1e-10) == 1

    def test_rank_bound_along_trajectory(self):
        shape = LayerShape(32, 32, 3)
        oracle = make_planted_low_rank(shape, 3, data_seed=5, num_batches=8)
        x = ParamSet.zeros([shape])
        config = OptimizerConfig(alpha=1e-3, total_steps=40, base_seed=6, nu=10)
        run(oracle, x, config, "lozo", eval_every=40)
        for xi in range(8):
            g = oracle.analytic_grad(x, xi).layers[0]
            assert numeric_rank(g, 1e-10) <= 3

    def test_optimal_loss_matches_lstsq_oracle(self):
        shape = LayerShape(12, 10, 2)
        oracle = make_planted_low_rank(shape, 2, data_seed=7, num_batches=40)
        a_vecs, b_vecs, y_base, offsets = oracle.pair_data
        s, p, m = a_vecs.shape
        n = b_vecs.shape[2]
        # expand the antithetic pairs into explicit triples and solve directly
        rows, ys = [], []
        for bi in range(s):
            for j in range(p):
                dyad = np.outer(a_vecs[bi, j], b_vecs[bi, j]).ravel()
                rows.extend([dyad, dyad])
                ys.extend([y_base[bi, j] + offsets[bi, j], y_base[bi, j] - offsets[bi, j]])
        design = np.array(rows)
        yv = np.array(ys)
        sol, *_ = np.linalg.lstsq(design, yv, rcond=None)
        resid = design @ sol - yv
        f_star = 0.5 * float(np.dot(resid, resid)) / s
        assert oracle.optimal_loss == pytest.approx(f_star, rel=1e-9)
        # the planted matrix is a stationary point of the expected loss
        x_star = ParamSet([oracle.planted.copy()], [shape])
        assert oracle.expected_loss(x_star) == pytest.approx(oracle.optimal_loss, rel=1e-12)


class TestLogistic:
    def test_zero_weights_max_entropy(self):
        oracle = make_logistic(LayerShape(5, 6, 2), data_seed=8, num_batches=3, batch_size=8)
        x = ParamSet.zeros([LayerShape(5, 6, 2)])
        assert oracle.evaluate(x, 1) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient_check(self):
        oracle = make_logistic(LayerShape(4, 5, 2), data_seed=9, num_batches=2, batch_size=6)
        x = ParamSet([0.3 * sample_gaussian(13, 4, 5)], [LayerShape(4, 5, 2)])
        fd = finite_difference_grad(oracle, x, 0)
        analytic = oracle.analytic_grad(x, 0).layers
        assert rel_grad_error(analytic, fd) <= 1e-5

    def test_separable_data_low_loss(self):
        shape = LayerShape(5, 6, 2)
        oracle = make_logistic(shape, data_seed=10, num_batches=2, batch_size=8, feature_noise=0.02)
        # features are y * M + tiny noise, so a large multiple of M separates them
        mean = oracle.analytic_grad(ParamSet.zeros([shape]), 0)  # gradient at 0 is -mean-ish direction
        w = ParamSet([-60.0 * mean.layers[0] / frobenius_norm(mean.layers[0])], [shape])
        assert oracle.expected_loss(w) <= 1e-3


class TestTinyMLP:
    shapes = [LayerShape(6, 5, 2), LayerShape(3, 6, 2)]

    def test_zero_weights_zero_targets(self):
        oracle = make_tiny_mlp(self.shapes, data_seed=11, num_batches=2, batch_size=4,
                               noise_scale=0.0, teacher_scale=0.0)
        x = ParamSet.zeros(self.shapes)
        assert oracle.evaluate(x, 0) == 0.0

    def test_hidden_unit_permutation_invariance(self):
        oracle = make_tiny_mlp(self.shapes, data_seed=12, num_batches=2, batch_size=4)
        w1 = sample_gaussian(3, 6, 5)
        w2 = sample_gaussian(4, 3, 6)
        perm = np.random.default_rng(5).permutation(6)
        x = ParamSet([w1, w2], self.shapes)
        x_perm = ParamSet([w1[perm, :], w2[:, perm]], self.shapes)
        assert oracle.evaluate(x, 1) == pytest.approx(oracle.evaluate(x_perm, 1), rel=1e-12)

    def test_lozo_decreases_loss(self):
        oracle = make_tiny_mlp(self.shapes, data_seed=13, num_batches=4, batch_size=8, noise_scale=0.02)
        x = ParamSet([0.5 * sample_gaussian(7, 6, 5), 0.5 * sample_gaussian(8, 3, 6)], self.shapes)
        config = OptimizerConfig(alpha=5e-3, total_steps=600, base_seed=14, nu=20)
        records = run(oracle, x, config, "lozo", eval_every=1)
        losses = [r.loss for r in records]
        blocks = [np.mean(losses[i : i + 100]) for i in range(0, 600, 100)]
        assert all(b2 < b1 for b1, b2 in zip(blocks, blocks[1:]))


class TestGradientRankProfile:
    def test_planted_spectrum_collapses(self):
        shape = LayerShape(16, 16, 3)
        oracle = make_planted_low_rank(shape, 3, data_seed=15, num_batches=4)
        x = ParamSet([sample_gaussian(16, 16, 16)], [shape])
        sv = gradient_rank_profile(oracle, x, 0, 6)[0]
        assert sv[3] <= 1e-10 * sv[0]

    def test_quadratic_spectrum_full(self):
        shape = LayerShape(8, 8, 2)
        oracle = make_quadratic(shape, data_seed=16, noise_scale=0.0, num_samples=2)
        x = ParamSet([oracle.targets[0] + sample_gaussian(17, 8, 8)], [shape])
        sv = gradient_rank_profile(oracle, x, 0, 8)[0]
        assert sv[-1] > 1e-3 * sv[0]  # no rank collapse for a dense displacement

    def test_zero_gradient(self):
        shape = LayerShape(6, 6, 2)
        oracle = make_quadratic(shape, data_seed=18, noise_scale=0.0, num_samples=2)
        x = ParamSet([oracle.targets[0].copy()], [shape])
        sv = gradient_rank_profile(oracle, x, 0, 3)[0]
        assert max(sv) == 0.0

    def test_finite_difference_fallback(self):
        shapes = [LayerShape(4, 3, 2), LayerShape(2, 4, 2)]
        oracle = make_tiny_mlp(shapes, data_seed=19, num_batches=2, batch_size=4)
        x = ParamSet([0.3 * sample_gaussian(20, 4, 3), 0.3 * sample_gaussian(21, 2, 4)], shapes)
        profile = gradient_rank_profile(oracle, x, 0, 2)
        assert len(profile) == 2 and all(len(sv) == 2 for sv in profile)


class TestOracleInvariants:
    def test_every_analytic_gradient_passes_fd_check(self):
        cases = [
            (make_quadratic([LayerShape(4, 3, 2)], 30, noise_scale=0.4, num_samples=3), [LayerShape(4, 3, 2)]),
            (make_planted_low_rank(LayerShape(6, 5, 2), 2, 31, num_batches=4), [LayerShape(6, 5, 2)]),
            (make_logistic(LayerShape(4, 4, 2), 32, num_batches=2, batch_size=6), [LayerShape(4, 4, 2)]),
        ]
        for oracle, shapes in cases:
            for trial in range(20):
                layers = [0.5 * sample_gaussian(1000 + trial * 7 + i, s.m, s.n) for i, s in enumerate(shapes)]
                x = ParamSet(layers, shapes)
                xi = trial % oracle.num_samples
                fd = finite_difference_grad(oracle, x, xi)
                analytic = oracle.analytic_grad(x, xi).layers
                assert rel_grad_error(analytic, fd) <= 1e-5, oracle.name

    def test_determinism(self):
        oracle_a = make_planted_low_rank(LayerShape(8, 8, 2), 2, data_seed=33, num_batches=4)
        oracle_b = make_planted_low_rank(LayerShape(8, 8, 2), 2, data_seed=33, num_batches=4)
        x = ParamSet([sample_gaussian(34, 8, 8)], [LayerShape(8, 8, 2)])
        for xi in range(4):
            assert oracle_a.evaluate(x, xi) == oracle_b.evaluate(x, xi)

    def test_sample_index_validated(self):
        oracle = make_quadratic([LayerShape(3, 3, 1)], 35, num_samples=2)
        with pytest.raises(ValueError):
            oracle.evaluate(ParamSet.zeros([LayerShape(3, 3, 1)]), 2)
