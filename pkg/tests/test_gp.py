import json
import math

import numpy as np
import pytest

from gpsmooth.errors import InputContractError
from gpsmooth.gp import (
    GPModel,
    SEHyperparams,
    gp_predict,
    gp_predict_point,
    gram_matrix,
    log_evidence,
    se_kernel,
    train_gp,
)


def random_hp(rng, D):
    return SEHyperparams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 2.0, D), rng.uniform(0.01, 0.3))


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        hp = SEHyperparams(2.7, [0.3, 4.0], 0.1)
        assert se_kernel([1.0, -2.0], [1.0, -2.0], hp) == 2.7

    def test_unit_offset(self):
        hp = SEHyperparams(1.0, [1.0, 1.0], 0.1)
        assert se_kernel([1.0, 0.0], [0.0, 0.0], hp) == pytest.approx(0.6065306597126334, rel=1e-14)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        hp = random_hp(rng, 3)
        for _ in range(100):
            x, y = rng.normal(size=(2, 3))
            assert se_kernel(x, y, hp) == se_kernel(y, x, hp)

    def test_dimension_mismatch(self):
        hp = SEHyperparams(1.0, [1.0, 1.0], 0.1)
        with pytest.raises(InputContractError):
            se_kernel([1.0], [1.0], hp)

    @pytest.mark.parametrize("bad", [dict(signal_variance=0.0), dict(noise_variance=-1.0),
                                     dict(length_scales=[1.0, 0.0])])
    def test_positive_hyperparameters(self, bad):
        kw = dict(signal_variance=1.0, length_scales=[1.0, 1.0], noise_variance=0.1)
        kw.update(bad)
        with pytest.raises(InputContractError):
            SEHyperparams(**kw)


class TestGram:
    def test_single_point(self):
        hp = SEHyperparams(1.5, [0.7], 0.2)
        np.testing.assert_array_equal(gram_matrix([[0.3]], hp), [[1.5]])
        np.testing.assert_allclose(gram_matrix([[0.3]], hp, with_noise=True), [[1.7]])

    def test_entrywise_oracle(self):
        rng = np.random.default_rng(1)
        hp = random_hp(rng, 2)
        X = rng.normal(size=(5, 2))
        K = gram_matrix(X, hp)
        expected = [[se_kernel(a, b, hp) for b in X] for a in X]
        np.testing.assert_allclose(K, expected, rtol=1e-13)
        assert np.max(np.abs(K - K.T)) == 0.0

    def test_duplicates_rank_deficient_until_noise(self):
        hp = SEHyperparams(1.0, [1.0], 0.01)
        X = np.array([[0.5], [0.5], [1.0]])
        assert np.linalg.matrix_rank(gram_matrix(X, hp)) == 2
        assert np.linalg.eigvalsh(gram_matrix(X, hp, with_noise=True)).min() > 0


class TestEvidence:
    def test_scalar_case(self):
        hp = SEHyperparams(0.8, [1.3], 0.15)
        value, _ = log_evidence([[0.4]], [0.0], hp)
        assert value == pytest.approx(-0.5 * math.log(0.95) - 0.5 * math.log(2 * math.pi))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        D = 1 + seed % 3
        X = rng.normal(size=(8, D))
        y = rng.normal(size=8)
        hp = random_hp(rng, D)
        theta = hp.to_log()
        _, grad = log_evidence(X, y, hp)
        h = 1e-5
        fd = np.empty_like(theta)
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (log_evidence(X, y, SEHyperparams.from_log(theta + e))[0]
                     - log_evidence(X, y, SEHyperparams.from_log(theta - e))[0]) / (2 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)
        assert rel.max() < 1e-5

    def test_duplicate_pair_never_lowers_optimum(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-3, 3, size=(15, 1))
        y = np.sin(X[:, 0]) + 0.1 * rng.standard_normal(15)
        base = train_gp(X, y, restarts=5, seed=0)
        X2 = np.vstack([X, X[:1]])
        y2 = np.concatenate([y, y[:1]])
        dup = train_gp(X2, y2, restarts=5, seed=0)
        # the duplicated data set's optimum, evaluated on the original data, is
        # attainable by the original optimizer: compare optimum evidences per point
        ev_base = log_evidence(X, y, base.hyperparams[0])[0]
        ev_dup = log_evidence(X2, y2, dup.hyperparams[0])[0]
        # the duplicated pair must be at least as well explained as by the
        # original optimum extended to the larger data set
        ev_dup_at_base = log_evidence(X2, y2, base.hyperparams[0])[0]
        assert ev_dup >= ev_dup_at_base - 1e-6
        assert np.isfinite(ev_base)


def sample_se_gp(rng, X, hp):
    K = gram_matrix(X, hp, with_noise=True)
    return np.linalg.cholesky(K) @ rng.standard_normal(X.shape[0])


class TestTraining:
    def test_recovers_generating_hyperparameters(self):
        rng = np.random.default_rng(11)
        true = SEHyperparams(1.5, [0.8], 0.05)
        X = rng.uniform(-5, 5, size=(100, 1))
        y = sample_se_gp(rng, X, true)
        model = train_gp(X, y, restarts=10, seed=3)
        np.testing.assert_allclose(model.hyperparams[0].to_log(), true.to_log(), atol=0.5)

    @pytest.mark.parametrize("seed", [0, 2, 12])
    def test_pure_noise_targets_explained_as_noise(self, seed):
        rng = np.random.default_rng(seed)
        spacing = 6.0 / 199
        X = np.linspace(-3, 3, 200)[:, None]
        y = 0.3 * rng.standard_normal(200)
        hp = train_gp(X, y, restarts=5, seed=0).hyperparams[0]
        # either the signal is small or it decorrelates between neighbours,
        # which makes it indistinguishable from white noise
        white = hp.length_scales[0] < spacing
        assert white or hp.signal_variance < 0.2 * hp.noise_variance
        assert hp.signal_variance + hp.noise_variance == pytest.approx(0.09, rel=0.25)

    def test_constant_targets_absorbed_by_long_length_scale(self):
        # zero prior mean: the constant becomes a slowly varying signal
        rng = np.random.default_rng(19)
        X = rng.uniform(-3, 3, size=(40, 1))
        y = 2.0 + 1e-3 * rng.standard_normal(40)
        model = train_gp(X, y, restarts=5, seed=0)
        hp = model.hyperparams[0]
        assert hp.length_scales[0] > 6.0
        assert hp.noise_variance < 1e-2 * hp.signal_variance
        mean, _ = gp_predict(model, [[0.5], [-2.5]])
        np.testing.assert_allclose(mean[:, 0], 2.0, atol=1e-2)

    def test_independent_hyperparameters_per_target(self):
        rng = np.random.default_rng(13)
        X = rng.uniform(-3, 3, size=(40, 1))
        Y = np.column_stack([np.sin(3 * X[:, 0]), 10 * np.cos(0.3 * X[:, 0])])
        Y += 0.05 * rng.standard_normal(Y.shape)
        model = train_gp(X, Y, restarts=3, seed=0)
        a, b = model.hyperparams
        assert a is not b
        assert a.length_scales[0] < b.length_scales[0]
        assert b.signal_variance > a.signal_variance
        # each column alone gives the same result
        alone = train_gp(X, Y[:, 1], restarts=3, seed=0)
        assert model.output_dim == 2 and alone.output_dim == 1

    def test_needs_two_points(self):
        with pytest.raises(InputContractError):
            train_gp([[0.0]], [1.0])

    def test_beta_solves_gram_system(self):
        rng = np.random.default_rng(14)
        X = rng.normal(size=(12, 2))
        Y = rng.normal(size=(12, 2))
        model = GPModel.from_data(X, Y, [random_hp(rng, 2), random_hp(rng, 2)])
        for a, hp in enumerate(model.hyperparams):
            np.testing.assert_allclose(gram_matrix(X, hp, True) @ model.beta[:, a], Y[:, a],
                                       atol=1e-10)


class TestPrediction:
    def test_interpolates_training_point_without_noise(self):
        X = np.array([[-1.0], [0.2], [1.5]])
        y = np.array([0.3, -1.0, 2.0])
        model = GPModel.from_data(X, y, [SEHyperparams(1.0, [0.7], 1e-10)])
        mean, var = gp_predict_point(model, [0.2])
        assert mean[0] == pytest.approx(-1.0, abs=1e-6)
        assert var[0] == pytest.approx(0.0, abs=1e-8)

    def test_reverts_to_prior_far_away(self):
        X = np.array([[-1.0], [0.2], [1.5]])
        model = GPModel.from_data(X, [0.3, -1.0, 2.0], [SEHyperparams(2.0, [0.7], 0.01)])
        mean, var = gp_predict_point(model, [500.0])
        assert mean[0] == pytest.approx(0.0, abs=1e-12)
        assert var[0] == pytest.approx(2.0, abs=1e-12)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(15)
        X = rng.normal(size=(20, 2))
        Y = rng.normal(size=(20, 2))
        hps = [random_hp(rng, 2), random_hp(rng, 2)]
        model = GPModel.from_data(X, Y, hps)
        for xs in rng.normal(size=(10, 2)):
            mean, var = gp_predict_point(model, xs)
            for a, hp in enumerate(hps):
                K = np.array([[se_kernel(p, q, hp) for q in X] for p in X]) \
                    + hp.noise_variance * np.eye(20)
                k = np.array([se_kernel(p, xs, hp) for p in X])
                assert mean[a] == pytest.approx(k @ np.linalg.solve(K, Y[:, a]), abs=1e-10)
                assert var[a] == pytest.approx(hp.signal_variance - k @ np.linalg.solve(K, k),
                                               abs=1e-10)

    def test_variance_bounds(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(25, 2))
        model = GPModel.from_data(X, rng.normal(size=(25, 1)), [random_hp(rng, 2)])
        _, var = gp_predict(model, rng.normal(scale=3, size=(500, 2)), include_noise=True)
        hp = model.hyperparams[0]
        assert var.min() >= 0
        assert var.max() <= hp.signal_variance + hp.noise_variance + 1e-8 * hp.signal_variance


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(17)
        X = rng.normal(size=(10, 2))
        model = GPModel.from_data(X, rng.normal(size=(10, 2)),
                                  [random_hp(rng, 2), random_hp(rng, 2)])
        text = model.to_json()
        doc = json.loads(text)
        assert all(isinstance(v, str) for v in doc["inputs"][0])
        back = GPModel.from_json(text)
        np.testing.assert_array_equal(back.inputs, model.inputs)
        np.testing.assert_array_equal(back.beta, model.beta)
        assert back.hyperparams[1].noise_variance == model.hyperparams[1].noise_variance

    def test_model_is_read_only(self):
        rng = np.random.default_rng(18)
        model = GPModel.from_data(rng.normal(size=(4, 1)), rng.normal(size=4),
                                  [SEHyperparams(1.0, [1.0], 0.1)])
        with pytest.raises(ValueError):
            model.beta[0, 0] = 1.0
