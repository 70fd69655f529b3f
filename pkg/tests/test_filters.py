import math

import numpy as np
import pytest

from gpsmooth.errors import GPSmoothError, InputContractError, ParticleDegeneracyError
from gpsmooth.filters import (
    FILTER_NAMES,
    LearnedModel,
    ckf_step,
    cubature_points,
    ekf_step,
    gp_adf_step,
    run_filter,
    sir_pf_step,
    systematic_resample,
    ukf_step,
    unscented_points,
)
from gpsmooth.gp import train_gp
from gpsmooth.linear import kalman_filter
from gpsmooth.metrics import metric_nll
from gpsmooth.moments import GaussianBelief, propagate
from gpsmooth.systems import (
    KitagawaSystem,
    LinearSystem,
    PendulumSystem,
    envelope_region,
    make_training_set,
    scalar_linear_system,
    simulate,
)
from gpsmooth.verification import default_linear_system, train_learned_model


@pytest.fixture(scope="module")
def linear_case():
    system = default_linear_system()
    prior = GaussianBelief([0.5, -0.5], [[0.3, 0.05], [0.05, 0.2]])
    traj = simulate(system, prior, 20, seed=1)
    ref = kalman_filter(system.A, system.C, system.Q, system.R, prior.mean, prior.cov,
                        traj.measurements)
    return system, prior, traj, ref


@pytest.fixture(scope="module")
def pendulum_case():
    system = PendulumSystem()
    prior = system.default_prior()
    traj = simulate(system, prior, 30, seed=11)
    model = train_learned_model(system, 150, 12, 13, restarts=2, region=envelope_region(traj))
    return system, prior, traj, model


@pytest.fixture(scope="module")
def kitagawa_model():
    return train_learned_model(KitagawaSystem(), 100, 21, 22, restarts=3)


class TestKalmanEquivalence:
    @pytest.mark.parametrize("name", ["ekf", "ukf", "ckf"])
    def test_matches_kalman(self, linear_case, name):
        system, prior, traj, (xp, Pp, xf, Pf) = linear_case
        series = run_filter(name, system, prior, traj.measurements)
        np.testing.assert_allclose([b.mean for b in series.filtered], xf, atol=1e-10, rtol=0)
        np.testing.assert_allclose([b.cov for b in series.filtered], Pf, atol=1e-10, rtol=0)
        np.testing.assert_allclose([b.mean for b in series.predicted], xp[1:], atol=1e-10,
                                   rtol=0)
        np.testing.assert_allclose([b.cov for b in series.predicted], Pp[1:], atol=1e-10, rtol=0)

    def test_gp_adf_after_dense_training(self):
        system = scalar_linear_system()
        prior = GaussianBelief([1.0], [[0.5]])
        traj = simulate(system, prior, 20, seed=2)
        model = train_learned_model(system, 300, 3, 4, restarts=3)
        _, _, xf, Pf = kalman_filter(system.A, system.C, system.Q, system.R, prior.mean,
                                     prior.cov, traj.measurements)
        series = run_filter("gp-adf", model, prior, traj.measurements)
        np.testing.assert_allclose([b.mean for b in series.filtered], xf, atol=5e-2)
        np.testing.assert_allclose([b.cov for b in series.filtered], Pf, atol=5e-2)

    def test_ekf_joint_cross(self, linear_case):
        system, prior, traj, _ = linear_case
        rec = ekf_step(system, prior, traj.measurements[0])
        np.testing.assert_allclose(rec.joint_prev.cross, prior.cov @ system.A.T)


class TestSigmaPoints:
    def test_ckf_points_one_dimensional(self):
        pts, wm, wc = cubature_points(GaussianBelief([0.7], [[0.09]]))
        np.testing.assert_allclose(np.sort(pts[:, 0]), [0.4, 1.0])
        np.testing.assert_array_equal(wm, [0.5, 0.5])

    @pytest.mark.parametrize("fn", [unscented_points, cubature_points])
    def test_points_reproduce_moments(self, fn):
        belief = GaussianBelief([1.0, -2.0, 0.5], [[1.0, 0.2, 0.1], [0.2, 0.5, 0.0],
                                                   [0.1, 0.0, 0.3]])
        pts, wm, wc = fn(belief)
        assert wm.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(wm @ pts, belief.mean, atol=1e-12)
        d = pts - belief.mean
        np.testing.assert_allclose((wc[:, None] * d).T @ d, belief.cov, atol=1e-12)

    def test_unscented_classical_weights(self):
        pts, wm, _ = unscented_points(GaussianBelief([0.0], [[0.25]]))
        assert len(pts) == 3
        np.testing.assert_allclose(wm, [2 / 3, 1 / 6, 1 / 6])
        np.testing.assert_allclose(np.sort(pts[:, 0]), [-math.sqrt(0.75), 0, math.sqrt(0.75)])

    def test_singular_covariance(self):
        pts, _, _ = unscented_points(GaussianBelief([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]]))
        assert np.all(np.isfinite(pts))


class TestSteps:
    def test_kitagawa_jacobian_at_zero(self):
        assert KitagawaSystem().transition_jacobian(np.array([0.0]))[0, 0] == 25.5

    def test_zero_innovation_keeps_predicted_mean(self, kitagawa_model):
        prior = GaussianBelief([0.5], [[0.25]])
        probe = gp_adf_step(kitagawa_model, prior, [0.0])
        rec = gp_adf_step(kitagawa_model, prior, probe.predicted_meas.mean)
        np.testing.assert_allclose(rec.filtered.mean, rec.predicted.mean, atol=1e-12)

    def test_gp_adf_time_update_is_propagate(self, kitagawa_model):
        prior = GaussianBelief([0.3], [[0.2]])
        rec = gp_adf_step(kitagawa_model, prior, [1.0])
        moments = propagate(kitagawa_model.gp_f, prior, noise=kitagawa_model.gp_f.noise_variances)
        assert np.array_equal(rec.predicted.mean, moments.mean)
        assert np.array_equal(rec.predicted.cov, moments.cov)
        assert np.array_equal(rec.joint_prev.cross, moments.cross_cov)

    def test_gp_adf_nll_finite_on_kitagawa_trials(self, kitagawa_model):
        system = KitagawaSystem()
        rng = np.random.default_rng(5)
        for _ in range(1000):
            mu = rng.uniform(-3, 3)
            x0 = mu + 0.5 * rng.standard_normal()
            x1 = system.transition(np.array([[x0]]))[0, 0] + 0.2 * rng.standard_normal()
            z1 = system.measure(np.array([[x1]]))[0, 0] + 0.2 * rng.standard_normal()
            rec = gp_adf_step(kitagawa_model, GaussianBelief([mu], [[0.25]]), [z1])
            assert math.isfinite(metric_nll(rec.filtered, [x1]))

    @pytest.mark.parametrize("step", [ekf_step, ukf_step, ckf_step])
    def test_measurement_reduces_uncertainty(self, step):
        system = KitagawaSystem()
        rec = step(system, GaussianBelief([0.4], [[0.25]]), [1.0])
        assert rec.filtered.cov[0, 0] <= rec.predicted.cov[0, 0] + 1e-8

    def test_control_dimension_checked(self, pendulum_case):
        _, prior, _, model = pendulum_case
        with pytest.raises(InputContractError):
            gp_adf_step(model, prior, [0.0], u=[1.0, 2.0])


class TestParticleFilter:
    def test_noise_free_limit(self):
        system = LinearSystem([[0.8]], [[1.0]], [[0.0]], [[1e-10]])
        particles = np.full((50, 1), 2.0)
        resampled, rec = sir_pf_step(system, particles, [1.6], np.random.default_rng(0))
        np.testing.assert_allclose(resampled, 1.6)
        assert rec.filtered.mean[0] == pytest.approx(1.6)

    def test_matches_kalman_with_many_particles(self):
        system = scalar_linear_system(a=0.9, c=1.0, q=0.04, r=0.09)
        prior = GaussianBelief([0.5], [[0.5]])
        z = [0.2]
        _, _, xf, Pf = kalman_filter(system.A, system.C, system.Q, system.R, prior.mean,
                                     prior.cov, [z])
        means, variances = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            particles = rng.normal(0.5, math.sqrt(0.5), size=(10 ** 5, 1))
            _, rec = sir_pf_step(system, particles, z, rng)
            means.append(rec.filtered.mean[0])
            variances.append(rec.filtered.cov[0, 0])
        for values, target in ((means, xf[1, 0]), (variances, Pf[1, 0, 0])):
            se = np.std(values, ddof=1) / math.sqrt(len(values))
            assert abs(np.mean(values) - target) <= 3 * se

    def test_systematic_resampling_counts(self):
        w = np.array([0.1, 0.25, 0.05, 0.6])
        idx = systematic_resample(w, np.random.default_rng(3))
        counts = np.bincount(idx, minlength=4)
        assert np.all(counts >= np.floor(4 * w)) and np.all(counts <= np.ceil(4 * w))

    def test_all_weights_zero(self):
        system = LinearSystem([[1.0]], [[1.0]], [[1e-6]], [[1e-6]])
        with pytest.raises(ParticleDegeneracyError):
            sir_pf_step(system, np.zeros((10, 1)), [1e3], np.random.default_rng(0))

    def test_needs_two_particles(self):
        with pytest.raises(InputContractError):
            sir_pf_step(KitagawaSystem(), np.zeros((1, 1)), [0.0], 0)


class BrokenMeasurement(LinearSystem):
    """Returns NaN measurements from the third call onwards."""

    def __init__(self):
        super().__init__([[0.9]], [[1.0]], [[0.01]], [[0.01]])
        object.__setattr__(self, "_calls", [0])

    def measure(self, X):
        self._calls[0] += 1
        out = super().measure(X)
        return out * np.nan if self._calls[0] >= 3 else out


class TestRunFilter:
    def test_empty_measurements(self):
        prior = GaussianBelief([0.0], [[1.0]])
        series = run_filter("ekf", KitagawaSystem(), prior, np.zeros((0, 1)))
        assert series.filtered == [prior]
        assert series.joints == []

    def test_pendulum_records_psd(self, pendulum_case):
        _, prior, traj, model = pendulum_case
        series = run_filter("gp-adf", model, prior, traj.measurements, traj.controls)
        assert len(series.records) == 30
        for rec in series.records:
            diff = rec.predicted.cov - rec.filtered.cov
            assert np.linalg.eigvalsh(diff).min() >= -1e-8
            assert np.linalg.eigvalsh(rec.joint_prev.matrix()).min() >= -1e-8
            np.testing.assert_array_equal(rec.filtered.cov, rec.filtered.cov.T)

    @pytest.mark.parametrize("name", FILTER_NAMES)
    def test_deterministic(self, pendulum_case, name):
        system, prior, traj, model = pendulum_case
        target = model if name == "gp-adf" else system
        a = run_filter(name, target, prior, traj.measurements[:10], traj.controls[:10], seed=4)
        b = run_filter(name, target, prior, traj.measurements[:10], traj.controls[:10], seed=4)
        for x, y in zip(a.filtered, b.filtered):
            assert np.array_equal(x.mean, y.mean) and np.array_equal(x.cov, y.cov)

    def test_errors_carry_step(self):
        system = BrokenMeasurement()
        with pytest.raises(GPSmoothError) as info:
            run_filter("ekf", system, GaussianBelief([0.0], [[1.0]]), np.zeros((5, 1)))
        assert info.value.step == 3
        assert "step 3" in str(info.value)

    def test_unknown_filter(self):
        with pytest.raises(InputContractError):
            run_filter("kf", KitagawaSystem(), GaussianBelief([0.0], [[1.0]]), [[0.0]])

    def test_training_region_from_data(self):
        data = make_training_set(KitagawaSystem(), 40, seed=1)
        model = LearnedModel(train_gp(data.X_f, data.Y_f, restarts=1, seed=0),
                             train_gp(data.X_g, data.Y_g, restarts=1, seed=0))
        assert model.state_dim == 1 and model.control_dim == 0
