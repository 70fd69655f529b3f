"""Forward Gaussian filters sharing one stepping interface.

``gp_adf_step`` filters in a GP dynamic system with exact moment matching.
``ekf_step``, ``ukf_step`` and ``ckf_step`` are the classical baselines on a
known (analytic) system, and ``sir_pf_step`` is a bootstrap particle filter
reported through its moment-matched Gaussian.

Every Gaussian step returns a :class:`FilterStepRecord` holding the joint of
consecutive states that the RTS backward pass needs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .errors import (
    FilterDivergenceError,
    GPSmoothError,
    InputContractError,
    ParticleDegeneracyError,
)
from .gp import GPModel
from .linalg import PSDRepair, robust_cho_factor, symmetrize
from .moments import GaussianBelief, propagate

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JointGaussian:
    """Gaussian over ``(x_{t-1}, x_t)`` given measurements up to ``t-1``."""

    mean_prev: np.ndarray
    mean_next: np.ndarray
    cov_prev: np.ndarray
    cov_next: np.ndarray
    cross: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.block([[self.cov_prev, self.cross], [self.cross.T, self.cov_next]])


@dataclass(frozen=True, eq=False)
class FilterStepRecord:
    predicted: GaussianBelief
    predicted_meas: GaussianBelief
    meas_cross: np.ndarray
    filtered: GaussianBelief
    joint_prev: JointGaussian | None


@dataclass(frozen=True, eq=False)
class LearnedModel:
    """GP dynamic system: ``gp_f`` maps (state[, control]) to the next state,
    ``gp_g`` maps state to measurement."""

    gp_f: GPModel
    gp_g: GPModel

    def __post_init__(self):
        if self.gp_f.output_dim != self.gp_g.input_dim:
            raise InputContractError(
                f"gp_f predicts {self.gp_f.output_dim} dims, gp_g expects {self.gp_g.input_dim}")
        if self.gp_f.input_dim < self.gp_f.output_dim:
            raise InputContractError("gp_f input must contain the full state")

    @property
    def state_dim(self) -> int:
        return self.gp_f.output_dim

    @property
    def control_dim(self) -> int:
        return self.gp_f.input_dim - self.gp_f.output_dim


@dataclass(eq=False)
class EstimateSeries:
    """Beliefs for ``t = 0..T``; ``joints[t-1]`` couples ``x_{t-1}`` and ``x_t``.

    ``filtered[0]`` is the prior. ``smoothed`` and ``gains`` are filled by
    :func:`gpsmooth.smoothers.rts_backward`.
    """

    filtered: list
    predicted: list = field(default_factory=list)
    joints: list = field(default_factory=list)
    records: list = field(default_factory=list)
    smoothed: list | None = None
    gains: list | None = None
    repairs: int = 0


def gaussian_update(predicted: GaussianBelief, meas_mean, meas_cov, meas_cross, z,
                    repair: PSDRepair) -> GaussianBelief:
    """Condition ``predicted`` on ``z`` given the joint moments of (x, z)."""
    factor, _ = robust_cho_factor(symmetrize(meas_cov), what="measurement covariance")
    gain = cho_solve(factor, meas_cross.T, check_finite=False).T
    mean = predicted.mean + gain @ (np.asarray(z, dtype=float).reshape(-1) - meas_mean)
    cov = predicted.cov - gain @ meas_cross.T
    if not np.all(np.isfinite(mean)):
        raise FilterDivergenceError("filtered mean is not finite")
    return GaussianBelief(mean, repair(cov, "filtered covariance"))


def _control(u, dim):
    if dim == 0:
        return np.zeros(0)
    u = np.asarray(u if u is not None else np.zeros(dim), dtype=float).reshape(-1)
    if u.size != dim:
        raise InputContractError(f"control has {u.size} entries, expected {dim}")
    return u


def gp_adf_step(model: LearnedModel, prior: GaussianBelief, z, u=None,
                repair: PSDRepair | None = None) -> FilterStepRecord:
    """One GP-ADF step: exact time update through ``gp_f``, exact measurement
    moments through ``gp_g`` (both with their learned noise), Gaussian update."""
    repair = repair or PSDRepair()
    D = model.state_dim
    u = _control(u, model.control_dim)
    if u.size:
        n_in = D + u.size
        cov_in = np.zeros((n_in, n_in))
        cov_in[:D, :D] = prior.cov
        inp = GaussianBelief(np.concatenate([prior.mean, u]), cov_in)
    else:
        inp = prior
    time = propagate(model.gp_f, inp, noise=model.gp_f.noise_variances)
    predicted = GaussianBelief(time.mean, repair(time.cov, "predicted covariance"))
    meas = propagate(model.gp_g, predicted, noise=model.gp_g.noise_variances)
    filtered = gaussian_update(predicted, meas.mean, meas.cov, meas.cross_cov, z, repair)
    joint = JointGaussian(prior.mean, predicted.mean, prior.cov, predicted.cov,
                          time.cross_cov[:D])
    return FilterStepRecord(predicted, GaussianBelief(meas.mean, meas.cov), meas.cross_cov,
                            filtered, joint)


def ekf_step(system, prior: GaussianBelief, z, u=None,
             repair: PSDRepair | None = None) -> FilterStepRecord:
    """First-order linearization about the prior and the predicted mean."""
    repair = repair or PSDRepair()
    F = system.transition_jacobian(prior.mean, u)
    mean_pred = system.transition(prior.mean[None, :], u)[0]
    cov_pred = F @ prior.cov @ F.T + system.process_noise
    predicted = GaussianBelief(mean_pred, repair(cov_pred, "predicted covariance"))
    G = system.measure_jacobian(predicted.mean)
    meas_mean = system.measure(predicted.mean[None, :])[0]
    meas_cov = G @ predicted.cov @ G.T + system.meas_noise
    meas_cross = predicted.cov @ G.T
    filtered = gaussian_update(predicted, meas_mean, meas_cov, meas_cross, z, repair)
    joint = JointGaussian(prior.mean, predicted.mean, prior.cov, predicted.cov, prior.cov @ F.T)
    return FilterStepRecord(predicted, GaussianBelief(meas_mean, meas_cov), meas_cross,
                            filtered, joint)


def _matrix_sqrt(cov):
    """Lower-triangular square root; falls back to an eigen-root for singular PSD input."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(symmetrize(cov))
        return v * np.sqrt(np.clip(w, 0.0, None))


def unscented_points(belief: GaussianBelief, alpha=1.0, beta=0.0, kappa=2.0):
    """``2D + 1`` sigma points and their mean/covariance weights."""
    D = belief.dim
    lam = alpha ** 2 * (D + kappa) - D
    L = _matrix_sqrt((D + lam) * belief.cov)
    pts = np.vstack([belief.mean, belief.mean + L.T, belief.mean - L.T])
    wm = np.full(2 * D + 1, 1.0 / (2.0 * (D + lam)))
    wm[0] = lam / (D + lam)
    wc = wm.copy()
    wc[0] += 1.0 - alpha ** 2 + beta
    return pts, wm, wc


def cubature_points(belief: GaussianBelief):
    """``2D`` spherical-radial cubature points with equal weights."""
    D = belief.dim
    L = _matrix_sqrt(D * belief.cov)
    pts = np.vstack([belief.mean + L.T, belief.mean - L.T])
    w = np.full(2 * D, 1.0 / (2 * D))
    return pts, w, w


def _transform(points, wm, wc, mapped, center):
    mean = wm @ mapped
    dy = mapped - mean
    dx = points - center
    return mean, (wc[:, None] * dy).T @ dy, (wc[:, None] * dx).T @ dy


def _sigma_step(system, prior, z, u, point_fn, repair):
    pts, wm, wc = point_fn(prior)
    mapped = system.transition(pts, None if u is None else np.repeat(
        np.atleast_1d(np.asarray(u, dtype=float))[None, :], len(pts), 0))
    mean_pred, cov_f, cross = _transform(pts, wm, wc, mapped, prior.mean)
    predicted = GaussianBelief(
        mean_pred, repair(cov_f + system.process_noise, "predicted covariance"))
    pts2, wm2, wc2 = point_fn(predicted)
    zs = system.measure(pts2)
    meas_mean, cov_g, meas_cross = _transform(pts2, wm2, wc2, zs, predicted.mean)
    meas_cov = cov_g + system.meas_noise
    filtered = gaussian_update(predicted, meas_mean, meas_cov, meas_cross, z, repair)
    joint = JointGaussian(prior.mean, predicted.mean, prior.cov, predicted.cov, cross)
    return FilterStepRecord(predicted, GaussianBelief(meas_mean, meas_cov), meas_cross,
                            filtered, joint)


def ukf_step(system, prior: GaussianBelief, z, u=None, alpha=1.0, beta=0.0, kappa=2.0,
             repair: PSDRepair | None = None) -> FilterStepRecord:
    """Unscented transform for both the time and the measurement update."""
    return _sigma_step(system, prior, z, u,
                       lambda b: unscented_points(b, alpha, beta, kappa), repair or PSDRepair())


def ckf_step(system, prior: GaussianBelief, z, u=None,
             repair: PSDRepair | None = None) -> FilterStepRecord:
    """Third-degree spherical-radial cubature for both updates."""
    return _sigma_step(system, prior, z, u, cubature_points, repair or PSDRepair())


def systematic_resample(weights, rng) -> np.ndarray:
    """Indices drawn with one uniform offset and ``N`` evenly spaced pointers."""
    N = len(weights)
    positions = (rng.uniform() + np.arange(N)) / N
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="left")


def _weighted_belief(particles, weights):
    mean = weights @ particles
    d = particles - mean
    return GaussianBelief(mean, (weights[:, None] * d).T @ d)


def sir_pf_step(system, particles, z, rng, u=None):
    """Propagate, weight by the measurement likelihood, resample systematically.

    Returns the resampled particles and a record whose beliefs are the
    moment-matched Gaussians of the predicted and the weighted particles.
    """
    particles = np.atleast_2d(np.asarray(particles, dtype=float))
    N, D = particles.shape
    if N < 2:
        raise InputContractError("the particle filter needs at least 2 particles")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    U = None if u is None else np.repeat(np.atleast_1d(np.asarray(u, float))[None, :], N, 0)
    noise_sd = np.sqrt(np.diag(system.process_noise))
    moved = system.transition(particles, U) + rng.standard_normal((N, D)) * noise_sd
    R = system.meas_noise
    zs = system.measure(moved)
    resid = np.asarray(z, dtype=float).reshape(1, -1) - zs
    r_diag = np.diag(R)
    log_w = -0.5 * np.sum(resid ** 2 / r_diag + np.log(2 * np.pi * r_diag), axis=1)
    if not np.any(np.exp(log_w) > 0):
        raise ParticleDegeneracyError("all particle weights are zero")
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    uniform = np.full(N, 1.0 / N)
    predicted = _weighted_belief(moved, uniform)
    meas = _weighted_belief(zs, uniform)
    meas_cov = meas.cov + R
    cross = (moved - predicted.mean).T @ (zs - meas.mean) / N
    filtered = _weighted_belief(moved, w)
    resampled = moved[systematic_resample(w, rng)]
    record = FilterStepRecord(predicted, GaussianBelief(meas.mean, meas_cov), cross,
                              filtered, None)
    return resampled, record


STEPS = {
    "gp-adf": gp_adf_step,
    "ekf": ekf_step,
    "ukf": ukf_step,
    "ckf": ckf_step,
}
FILTER_NAMES = tuple(STEPS) + ("sir-pf",)


def run_filter(name: str, model, prior: GaussianBelief, measurements, controls=None,
               seed=None, num_particles: int = 200, **params) -> EstimateSeries:
    """Fold one filter over a measurement sequence.

    Parameters
    ----------
    name : {"gp-adf", "ekf", "ukf", "ckf", "sir-pf"}
    model : LearnedModel for ``gp-adf``, an analytic system otherwise.
    measurements : (T, E) array
    controls : (T, U) array, optional
        ``controls[t-1]`` drives the transition into ``x_t``.
    seed : only used by ``sir-pf``.
    """
    if name not in FILTER_NAMES:
        raise InputContractError(f"unknown filter {name!r}; choose from {FILTER_NAMES}")
    measurements = np.asarray(measurements, dtype=float)
    if measurements.ndim == 1:
        measurements = measurements[:, None]
    T = measurements.shape[0]
    if controls is not None:
        controls = np.asarray(controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        if controls.shape[1] == 0:
            controls = None
        elif controls.shape[0] != T:
            raise InputContractError(f"{controls.shape[0]} controls for {T} measurements")
    repair = PSDRepair()
    series = EstimateSeries(filtered=[prior])
    belief = prior
    if name == "sir-pf":
        rng = np.random.default_rng(seed)
        particles = rng.multivariate_normal(prior.mean, prior.cov, size=num_particles)
    for t in range(1, T + 1):
        u = None if controls is None else controls[t - 1]
        try:
            if name == "sir-pf":
                particles, record = sir_pf_step(model, particles, measurements[t - 1], rng, u)
            else:
                record = STEPS[name](model, belief, measurements[t - 1], u=u, repair=repair,
                                     **params)
        except GPSmoothError as exc:
            raise exc.at_step(t)
        belief = record.filtered
        series.filtered.append(record.filtered)
        series.predicted.append(record.predicted)
        series.records.append(record)
        if record.joint_prev is not None:
            series.joints.append(record.joint_prev)
    series.repairs = repair.count
    if repair.count:
        log.info("%s: %d PSD repairs (max negative mass %.2e)", name, repair.count,
                 repair.max_magnitude)
    return series
