"""Oracle suites that check the estimators against independent references.

* Monte-Carlo moments: sample the input and the GP function value jointly
  and compare against :func:`gpsmooth.moments.propagate`.
* Linear-Gaussian equivalence: every Gaussian filter/smoother against the
  textbook Kalman filter and RTS smoother in :mod:`gpsmooth.linear`.
* Unscented-transform degeneracy on the Kitagawa transition.
* Random Gaussian-bump features whose covariance tends to the SE kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import LearnedModel, ukf_step
from .gp import GPModel, SEHyperparams, gp_predict, train_gp
from .linear import kalman_filter, rts_smoother
from .moments import GaussianBelief, propagate
from .smoothers import SMOOTHER_FILTER, smooth
from .systems import KitagawaSystem, LinearSystem, make_training_set, scalar_linear_system, simulate


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class Check:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)


@dataclass(frozen=True)
class MomentComparison:
    """One scalar moment: analytic value, Monte-Carlo estimate and its standard error."""

    instance: int
    quantity: str
    analytic: float
    estimate: float
    stderr: float

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.analytic == self.estimate else np.inf
        return abs(self.analytic - self.estimate) / self.stderr


def random_moment_instance(rng, max_input=3, max_output=3, max_points=30):
    """A random multi-output SE-GP and a Gaussian belief over its input."""
    D = int(rng.integers(1, max_input + 1))
    E = int(rng.integers(1, max_output + 1))
    n = int(rng.integers(5, max_points + 1))
    X = rng.uniform(-2, 2, size=(n, D))
    W = rng.normal(size=(D, E))
    Y = np.sin(X @ W + rng.uniform(0, np.pi, E)) + 0.1 * rng.standard_normal((n, E))
    hps = [SEHyperparams(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0, D), rng.uniform(0.01, 0.1))
           for _ in range(E)]
    A = rng.normal(scale=0.5 / np.sqrt(D), size=(D, D))
    belief = GaussianBelief(rng.uniform(-1, 1, D), A @ A.T + 0.01 * np.eye(D))
    return GPModel.from_data(X, Y, hps), belief


def sample_moments(model: GPModel, belief: GaussianBelief, samples: int, rng,
                   chunk: int = 100_000):
    """Draw ``x ~ belief`` and ``y_a ~ N(m_a(x), v_a(x))``; return ``(x, y)``."""
    D, E = belief.dim, model.output_dim
    xs = np.empty((samples, D))
    ys = np.empty((samples, E))
    # eigen square root: allows deterministic (zero-variance) input blocks
    w, v = np.linalg.eigh(belief.cov)
    L = v * np.sqrt(np.clip(w, 0.0, None))
    for start in range(0, samples, chunk):
        stop = min(start + chunk, samples)
        x = belief.mean + rng.standard_normal((stop - start, D)) @ L.T
        m, v = gp_predict(model, x)
        xs[start:stop] = x
        ys[start:stop] = m + np.sqrt(v) * rng.standard_normal(m.shape)
    return xs, ys


def _mean_and_se(values):
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def compare_moments(model, belief, samples=10 ** 6, rng=None, instance=0):
    """All scalar comparisons of mean, covariance and cross-covariance."""
    rng = np.random.default_rng(rng)
    moments = propagate(model, belief)
    xs, ys = sample_moments(model, belief, samples, rng)
    dx = xs - xs.mean(0)
    dy = ys - ys.mean(0)
    out = []
    E, D = ys.shape[1], xs.shape[1]
    for a in range(E):
        est, se = _mean_and_se(ys[:, a])
        out.append(MomentComparison(instance, f"mean[{a}]", moments.mean[a], est, se))
    for a in range(E):
        for b in range(a + 1):
            est, se = _mean_and_se(dy[:, a] * dy[:, b])
            out.append(MomentComparison(instance, f"cov[{a},{b}]", moments.cov[a, b], est, se))
    for d in range(D):
        for a in range(E):
            est, se = _mean_and_se(dx[:, d] * dy[:, a])
            out.append(MomentComparison(instance, f"cross[{d},{a}]", moments.cross_cov[d, a],
                                        est, se))
    return out


def moment_suite(instances=50, samples=10 ** 6, seed=0, z_max=3.0):
    """Run :func:`compare_moments` on random instances.

    Returns the comparisons and the fraction within ``z_max`` standard errors.
    """
    seq = as_seed_sequence(seed)
    comparisons = []
    for k, child in enumerate(seq.spawn(instances)):
        build_rng, mc_rng = (np.random.default_rng(s) for s in child.spawn(2))
        model, belief = random_moment_instance(build_rng)
        comparisons += compare_moments(model, belief, samples, mc_rng, instance=k)
    within = np.mean([c.z <= z_max for c in comparisons])
    return comparisons, float(within)


def _stack(beliefs):
    return (np.array([b.mean for b in beliefs]), np.array([b.cov for b in beliefs]))


def _series_errors(series, reference):
    xf, Pf, xs, Ps = reference
    mf, cf = _stack(series.filtered)
    ms, cs = _stack(series.smoothed)
    return (max(np.abs(mf - xf).max(), np.abs(ms - xs).max()),
            max(np.abs(cf - Pf).max(), np.abs(cs - Ps).max()))


def default_linear_system() -> LinearSystem:
    """A 2-D rotation-like system observed through one combination of states."""
    A = [[0.95, 0.1], [-0.1, 0.9]]
    C = [[1.0, 0.5]]
    return LinearSystem(A, C, np.diag([0.01, 0.02]), [[0.05]])


def linear_equivalence(seed=0, T=20, gp_points=500, restarts=10, include_gp=True):
    """Compare every Gaussian filter/smoother against Kalman/RTS.

    Returns a list of :class:`Check`. The analytic baselines are held to
    ``1e-10``; GP-ADF/GP-RTSS, trained on ``gp_points`` samples of a scalar
    system, to ``5e-2``.
    """
    seq = as_seed_sequence(seed)
    traj_seed, train_seed, gp_seed = seq.spawn(3)
    checks = []
    system = default_linear_system()
    prior = GaussianBelief([0.5, -0.5], [[0.3, 0.05], [0.05, 0.2]])
    traj = simulate(system, prior, T, seed=traj_seed)
    _, _, xf, Pf = kalman_filter(system.A, system.C, system.Q, system.R, prior.mean, prior.cov,
                                 traj.measurements)
    xs, Ps = rts_smoother(system.A, system.Q, xf, Pf)
    for name in ("eks", "urtss", "cks"):
        series = smooth(name, system, prior, traj.measurements)
        mean_err, cov_err = _series_errors(series, (xf, Pf, xs, Ps))
        filt = SMOOTHER_FILTER[name]
        checks.append(Check(f"{filt}/{name} mean", mean_err, 1e-10))
        checks.append(Check(f"{filt}/{name} cov", cov_err, 1e-10))
    if include_gp:
        scalar = scalar_linear_system()
        prior1 = GaussianBelief([1.0], [[0.5]])
        traj1 = simulate(scalar, prior1, T, seed=traj_seed)
        model = train_learned_model(scalar, gp_points, train_seed, gp_seed, restarts)
        _, _, xf1, Pf1 = kalman_filter(scalar.A, scalar.C, scalar.Q, scalar.R, prior1.mean,
                                       prior1.cov, traj1.measurements)
        xs1, Ps1 = rts_smoother(scalar.A, scalar.Q, xf1, Pf1)
        series = smooth("gp-rtss", model, prior1, traj1.measurements)
        mean_err, cov_err = _series_errors(series, (xf1, Pf1, xs1, Ps1))
        checks.append(Check("gp-adf/gp-rtss mean", mean_err, 5e-2))
        checks.append(Check("gp-adf/gp-rtss cov", cov_err, 5e-2))
    return checks


def train_learned_model(system, n, data_seed, train_seed, restarts=10, region=None):
    """Train ``gp_f`` and ``gp_g`` on one fresh training set."""
    data = make_training_set(system, n, seed=data_seed, region=region)
    f_seed, g_seed = as_seed_sequence(train_seed).spawn(2)
    gp_f = train_gp(data.X_f, data.Y_f, restarts=restarts, seed=np.random.default_rng(f_seed))
    gp_g = train_gp(data.X_g, data.Y_g, restarts=restarts, seed=np.random.default_rng(g_seed))
    return LearnedModel(gp_f, gp_g)


def ut_degeneracy(samples=10 ** 6, seed=0, prior_sd=0.5, **ut_params):
    """Unscented vs Monte-Carlo variance of the Kitagawa time update from ``N(0, prior_sd^2)``.

    Returns ``(ut_variance, mc_variance)``; both include the process noise.
    """
    system = KitagawaSystem()
    prior = GaussianBelief([0.0], [[prior_sd ** 2]])
    record = ukf_step(system, prior, [0.0], **ut_params)
    rng = np.random.default_rng(seed)
    x0 = rng.normal(0.0, prior_sd, samples)
    x1 = system.transition(x0[:, None])[:, 0] \
        + np.sqrt(system.process_var) * rng.standard_normal(samples)
    return float(record.predicted.cov[0, 0]), float(x1.var(ddof=1))



def random_feature_draws(points, length=1.0, per_unit=2000, units=range(-20, 21), draws=5000,
                         seed=0, chunk=100):
    """Sample ``h(points)`` for a sum of Gaussian bumps with random weights.

    Bump centres sit at ``i + n/per_unit`` for every unit ``i`` and
    ``n = 1..per_unit``; the bump at ``s`` is ``exp(-(x - s)^2 / length^2)``.
    Weights are ``N(0, 1) / sqrt(per_unit)``, the scaling under which the sum
    converges to white noise convolved with the bump. The limiting covariance
    is then ``alpha2 * exp(-(x - x')^2 / (2 length^2))`` with
    ``alpha2 = length * sqrt(pi / 2)``.

    Returns ``(h, alpha2)`` with ``h`` of shape ``(draws, len(points))``.
    """
    points = np.asarray(points, dtype=float).reshape(-1)
    offsets = np.arange(1, per_unit + 1) / per_unit
    centres = (np.asarray(list(units), dtype=float)[:, None] + offsets).reshape(-1)
    basis = np.exp(-(points[:, None] - centres) ** 2 / length ** 2) / np.sqrt(per_unit)
    rng = np.random.default_rng(as_seed_sequence(seed))
    h = np.empty((draws, points.size))
    for start in range(0, draws, chunk):
        stop = min(start + chunk, draws)
        h[start:stop] = (basis @ rng.standard_normal((centres.size, stop - start))).T
    return h, length * np.sqrt(np.pi / 2)
