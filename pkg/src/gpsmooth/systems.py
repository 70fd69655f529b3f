"""Benchmark dynamic systems, trajectory simulation and GP training sets.

Every system exposes the same duck-typed surface consumed by the filters:

``transition(X, U)`` / ``measure(X)``
    batched maps on (N, D) arrays,
``transition_jacobian(x, u)`` / ``measure_jacobian(x)``
    single-point Jacobians,
``process_noise`` / ``meas_noise``
    diagonal noise covariance matrices.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputContractError


def kitagawa_f(x):
    """x/2 + 25 x / (1 + x^2)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x + 25.0 * x / (1.0 + x * x)


def kitagawa_f_prime(x):
    x = np.asarray(x, dtype=float)
    return 0.5 + 25.0 * (1.0 - x * x) / (1.0 + x * x) ** 2


def kitagawa_g(x):
    return 5.0 * np.sin(np.asarray(x, dtype=float))


def kitagawa_g_prime(x):
    return 5.0 * np.cos(np.asarray(x, dtype=float))


def _rows(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, dim)
    return X


@dataclass(frozen=True)
class KitagawaSystem:
    """Scalar growth model ``x' = f(x) + w``, ``z = 5 sin(x) + v``."""

    process_var: float = 0.2 ** 2
    meas_var: float = 0.2 ** 2
    prior_var: float = 0.5 ** 2
    region: tuple = (-10.0, 10.0)

    name = "kitagawa"
    state_dim = 1
    meas_dim = 1
    control_dim = 0

    @property
    def process_noise(self):
        return np.array([[self.process_var]])

    @property
    def meas_noise(self):
        return np.array([[self.meas_var]])

    def transition(self, X, U=None):
        return kitagawa_f(_rows(X, 1))

    def transition_jacobian(self, x, u=None):
        return np.atleast_2d(kitagawa_f_prime(np.asarray(x, dtype=float).reshape(1)))

    def measure(self, X):
        return kitagawa_g(_rows(X, 1))

    def measure_jacobian(self, x):
        return np.atleast_2d(kitagawa_g_prime(np.asarray(x, dtype=float).reshape(1)))

    def default_prior(self, mean=0.0):
        from .moments import GaussianBelief
        return GaussianBelief([mean], [[self.prior_var]])

    def sample_controls(self, rng, T):
        return np.zeros((T, 0))

    def training_box(self):
        return np.array([self.region], dtype=float)


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.2
    process_var: tuple = (0.5 ** 2, 0.1 ** 2)
    meas_var: float = 0.05 ** 2
    torque_limit: float = 5.0
    gravity: float = 9.82
    inertia: float | None = None
    substeps: int = 100
    prior_mean: tuple = (0.0, 0.0)
    prior_var: tuple = (0.01 ** 2, (math.pi / 16) ** 2)

    @property
    def moment_of_inertia(self) -> float:
        if self.inertia is not None:
            return self.inertia
        return self.mass * self.length ** 2 / 12.0


def _pendulum_rhs(state, u, p: PendulumParams):
    """Time derivative of ``[phi_dot, phi]`` (batched along axis 0)."""
    phi_dot, phi = state[:, 0], state[:, 1]
    denom = 0.25 * p.mass * p.length ** 2 + p.moment_of_inertia
    acc = (u - 0.5 * p.mass * p.length * p.gravity * np.sin(phi)) / denom
    return np.column_stack([acc, phi_dot])


def pendulum_f(x, u, params: PendulumParams = PendulumParams(), substeps=None):
    """Noise-free successor state after ``dt`` seconds of zero-order-hold torque.

    Classical RK4 with ``substeps`` equal steps. ``x`` may be one state or an
    (N, 2) batch; ``u`` is clamped to the torque limit.
    """
    p = params
    single = np.ndim(x) == 1
    X = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    U = np.clip(np.broadcast_to(np.asarray(u, dtype=float).reshape(-1), (X.shape[0],)),
                -p.torque_limit, p.torque_limit)
    n_sub = p.substeps if substeps is None else substeps
    h = p.dt / n_sub
    for _ in range(n_sub):
        k1 = _pendulum_rhs(X, U, p)
        k2 = _pendulum_rhs(X + 0.5 * h * k1, U, p)
        k3 = _pendulum_rhs(X + 0.5 * h * k2, U, p)
        k4 = _pendulum_rhs(X + h * k3, U, p)
        X += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X[0] if single else X


def pendulum_f_jacobian(x, u, params: PendulumParams = PendulumParams()):
    """d successor / d state, from RK4 on the variational equations."""
    p = params
    u = float(np.clip(u, -p.torque_limit, p.torque_limit))
    denom = 0.25 * p.mass * p.length ** 2 + p.moment_of_inertia
    c = 0.5 * p.mass * p.length * p.gravity / denom

    def rhs(y):
        phi_dot, phi = y[0], y[1]
        P = y[2:].reshape(2, 2)
        A = np.array([[0.0, -c * math.cos(phi)], [1.0, 0.0]])
        dx = np.array([(u - 0.5 * p.mass * p.length * p.gravity * math.sin(phi)) / denom, phi_dot])
        return np.concatenate([dx, (A @ P).ravel()])

    y = np.concatenate([np.asarray(x, dtype=float), np.eye(2).ravel()])
    h = p.dt / p.substeps
    for _ in range(p.substeps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y[2:].reshape(2, 2)


def pendulum_g(x, params: PendulumParams = PendulumParams()):
    """Bearing of the pendulum tip seen from (0.5, -1); depends on the angle only.

    Uses the quadrant-aware ``arctan2``; with ``l = 1`` the numerator vanishes
    only where the denominator is positive, so the map is continuous in phi.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    phi = X[:, 1]
    l = params.length
    z = np.arctan2(-1.0 - l * np.sin(phi), 0.5 - l * np.cos(phi))
    return z[0] if np.ndim(x) == 1 else z[:, None]


def pendulum_g_jacobian(x, params: PendulumParams = PendulumParams()):
    phi = float(np.asarray(x, dtype=float)[1])
    l = params.length
    num = -1.0 - l * math.sin(phi)
    den = 0.5 - l * math.cos(phi)
    d_num = -l * math.cos(phi)
    d_den = l * math.sin(phi)
    return np.array([[0.0, (den * d_num - num * d_den) / (den * den + num * num)]])


def pendulum_energy(x, params: PendulumParams = PendulumParams()):
    x = np.asarray(x, dtype=float)
    p = params
    J = 0.25 * p.mass * p.length ** 2 + p.moment_of_inertia
    return 0.5 * J * x[..., 0] ** 2 + 0.5 * p.mass * p.gravity * p.length * (1 - np.cos(x[..., 1]))


@dataclass(frozen=True)
class PendulumSystem:
    """Torque-driven frictionless pendulum with state ``[phi_dot, phi]``."""

    params: PendulumParams = field(default_factory=PendulumParams)

    name = "pendulum"
    state_dim = 2
    meas_dim = 1
    control_dim = 1

    @property
    def process_noise(self):
        return np.diag(self.params.process_var)

    @property
    def meas_noise(self):
        return np.array([[self.params.meas_var]])

    def transition(self, X, U=None):
        X = _rows(X, 2)
        U = np.zeros(X.shape[0]) if U is None else np.asarray(U, dtype=float).reshape(-1)
        return pendulum_f(X, U, self.params)

    def transition_jacobian(self, x, u=None):
        return pendulum_f_jacobian(x, 0.0 if u is None else float(np.ravel(u)[0]), self.params)

    def measure(self, X):
        return pendulum_g(_rows(X, 2), self.params)

    def measure_jacobian(self, x):
        return pendulum_g_jacobian(x, self.params)

    def default_prior(self):
        from .moments import GaussianBelief
        return GaussianBelief(self.params.prior_mean, np.diag(self.params.prior_var))

    def sample_controls(self, rng, T):
        lim = self.params.torque_limit
        return rng.uniform(-lim, lim, size=(T, 1))

    def training_box(self):
        return np.array([[-5.0, 5.0], [-math.pi, math.pi]])


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x' = A x + w``, ``z = C x + v`` with diagonal noise."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    region: tuple = (-5.0, 5.0)

    name = "linear"
    control_dim = 0

    def __post_init__(self):
        for name in ("A", "C", "Q", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def meas_dim(self):
        return self.C.shape[0]

    @property
    def process_noise(self):
        return self.Q

    @property
    def meas_noise(self):
        return self.R

    def transition(self, X, U=None):
        return _rows(X, self.state_dim) @ self.A.T

    def transition_jacobian(self, x, u=None):
        return self.A.copy()

    def measure(self, X):
        return _rows(X, self.state_dim) @ self.C.T

    def measure_jacobian(self, x):
        return self.C.copy()

    def sample_controls(self, rng, T):
        return np.zeros((T, 0))

    def training_box(self):
        return np.tile(np.asarray(self.region, dtype=float), (self.state_dim, 1))


def scalar_linear_system(a=0.9, c=1.0, q=0.1 ** 2, r=0.1 ** 2) -> LinearSystem:
    return LinearSystem([[a]], [[c]], [[q]], [[r]])


# --------------------------------------------------------------------------
# simulation

@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    measurements: np.ndarray
    controls: np.ndarray
    seed: int | None

    @property
    def T(self) -> int:
        return self.measurements.shape[0]


def simulate(system, prior, T: int, seed=None, noise: bool = True) -> Trajectory:
    """Sample ``x_0`` from ``prior`` and roll the system forward ``T`` steps.

    ``controls[t-1]`` drives the transition into ``states[t]``, which is
    measured as ``measurements[t-1]``. ``noise=False`` zeroes process and
    measurement noise (the initial state is still sampled).
    """
    if T < 0:
        raise InputContractError("T must be non-negative")
    rng = np.random.default_rng(seed)
    D, E = system.state_dim, system.meas_dim
    x0 = rng.multivariate_normal(prior.mean, prior.cov)
    controls = system.sample_controls(rng, T)
    w = rng.standard_normal((T, D)) * np.sqrt(np.diag(system.process_noise))
    v = rng.standard_normal((T, E)) * np.sqrt(np.diag(system.meas_noise))
    if not noise:
        w[:] = 0.0
        v[:] = 0.0
    states = np.empty((T + 1, D))
    states[0] = x0
    measurements = np.empty((T, E))
    for t in range(1, T + 1):
        u = controls[t - 1] if controls.shape[1] else None
        states[t] = system.transition(states[t - 1][None, :], u)[0] + w[t - 1]
        measurements[t - 1] = system.measure(states[t][None, :])[0] + v[t - 1]
    return Trajectory(states, measurements, controls, seed)


def envelope_region(trajectory: Trajectory, margin: float = 1.0) -> np.ndarray:
    """Per-dimension ``[min - margin, max + margin]`` of a trajectory's states."""
    s = trajectory.states
    return np.column_stack([s.min(0) - margin, s.max(0) + margin])


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Paired training data for the transition GP and the measurement GP."""

    X_f: np.ndarray
    Y_f: np.ndarray
    X_g: np.ndarray
    Y_g: np.ndarray
    region: np.ndarray
    seed: int | None


def make_training_set(system, n: int, seed=None, region=None) -> TrainingSet:
    """Draw ``n`` uniform states in ``region`` and evaluate the noisy maps.

    Transition inputs carry the control as extra columns (uniform over the
    torque range). Measurement inputs are an independent draw of states.
    """
    if n < 2:
        raise InputContractError("training sets need n >= 2")
    rng = np.random.default_rng(seed)
    box = system.training_box() if region is None else np.asarray(region, dtype=float)
    box = np.atleast_2d(box)
    D, E, U = system.state_dim, system.meas_dim, system.control_dim
    if box.shape != (D, 2):
        raise InputContractError(f"region must have shape ({D}, 2), got {box.shape}")
    lo, hi = box[:, 0], box[:, 1]
    xs = rng.uniform(lo, hi, size=(n, D))
    us = system.sample_controls(rng, n)
    w = rng.standard_normal((n, D)) * np.sqrt(np.diag(system.process_noise))
    Y_f = system.transition(xs, us if U else None) + w
    X_f = np.hstack([xs, us]) if U else xs
    xg = rng.uniform(lo, hi, size=(n, D))
    v = rng.standard_normal((n, E)) * np.sqrt(np.diag(system.meas_noise))
    Y_g = system.measure(xg) + v
    return TrainingSet(X_f, Y_f, xg, Y_g, box, seed)


def write_trajectory_csv(trajectory: Trajectory, path) -> None:
    """One row per time step: t, states..., measurements..., controls...

    Row ``t = 0`` carries the initial state and empty measurement/control cells.
    """
    D = trajectory.states.shape[1]
    E = trajectory.measurements.shape[1]
    U = trajectory.controls.shape[1]
    header = (["t"] + [f"x{i}" for i in range(D)] + [f"z{i}" for i in range(E)]
              + [f"u{i}" for i in range(U)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(trajectory.T + 1):
            row = [str(t)] + [repr(float(v)) for v in trajectory.states[t]]
            if t == 0:
                row += [""] * (E + U)
            else:
                row += [repr(float(v)) for v in trajectory.measurements[t - 1]]
                row += [repr(float(v)) for v in trajectory.controls[t - 1]]
            writer.writerow(row)


def system_manifest(system, seed) -> dict:
    if isinstance(system, PendulumSystem):
        params = asdict(system.params)
    elif isinstance(system, LinearSystem):
        params = {k: getattr(system, k).tolist() for k in ("A", "C", "Q", "R")}
    else:
        params = asdict(system)
    return json.loads(json.dumps({"system": system.name, "params": params, "seed": seed}))


def make_system(name: str, overrides=None):
    overrides = dict(overrides or {})
    if name == "kitagawa":
        if "region" in overrides:
            overrides["region"] = tuple(overrides["region"])
        return KitagawaSystem(**overrides)
    if name == "pendulum":
        for key in ("process_var", "prior_mean", "prior_var"):
            if key in overrides:
                overrides[key] = tuple(overrides[key])
        return PendulumSystem(PendulumParams(**overrides))
    if name == "linear":
        defaults = {"a": 0.9, "c": 1.0, "q": 0.1 ** 2, "r": 0.1 ** 2}
        defaults.update(overrides)
        return scalar_linear_system(**defaults)
    raise InputContractError(f"unknown system {name!r}")
