"""Squared-exponential GP regression with evidence-maximization training.

Each target dimension gets its own independent GP (no shared
hyperparameters). The prior mean is zero and targets are not centered.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from .errors import ConditioningError, InputContractError, TrainingError
from .linalg import cho_logdet, robust_cho_factor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SEHyperparams:
    """Hyperparameters of one SE kernel plus its i.i.d. noise variance.

    The log-parameter vector used by training is
    ``[log l_1, ..., log l_D, log signal_variance, log noise_variance]``.
    """

    signal_variance: float
    length_scales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.array(self.length_scales, dtype=float).reshape(-1)
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if ls.size == 0:
            raise InputContractError("length_scales must have at least one entry")
        values = np.concatenate([ls, [self.signal_variance, self.noise_variance]])
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InputContractError(f"hyperparameters must be finite and positive, got {values}")

    @property
    def input_dim(self) -> int:
        return self.length_scales.size

    def to_log(self) -> np.ndarray:
        return np.concatenate([np.log(self.length_scales),
                               [math.log(self.signal_variance), math.log(self.noise_variance)]])

    @classmethod
    def from_log(cls, theta) -> "SEHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(math.exp(theta[-2]), np.exp(theta[:-2]), math.exp(theta[-1]))


def _as_matrix(X, dim=None, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim in (None, 1) else X[None, :]
    if X.ndim != 2:
        raise InputContractError(f"{name} must be 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise InputContractError(f"{name} has {X.shape[1]} columns, expected {dim}")
    return X


def se_kernel(x, x_prime, hp: SEHyperparams) -> float:
    """alpha^2 exp(-1/2 (x-x')^T Lambda^-1 (x-x')), without the noise term."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != (hp.input_dim,) or x_prime.shape != (hp.input_dim,):
        raise InputContractError(
            f"inputs must have dimension {hp.input_dim}, got {x.shape} and {x_prime.shape}")
    r = (x - x_prime) / hp.length_scales
    return hp.signal_variance * math.exp(-0.5 * float(r @ r))


def scaled_sqdist(X1, X2, length_scales):
    """Pairwise squared distances after dividing each column by its length-scale."""
    A = X1 / length_scales
    B = X2 / length_scales
    d = (np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :]) - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def cross_kernel(X1, X2, hp: SEHyperparams) -> np.ndarray:
    """Kernel matrix between row sets ``X1`` (n x D) and ``X2`` (m x D)."""
    X1 = _as_matrix(X1, hp.input_dim, "X1")
    X2 = _as_matrix(X2, hp.input_dim, "X2")
    return hp.signal_variance * np.exp(-0.5 * scaled_sqdist(X1, X2, hp.length_scales))


def gram_matrix(X, hp: SEHyperparams, with_noise: bool = False) -> np.ndarray:
    X = _as_matrix(X, hp.input_dim)
    if X.shape[0] < 1:
        raise InputContractError("gram_matrix needs at least one input")
    # exact symmetry by construction: compute the upper triangle once
    diff = (X[:, None, :] - X[None, :, :]) / hp.length_scales
    K = hp.signal_variance * np.exp(-0.5 * np.einsum("ijd,ijd->ij", diff, diff))
    K = np.triu(K) + np.triu(K, 1).T
    if with_noise:
        K[np.diag_indices_from(K)] += hp.noise_variance
    return K


def log_evidence(X, y, hp: SEHyperparams, dimension=None):
    """Log marginal likelihood of ``y`` and its gradient in log-parameter space.

    Returns
    -------
    value : float
    grad : ndarray, shape (D + 2,)
        Derivatives with respect to ``hp.to_log()``.
    """
    X = _as_matrix(X, hp.input_dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    if y.size != n:
        raise InputContractError(f"y has {y.size} entries for {n} inputs")
    diff = (X[:, None, :] - X[None, :, :]) / hp.length_scales
    sq = diff * diff
    Kse = hp.signal_variance * np.exp(-0.5 * sq.sum(-1))
    Ky = Kse.copy()
    Ky[np.diag_indices(n)] += hp.noise_variance
    factor, _ = robust_cho_factor(Ky, what="Gram matrix", dimension=dimension)
    alpha = cho_solve(factor, y, check_finite=False)
    value = -0.5 * y @ alpha - 0.5 * cho_logdet(factor) - 0.5 * n * LOG_2PI
    W = np.outer(alpha, alpha) - cho_solve(factor, np.eye(n), check_finite=False)
    WK = W * Kse
    grad = np.empty(hp.input_dim + 2)
    grad[:-2] = 0.5 * np.einsum("ij,ijd->d", WK, sq)
    grad[-2] = 0.5 * np.sum(WK)
    grad[-1] = 0.5 * hp.noise_variance * np.trace(W)
    return float(value), grad


@dataclass(frozen=True, eq=False)
class GPModel:
    """A trained multi-output GP, one independent SE-GP per target column.

    Build with :meth:`from_data`; ``beta``, the Gram factorizations and the
    Gram inverses are derived from ``inputs``, ``targets`` and
    ``hyperparams`` and never mutated afterwards.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hyperparams: tuple
    beta: np.ndarray = field(repr=False)
    gram_factors: tuple = field(repr=False)
    gram_inverses: np.ndarray = field(repr=False)

    @classmethod
    def from_data(cls, X, Y, hyperparams) -> "GPModel":
        X = _as_matrix(X, name="inputs").copy()
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        Y = Y.copy()
        n, D = X.shape
        if Y.shape[0] != n:
            raise InputContractError(f"targets have {Y.shape[0]} rows for {n} inputs")
        hyperparams = tuple(hyperparams)
        if len(hyperparams) != Y.shape[1]:
            raise InputContractError(
                f"{len(hyperparams)} hyperparameter sets for {Y.shape[1]} target dimensions")
        betas, factors, inverses = [], [], []
        for a, hp in enumerate(hyperparams):
            if hp.input_dim != D:
                raise InputContractError(
                    f"target {a}: {hp.input_dim} length-scales for input dimension {D}")
            factor, _ = robust_cho_factor(gram_matrix(X, hp, with_noise=True),
                                          what="Gram matrix", dimension=a)
            betas.append(cho_solve(factor, Y[:, a], check_finite=False))
            inv = cho_solve(factor, np.eye(n), check_finite=False)
            inverses.append(0.5 * (inv + inv.T))
            factors.append(factor)
        beta = np.column_stack(betas)
        gram_inverses = np.stack(inverses)
        for arr in (X, Y, beta, gram_inverses):
            arr.setflags(write=False)
        for c, _ in factors:
            c.setflags(write=False)
        return cls(X, Y, hyperparams, beta, tuple(factors), gram_inverses)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def length_scales(self) -> np.ndarray:
        return np.stack([hp.length_scales for hp in self.hyperparams])

    @property
    def signal_variances(self) -> np.ndarray:
        return np.array([hp.signal_variance for hp in self.hyperparams])

    @property
    def noise_variances(self) -> np.ndarray:
        return np.array([hp.noise_variance for hp in self.hyperparams])

    def to_json(self) -> str:
        def num(x):
            return format(float(x), ".17g")

        doc = {
            "inputs": [[num(v) for v in row] for row in self.inputs],
            "targets": [[num(v) for v in row] for row in self.targets],
            "hyperparams": [
                {"signal_variance": num(hp.signal_variance),
                 "length_scales": [num(v) for v in hp.length_scales],
                 "noise_variance": num(hp.noise_variance)}
                for hp in self.hyperparams],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GPModel":
        doc = json.loads(text)
        hps = [SEHyperparams(float(h["signal_variance"]),
                             [float(v) for v in h["length_scales"]],
                             float(h["noise_variance"])) for h in doc["hyperparams"]]
        X = np.array([[float(v) for v in row] for row in doc["inputs"]])
        Y = np.array([[float(v) for v in row] for row in doc["targets"]])
        return cls.from_data(X, Y, hps)


def gp_predict_point(model: GPModel, x_star, include_noise: bool = False):
    """Posterior mean and variance of every target dimension at one input."""
    mean, var = gp_predict(model, np.atleast_1d(np.asarray(x_star, dtype=float))[None, :],
                           include_noise=include_noise)
    return mean[0], var[0]


def gp_predict(model: GPModel, Xs, include_noise: bool = False):
    """Batched deterministic-input prediction; returns (m x E) means and variances."""
    Xs = _as_matrix(Xs, model.input_dim, "Xs")
    means = np.empty((Xs.shape[0], model.output_dim))
    variances = np.empty_like(means)
    for a, hp in enumerate(model.hyperparams):
        k = cross_kernel(model.inputs, Xs, hp)
        means[:, a] = k.T @ model.beta[:, a]
        v = hp.signal_variance - np.einsum("ij,ij->j", k, model.gram_inverses[a] @ k)
        variances[:, a] = np.maximum(v, 0.0)
        if include_noise:
            variances[:, a] += hp.noise_variance
    return means, variances


# --------------------------------------------------------------------------
# training

def _log_bounds(X, y):
    scale_x = np.std(X, axis=0)
    scale_x = np.where(scale_x > 0, scale_x, 1.0)
    scale_y = float(np.var(y)) + float(np.mean(y)) ** 2
    scale_y = scale_y if scale_y > 0 else 1.0
    bounds = [(math.log(s * 1e-3), math.log(s * 1e3)) for s in scale_x]
    bounds.append((math.log(scale_y * 1e-8), math.log(scale_y * 1e4)))
    bounds.append((math.log(scale_y * 1e-10), math.log(scale_y * 1e2)))
    return scale_x, scale_y, bounds


def _initial_points(X, y, restarts, rng):
    scale_x, scale_y, bounds = _log_bounds(X, y)
    D = X.shape[1]
    points = []
    for r in range(restarts):
        if r == 0:
            factors = np.ones(D + 2)
            factors[-1] = 1e-2
        else:
            factors = np.exp(rng.uniform(math.log(1e-2), math.log(1e1), size=D + 2))
        theta = np.concatenate([np.log(scale_x * factors[:D]),
                                [math.log(scale_y * factors[D]),
                                 math.log(scale_y * factors[D + 1])]])
        lo = np.array([b[0] for b in bounds])
        hi = np.array([b[1] for b in bounds])
        points.append(np.clip(theta, lo, hi))
    return points, bounds


def _fit_dimension(X, y, restarts, rng, dimension, maxiter):
    points, bounds = _initial_points(X, y, restarts, rng)

    def objective(theta):
        try:
            value, grad = log_evidence(X, y, SEHyperparams.from_log(theta), dimension=dimension)
        except ConditioningError:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(value):
            return 1e25, np.zeros_like(theta)
        return -value, -grad

    best, best_value, failures = None, -np.inf, []
    for theta0 in points:
        try:
            res = minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": maxiter})
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append(str(exc))
            continue
        value = -res.fun
        if res.fun >= 1e24 or not np.isfinite(value):
            failures.append(res.message if isinstance(res.message, str) else str(res.message))
            continue
        if value > best_value:
            best, best_value = res.x, value
    if best is None:
        raise TrainingError(
            f"all {restarts} restarts failed for target dimension {dimension}",
            diagnostics={"dimension": dimension, "messages": failures})
    return SEHyperparams.from_log(best), best_value


def train_gp(X, Y, restarts: int = 10, seed=None, maxiter: int = 500) -> GPModel:
    """Fit one SE-GP per target column by maximizing the log evidence.

    Each dimension runs L-BFGS-B in log-parameter space from ``restarts``
    initializations: the first at the data scale, the rest log-uniform in
    ``[1e-2, 1e1]`` times the data scale. The best optimum is kept.
    """
    X = _as_matrix(X, name="X")
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 2:
        raise InputContractError("train_gp needs at least two training points")
    if Y.shape[0] != X.shape[0]:
        raise InputContractError(f"Y has {Y.shape[0]} rows for {X.shape[0]} inputs")
    if restarts < 1:
        raise InputContractError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    hps = [_fit_dimension(X, Y[:, a], restarts, rng, a, maxiter)[0] for a in range(Y.shape[1])]
    return GPModel.from_data(X, Y, hps)
