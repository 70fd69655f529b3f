"""Exact moments of an SE-GP posterior evaluated at a Gaussian input.

Given a model trained on ``x -> y`` and a belief ``x ~ N(mu, Sigma)``, this
module computes, with the GP uncertainty integrated out,

* the predictive mean ``E[y]``,
* the predictive covariance ``cov[y]`` (optionally including the learned
  noise), and
* the input-output cross-covariance ``cov[x, y]``.

No sampling, linearization or quadrature is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import InputContractError
from .gp import GPModel
from .linalg import cho_logdet, robust_cho_factor, symmetrize


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """Mean vector and covariance matrix of a Gaussian.

    The covariance is symmetrized on construction; negative eigenvalues
    (round-off) are floored at zero.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise InputContractError(
                f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        cov = symmetrize(cov)
        if mean.size > 1 and np.all(np.isfinite(cov)):
            w, v = np.linalg.eigh(cov)
            if w[0] < 0:
                cov = symmetrize((v * np.clip(w, 0.0, None)) @ v.T)
        elif mean.size == 1 and cov[0, 0] < 0:
            cov[0, 0] = 0.0
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class MomentMatchScratch:
    """Quantities shared by the mean, covariance and cross-covariance.

    Attributes
    ----------
    q : (n, E) array
        Expected kernel values ``E_x[k_a(x, x_i)]``.
    log_q_shape : (n, E) array
        ``log(q / alpha_a^2)``, kept separately for the covariance.
    zeta : (n, D) array
        Training inputs centered at the belief mean.
    s_solved : (E, n, D) array
        ``(Sigma + Lambda_a)^{-1} zeta_i`` for every output ``a``.
    s_factors : tuple
        Cholesky factors of ``Sigma + Lambda_a``.
    """

    q: np.ndarray
    log_q_shape: np.ndarray
    zeta: np.ndarray
    s_solved: np.ndarray
    s_factors: tuple
    cov_in: np.ndarray


@dataclass(frozen=True, eq=False)
class PropagatedMoments:
    mean: np.ndarray
    cov: np.ndarray
    cross_cov: np.ndarray

    def joint_matrix(self, cov_in) -> np.ndarray:
        """Block covariance ``[[cov_in, cross], [cross^T, cov]]``."""
        return np.block([[cov_in, self.cross_cov], [self.cross_cov.T, self.cov]])


def _check(model: GPModel, belief: GaussianBelief):
    if belief.dim != model.input_dim:
        raise InputContractError(
            f"belief has dimension {belief.dim}, model expects {model.input_dim}")


def compute_q(model: GPModel, belief: GaussianBelief) -> MomentMatchScratch:
    """Expected kernel vectors ``q_a`` and the factorizations of ``S_a = Sigma + Lambda_a``.

    ``q_ai = alpha_a^2 |Sigma Lambda_a^-1 + I|^(-1/2) exp(-1/2 zeta_i^T S_a^-1 zeta_i)``.
    """
    _check(model, belief)
    Sigma = symmetrize(belief.cov)
    zeta = model.inputs - belief.mean
    n, D = zeta.shape
    E = model.output_dim
    log_qs = np.empty((n, E))
    s_solved = np.empty((E, n, D))
    factors = []
    for a, hp in enumerate(model.hyperparams):
        lam = hp.length_scales ** 2
        S = Sigma + np.diag(lam)
        factor, _ = robust_cho_factor(S, what="Sigma + Lambda", dimension=a)
        solved = cho_solve(factor, zeta.T, check_finite=False).T
        # |Sigma Lambda^-1 + I| = |S| / |Lambda|
        log_det = cho_logdet(factor) - np.sum(np.log(lam))
        quad = np.einsum("id,id->i", zeta, solved)
        log_qs[:, a] = -0.5 * log_det - 0.5 * quad
        s_solved[a] = solved
        factors.append(factor)
    q = model.signal_variances * np.exp(log_qs)
    return MomentMatchScratch(q, log_qs, zeta, s_solved, tuple(factors), Sigma)


def predict_mean(model: GPModel, belief: GaussianBelief, scratch=None) -> np.ndarray:
    """``E[y]_a = beta_a^T q_a``."""
    if scratch is None:
        scratch = compute_q(model, belief)
    return np.einsum("ia,ia->a", model.beta, scratch.q)


def _log_q_shape(model, a, b, scratch):
    """``log(Q_ab / (alpha_a^2 alpha_b^2))``, built from the exponent ``n_ij^2``."""
    hp_a, hp_b = model.hyperparams[a], model.hyperparams[b]
    Sigma = scratch.cov_in
    zeta = scratch.zeta
    ila = 1.0 / hp_a.length_scales ** 2
    ilb = 1.0 / hp_b.length_scales ** 2
    # R = Sigma (La^-1 + Lb^-1) + I is handled through its symmetric form
    # B = s Sigma s + I with s = sqrt(La^-1 + Lb^-1); |R| = |B| and
    # R^-1 Sigma = s^-1 B^-1 (s Sigma s) s^-1.
    s = np.sqrt(ila + ilb)
    sSs = Sigma * s[:, None] * s[None, :]
    B = sSs + np.eye(s.size)
    factor, _ = robust_cho_factor(B, what="R matrix", dimension=(a, b))
    M = cho_solve(factor, sSs, check_finite=False) / s[:, None] / s[None, :]
    M = symmetrize(M)
    za = zeta * ila
    zb = zeta * ilb
    Mza = za @ M
    Mzb = zb @ M
    quad_a = np.einsum("id,id->i", zeta, za) - np.einsum("id,id->i", za, Mza)
    quad_b = np.einsum("id,id->i", zeta, zb) - np.einsum("id,id->i", zb, Mzb)
    cross = Mza @ zb.T
    n2 = -0.5 * (quad_a[:, None] + quad_b[None, :]) + cross
    return n2 - 0.5 * cho_logdet(factor)


def _log_abs_expm1(r):
    """``log|exp(r) - 1|`` without overflow for large ``r``."""
    with np.errstate(divide="ignore"):
        return np.maximum(r, 0.0) + np.log(-np.expm1(-np.abs(r)))


def q_matrix(model: GPModel, belief: GaussianBelief, a: int, b: int, scratch=None) -> np.ndarray:
    """``Q_ab[i, j] = E_x[k_a(x, x_i) k_b(x, x_j)]``."""
    if scratch is None:
        scratch = compute_q(model, belief)
    scale = model.hyperparams[a].signal_variance * model.hyperparams[b].signal_variance
    return scale * np.exp(_log_q_shape(model, a, b, scratch))


def predict_cov(model: GPModel, belief: GaussianBelief, noise=None, scratch=None) -> np.ndarray:
    """Predictive covariance of the outputs.

    Parameters
    ----------
    noise : array_like of shape (E,), optional
        Added to the diagonal. Pass ``model.noise_variances`` to predict
        noisy targets; ``None`` gives the moments of the latent function.
    """
    if scratch is None:
        scratch = compute_q(model, belief)
    E = model.output_dim
    beta = model.beta
    log_qs = scratch.log_q_shape
    cov = np.empty((E, E))
    for a in range(E):
        for b in range(a + 1):
            log_shape = _log_q_shape(model, a, b, scratch)
            # Q - q q^T without cancellation: the log ratio is small when the
            # input spread is small relative to the length-scales
            ratio = log_shape - log_qs[:, a, None] - log_qs[None, :, b]
            scale = (model.hyperparams[a].signal_variance
                     * model.hyperparams[b].signal_variance)
            centered = scale * np.sign(ratio) * np.exp(
                log_qs[:, a, None] + log_qs[None, :, b] + _log_abs_expm1(ratio))
            cov[a, b] = beta[:, a] @ centered @ beta[:, b]
            if a == b:
                Q = model.hyperparams[a].signal_variance ** 2 * np.exp(log_shape)
                expected_var = (model.hyperparams[a].signal_variance
                                - np.sum(model.gram_inverses[a] * Q))
                cov[a, a] += max(expected_var, 0.0)
            else:
                cov[b, a] = cov[a, b]
    if noise is not None:
        noise = np.broadcast_to(np.asarray(noise, dtype=float), (E,))
        cov[np.diag_indices(E)] += noise
    return cov


def cross_cov(model: GPModel, belief: GaussianBelief, scratch=None) -> np.ndarray:
    """``cov[x, y]`` as a (D, E) matrix.

    Column ``a`` is ``sum_i beta_ai q_ai Sigma (Sigma + Lambda_a)^-1 (x_i - mu)``.
    """
    if scratch is None:
        scratch = compute_q(model, belief)
    weights = model.beta * scratch.q
    inner = np.einsum("ain,na->ai", np.swapaxes(scratch.s_solved, 1, 2), weights)
    return scratch.cov_in @ inner.T


def propagate(model: GPModel, belief: GaussianBelief, noise=None) -> PropagatedMoments:
    """Mean, covariance and input-output cross-covariance from one shared scratch."""
    scratch = compute_q(model, belief)
    mean = predict_mean(model, belief, scratch)
    cov = predict_cov(model, belief, noise=noise, scratch=scratch)
    return PropagatedMoments(mean, cov, cross_cov(model, belief, scratch))
