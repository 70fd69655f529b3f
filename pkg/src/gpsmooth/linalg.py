"""Cholesky helpers with a jitter ladder, and PSD repair."""

import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConditioningError, FilterDivergenceError

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
REPAIR_BUDGET = 1e-6


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def robust_cho_factor(a, what="matrix", dimension=None):
    """Cholesky-factor ``a``, adding diagonal jitter if plain factorization fails.

    Jitter starts at ``1e-10 * trace/n`` and grows tenfold up to
    ``1e-4 * trace/n``. Returns the ``cho_factor`` tuple and the jitter used.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConditioningError(f"{what} is not square: shape {a.shape}", dimension=dimension)
    if not np.all(np.isfinite(a)):
        raise ConditioningError(f"{what} has non-finite entries", dimension=dimension)
    try:
        return cho_factor(a, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    n = a.shape[0]
    scale = max(np.trace(a) / n, np.finfo(float).tiny)
    jitter = JITTER_START
    eye = np.eye(n)
    while jitter <= JITTER_MAX * (1 + 1e-12):
        try:
            factor = cho_factor(a + jitter * scale * eye, lower=True, check_finite=False)
            log.debug("%s needed jitter %.1e", what, jitter * scale)
            return factor, jitter * scale
        except np.linalg.LinAlgError:
            jitter *= 10.0
    suffix = "" if dimension is None else f" (dimension {dimension})"
    raise ConditioningError(f"{what} is not positive definite{suffix}", dimension=dimension)


def cho_logdet(factor):
    c, _ = factor
    return 2.0 * np.sum(np.log(np.diag(c)))


def solve_pd(a, b, what="matrix"):
    factor, _ = robust_cho_factor(a, what=what)
    return cho_solve(factor, b, check_finite=False)


class PSDRepair:
    """Symmetrize and floor eigenvalues at zero, counting and bounding repairs.

    A repair whose removed negative mass exceeds ``budget * trace`` raises
    :class:`FilterDivergenceError` instead of hiding the divergence.
    """

    def __init__(self, budget=REPAIR_BUDGET):
        self.budget = budget
        self.count = 0
        self.max_magnitude = 0.0

    def __call__(self, cov, what="covariance"):
        cov = symmetrize(cov)
        if not np.all(np.isfinite(cov)):
            raise FilterDivergenceError(f"{what} has non-finite entries")
        if cov.shape[0] == 1:
            if cov[0, 0] >= 0:
                return cov
            w, v = cov[0], np.ones((1, 1))
        else:
            w, v = np.linalg.eigh(cov)
            if w[0] >= 0:
                return cov
        magnitude = -np.sum(w[w < 0])
        trace = max(np.sum(np.abs(w)), np.finfo(float).tiny)
        if magnitude > self.budget * trace:
            raise FilterDivergenceError(
                f"{what} lost positive semi-definiteness (negative mass {magnitude:.3e}, "
                f"trace {trace:.3e})")
        self.count += 1
        self.max_magnitude = max(self.max_magnitude, magnitude)
        return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)
