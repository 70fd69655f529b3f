"""Rauch-Tung-Striebel backward pass over stored joint Gaussians.

The backward pass only needs, per step, the filtered belief at ``t-1`` and
the Gaussian joint of ``(x_{t-1}, x_t)`` given measurements up to ``t-1``.
Which filter produced that joint decides the smoother: GP-ADF gives the
GP-RTSS, the EKF the EKS, the UKF the URTSS and the CKF the CKS.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from .errors import ConditioningError, GPSmoothError, InputContractError
from .filters import EstimateSeries, run_filter
from .linalg import PSDRepair, robust_cho_factor, symmetrize
from .moments import GaussianBelief

__all__ = ["SmootherGain", "EstimateSeries", "rts_backward", "smooth", "gp_rtss", "eks",
           "urtss", "cks", "SMOOTHER_FILTER"]

SMOOTHER_FILTER = {"gp-rtss": "gp-adf", "eks": "ekf", "urtss": "ukf", "cks": "ckf"}


@dataclass(frozen=True, eq=False)
class SmootherGain:
    J: np.ndarray


def rts_backward(series: EstimateSeries, repair: PSDRepair | None = None) -> EstimateSeries:
    """Fill ``smoothed`` and ``gains`` of a filtered series (returns a new series).

    For ``t = T..1``::

        J      = cross_t  P_t^-1                (P_t: predicted covariance)
        m_{t-1} = f_{t-1} + J (m_t - mu_t)       (mu_t: predicted mean)
        C_{t-1} = F_{t-1} + J (C_t - P_t) J^T

    ``J`` is obtained by a Cholesky solve against ``P_t``.
    """
    T = len(series.filtered) - 1
    if len(series.joints) != T:
        raise InputContractError(
            f"series has {T} filter steps but {len(series.joints)} joints; "
            "the filter must provide the joint of consecutive states")
    repair = repair or PSDRepair()
    smoothed = [None] * (T + 1)
    gains = [None] * T
    smoothed[T] = series.filtered[T]
    for t in range(T, 0, -1):
        joint = series.joints[t - 1]
        filt = series.filtered[t - 1]
        try:
            factor, _ = robust_cho_factor(symmetrize(joint.cov_next),
                                          what="predicted covariance")
        except ConditioningError as exc:
            raise exc.at_step(t)
        J = cho_solve(factor, joint.cross.T, check_finite=False).T
        nxt = smoothed[t]
        mean = filt.mean + J @ (nxt.mean - joint.mean_next)
        cov = filt.cov + J @ (nxt.cov - joint.cov_next) @ J.T
        try:
            cov = repair(cov, "smoothed covariance")
        except GPSmoothError as exc:
            raise exc.at_step(t - 1)
        smoothed[t - 1] = GaussianBelief(mean, cov)
        gains[t - 1] = SmootherGain(J)
    return replace(series, smoothed=smoothed, gains=gains,
                   repairs=series.repairs + repair.count)


def smooth(name: str, model, prior: GaussianBelief, measurements, controls=None,
           **params) -> EstimateSeries:
    """Forward pass with the matching filter, then :func:`rts_backward`."""
    try:
        filt = SMOOTHER_FILTER[name]
    except KeyError:
        raise InputContractError(
            f"unknown smoother {name!r}; choose from {tuple(SMOOTHER_FILTER)}") from None
    return rts_backward(run_filter(filt, model, prior, measurements, controls, **params))


def gp_rtss(model, prior, measurements, controls=None) -> EstimateSeries:
    """Analytic RTS smoothing in a GP dynamic system (no sampling anywhere)."""
    return smooth("gp-rtss", model, prior, measurements, controls)


def eks(system, prior, measurements, controls=None) -> EstimateSeries:
    return smooth("eks", system, prior, measurements, controls)


def urtss(system, prior, measurements, controls=None, **ut_params) -> EstimateSeries:
    return smooth("urtss", system, prior, measurements, controls, **ut_params)


def cks(system, prior, measurements, controls=None) -> EstimateSeries:
    return smooth("cks", system, prior, measurements, controls)
