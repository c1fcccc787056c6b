"""Empirical moment-generating-function functionals of the complete-case
residuals and the mean-response estimator

    tau_hat = n^-1 sum_i mu(x_i; xi_hat) + (1 - eta_hat) M2_hat(g) / M1_hat(g),

plus a normal-error plug-in comparator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DegenerateDataError, MgfOverflowError
from .outcome import OutcomeFit
from .propensity import PropensityFit, recover_alpha0

# |t * residual| beyond this cannot be represented even after max-shift
MGF_RANGE = 1e4


@dataclass(frozen=True)
class TauEstimate:
    tau_hat: float
    eta_hat: float
    m1_hat: float
    m2_hat: float
    alpha0_hat: float


def _shifted_exponentials(residuals: np.ndarray, t: float):
    s = t * residuals
    bad = np.abs(s) > MGF_RANGE
    if bad.any():
        i = int(np.argmax(bad))
        raise MgfOverflowError(
            f"t * residual = {s[i]:.3g} at residual index {i} exceeds the "
            f"stabilized range {MGF_RANGE:g}"
        )
    c = float(np.max(s))
    return np.exp(s - c), c


def empirical_mgf(residuals: np.ndarray, t: float) -> tuple[float, float]:
    """(M1_hat(t), M2_hat(t)) = (mean e^{t eps}, mean eps e^{t eps}), computed
    by factoring out max(t*eps) so the intermediate sums cannot overflow."""
    residuals = np.asarray(residuals, dtype=float)
    if residuals.size == 0:
        raise DegenerateDataError("empirical_mgf requires at least one residual")
    w, c = _shifted_exponentials(residuals, t)
    scale = np.exp(c)
    m1 = scale * float(np.mean(w))
    m2 = scale * float(np.mean(residuals * w))
    return m1, m2


def mgf_ratio(residuals: np.ndarray, t: float) -> float:
    """M2_hat(t) / M1_hat(t) without forming either factor (bounded even when
    the MGF itself would overflow a float)."""
    residuals = np.asarray(residuals, dtype=float)
    w, _ = _shifted_exponentials(residuals, t)
    return float(np.sum(residuals * w) / np.sum(w))


def estimate_tau(
    ds: Dataset,
    outcome_fit: OutcomeFit,
    propensity_fit: PropensityFit,
    mu_hat: np.ndarray,
) -> TauEstimate:
    """Plug-in mean-response estimate; the mu term averages over ALL rows."""
    eta = ds.n_observed / ds.n
    if eta in (0.0, 1.0):
        raise DegenerateDataError("eta_hat is degenerate (all r equal)")
    gamma = propensity_fit.gamma_hat
    m1, m2 = empirical_mgf(outcome_fit.residuals, gamma)
    tau = float(np.mean(mu_hat)) + (1.0 - eta) * mgf_ratio(
        outcome_fit.residuals, gamma
    )
    alpha0 = recover_alpha0(propensity_fit, m1)
    return TauEstimate(
        tau_hat=tau, eta_hat=eta, m1_hat=m1, m2_hat=m2, alpha0_hat=alpha0
    )


def estimate_tau_normal_plugin(
    ds: Dataset,
    outcome_fit: OutcomeFit,
    propensity_fit: PropensityFit,
    mu_hat: np.ndarray,
) -> TauEstimate:
    """Comparator assuming Gaussian errors: M1(t) = e^{t^2 s^2 / 2} and
    M2(t) = t s^2 M1(t), so the correction term reduces to gamma * sigma2."""
    eta = ds.n_observed / ds.n
    if eta in (0.0, 1.0):
        raise DegenerateDataError("eta_hat is degenerate (all r equal)")
    gamma = propensity_fit.gamma_hat
    s2 = outcome_fit.sigma2_hat
    m1 = float(np.exp(gamma**2 * s2 / 2.0))
    m2 = gamma * s2 * m1
    tau = float(np.mean(mu_hat)) + (1.0 - eta) * gamma * s2
    alpha0 = recover_alpha0(propensity_fit, m1)
    return TauEstimate(
        tau_hat=tau, eta_hat=eta, m1_hat=m1, m2_hat=m2, alpha0_hat=alpha0
    )
