"""End-to-end two-step pipeline: design -> least squares -> conditional
maximum likelihood -> tau_hat -> sandwich variance -> Wald CI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    Dataset,
    DesignMatrices,
    IdentifiabilityReport,
    ModelConfig,
    build_design,
    check_identifiability,
)
from .errors import IdentifiabilityError
from .inference import (
    ConfidenceInterval,
    SandwichPieces,
    VarianceEstimates,
    build_sandwich,
    estimate_sigma_tau,
    wald_ci,
)
from .mean_response import TauEstimate, estimate_tau, estimate_tau_normal_plugin
from .outcome import OutcomeFit, fit_least_squares, predict_mu
from .propensity import PropensityFit, fit_propensity


@dataclass(frozen=True)
class FitResult:
    outcome: OutcomeFit
    propensity: PropensityFit
    tau: TauEstimate
    variance: VarianceEstimates
    wald: ConfidenceInterval
    identifiability: IdentifiabilityReport
    design: DesignMatrices
    mu_hat: np.ndarray
    pieces: SandwichPieces


def fit_mean_response(
    ds: Dataset,
    cfg: ModelConfig,
    level: float = 0.95,
    variant: str = "printed",
    require_identifiable: bool = True,
) -> FitResult:
    dm = build_design(ds, cfg)
    ident = check_identifiability(dm)
    if require_identifiable and not ident.identifiable:
        raise IdentifiabilityError(
            "mean basis lies in the span of {1, x1}: theta is not identifiable"
        )
    outcome = fit_least_squares(ds, dm)
    ident = check_identifiability(dm, xi_hat=outcome.xi_hat)
    mu_hat = predict_mu(outcome, dm)
    propensity = fit_propensity(ds, mu_hat, cfg)
    tau = estimate_tau(ds, outcome, propensity, mu_hat)
    pieces = build_sandwich(ds, dm, mu_hat, outcome, propensity, cfg)
    variance = estimate_sigma_tau(
        pieces, tau.eta_hat, propensity.gamma_hat, outcome.sigma2_hat, variant
    )
    ci = wald_ci(tau.tau_hat, variance.sigma2_tau, ds.n, level)
    return FitResult(
        outcome=outcome,
        propensity=propensity,
        tau=tau,
        variance=variance,
        wald=ci,
        identifiability=ident,
        design=dm,
        mu_hat=mu_hat,
        pieces=pieces,
    )


def fit_tau_only(ds: Dataset, cfg: ModelConfig, normal_plugin: bool = False):
    """Lean path for simulation replications that only need point estimates:
    returns (tau_estimate, propensity_fit, outcome_fit, mu_hat, dm)."""
    dm = build_design(ds, cfg)
    outcome = fit_least_squares(ds, dm)
    mu_hat = predict_mu(outcome, dm)
    propensity = fit_propensity(ds, mu_hat, cfg)
    est = estimate_tau_normal_plugin if normal_plugin else estimate_tau
    tau = est(ds, outcome, propensity, mu_hat)
    return tau, propensity, outcome, mu_hat, dm
