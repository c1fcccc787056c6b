"""Nonparametric pairs-bootstrap confidence intervals for tau: studentized
bootstrap-t and percentile.  Rows (r, y, x) are resampled jointly; quantiles
use the type-7 (linear interpolation) convention so results are bit-exact
for a fixed seed."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, ModelConfig
from .errors import MnarError, NonConvergenceError, UsageError
from .fitting import fit_tau_only
from .inference import ConfidenceInterval, build_sandwich, estimate_sigma_tau
from .ipw import monomial_basis, solve_gmm, solve_ipw

FAILURE_TOLERANCE = 0.05


@dataclass(frozen=True)
class BootstrapResult:
    ci: ConfidenceInterval
    n_resamples_requested: int
    n_successful: int
    t_stats: np.ndarray | None
    seed: int
    failure_counts: dict


def _resample_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


def _child_rngs(seed: int, B: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(B)]


def t_interval_from_stats(
    tau_hat: float,
    sigma_tau: float,
    n: int,
    t_stats: np.ndarray,
    level: float,
) -> ConfidenceInterval:
    """CI = [tau - q_{1-a/2}(t*) s/sqrt(n), tau - q_{a/2}(t*) s/sqrt(n)]."""
    a = 1.0 - level
    q_lo = float(np.quantile(t_stats, a / 2.0, method="linear"))
    q_hi = float(np.quantile(t_stats, 1.0 - a / 2.0, method="linear"))
    scale = sigma_tau / np.sqrt(n)
    return ConfidenceInterval(
        lower=float(tau_hat - q_hi * scale),
        upper=float(tau_hat - q_lo * scale),
        level=level,
        method="bootstrap_t",
    )


def _check_failures(B: int, n_ok: int, failures: dict):
    if n_ok < (1.0 - FAILURE_TOLERANCE) * B:
        raise NonConvergenceError(
            f"only {n_ok}/{B} bootstrap resamples succeeded; failures: {failures}"
        )


def bootstrap_t_ci(
    ds: Dataset,
    cfg: ModelConfig,
    level: float = 0.95,
    B: int = 1000,
    seed: int = 0,
    variant: str = "printed",
) -> BootstrapResult:
    """Studentized bootstrap: the normal quantiles of the Wald CI are replaced
    by empirical quantiles of t* = sqrt(n) (tau* - tau_hat) / sigma_tau*."""
    if B < 99:
        raise UsageError(f"B must be >= 99, got {B}")
    tau, prop, outcome, mu_hat, dm = fit_tau_only(ds, cfg)
    pieces = build_sandwich(ds, dm, mu_hat, outcome, prop, cfg)
    var = estimate_sigma_tau(
        pieces, tau.eta_hat, prop.gamma_hat, outcome.sigma2_hat, variant
    )
    sigma_tau = float(np.sqrt(var.sigma2_tau))
    n = ds.n
    t_stats = []
    failures: dict = {}
    for rng in _child_rngs(seed, B):
        idx = _resample_indices(rng, n)
        star = ds.take(idx)
        if star.n_observed in (0, star.n):
            failures["DEGENERATE"] = failures.get("DEGENERATE", 0) + 1
            continue
        try:
            tau_s, prop_s, out_s, mu_s, dm_s = fit_tau_only(star, cfg)
            pieces_s = build_sandwich(star, dm_s, mu_s, out_s, prop_s, cfg)
            var_s = estimate_sigma_tau(
                pieces_s, tau_s.eta_hat, prop_s.gamma_hat, out_s.sigma2_hat, variant
            )
        except MnarError as exc:
            failures[exc.code] = failures.get(exc.code, 0) + 1
            continue
        except np.linalg.LinAlgError:
            failures["SINGULAR"] = failures.get("SINGULAR", 0) + 1
            continue
        if not prop_s.converged or var_s.sigma2_tau <= 0:
            failures["NONCONVERGENCE"] = failures.get("NONCONVERGENCE", 0) + 1
            continue
        t_stats.append(
            np.sqrt(n) * (tau_s.tau_hat - tau.tau_hat) / np.sqrt(var_s.sigma2_tau)
        )
    n_ok = len(t_stats)
    _check_failures(B, n_ok, failures)
    t_stats = np.asarray(t_stats)
    ci = t_interval_from_stats(tau.tau_hat, sigma_tau, n, t_stats, level)
    return BootstrapResult(
        ci=ci,
        n_resamples_requested=B,
        n_successful=n_ok,
        t_stats=t_stats,
        seed=int(seed),
        failure_counts=failures,
    )


def _point_estimator(tag: str):
    def run(ds: Dataset, cfg: ModelConfig) -> float:
        if tag == "proposed":
            return fit_tau_only(ds, cfg)[0].tau_hat
        if tag == "normal_plugin":
            return fit_tau_only(ds, cfg, normal_plugin=True)[0].tau_hat
        if tag == "ipw":
            return solve_ipw(ds, cfg, monomial_basis(ds.d, 1)).tau_ipw
        if tag.startswith("gmm"):
            return solve_gmm(ds, cfg, int(tag[3:])).tau_ipw
        raise UsageError(f"unknown estimator tag {tag!r}")

    return run


def bootstrap_percentile_ci(
    estimator_tag: str,
    ds: Dataset,
    cfg: ModelConfig,
    level: float = 0.95,
    B: int = 1000,
    seed: int = 0,
) -> BootstrapResult:
    """Percentile CI for any of the point estimators (proposed,
    normal_plugin, ipw, gmm<k>)."""
    if B < 99:
        raise UsageError(f"B must be >= 99, got {B}")
    estimate = _point_estimator(estimator_tag)
    estimate(ds, cfg)  # the full pipeline must run on the original data
    taus = []
    failures: dict = {}
    for rng in _child_rngs(seed, B):
        idx = _resample_indices(rng, ds.n)
        star = ds.take(idx)
        if star.n_observed in (0, star.n):
            failures["DEGENERATE"] = failures.get("DEGENERATE", 0) + 1
            continue
        try:
            t = estimate(star, cfg)
        except MnarError as exc:
            failures[exc.code] = failures.get(exc.code, 0) + 1
            continue
        except np.linalg.LinAlgError:
            failures["SINGULAR"] = failures.get("SINGULAR", 0) + 1
            continue
        if not np.isfinite(t):
            failures["OVERFLOW"] = failures.get("OVERFLOW", 0) + 1
            continue
        taus.append(t)
    n_ok = len(taus)
    _check_failures(B, n_ok, failures)
    taus = np.asarray(taus)
    a = 1.0 - level
    ci = ConfidenceInterval(
        lower=float(np.quantile(taus, a / 2.0, method="linear")),
        upper=float(np.quantile(taus, 1.0 - a / 2.0, method="linear")),
        level=level,
        method="bootstrap_percentile",
    )
    return BootstrapResult(
        ci=ci,
        n_resamples_requested=B,
        n_successful=n_ok,
        t_stats=None,
        seed=int(seed),
        failure_counts=failures,
    )
