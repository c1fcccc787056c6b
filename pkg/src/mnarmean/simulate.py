"""Generative engine and study drivers.

Data are generated by the factorization X -> R|X -> eps|R: covariates come
from their marginal laws, the missingness indicator follows the induced
logistic model (whose intercept absorbs log M1(gamma)), complete-case errors
follow the base mixture, and missing-case errors follow its gamma-tilted
counterpart.  Under this mechanism the observed-subsample outcome model and
the outcome-dependent missingness model both hold exactly."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import BasisTerm, Dataset, ModelConfig
from .errors import MnarError, UsageError
from .fitting import fit_tau_only
from .ipw import monomial_basis, solve_gmm, solve_ipw
from .inference import estimate_sigma_tau, wald_ci
from .mean_response import estimate_tau
from .outcome import predict_mu

NCR_TAU_RANGE = (-10.0, 10.0)
NCR_GAMMA_RANGE = (-3.0, 3.0)


class GaussianMixture:
    """Finite normal mixture with closed-form MGF moments."""

    def __init__(self, components):
        comps = [(float(w), float(m), float(s2)) for (w, m, s2) in components]
        if not comps:
            raise UsageError("mixture needs at least one component")
        w = np.array([c[0] for c in comps])
        if (w <= 0).any():
            raise UsageError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-10:
            raise UsageError(f"mixture weights sum to {w.sum()}, expected 1")
        if any(c[2] <= 0 for c in comps):
            raise UsageError("mixture variances must be positive")
        self.components = tuple(comps)

    @property
    def weights(self):
        return np.array([c[0] for c in self.components])

    @property
    def means(self):
        return np.array([c[1] for c in self.components])

    @property
    def variances(self):
        return np.array([c[2] for c in self.components])

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights * self.means))

    @property
    def variance(self) -> float:
        w, m, s2 = self.weights, self.means, self.variances
        return float(np.sum(w * (s2 + m**2)) - self.mean**2)

    def m1(self, t: float) -> float:
        """E e^{t eps} = sum w_k exp(t m_k + t^2 s_k^2 / 2)."""
        w, m, s2 = self.weights, self.means, self.variances
        return float(np.sum(w * np.exp(t * m + t**2 * s2 / 2.0)))

    def m2(self, t: float) -> float:
        """E eps e^{t eps} = sum w_k (m_k + t s_k^2) exp(t m_k + t^2 s_k^2/2)."""
        w, m, s2 = self.weights, self.means, self.variances
        return float(np.sum(w * (m + t * s2) * np.exp(t * m + t**2 * s2 / 2.0)))

    def m3(self, t: float) -> float:
        """E eps^2 e^{t eps}."""
        w, m, s2 = self.weights, self.means, self.variances
        mm = m + t * s2
        return float(np.sum(w * (mm**2 + s2) * np.exp(t * m + t**2 * s2 / 2.0)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = rng.choice(len(self.components), size=size, p=self.weights)
        return rng.normal(self.means[k], np.sqrt(self.variances[k]))

    def cdf(self, x) -> np.ndarray:
        from scipy.stats import norm

        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, m, s2 in self.components:
            out += w * norm.cdf(x, loc=m, scale=np.sqrt(s2))
        return out


class ErrorLaw(GaussianMixture):
    """Mean-zero mixture for the complete-case regression error."""

    def __init__(self, components):
        super().__init__(components)
        if abs(self.mean) > 1e-10:
            raise UsageError(f"error law must have mean 0, got {self.mean}")

    @classmethod
    def delta_mixture(cls, delta: float) -> "ErrorLaw":
        """2/3 N(-delta, 4 - 3 delta^2) + 1/3 N(2 delta, 4)."""
        return cls([
            (2.0 / 3.0, -delta, 4.0 - 3.0 * delta**2),
            (1.0 / 3.0, 2.0 * delta, 4.0),
        ])


def tilt_error_law(law: GaussianMixture, gamma: float) -> tuple[GaussianMixture, float]:
    """Exponential tilt by e^{gamma eps} / M1(gamma): each component
    N(m, s2) maps to N(m + gamma s2, s2) with weight proportional to
    w exp(gamma m + gamma^2 s2 / 2).  Returns (tilted mixture, M1(gamma))."""
    w, m, s2 = law.weights, law.means, law.variances
    logits = gamma * m + gamma**2 * s2 / 2.0
    c = logits.max()
    raw = w * np.exp(logits - c)
    m1 = float(np.exp(c) * raw.sum())
    new_w = raw / raw.sum()
    return (
        GaussianMixture(list(zip(new_w, m + gamma * s2, s2))),
        m1,
    )


@dataclass(frozen=True)
class Scenario:
    """Generative truth: independent-normal covariates, monomial outcome
    mean, outcome-dependent logistic missingness, mixture error."""

    covariate_law: tuple[tuple[float, float], ...]  # (mean, var) per covariate
    mean_basis: tuple[BasisTerm, ...]
    xi_true: tuple[float, ...]
    x1_columns: tuple[int, ...]
    alpha0: float
    beta: tuple[float, ...]
    gamma: float
    error_law: ErrorLaw
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if len(self.mean_basis) != len(self.xi_true):
            raise UsageError("mean_basis and xi_true lengths differ")
        if len(self.beta) != len(self.x1_columns):
            raise UsageError("beta and x1_columns lengths differ")

    @property
    def d(self) -> int:
        return len(self.covariate_law)

    def model_config(self) -> ModelConfig:
        return ModelConfig(mean_basis=self.mean_basis, x1_columns=self.x1_columns)

    @property
    def alpha_induced(self) -> float:
        return self.alpha0 + np.log(self.error_law.m1(self.gamma))

    def mu_truth(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0])
        for coef, term in zip(self.xi_true, self.mean_basis):
            out += coef * term.evaluate(x)
        return out

    def pi_truth(self, x: np.ndarray) -> np.ndarray:
        """pr(R=1 | x) under the induced logistic model."""
        x1 = x[:, [c - 1 for c in self.x1_columns]]
        u = self.alpha_induced + x1 @ np.asarray(self.beta) + self.gamma * self.mu_truth(x)
        return expit(-u)

    def mean_mu(self) -> float:
        """E mu(X; xi) in closed form via normal raw moments."""
        total = 0.0
        for coef, term in zip(self.xi_true, self.mean_basis):
            prod = 1.0
            for (m, v), e in zip(self.covariate_law, term.exponents):
                prod *= _normal_raw_moment(m, v, e)
            total += coef * prod
        return float(total)


def _normal_raw_moment(mean: float, var: float, k: int) -> float:
    # recurrence: E X^k = mean E X^{k-1} + (k-1) var E X^{k-2}
    if k == 0:
        return 1.0
    m_prev2, m_prev1 = 1.0, mean
    for j in range(2, k + 1):
        m_prev2, m_prev1 = m_prev1, mean * m_prev1 + (j - 1) * var * m_prev2
    return m_prev1


def example1(alpha0: float = -1.7, delta: float = 0.0) -> Scenario:
    return Scenario(
        covariate_law=((1.0, 1.0), (0.0, 1.0)),
        mean_basis=(BasisTerm((0, 0)), BasisTerm((1, 0)), BasisTerm((0, 1))),
        xi_true=(2.5, -1.0, 1.5),
        x1_columns=(1,),
        alpha0=alpha0,
        beta=(-0.4,),
        gamma=0.5,
        error_law=ErrorLaw.delta_mixture(delta),
        name="example1",
    )


def example2(alpha0: float = -2.7, delta: float = 0.0) -> Scenario:
    return Scenario(
        covariate_law=((0.0, 1.0),),
        mean_basis=(BasisTerm((0,)), BasisTerm((1,)), BasisTerm((2,))),
        xi_true=(2.0, -1.0, 1.0),
        x1_columns=(1,),
        alpha0=alpha0,
        beta=(-0.4,),
        gamma=0.5,
        error_law=ErrorLaw.delta_mixture(delta),
        name="example2",
    )


def section2_design() -> Scenario:
    """The instability showcase: y = x1 + x2 + eps, heavy gamma."""
    return Scenario(
        covariate_law=((0.0, 2.0), (0.0, 1.0)),
        mean_basis=(BasisTerm((0, 0)), BasisTerm((1, 0)), BasisTerm((0, 1))),
        xi_true=(0.0, 1.0, 1.0),
        x1_columns=(1,),
        alpha0=-1.0,
        beta=(-1.0,),
        gamma=3.0,
        error_law=ErrorLaw([(1.0, 0.0, 1.0)]),
        name="section2",
    )


SCENARIOS = {
    "example1": example1,
    "example2": example2,
    "section2": lambda **kw: section2_design(),
}


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def compute_truth(sc: Scenario, mc_draws: int = 1_000_000, seed=0) -> dict:
    """tau0 = E mu(X) + (1 - eta0) M2(gamma) / M1(gamma) with analytic MGF
    moments and Monte Carlo eta0 = E pr(R=1 | X)."""
    m1 = sc.error_law.m1(sc.gamma)
    m2 = sc.error_law.m2(sc.gamma)
    rng = _rng(seed)
    total = 0.0
    remaining = int(mc_draws)
    block = 2_000_000
    while remaining > 0:
        b = min(block, remaining)
        x = _draw_covariates(sc, rng, b)
        total += float(sc.pi_truth(x).sum())
        remaining -= b
    eta0 = total / mc_draws
    tau0 = sc.mean_mu() + (1.0 - eta0) * m2 / m1
    return {
        "tau0": tau0,
        "eta0": eta0,
        "pr_missing": 1.0 - eta0,
        "alpha_induced": sc.alpha_induced,
        "m1": m1,
        "m2": m2,
        "mean_mu": sc.mean_mu(),
    }


def _draw_covariates(sc: Scenario, rng: np.random.Generator, n: int) -> np.ndarray:
    cols = [
        rng.normal(m, np.sqrt(v), size=n) for (m, v) in sc.covariate_law
    ]
    return np.column_stack(cols)


def generate_dataset(sc: Scenario, n: int, seed, debug_retain: bool = False) -> Dataset:
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = _rng(seed)
    x = _draw_covariates(sc, rng, n)
    pi = sc.pi_truth(x)
    r = (rng.random(n) < pi).astype(np.int64)
    tilted, _ = tilt_error_law(sc.error_law, sc.gamma)
    eps = np.empty(n)
    obs = r == 1
    eps[obs] = sc.error_law.sample(rng, int(obs.sum()))
    eps[~obs] = tilted.sample(rng, int(n - obs.sum()))
    y_full = sc.mu_truth(x) + eps
    y = np.where(obs, y_full, np.nan)
    return Dataset(
        r=r, y=y, x=x, y_full=y_full if debug_retain else None
    )


@dataclass(frozen=True)
class StudyRow:
    method: str
    rb_percent: float
    mse_x100: float
    ncr: int
    n_reps: int


def _is_ncr(tau_hat: float, gamma_hat: float, converged: bool) -> bool:
    return (
        not converged
        or not np.isfinite(tau_hat)
        or not np.isfinite(gamma_hat)
        or not NCR_TAU_RANGE[0] <= tau_hat <= NCR_TAU_RANGE[1]
        or not NCR_GAMMA_RANGE[0] <= gamma_hat <= NCR_GAMMA_RANGE[1]
    )


def run_method(method: str, ds: Dataset, sc: Scenario, tau0: float):
    """Returns (tau_hat, gamma_hat, converged); raises MnarError on failure."""
    cfg = sc.model_config()
    if method == "oracle":
        return tau0, sc.gamma, True
    if method == "proposed":
        tau, prop, _, _, _ = fit_tau_only(ds, cfg)
        return tau.tau_hat, prop.gamma_hat, prop.converged
    if method == "normal_plugin":
        tau, prop, _, _, _ = fit_tau_only(ds, cfg, normal_plugin=True)
        return tau.tau_hat, prop.gamma_hat, prop.converged
    if method == "ipw":
        fit = solve_ipw(ds, cfg, monomial_basis(ds.d, 1))
        return fit.tau_ipw, fit.gamma_hat, fit.converged
    if method.startswith("gmm"):
        k = int(method[3:])
        fit = solve_gmm(ds, cfg, k)
        return fit.tau_ipw, fit.gamma_hat, fit.converged
    raise UsageError(f"unknown method tag {method!r}")


def _study_rep(args):
    sc, n, methods, tau0, child_seed = args
    ds = generate_dataset(sc, n, child_seed)
    out = {}
    for method in methods:
        try:
            tau_hat, gamma_hat, converged = run_method(method, ds, sc, tau0)
        except MnarError:
            out[method] = None
            continue
        except np.linalg.LinAlgError:
            out[method] = None
            continue
        out[method] = (tau_hat, gamma_hat, converged)
    return out


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=8))


def run_study(
    sc: Scenario,
    n: int,
    reps: int,
    methods: list[str],
    seed=0,
    tau0: float | None = None,
    truth_draws: int = 2_000_000,
    threads: int = 1,
) -> list[StudyRow]:
    """RB/MSE/NCR study.  RB and MSE are computed over non-NCR cases only;
    failures of any kind count as NCR and never abort the study."""
    if reps < 1:
        raise UsageError("reps must be >= 1")
    if tau0 is None:
        tau0 = compute_truth(
            sc, truth_draws, seed=np.random.SeedSequence((int(seed), 1))
        )["tau0"]
    children = np.random.SeedSequence(int(seed)).spawn(reps)
    results = _parallel_map(
        _study_rep, [(sc, n, tuple(methods), tau0, s) for s in children], threads
    )
    rows = []
    for method in methods:
        taus = []
        ncr = 0
        for res in results:
            got = res[method]
            if got is None:
                ncr += 1
                continue
            tau_hat, gamma_hat, converged = got
            if _is_ncr(tau_hat, gamma_hat, converged):
                ncr += 1
            else:
                taus.append(tau_hat)
        taus = np.asarray(taus)
        if taus.size:
            rb = 100.0 * float(np.mean(taus - tau0)) / tau0
            mse = 100.0 * float(np.mean((taus - tau0) ** 2))
        else:
            rb = np.nan
            mse = np.nan
        rows.append(
            StudyRow(method=method, rb_percent=rb, mse_x100=mse, ncr=ncr, n_reps=reps)
        )
    return rows


def _coverage_rep(args):
    sc, n, ci_method, level, boot_b, variant, child_seed = args
    from .bootstrap import bootstrap_t_ci  # local import to avoid a cycle

    ds = generate_dataset(sc, n, child_seed)
    cfg = sc.model_config()
    try:
        if ci_method == "wald":
            tau, prop, outcome, mu_hat, dm = fit_tau_only(ds, cfg)
            from .inference import build_sandwich

            pieces = build_sandwich(ds, dm, mu_hat, outcome, prop, cfg)
            var = estimate_sigma_tau(
                pieces, tau.eta_hat, prop.gamma_hat, outcome.sigma2_hat, variant
            )
            ci = wald_ci(tau.tau_hat, var.sigma2_tau, ds.n, level)
        elif ci_method == "bootstrap_t":
            boot_seed = int(child_seed.generate_state(1)[0])
            ci = bootstrap_t_ci(
                ds, cfg, level=level, B=boot_b, seed=boot_seed, variant=variant
            ).ci
        else:
            raise UsageError(f"unknown CI method {ci_method!r}")
    except MnarError:
        return None
    except np.linalg.LinAlgError:
        return None
    return ci.lower, ci.upper


def run_coverage_study(
    sc: Scenario,
    n: int,
    reps: int,
    ci_method: str = "wald",
    level: float = 0.95,
    seed=0,
    boot_b: int = 1000,
    tau0: float | None = None,
    truth_draws: int = 2_000_000,
    variant: str = "printed",
    threads: int = 1,
) -> dict:
    if reps < 1:
        raise UsageError("reps must be >= 1")
    if tau0 is None:
        tau0 = compute_truth(sc, truth_draws, seed=np.random.SeedSequence((int(seed), 1)))["tau0"]
    children = np.random.SeedSequence(int(seed)).spawn(reps)
    results = _parallel_map(
        _coverage_rep,
        [(sc, n, ci_method, level, boot_b, variant, s) for s in children],
        threads,
    )
    covered = 0
    widths = []
    failures = 0
    for res in results:
        if res is None:
            failures += 1
            continue
        lo, hi = res
        covered += int(lo <= tau0 <= hi)
        widths.append(hi - lo)
    ok = reps - failures
    return {
        "coverage_percent": 100.0 * covered / ok if ok else np.nan,
        "mean_width": float(np.mean(widths)) if widths else np.nan,
        "n_failures": failures,
        "tau0": tau0,
    }
