import numpy as np
import pytest

from mnarmean.data import BasisTerm, Dataset, ModelConfig, build_design
from mnarmean.diagnostics import ncv_score_test, uss_gof_test
from mnarmean.errors import DegenerateDataError
from mnarmean.fitting import fit_tau_only
from mnarmean.outcome import fit_least_squares
from mnarmean.simulate import example1, generate_dataset


def _fit(ds, cfg):
    return fit_tau_only(ds, cfg)


def test_ncv_null_size():
    """Under homoscedastic errors the statistic is ~ chi2(1): its mean over
    replications is near 1 and the rejection rate at 5% is near 5%."""
    sc = example1(alpha0=-1.7, delta=0.0)
    cfg = sc.model_config()
    stats, rej = [], 0
    for s in np.random.SeedSequence(40).spawn(200):
        ds = generate_dataset(sc, 1000, s)
        _, _, outc, _, dm = _fit(ds, cfg)
        res = ncv_score_test(outc, dm, ds)
        stats.append(res.statistic)
        rej += res.p_value < 0.05
    assert np.mean(stats) == pytest.approx(1.0, abs=0.35)
    assert rej / 200 < 0.12


def test_ncv_power_under_heteroscedasticity():
    rng = np.random.default_rng(41)
    n = 2000
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    mu = 1.0 + x1 + x2
    y = mu + rng.normal(size=n) * (0.5 + 0.8 * np.abs(mu))
    ds = Dataset(r=np.ones(n, dtype=np.int64), y=y, x=np.column_stack([x1, x2]))
    cfg = ModelConfig(
        mean_basis=(BasisTerm((0, 0)), BasisTerm((1, 0)), BasisTerm((0, 1))),
        x1_columns=(1,),
    )
    dm = build_design(ds, cfg)
    res = ncv_score_test(fit_least_squares(ds, dm), dm, ds)
    assert res.p_value < 1e-4


def test_ncv_degenerate_zero_variance():
    # zero residual variance makes the standardized residuals undefined
    from mnarmean.outcome import OutcomeFit

    x = np.arange(10.0)[:, None]
    ds = Dataset(r=np.ones(10, dtype=np.int64), y=np.full(10, 3.0), x=x)
    cfg = ModelConfig(mean_basis=(BasisTerm((0,)),), x1_columns=(1,))
    dm = build_design(ds, cfg)
    degenerate = OutcomeFit(
        xi_hat=np.array([3.0]), residuals=np.zeros(10), sigma2_hat=0.0, n1=10
    )
    with pytest.raises(DegenerateDataError):
        ncv_score_test(degenerate, dm, ds)


def test_uss_null_size():
    """Under a correctly specified induced model, T - E is mean-zero relative
    to its spread, and the 5% rejection rate is controlled."""
    sc = example1(alpha0=-1.7, delta=0.0)
    cfg = sc.model_config()
    zs, rej = [], 0
    for s in np.random.SeedSequence(42).spawn(200):
        ds = generate_dataset(sc, 1000, s)
        _, prop, _, mu_hat, _ = _fit(ds, cfg)
        res = uss_gof_test(ds, prop, mu_hat, cfg)
        zs.append(res.statistic)
        rej += res.p_value < 0.05
    assert abs(np.mean(zs)) < 3.0 / np.sqrt(200)
    assert rej / 200 < 0.12


def test_uss_degenerate_probabilities():
    rng = np.random.default_rng(43)
    n = 50
    x = rng.normal(size=(n, 1))
    r = np.ones(n, dtype=np.int64)
    r[0] = 0
    y = np.where(r == 1, rng.normal(size=n), np.nan)
    ds = Dataset(r=r, y=y, x=x)
    cfg = ModelConfig(mean_basis=(BasisTerm((0,)),), x1_columns=(1,))
    from mnarmean.propensity import PropensityFit

    prop = PropensityFit(
        theta_hat=np.array([-80.0, 0.0, 0.0]), loglik=0.0, iterations=1,
        converged=True, gradient_norm=0.0,
    )
    from mnarmean.errors import SingularDesignError

    with pytest.raises((DegenerateDataError, SingularDesignError)):
        uss_gof_test(ds, prop, np.zeros(n), cfg)


def test_both_tests_row_permutation_invariant():
    sc = example1(alpha0=-1.7, delta=0.0)
    cfg = sc.model_config()
    ds = generate_dataset(sc, 800, seed=44)
    _, prop, outc, mu_hat, dm = _fit(ds, cfg)
    a_ncv = ncv_score_test(outc, dm, ds)
    a_uss = uss_gof_test(ds, prop, mu_hat, cfg)
    perm = np.random.default_rng(45).permutation(ds.n)
    ds_p = ds.take(perm)
    _, prop_p, outc_p, mu_p, dm_p = _fit(ds_p, cfg)
    b_ncv = ncv_score_test(outc_p, dm_p, ds_p)
    b_uss = uss_gof_test(ds_p, prop_p, mu_p, cfg)
    assert a_ncv.statistic == pytest.approx(b_ncv.statistic, rel=1e-8)
    assert a_uss.statistic == pytest.approx(b_uss.statistic, rel=1e-8)
