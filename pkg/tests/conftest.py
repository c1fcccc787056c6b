"""Shared fixtures and small data builders for the test suite."""

import numpy as np
import pytest
from scipy.special import expit

from mnarmean.data import BasisTerm, Dataset, ModelConfig


def make_dataset(r, y, x):
    return Dataset(r=np.asarray(r), y=np.asarray(y, dtype=float), x=np.asarray(x, dtype=float))


def mar_dataset(n: int, seed: int, a0: float = -0.5, b: float = 0.7) -> Dataset:
    """Missingness depends on x only (gamma = 0): pr(R=1|x) = expit(-(a0 + b x1)).

    y given x is linear with standard normal noise, so any estimator that
    assumes outcome-dependent missingness should find gamma near 0.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.normal(0.0, 1.0, n)
    x2 = rng.normal(0.0, 1.0, n)
    pi = expit(-(a0 + b * x1))
    r = (rng.random(n) < pi).astype(np.int64)
    y_full = 1.0 + 0.5 * x1 - 0.8 * x2 + x2**2 + rng.normal(0.0, 1.0, n)
    y = np.where(r == 1, y_full, np.nan)
    return Dataset(r=r, y=y, x=np.column_stack([x1, x2]), y_full=y_full)


@pytest.fixture
def cfg_2d() -> ModelConfig:
    """Intercept + x1 + x2 + x2^2 mean with x1 in the propensity."""
    return ModelConfig(
        mean_basis=(BasisTerm((0, 0)), BasisTerm((1, 0)), BasisTerm((0, 1)), BasisTerm((0, 2))),
        x1_columns=(1,),
    )


@pytest.fixture
def example1_fit_inputs():
    """A moderate Example-1 dataset plus its config, used by several modules."""
    from mnarmean.simulate import example1, generate_dataset

    sc = example1(alpha0=-1.7, delta=0.0)
    ds = generate_dataset(sc, 2000, seed=314, debug_retain=True)
    return sc, ds, sc.model_config()
