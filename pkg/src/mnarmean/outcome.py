"""Step 1: least-squares fit of the outcome mean on complete cases, with
residuals and the error-variance plug-in (divides by n1, not n1 - q)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import Dataset, DesignMatrices
from .errors import DegenerateDataError, SingularDesignError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class OutcomeFit:
    xi_hat: np.ndarray
    residuals: np.ndarray  # over complete cases, in row order
    sigma2_hat: float
    n1: int


def fit_least_squares(ds: Dataset, dm: DesignMatrices) -> OutcomeFit:
    """xi_hat = argmin sum_{r_i=1} (y_i - M_i xi)^2 via column-pivoted QR."""
    obs = ds.r == 1
    Mc = dm.M[obs]
    yc = ds.y[obs]
    n1, q = Mc.shape
    if n1 < q:
        raise DegenerateDataError(
            f"only {n1} complete cases for {q} mean parameters"
        )
    Q, R, piv = scipy.linalg.qr(Mc, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > RANK_TOL * diag[0]).sum()) if diag[0] > 0 else 0
    if rank < q:
        dep = sorted(int(piv[k]) for k in range(rank, q))
        raise SingularDesignError(
            f"rank-deficient design: columns {dep} are linearly dependent "
            "on the others"
        )
    xi_piv = scipy.linalg.solve_triangular(R, Q.T @ yc)
    xi = np.empty(q)
    xi[piv] = xi_piv
    resid = yc - Mc @ xi
    sigma2 = float(resid @ resid / n1)
    return OutcomeFit(xi_hat=xi, residuals=resid, sigma2_hat=sigma2, n1=n1)


def predict_mu(fit: OutcomeFit, dm: DesignMatrices) -> np.ndarray:
    """mu(x_i; xi_hat) for every row, including missing-y rows."""
    if dm.M.shape[1] != fit.xi_hat.shape[0]:
        raise SingularDesignError(
            f"design has {dm.M.shape[1]} columns, fit has {fit.xi_hat.shape[0]}"
        )
    return dm.M @ fit.xi_hat
