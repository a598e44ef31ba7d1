"""Seeded generators for the synthetic benchmark datasets.

All generators are pure functions of (spec, rng state), so a fixed seed
reproduces every dataset bitwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import IncompleteMatrix, make_incomplete
from .exceptions import InfeasibleRate, NotPositiveDefinite

DEFAULT_BETA = np.array([1.0, 1.0, 2.0, -1.5, -2.5, 5.0])  # (beta_0, ..., beta_5)


def ar2_concentration(p: int) -> np.ndarray:
    """Banded order-2 autoregressive concentration matrix.

    Diagonal 1, first off-band 0.5, second off-band 0.25, completed
    symmetrically at the corners.  SPD is checked at generation time; a
    failure gets a minimal diagonal boost and a warning.
    """
    if p < 5:
        raise ValueError("p must be >= 5")
    C = np.eye(p)
    for i in range(p - 1):
        C[i, i + 1] = C[i + 1, i] = 0.5
    for i in range(p - 2):
        C[i, i + 2] = C[i + 2, i] = 0.25
    eigmin = float(np.linalg.eigvalsh(C)[0])
    if eigmin <= 0:
        boost = abs(eigmin) + 1e-6
        warnings.warn(
            f"band matrix not SPD at p={p}; boosting diagonal by {boost:.2e}",
            stacklevel=2,
        )
        C += boost * np.eye(p)
    return C


def ar2_truth_adjacency(p: int) -> np.ndarray:
    """True edge set of the band: |i - j| in {1, 2}."""
    C = ar2_concentration(p)
    adj = C != 0.0
    np.fill_diagonal(adj, False)
    return adj


def sample_ggm_data(C: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. rows from N(0, C^-1) via a Cholesky factorization of C."""
    p = C.shape[0]
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"concentration matrix is not SPD: {exc}") from exc
    z = rng.standard_normal((n, p))
    # x ~ N(0, C^-1) when L^T x = z
    return np.linalg.solve(L.T, z.T).T


def sample_regression_data(setting: str, n: int, p: int, rng: np.random.Generator,
                           beta: np.ndarray | None = None, noise_sd: float = 1.0):
    """Design matrix, response and true coefficient vector for one replicate.

    ``setting`` is 'independent' (rows N(0, 2I)) or 'ar2' (rows from the
    banded concentration matrix).  Returns (X, y, beta_full) with
    beta_full of length p + 1 (intercept first).
    """
    if beta is None:
        beta = DEFAULT_BETA
    if p < len(beta) - 1:
        raise ValueError(f"p must be >= {len(beta) - 1}")
    if setting == "independent":
        X = rng.standard_normal((n, p)) * np.sqrt(2.0)
    elif setting == "ar2":
        X = sample_ggm_data(ar2_concentration(p), n, rng)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    beta_full = np.zeros(p + 1)
    beta_full[: len(beta)] = beta
    y = beta_full[0] + X @ beta_full[1:] + noise_sd * rng.standard_normal(n)
    return X, y, beta_full


def inject_mcar(data: np.ndarray, rate: float, rng: np.random.Generator,
                max_retries: int = 100) -> IncompleteMatrix:
    """Mask exactly floor(rate * n * p) uniformly chosen cells.

    A draw that empties some column is rejected and redrawn; after
    ``max_retries`` rejections the rate is declared infeasible.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if not 0 <= rate < 1:
        raise InfeasibleRate(f"rate {rate} outside [0, 1)")
    count = int(np.floor(rate * n * p))
    if count > n * p - p:
        raise InfeasibleRate("cannot mask that many cells and keep every column observed")
    for _ in range(max_retries):
        flat = rng.choice(n * p, size=count, replace=False)
        mask = np.ones(n * p, dtype=bool)
        mask[flat] = False
        mask = mask.reshape(n, p)
        if mask.any(axis=0).all():
            values = np.array(data)
            values[~mask] = np.nan
            return make_incomplete(values)
    raise InfeasibleRate(f"no feasible mask found in {max_retries} draws")


@dataclass(frozen=True)
class RandCoefTruth:
    """Latent draws kept alongside the responses for oracle checks."""

    beta: np.ndarray
    sigma2: float
    Lambda: np.ndarray
    Gamma: np.ndarray
    lambdas: np.ndarray  # (I, dz)
    gammas: np.ndarray  # (J, dw)


def sample_randcoef_data(I: int, J: int, rng: np.random.Generator,
                         beta: np.ndarray, sigma: float,
                         Lambda: np.ndarray, Gamma: np.ndarray,
                         x=None, z=None, w=None):
    """Responses y_ij = x_ij' beta + z_i' lambda_i + w_j' gamma_j + e_ij.

    Covariates default to standard-normal draws with a leading intercept
    column.  Returns (x, z, w, y, truth).
    """
    beta = np.asarray(beta, dtype=float)
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    q = len(beta)
    dz, dw = Lambda.shape[0], Gamma.shape[0]
    if x is None:
        x = rng.standard_normal((I, J, q))
        x[:, :, 0] = 1.0
    if z is None:
        z = rng.standard_normal((I, dz))
    if w is None:
        w = rng.standard_normal((J, dw))
    lam = rng.multivariate_normal(np.zeros(dz), Lambda, size=I)
    gam = rng.multivariate_normal(np.zeros(dw), Gamma, size=J)
    e = sigma * rng.standard_normal((I, J))
    y = x @ beta + (z * lam).sum(axis=1)[:, None] + (w * gam).sum(axis=1)[None, :] + e
    truth = RandCoefTruth(beta, sigma ** 2, Lambda, Gamma, lam, gam)
    return x, z, w, y, truth
