"""Random-coefficient linear model: Gibbs reference sampler and mode-based variant.

The model is y_ij = x_ij' beta + z_i' lambda_i + w_j' gamma_j + e_ij with
semiconjugate priors: normal on beta, inverse gamma on the noise
variance, inverse Wishart on the random-coefficient covariances.  The
mode-based sampler keeps the stochastic draws for the per-unit
coefficients but replaces each global parameter draw by the mode of the
same full conditional.

Randomness is keyed per (seed, iteration, block, unit id), so permuting
customers permutes the lambda draws identically and leaves the global
trajectories unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import invwishart

from .core import ChainTrace, ParameterSnapshot
from .exceptions import SingularPrecision

# block codes for substream derivation
_B_LAMBDA, _B_GAMMA, _B_BETA, _B_SIGMA2, _B_LCOV, _B_GCOV, _B_INIT = range(7)


@dataclass(frozen=True)
class Hyper:
    mu_beta: np.ndarray
    Sigma_beta: np.ndarray
    a: float
    b: float
    rho_L: float
    R_L: np.ndarray
    rho_G: float
    R_G: np.ndarray


def default_hyper(q: int, dz: int, dw: int) -> Hyper:
    """Weakly informative defaults keeping every conditional mode defined."""
    return Hyper(
        mu_beta=np.zeros(q),
        Sigma_beta=100.0 * np.eye(q),
        a=0.01,
        b=0.01,
        rho_L=dz + 2,
        R_L=np.eye(dz),
        rho_G=dw + 2,
        R_G=np.eye(dw),
    )


@dataclass(frozen=True)
class RandCoefModel:
    x: np.ndarray  # (I, J, q)
    z: np.ndarray  # (I, dz)
    w: np.ndarray  # (J, dw)
    hyper: Hyper
    customer_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.customer_ids is None:
            object.__setattr__(self, "customer_ids", np.arange(self.I))
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", np.arange(self.J))

    @property
    def I(self) -> int:  # noqa: E743 - matches the model notation
        return self.x.shape[0]

    @property
    def J(self) -> int:
        return self.x.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.x.shape[2], self.z.shape[1], self.w.shape[1]


@dataclass(frozen=True)
class RandCoefState:
    beta: np.ndarray
    sigma2: float
    Lambda: np.ndarray
    Gamma: np.ndarray
    lambdas: np.ndarray  # (I, dz)
    gammas: np.ndarray  # (J, dw)

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        for name, M in (("Lambda", self.Lambda), ("Gamma", self.Gamma)):
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} is not positive definite")


def _rng_for(seed: int, t: int, block: int, unit: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, t, block, unit)))


def _solve_normal(prec: np.ndarray, rhs: np.ndarray):
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError as exc:
        raise SingularPrecision(str(exc)) from exc
    return cov @ rhs, cov


def _random_effects(model: RandCoefModel, state: RandCoefState) -> np.ndarray:
    return (
        (model.z * state.lambdas).sum(axis=1)[:, None]
        + (model.w * state.gammas).sum(axis=1)[None, :]
    )


def beta_conditional(state: RandCoefState, model: RandCoefModel, y: np.ndarray):
    """Normal conditional for the fixed effects: (mean, covariance)."""
    h = model.hyper
    q = model.dims[0]
    Xf = model.x.reshape(-1, q)
    resid = (y - _random_effects(model, state)).reshape(-1)
    prior_prec = np.linalg.inv(h.Sigma_beta)
    prec = prior_prec + Xf.T @ Xf / state.sigma2
    rhs = prior_prec @ h.mu_beta + Xf.T @ resid / state.sigma2
    return _solve_normal(prec, rhs)


def lambda_conditional(state: RandCoefState, model: RandCoefModel, y: np.ndarray, i: int):
    """Normal conditional for customer i's random coefficients."""
    z_i = model.z[i]
    resid = y[i] - model.x[i] @ state.beta - (model.w * state.gammas).sum(axis=1)
    prec = np.linalg.inv(state.Lambda) + model.J * np.outer(z_i, z_i) / state.sigma2
    rhs = z_i * resid.sum() / state.sigma2
    return _solve_normal(prec, rhs)


def gamma_conditional(state: RandCoefState, model: RandCoefModel, y: np.ndarray, j: int):
    """Normal conditional for item j's random coefficients."""
    w_j = model.w[j]
    resid = y[:, j] - model.x[:, j] @ state.beta - (model.z * state.lambdas).sum(axis=1)
    prec = np.linalg.inv(state.Gamma) + model.I * np.outer(w_j, w_j) / state.sigma2
    rhs = w_j * resid.sum() / state.sigma2
    return _solve_normal(prec, rhs)


def sigma2_conditional(state: RandCoefState, model: RandCoefModel, y: np.ndarray):
    """Inverse-gamma conditional for the noise variance: (shape, rate)."""
    h = model.hyper
    e = y - model.x @ state.beta - _random_effects(model, state)
    shape = h.a + model.I * model.J / 2.0
    rate = h.b + 0.5 * float((e ** 2).sum())
    return shape, rate


def lambda_cov_conditional(state: RandCoefState, model: RandCoefModel):
    """Inverse-Wishart conditional for Lambda: (df, scale)."""
    h = model.hyper
    return h.rho_L + model.I, h.R_L + state.lambdas.T @ state.lambdas


def gamma_cov_conditional(state: RandCoefState, model: RandCoefModel):
    """Inverse-Wishart conditional for Gamma: (df, scale)."""
    h = model.hyper
    return h.rho_G + model.J, h.R_G + state.gammas.T @ state.gammas


def full_conditionals(state: RandCoefState, model: RandCoefModel, y: np.ndarray) -> dict:
    """All conditional families evaluated at the given state (for inspection)."""
    return {
        "beta": beta_conditional(state, model, y),
        "lambda": [lambda_conditional(state, model, y, i) for i in range(model.I)],
        "gamma": [gamma_conditional(state, model, y, j) for j in range(model.J)],
        "sigma2": sigma2_conditional(state, model, y),
        "Lambda": lambda_cov_conditional(state, model),
        "Gamma": gamma_cov_conditional(state, model),
    }


def _draw_normal(mean, cov, rng) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    return mean + L @ rng.standard_normal(len(mean))


def _draw_inverse_gamma(shape, rate, rng) -> float:
    return float(rate / rng.gamma(shape, 1.0))


def _draw_effects(state, model, y, seed, t):
    """Stochastic draws of the per-unit coefficients, fresh-state sequential."""
    lambdas = np.array(state.lambdas)
    for i in range(model.I):
        mean, cov = lambda_conditional(state, model, y, i)
        rng = _rng_for(seed, t, _B_LAMBDA, int(model.customer_ids[i]))
        lambdas[i] = _draw_normal(mean, cov, rng)
    state = replace(state, lambdas=lambdas)
    gammas = np.array(state.gammas)
    for j in range(model.J):
        mean, cov = gamma_conditional(state, model, y, j)
        rng = _rng_for(seed, t, _B_GAMMA, int(model.item_ids[j]))
        gammas[j] = _draw_normal(mean, cov, rng)
    return replace(state, gammas=gammas)


def gibbs_step(state: RandCoefState, model: RandCoefModel, y: np.ndarray,
               seed: int, t: int) -> RandCoefState:
    """One sweep drawing every block from its full conditional."""
    state = _draw_effects(state, model, y, seed, t)
    mean, cov = beta_conditional(state, model, y)
    state = replace(state, beta=_draw_normal(mean, cov, _rng_for(seed, t, _B_BETA)))
    shape, rate = sigma2_conditional(state, model, y)
    state = replace(
        state, sigma2=_draw_inverse_gamma(shape, rate, _rng_for(seed, t, _B_SIGMA2))
    )
    df, scale = lambda_cov_conditional(state, model)
    Lam = np.atleast_2d(
        invwishart.rvs(df=df, scale=scale, random_state=_rng_for(seed, t, _B_LCOV))
    )
    state = replace(state, Lambda=Lam)
    df, scale = gamma_cov_conditional(state, model)
    Gam = np.atleast_2d(
        invwishart.rvs(df=df, scale=scale, random_state=_rng_for(seed, t, _B_GCOV))
    )
    return replace(state, Gamma=Gam)


def inverse_gamma_mode(shape: float, rate: float) -> float:
    return rate / (shape + 1.0)


def inverse_wishart_mode(df: float, scale: np.ndarray) -> np.ndarray:
    d = scale.shape[0]
    return scale / (df + d + 1.0)


def icc_step(state: RandCoefState, model: RandCoefModel, y: np.ndarray,
             seed: int, t: int) -> RandCoefState:
    """One sweep: stochastic per-unit draws, conditional modes for the globals."""
    state = _draw_effects(state, model, y, seed, t)
    mean, _ = beta_conditional(state, model, y)
    state = replace(state, beta=mean)
    shape, rate = sigma2_conditional(state, model, y)
    state = replace(state, sigma2=inverse_gamma_mode(shape, rate))
    df, scale = lambda_cov_conditional(state, model)
    state = replace(state, Lambda=inverse_wishart_mode(df, scale))
    df, scale = gamma_cov_conditional(state, model)
    return replace(state, Gamma=inverse_wishart_mode(df, scale))


def initial_state(model: RandCoefModel, seed: int) -> RandCoefState:
    """Random start: unit-normal beta and effects, identity covariances."""
    q, dz, dw = model.dims
    rng = _rng_for(seed, 0, _B_INIT)
    return RandCoefState(
        beta=rng.standard_normal(q),
        sigma2=1.0,
        Lambda=np.eye(dz),
        Gamma=np.eye(dw),
        lambdas=0.1 * rng.standard_normal((model.I, dz)),
        gammas=0.1 * rng.standard_normal((model.J, dw)),
    )


def pack_state(state: RandCoefState) -> np.ndarray:
    """Payload layout: beta, sigma2, upper triangle (incl. diagonal) of Lambda, then Gamma."""
    dz = state.Lambda.shape[0]
    dw = state.Gamma.shape[0]
    return np.concatenate(
        [
            state.beta,
            [state.sigma2],
            state.Lambda[np.triu_indices(dz)],
            state.Gamma[np.triu_indices(dw)],
        ]
    )


def run_randcoef(model: RandCoefModel, y: np.ndarray, iterations: int,
                 burn_in: int, seed: int, mode: str = "gibbs") -> ChainTrace:
    """Run one chain of either sampler, recording a snapshot per sweep."""
    step = {"gibbs": gibbs_step, "icc": icc_step}[mode]
    state = initial_state(model, seed)
    trace = ChainTrace(burn_in=burn_in)
    for t in range(iterations):
        state = step(state, model, y, seed, t + 1)
        trace.append(ParameterSnapshot(t, pack_state(state)))
    return trace
