"""Sparse linear regression with missing covariates, fit by blockwise updates.

One consistency sweep has three blocks: the coefficient vector (marginal
screening followed by a minimax-concave-penalty fit), the residual
variance, and a graphical model over the covariates.  The imputation
step redraws each missing covariate cell from the normal that combines
the graph conditional with the regression likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ggm
from .core import ChainTrace, IncompleteMatrix, chain_average
from .engine import BlockSpec, EngineConfig, run_icc
from .exceptions import DegenerateColumn, DegenerateDof, IcfitError, NoConvergence

MCP_GAMMA = 3.0
LAMBDA_PATH_SIZE = 50
LAMBDA_MIN_RATIO = 0.01
SIGMA2_FLOOR = 1e-12
SELECT_WINDOW = 10
SELECT_THRESHOLD = 5


@dataclass(frozen=True)
class RegressionEstimate:
    intercept: float
    coefficients: np.ndarray
    support: frozenset
    sigma2: float

    def __post_init__(self):
        if self.support != frozenset(np.flatnonzero(self.coefficients).tolist()):
            raise ValueError("support must equal the nonzero coordinates")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @property
    def beta_full(self) -> np.ndarray:
        """Intercept-first coefficient vector of length p + 1."""
        return np.concatenate([[self.intercept], self.coefficients])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.coefficients


def _make_estimate(intercept, coefficients, sigma2) -> RegressionEstimate:
    coefficients = np.asarray(coefficients, dtype=float)
    support = frozenset(np.flatnonzero(coefficients).tolist())
    return RegressionEstimate(float(intercept), coefficients, support, float(sigma2))


def sis_screen(X: np.ndarray, y: np.ndarray, keep: int | None = None) -> np.ndarray:
    """Indices of the ``keep`` covariates most correlated with the response."""
    n, p = X.shape
    if keep is None:
        keep = ggm.default_cap(n)
    if keep < 1:
        raise ValueError("keep must be >= 1")
    xc = X - X.mean(axis=0)
    sd = np.sqrt((xc ** 2).mean(axis=0))
    for j in range(p):
        if sd[j] == 0.0:
            raise DegenerateColumn(j)
    yc = y - y.mean()
    score = np.abs(xc.T @ yc) / sd
    order = np.argsort(-score, kind="stable")
    return np.sort(order[: min(keep, p)])


def mcp_threshold(z: float, lam: float, gamma: float) -> float:
    """Univariate MCP solution for a standardized column (x'x/n = 1)."""
    if abs(z) <= gamma * lam:
        soft = math.copysign(max(abs(z) - lam, 0.0), z)
        return soft / (1.0 - 1.0 / gamma)
    return z


def mcp_penalty(t: float, lam: float, gamma: float) -> float:
    t = abs(t)
    if t <= gamma * lam:
        return lam * t - t * t / (2.0 * gamma)
    return gamma * lam * lam / 2.0


def _cd_solve(Xs, yc, lam, gamma, beta, tol, max_sweeps):
    """Cyclic coordinate descent on the standardized MCP objective."""
    n, k = Xs.shape
    r = yc - Xs @ beta
    obj_prev = math.inf
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(k):
            bj = beta[j]
            z = Xs[:, j] @ r / n + bj
            bnew = mcp_threshold(z, lam, gamma)
            if bnew != bj:
                r += Xs[:, j] * (bj - bnew)
                beta[j] = bnew
                max_delta = max(max_delta, abs(bnew - bj))
        obj = 0.5 * (r @ r) / n + sum(mcp_penalty(b, lam, gamma) for b in beta)
        if obj > obj_prev + 1e-9 * (1.0 + abs(obj_prev)):
            raise IcfitError("coordinate-descent objective increased")
        obj_prev = obj
        if max_delta < tol:
            return beta, r, obj
    raise NoConvergence(max_sweeps, best=beta)


def mcp_fit(X: np.ndarray, y: np.ndarray, lam: float | None = None,
            gamma: float = MCP_GAMMA, tol: float = 1e-10,
            max_sweeps: int = 20000,
            n_candidates: int | None = None) -> RegressionEstimate:
    """MCP-penalized least squares with an unpenalized intercept.

    Covariates are standardized internally and the coefficients returned
    on the original scale.  With ``lam=None`` the penalty level is chosen
    on a 50-point log-spaced path from lambda_max down to 1% of it, by
    BIC = n log(RSS/n) + |support| log n.  When the columns were screened
    down from a larger candidate pool, pass the pool size as
    ``n_candidates`` to switch to the extended BIC, which charges each
    selected variable an extra 2 log(n_candidates); this corrects for the
    selection bias the screening step induces.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if k >= n:
        raise ValueError("mcp_fit requires fewer columns than rows")
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    mean = X.mean(axis=0)
    scale = np.sqrt(((X - mean) ** 2).mean(axis=0))
    for j in range(k):
        if scale[j] == 0.0:
            raise DegenerateColumn(j)
    Xs = (X - mean) / scale
    ybar = float(y.mean())
    yc = y - ybar

    if lam is not None:
        beta_s, r, _ = _cd_solve(Xs, yc, float(lam), gamma, np.zeros(k), tol, max_sweeps)
    else:
        lam_max = float(np.max(np.abs(Xs.T @ yc)) / n)
        if lam_max == 0.0:
            beta_s, r = np.zeros(k), yc.copy()
        else:
            path = np.geomspace(lam_max, LAMBDA_MIN_RATIO * lam_max, LAMBDA_PATH_SIZE)
            per_df = math.log(n)
            if n_candidates is not None and n_candidates > 1:
                per_df += 2.0 * math.log(n_candidates)
            warm = np.zeros(k)
            best = None
            for lam_t in path:
                warm, r_t, _ = _cd_solve(Xs, yc, float(lam_t), gamma, warm, tol, max_sweeps)
                rss = max(float(r_t @ r_t), 1e-300)
                df = int(np.count_nonzero(warm))
                bic = n * math.log(rss / n) + df * per_df
                if best is None or bic < best[0]:
                    best = (bic, warm.copy(), r_t.copy())
            _, beta_s, r = best

    coef = beta_s / scale
    intercept = ybar - float(mean @ coef)
    support_size = int(np.count_nonzero(coef))
    try:
        sigma2 = estimate_sigma2(r, support_size)
    except DegenerateDof:
        sigma2 = SIGMA2_FLOOR
    return _make_estimate(intercept, coef, sigma2)


def estimate_sigma2(residuals: np.ndarray, support_size: int) -> float:
    """Residual variance: sum of squares over (n - |support| - 1)."""
    n = len(residuals)
    dof = n - support_size - 1
    if dof < 1:
        raise DegenerateDof(f"n - |support| - 1 = {dof}")
    return max(float(residuals @ residuals) / dof, SIGMA2_FLOOR)


def isis_screen(X: np.ndarray, y: np.ndarray, keep: int | None = None,
                gamma: float = MCP_GAMMA, rounds: int = 3) -> np.ndarray:
    """Iterated marginal screening.

    A single marginal pass can miss a weak signal that is masked by
    stronger ones.  Each round fits a penalized model on the current kept
    set, then re-screens the remaining covariates against the residual,
    so variables whose effect only shows up after the dominant ones are
    removed get a second chance.  Stops early once the kept set is stable.
    """
    n, p = X.shape
    if keep is None:
        keep = ggm.default_cap(n)
    kept = sis_screen(X, y, keep)
    for _ in range(rounds):
        sub = mcp_fit(X[:, kept], y, gamma=gamma, n_candidates=p)
        support = kept[np.flatnonzero(sub.coefficients)]
        room = keep - len(support)
        others = np.setdiff1d(np.arange(p), support)
        if room <= 0 or len(others) == 0:
            return np.sort(support)
        resid = y - sub.predict(X[:, kept])
        xc = X[:, others] - X[:, others].mean(axis=0)
        sd = np.sqrt((xc ** 2).mean(axis=0))
        score = np.abs(xc.T @ (resid - resid.mean())) / np.maximum(sd, 1e-300)
        order = np.argsort(-score, kind="stable")
        refreshed = np.sort(np.concatenate([support, others[order[:room]]]))
        if np.array_equal(refreshed, kept):
            break
        kept = refreshed
    return kept


def sis_mcp(X: np.ndarray, y: np.ndarray, keep: int | None = None,
            gamma: float = MCP_GAMMA, iterate: bool = True) -> RegressionEstimate:
    """Screen to ``keep`` covariates, fit MCP on the survivors.

    With ``iterate=True`` the screening is the iterated variant and the
    penalty level is chosen by the extended BIC over the full candidate
    pool; ``iterate=False`` gives the plain one-pass screen with the
    ordinary BIC.
    """
    p = X.shape[1]
    if iterate:
        kept = isis_screen(X, y, keep, gamma=gamma)
        sub = mcp_fit(X[:, kept], y, gamma=gamma, n_candidates=p)
    else:
        kept = sis_screen(X, y, keep)
        sub = mcp_fit(X[:, kept], y, gamma=gamma)
    coef = np.zeros(p)
    coef[kept] = sub.coefficients
    return _make_estimate(sub.intercept, coef, sub.sigma2)


def impute_covariate(row: np.ndarray, k: int, y_h: float, est: RegressionEstimate,
                     m_k: float, v_k: float, rng: np.random.Generator) -> float:
    """Draw covariate k of one row given its neighbors and the response.

    Combines the covariate-model conditional N(m_k, v_k) with the
    regression likelihood by precision weighting:
    1/v* = 1/v_k + beta_k^2 / sigma2 and
    mu* = v* (m_k / v_k + beta_k * partial_residual / sigma2).
    A zero beta_k reduces exactly to the covariate-model conditional.
    """
    beta_k = float(est.coefficients[k])
    if beta_k == 0.0:
        return m_k + math.sqrt(v_k) * rng.standard_normal()
    partial = y_h - est.intercept - (row @ est.coefficients - row[k] * beta_k)
    prec = 1.0 / v_k + beta_k * beta_k / est.sigma2
    v_star = 1.0 / prec
    mu_star = v_star * (m_k / v_k + beta_k * partial / est.sigma2)
    return mu_star + math.sqrt(v_star) * rng.standard_normal()


@dataclass(frozen=True)
class SelectionReport:
    """Per-variable inclusion counts over the post-burn-in window."""

    counts: np.ndarray
    window: int
    threshold: int
    selected: frozenset

    def __post_init__(self):
        expect = frozenset(np.flatnonzero(self.counts >= self.threshold).tolist())
        if self.selected != expect:
            raise ValueError("selected set disagrees with counts")


def selection_report(trace: ChainTrace, p: int, window: int = SELECT_WINDOW,
                     threshold: int = SELECT_THRESHOLD) -> SelectionReport:
    """Variables appearing >= threshold times in the last ``window`` iterations."""
    payloads = trace.payload_matrix()[-window:]
    counts = (payloads[:, 1 : p + 1] != 0.0).sum(axis=0)
    selected = frozenset(np.flatnonzero(counts >= threshold).tolist())
    return SelectionReport(counts, window, threshold, selected)


@dataclass
class RegressionState:
    est: RegressionEstimate
    graph: ggm.GraphEstimate


class SparseRegressionModel:
    """ICC model over blocks (beta, sigma2, covariate graph)."""

    def __init__(self, y: np.ndarray, keep: int | None = None,
                 gamma: float = MCP_GAMMA, q: float = ggm.DEFAULT_Q,
                 cap: int | None = None):
        self.y = np.asarray(y, dtype=float)
        self.keep = keep
        self.gamma = gamma
        self._ggm = ggm.GgmModel(cap=cap, q=q)
        self.blocks = [
            BlockSpec("beta", 0, 1),
            BlockSpec("sigma2", 0, 2),
            BlockSpec("graph", 0, 3),
        ]

    def initial_state(self, filled: IncompleteMatrix) -> RegressionState:
        p = filled.shape[1]
        empty = ggm.GraphEstimate(np.zeros((p, p), dtype=bool), np.zeros((p, p)), p - 1)
        return RegressionState(_make_estimate(0.0, np.zeros(p), 1.0), empty)

    def update_block(self, name: str, filled: IncompleteMatrix,
                     state: RegressionState) -> RegressionState:
        X = filled.imputed
        if name == "beta":
            est = sis_mcp(X, self.y, self.keep, self.gamma)
            est = _make_estimate(est.intercept, est.coefficients, state.est.sigma2)
            return RegressionState(est, state.graph)
        if name == "sigma2":
            est = state.est
            resid = self.y - est.predict(X)
            sigma2 = estimate_sigma2(resid, len(est.support))
            return RegressionState(
                _make_estimate(est.intercept, est.coefficients, sigma2), state.graph
            )
        if name == "graph":
            return RegressionState(state.est, self._ggm.estimate(filled))
        raise KeyError(name)

    def impute(self, filled: IncompleteMatrix, state: RegressionState,
               rng: np.random.Generator) -> IncompleteMatrix:
        if filled.is_complete:
            return filled
        cur = np.array(filled.imputed, dtype=float)
        xbar = cur.mean(axis=0)
        S = np.cov(cur, rowvar=False, ddof=1)
        table = ggm.column_conditionals(xbar, S, state.graph)
        rows, cols = np.where(~filled.mask)
        for i in np.unique(rows):
            for k in np.sort(cols[rows == i]):
                params = ggm.conditional_params(cur[i], k, xbar, table)
                cur[i, k] = impute_covariate(
                    cur[i], k, self.y[i], state.est, params.mean, params.variance, rng
                )
        return filled.with_overlay(cur)

    def pack(self, state: RegressionState) -> np.ndarray:
        return np.concatenate([state.est.beta_full, [state.est.sigma2]])


@dataclass(frozen=True)
class RegressionFit:
    trace: ChainTrace
    beta_average: np.ndarray  # intercept-first, length p + 1
    report: SelectionReport


def icc_regression(data: IncompleteMatrix, y: np.ndarray, cfg: EngineConfig,
                   keep: int | None = None, gamma: float = MCP_GAMMA,
                   q: float = ggm.DEFAULT_Q,
                   threshold: int = SELECT_THRESHOLD) -> RegressionFit:
    """Full ICC run: averaged coefficients plus the frequency-based selection."""
    model = SparseRegressionModel(y, keep=keep, gamma=gamma, q=q)
    trace = run_icc(model, data, cfg)
    p = data.shape[1]
    window = cfg.iterations - cfg.burn_in
    beta_avg = chain_average(trace)[: p + 1]
    report = selection_report(trace, p, window=window, threshold=threshold)
    return RegressionFit(trace, beta_avg, report)
