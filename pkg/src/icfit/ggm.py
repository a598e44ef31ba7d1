"""Gaussian graphical model estimation and neighborhood-based imputation.

The consistency step screens each variable's strongest marginal
correlates (capped at ceil(n/log n)), computes the partial correlation
of every pair given the union of the two screened neighborhoods, Fisher-
transforms it into an edge score, and thresholds the score matrix with a
Benjamini-Hochberg test at q = 0.05.  The imputation step redraws each
missing cell from the normal conditional on its graph neighborhood,
using sample moments of the current overlay; the concentration matrix
itself is never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fast import ATANH_CLAMP, pair_scores
from .core import IncompleteMatrix
from .exceptions import DegenerateColumn, EmptyWindow
from .metrics import bh_reject

DEFAULT_Q = 0.05
RIDGE_EIG_TOL = 1e-10
RIDGE_SCALE = 1e-6
VAR_FLOOR_SCALE = 1e-12


def default_cap(n: int) -> int:
    """Neighborhood size bound ceil(n / log n) (natural log)."""
    return int(math.ceil(n / math.log(n)))


@dataclass(frozen=True)
class GraphEstimate:
    """Adjacency plus the symmetric edge-score matrix behind it."""

    adjacency: np.ndarray
    scores: np.ndarray
    neighborhood_cap: int

    def __post_init__(self):
        adj, sc = self.adjacency, self.scores
        if adj.shape != sc.shape or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency and scores must be square and matching")
        if not np.array_equal(adj, adj.T) or np.diag(adj).any():
            raise ValueError("adjacency must be symmetric with empty diagonal")
        if not np.all(np.isfinite(sc)) or not np.array_equal(sc, sc.T):
            raise ValueError("scores must be finite and symmetric")
        if int(adj.sum(axis=1).max(initial=0)) > self.neighborhood_cap:
            raise ValueError("a neighborhood exceeds the cap")

    @property
    def p(self) -> int:
        return self.adjacency.shape[0]

    def neighborhood(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[j])


@dataclass(frozen=True)
class ConditionalNormalParams:
    mean: float
    variance: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("variance must be positive")


def screen_neighborhoods(data: np.ndarray, cap: int | None = None) -> list[np.ndarray]:
    """Per-node candidate sets: the ``cap`` strongest absolute correlates."""
    n, p = data.shape
    if n < 3:
        raise ValueError("need at least 3 rows to screen")
    if cap is None:
        cap = default_cap(n)
    if cap < 1:
        raise ValueError("cap must be >= 1")
    sd = data.std(axis=0)
    for j in range(p):
        if sd[j] == 0.0:
            raise DegenerateColumn(j)
    corr = np.corrcoef(data, rowvar=False)
    out = []
    for j in range(p):
        a = np.abs(corr[j]).copy()
        a[j] = -np.inf
        order = np.argsort(-a, kind="stable")
        out.append(np.sort(order[: min(cap, p - 1)]))
    return out


def psi_scores(data: np.ndarray, neighborhoods: list[np.ndarray],
               cap: int | None = None) -> np.ndarray:
    """Symmetric matrix of Fisher-transformed pairwise partial correlations.

    score(i, j) = sqrt(n - |S| - 3) * atanh(r) where r is the partial
    correlation of columns i and j given the union S of their screened
    neighborhoods (truncated to the cap).  Computed once per unordered
    pair, so symmetry is exact.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if cap is None:
        cap = max((len(nb) for nb in neighborhoods), default=1)
    nbr_len = np.array([len(nb) for nb in neighborhoods], dtype=np.int64)
    nbrs = np.zeros((p, max(1, int(nbr_len.max(initial=1)))), dtype=np.int64)
    for j, nb in enumerate(neighborhoods):
        nbrs[j, : len(nb)] = nb
    cov = np.cov(data, rowvar=False, ddof=1)
    sd = np.sqrt(np.diag(cov))
    if np.any(sd == 0.0):
        raise DegenerateColumn(int(np.flatnonzero(sd == 0.0)[0]))
    corr_abs = np.abs(cov / np.outer(sd, sd))
    return pair_scores(cov, corr_abs, nbrs, nbr_len, n, int(cap))


def marginal_fisher_score(x: np.ndarray, y: np.ndarray) -> float:
    """sqrt(n-3) * atanh(r) for a plain bivariate correlation."""
    n = len(x)
    r = float(np.corrcoef(x, y)[0, 1])
    r = min(max(r, -ATANH_CLAMP), ATANH_CLAMP)
    return math.sqrt(n - 3) * math.atanh(r)


def threshold_graph(scores: np.ndarray, q: float = DEFAULT_Q,
                    cap: int | None = None) -> GraphEstimate:
    """Keep edges whose scores survive BH FDR control under a N(0,1) null."""
    p = scores.shape[0]
    iu = np.triu_indices(p, k=1)
    z = np.abs(scores[iu])
    pvals = np.array([math.erfc(v / math.sqrt(2.0)) for v in z])
    reject = bh_reject(pvals, q)
    adj = np.zeros((p, p), dtype=bool)
    adj[iu[0][reject], iu[1][reject]] = True
    adj |= adj.T
    if cap is None:
        cap = p - 1
    _enforce_cap(adj, scores, cap)
    return GraphEstimate(adj, np.asarray(scores, dtype=float), cap)


def _enforce_cap(adj: np.ndarray, scores: np.ndarray, cap: int) -> None:
    """Drop the weakest edges at nodes whose degree exceeds the cap."""
    deg = adj.sum(axis=1)
    if deg.max(initial=0) <= cap:
        return
    ii, jj = np.where(np.triu(adj, k=1))
    order = np.argsort(np.abs(scores[ii, jj]), kind="stable")
    for k in order:
        i, j = ii[k], jj[k]
        if deg[i] > cap or deg[j] > cap:
            adj[i, j] = adj[j, i] = False
            deg[i] -= 1
            deg[j] -= 1


def _ridge_solve(S_ww: np.ndarray, S_jw: np.ndarray) -> np.ndarray:
    """Solve S_ww x = S_jw, adding a ridge when the matrix is near singular."""
    m = S_ww.shape[0]
    eigmin = np.linalg.eigvalsh(S_ww)[0]
    if eigmin < RIDGE_EIG_TOL:
        S_ww = S_ww + RIDGE_SCALE * (np.trace(S_ww) / m) * np.eye(m)
    return np.linalg.solve(S_ww, S_jw)


def column_conditionals(xbar: np.ndarray, S: np.ndarray,
                        graph: GraphEstimate) -> dict[int, tuple]:
    """Per-column (omega, regression coefs, conditional variance) tables.

    The tables depend only on the moments and the graph, so one
    computation per sweep serves every row.
    """
    out = {}
    for j in range(graph.p):
        omega = graph.neighborhood(j)
        if len(omega) > graph.neighborhood_cap:
            keep = np.argsort(-np.abs(graph.scores[j, omega]), kind="stable")
            omega = np.sort(omega[keep[: graph.neighborhood_cap]])
        if len(omega) == 0:
            out[j] = (omega, np.empty(0), max(S[j, j], VAR_FLOOR_SCALE))
            continue
        coef = _ridge_solve(S[np.ix_(omega, omega)], S[omega, j])
        var = float(S[j, j] - S[omega, j] @ coef)
        var = max(var, VAR_FLOOR_SCALE * float(S[j, j]))
        out[j] = (omega, coef, var)
    return out


def conditional_params(row: np.ndarray, j: int, xbar: np.ndarray,
                       table: dict[int, tuple]) -> ConditionalNormalParams:
    """Mean/variance of column j given the row's neighborhood values."""
    omega, coef, var = table[j]
    if len(omega) == 0:
        return ConditionalNormalParams(float(xbar[j]), var)
    mean = float(xbar[j] + coef @ (row[omega] - xbar[omega]))
    return ConditionalNormalParams(mean, var)


def impute_ggm(data: IncompleteMatrix, graph: GraphEstimate,
               rng: np.random.Generator) -> IncompleteMatrix:
    """Redraw every missing cell from its neighborhood-conditional normal.

    Sample moments come from the current overlay, computed once per
    sweep; within a row the cells are imputed in column order, each
    conditioning on the freshest values.
    """
    if data.is_complete:
        return data
    cur = np.array(data.imputed, dtype=float)
    xbar = cur.mean(axis=0)
    S = np.cov(cur, rowvar=False, ddof=1)
    table = column_conditionals(xbar, S, graph)
    rows, cols = np.where(~data.mask)
    for i in np.unique(rows):
        for j in np.sort(cols[rows == i]):
            params = conditional_params(cur[i], j, xbar, table)
            cur[i, j] = params.mean + math.sqrt(params.variance) * rng.standard_normal()
    return data.with_overlay(cur)


def average_psi(score_matrices, window: int | None = None) -> np.ndarray:
    """Entrywise mean of the last ``window`` score matrices (all if None)."""
    mats = list(score_matrices)
    if window is not None:
        mats = mats[-window:]
    if not mats:
        raise EmptyWindow("no score matrices in the averaging window")
    return np.mean(np.array(mats), axis=0)


def payload_from_scores(scores: np.ndarray) -> np.ndarray:
    p = scores.shape[0]
    return scores[np.triu_indices(p, k=1)]


def scores_from_payload(payload: np.ndarray, p: int) -> np.ndarray:
    out = np.zeros((p, p))
    iu = np.triu_indices(p, k=1)
    out[iu] = payload
    return out + out.T


class GgmModel:
    """IC model: graph-screening consistency step + neighborhood imputation."""

    def __init__(self, cap: int | None = None, q: float = DEFAULT_Q):
        self.cap = cap
        self.q = q

    def _cap_for(self, n: int) -> int:
        return self.cap if self.cap is not None else default_cap(n)

    def estimate(self, filled: IncompleteMatrix) -> GraphEstimate:
        X = filled.imputed
        cap = self._cap_for(X.shape[0])
        neighborhoods = screen_neighborhoods(X, cap)
        scores = psi_scores(X, neighborhoods, cap)
        return threshold_graph(scores, self.q, cap)

    def impute(self, filled: IncompleteMatrix, graph: GraphEstimate,
               rng: np.random.Generator) -> IncompleteMatrix:
        return impute_ggm(filled, graph, rng)

    def pack(self, graph: GraphEstimate) -> np.ndarray:
        return payload_from_scores(graph.scores)
