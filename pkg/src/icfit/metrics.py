"""Evaluation: precision-recall curves, selection error rates, autocorrelation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NoTrueEdges


def bh_reject(pvals: np.ndarray, q: float) -> np.ndarray:
    """Benjamini-Hochberg step-up: boolean rejection mask at FDR level q."""
    m = len(pvals)
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(pvals, kind="stable")
    ranked = pvals[order]
    thresh = q * (np.arange(1, m + 1) / m)
    below = np.flatnonzero(ranked <= thresh)
    reject = np.zeros(m, dtype=bool)
    if len(below):
        reject[order[: below[-1] + 1]] = True
    return reject


@dataclass(frozen=True)
class PrCurve:
    """(threshold, precision, recall) triples in decreasing-threshold order."""

    points: tuple
    auc: float


def pr_curve(scores: np.ndarray, truth: np.ndarray) -> PrCurve:
    """Precision-recall sweep over the distinct absolute edge scores.

    Retrieval at threshold t keeps the pairs with |score| >= t.  The AUC
    is the trapezoidal integral over recall, anchored at
    (recall 0, precision 1); precision of an empty retrieval set is 1.
    """
    p = scores.shape[0]
    iu = np.triu_indices(p, k=1)
    s = np.abs(scores[iu])
    t = np.asarray(truth, dtype=bool)[iu]
    n_true = int(t.sum())
    if n_true == 0:
        raise NoTrueEdges("truth adjacency has no edges")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp_cum = np.cumsum(t[order])
    # last index of each distinct threshold value
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    points = []
    for k in last:
        retrieved = k + 1
        tp = int(tp_cum[k])
        points.append((float(s_sorted[k]), tp / retrieved, tp / n_true))

    rec = np.array([0.0] + [pt[2] for pt in points])
    prec = np.array([1.0] + [pt[1] for pt in points])
    auc = float(np.trapezoid(prec, rec))
    return PrCurve(tuple(points), auc)


def selection_metrics(beta_hat: np.ndarray, selected: set, truth_beta: np.ndarray,
                      truth_set: set) -> tuple[float, float, float]:
    """Squared estimation error plus false/negative selection rates.

    err2 includes the intercept coordinate; fsr = |s \\ s*| / |s| with the
    empty-selection convention fsr = 0; nsr = |s* \\ s| / |s*|.
    """
    if not truth_set:
        raise ValueError("truth_set must be nonempty")
    beta_hat = np.asarray(beta_hat, dtype=float)
    truth_beta = np.asarray(truth_beta, dtype=float)
    err2 = float(np.sum((beta_hat - truth_beta) ** 2))
    selected = set(selected)
    truth_set = set(truth_set)
    fsr = len(selected - truth_set) / len(selected) if selected else 0.0
    nsr = len(truth_set - selected) / len(truth_set)
    return err2, fsr, nsr


def lag_autocorrelation(series: np.ndarray, lag: int) -> float:
    """Sample autocorrelation at the given lag; constant series map to 0."""
    x = np.asarray(series, dtype=float)
    if len(x) <= lag + 2:
        raise ValueError("series too short for this lag")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        return 0.0
    return float(xc[:-lag] @ xc[lag:] / denom) if lag > 0 else 1.0
