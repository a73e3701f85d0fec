"""Spectral meta-learner for regression (SMLR).

Unsupervised aggregation of m base regressors from their predictions on n
unlabelled samples: leading eigenvector of the prediction covariance,
3-means on its absolute entries, and an eigenvector-weighted average of the
members in the cluster with the largest centroid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateSpectrumError
from .numerics import covariance_matrix, kmeans_1d, leading_eigenvector


@dataclass(frozen=True, eq=False)
class SmlrResult:
    mu0: np.ndarray
    strong_set: np.ndarray
    weights: np.ndarray
    combined: np.ndarray
    fallback: str | None = None
    eigenvalue: float | None = None
    centroids: np.ndarray | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0.tolist(),
            "strong_set": self.strong_set.tolist(),
            "weights": self.weights.tolist(),
            "fallback": self.fallback,
            "eigenvalue": self.eigenvalue,
            "centroids": None if self.centroids is None else self.centroids.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _standardize(P: np.ndarray) -> np.ndarray:
    C = P - P.mean(axis=1, keepdims=True)
    sd = np.sqrt(np.einsum("ij,ij->i", C, C))
    out = np.zeros_like(C)
    ok = sd > 0
    out[ok] = C[ok] / sd[ok, None]
    return out


def _uniform(P: np.ndarray, reason: str, mu0=None) -> SmlrResult:
    m = P.shape[0]
    combined = P.sum(axis=0) / m
    return SmlrResult(
        mu0=np.full(m, 1 / np.sqrt(m)) if mu0 is None else mu0,
        strong_set=np.arange(m), weights=np.full(m, 1 / m),
        combined=combined, fallback=reason)


def _aggregate_canonical(P: np.ndarray, matrix: str) -> SmlrResult:
    m = P.shape[0]
    if matrix == "correlation":
        Q = covariance_matrix(_standardize(P))
    elif matrix == "covariance":
        Q = covariance_matrix(P)
    else:
        raise DataError(f"unknown SMLR matrix {matrix!r}")
    try:
        mu0, lam = leading_eigenvector(Q)
    except DegenerateSpectrumError:
        return _uniform(P, "degenerate_spectrum")
    km = kmeans_1d(np.abs(mu0), k=3)
    populated = km.populated
    best = populated[np.argmax(km.centroids[populated])]
    S = km.members(best)
    denom = mu0[S].sum()
    if not denom > 0:
        return _uniform(P, "nonpositive_weight_sum", mu0=mu0)
    num = np.zeros(P.shape[1])
    for i in S:
        num += mu0[i] * P[i]
    weights = np.zeros(m)
    weights[S] = mu0[S] / denom
    return SmlrResult(mu0=mu0, strong_set=S, weights=weights, combined=num / denom,
                      eigenvalue=lam, centroids=km.centroids)


def smlr_aggregate(P, matrix: str = "correlation") -> SmlrResult:
    """Combine the rows of an m x n prediction matrix.

    Parameters
    ----------
    P : array_like, shape (m, n)
        Row i holds base model i's predictions for the n samples.
    matrix : {"correlation", "covariance"}
        Matrix whose leading eigenvector scores the members.  "covariance"
        uses the raw prediction covariance; "correlation" uses the covariance
        of standardised predictions, which ranks members by agreement rather
        than by prediction variance.

    Returns
    -------
    SmlrResult
        Identical members, or a tied leading eigenvalue, fall back to the
        uniform mean with ``fallback`` naming the reason.

    Rows are processed in a canonical (lexicographic) order, so permuting the
    rows of ``P`` permutes ``mu0`` and ``strong_set`` and leaves
    ``combined`` bit-for-bit unchanged.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2 or P.shape[1] < 2:
        raise DataError(f"need at least a 2 x 2 prediction matrix, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise DataError("predictions must be finite")
    m = P.shape[0]
    if np.all(P == P[0]):
        return SmlrResult(mu0=np.full(m, 1 / np.sqrt(m)), strong_set=np.arange(m),
                          weights=np.full(m, 1 / m), combined=P[0].copy(),
                          fallback="identical_members")
    if np.count_nonzero(P.std(axis=1) > 0) < 2:
        raise DataError("SMLR needs at least two non-constant members")

    order = np.lexsort(P.T[::-1])
    res = _aggregate_canonical(P[order], matrix)
    mu0 = np.empty(m)
    mu0[order] = res.mu0
    weights = np.empty(m)
    weights[order] = res.weights
    strong = np.sort(order[res.strong_set])
    return SmlrResult(mu0=mu0, strong_set=strong, weights=weights, combined=res.combined,
                      fallback=res.fallback, eigenvalue=res.eigenvalue,
                      centroids=res.centroids)


def bootstrap_indices(n_train: int, k: int, seed: int) -> list[np.ndarray]:
    """``k`` with-replacement resamples of ``range(n_train)``, each of size ``n_train``."""
    if n_train < 1 or k < 1:
        raise DataError("n_train and k must be positive")
    children = np.random.SeedSequence(seed).spawn(k)
    return [np.random.default_rng(c).integers(0, n_train, size=n_train) for c in children]
