"""Small dense linear-algebra and statistics primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DegenerateSpectrumError

EIG_TOL = 1e-10
EIG_MAX_ITER = 100_000
# relative eigenvalue gap below which the leading eigenvector is not unique
TIE_RTOL = 1e-8


def covariance_matrix(P: np.ndarray) -> np.ndarray:
    """Row covariance of an m x n matrix with the 1/(n-1) normalisation.

    Every entry is an independent dot product of centred rows, so the result
    is exactly symmetric and permuting the rows of ``P`` permutes ``Q``
    without changing any entry.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise DataError("expected a 2-D matrix of predictions")
    m, n = P.shape
    if n < 2:
        raise DataError("covariance needs at least two columns")
    C = P - P.mean(axis=1, keepdims=True)
    Q = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            Q[i, j] = Q[j, i] = np.dot(C[i], C[j]) / (n - 1)
    return Q


def _fix_sign(v: np.ndarray) -> np.ndarray:
    s = v.sum()
    if s < 0:
        return -v
    if s == 0:
        nz = np.flatnonzero(v)
        if nz.size and v[nz[0]] < 0:
            return -v
    return v


def _power(Q, v, shift, norm_q, tol, max_iter):
    v = v / np.linalg.norm(v)
    for _ in range(max_iter):
        w = Q @ v + shift * v
        nw = np.linalg.norm(w)
        if nw == 0:
            return v, 0.0
        v = w / nw
        qv = Q @ v
        lam = float(v @ qv)
        if np.linalg.norm(qv - lam * v) <= tol * norm_q:
            return v, lam
    raise DegenerateSpectrumError(
        f"power iteration did not converge in {max_iter} iterations")


def leading_eigenvector(Q: np.ndarray, tol: float = EIG_TOL,
                        max_iter: int = EIG_MAX_ITER) -> tuple[np.ndarray, float]:
    """Unit eigenvector of the largest eigenvalue of a symmetric matrix.

    Power iteration from the normalised all-ones vector, stopped when
    ``||Qv - lam v|| <= tol * ||Q||_F``.  The sign is fixed so the entries sum
    to a non-negative value.  A deflation pass checks that no other
    eigenvalue is larger or tied; ties raise ``DegenerateSpectrumError``.

    Returns
    -------
    (vector, eigenvalue)
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise DataError("expected a square matrix")
    norm_q = float(np.linalg.norm(Q))
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-14 * max(norm_q, 1.0)):
        raise DataError("matrix is not symmetric")
    m = Q.shape[0]
    if norm_q == 0:
        raise DegenerateSpectrumError("zero matrix has no unique leading eigenvector")
    if m == 1:
        return np.ones(1), float(Q[0, 0])
    off = np.abs(Q).sum(axis=1) - np.abs(np.diag(Q))
    shift = max(0.0, -float(np.min(np.diag(Q) - off)))

    v, lam = _power(Q, np.ones(m), shift, norm_q, tol, max_iter)
    probe = np.random.default_rng(0x5EED).standard_normal(m)
    for _ in range(m):
        D = Q - lam * np.outer(v, v)
        if np.linalg.norm(D) <= tol * norm_q:
            break
        u, lam2 = _power(D, probe, shift + abs(lam), norm_q, tol, max_iter)
        gap = lam - lam2
        if abs(gap) <= TIE_RTOL * max(abs(lam), norm_q):
            raise DegenerateSpectrumError(
                f"leading eigenvalue {lam:.6g} is tied (second {lam2:.6g})")
        if gap > 0:
            break
        # the all-ones start missed the top eigenvector; restart from the one found
        v, lam = _power(Q, u, shift, norm_q, tol, max_iter)
    return _fix_sign(v), lam


@dataclass(frozen=True)
class KMeans1DResult:
    centroids: np.ndarray
    assignment: np.ndarray

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    @property
    def populated(self) -> np.ndarray:
        return np.unique(self.assignment)


def kmeans_1d(values, k: int = 3, max_iter: int = 1000) -> KMeans1DResult:
    """Deterministic 1-D Lloyd k-means.

    Centroids start at evenly spaced quantiles (min, median and max for
    k=3).  Ties in assignment go to the lower centroid, and empty clusters
    keep their previous centroid.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError("k-means needs at least one value")
    if k < 1:
        raise ConfigError("k must be >= 1")
    qs = np.linspace(0, 1, k) if k > 1 else np.array([0.5])
    c = np.quantile(x, qs)
    assign = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(x[:, None] - c[None, :]), axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            sel = x[assign == j]
            if sel.size:
                c[j] = sel.mean()
    return KMeans1DResult(centroids=c, assignment=assign)


@dataclass(frozen=True)
class RidgeModel:
    coef: np.ndarray
    intercept: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> RidgeModel:
    """Ridge regression with an unpenalised intercept (fitted on centred data)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],) or X.shape[0] < 1:
        raise DataError(f"bad ridge inputs: X {X.shape}, y {y.shape}")
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    b = Xc.T @ yc
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise DataError("singular ridge system; use lambda > 0") from exc
    scale = np.linalg.norm(A) * np.linalg.norm(w) + np.linalg.norm(b)
    if scale > 0 and np.linalg.norm(A @ w - b) > 1e-8 * scale:
        raise DataError("ill-conditioned ridge system; use lambda > 0")
    return RidgeModel(coef=w, intercept=float(ym - xm @ w))


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # d x p, orthonormal columns
    explained_variance_ratio: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components


def pca_fit(X: np.ndarray, var_frac: float = 0.95) -> PCAModel:
    """Principal components: the fewest explaining at least ``var_frac`` of the variance."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("PCA needs a 2-D matrix with at least two rows")
    if not 0 < var_frac <= 1:
        raise ConfigError("var_frac must be in (0, 1]")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s ** 2
    if var.sum() == 0 or s[0] <= np.finfo(float).eps * max(X.shape) * np.abs(X).max():
        raise DataError("PCA input has zero variance")
    ratio = var / var.sum()
    rank = int(np.sum(s > s[0] * max(X.shape) * np.finfo(float).eps))
    p = int(np.searchsorted(np.cumsum(ratio), var_frac - 1e-12) + 1)
    p = min(p, rank)
    comps = vt[:p].T.copy()
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(p)])
    comps *= np.where(flip == 0, 1.0, flip)
    return PCAModel(mean=mean, components=comps, explained_variance_ratio=ratio[:p])


def _check_pair(pred, truth):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size != t.size or p.size == 0:
        raise DataError(f"length mismatch or empty input ({p.size} vs {t.size})")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _check_pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def pearson_cc(pred, truth) -> float:
    """Pearson correlation; raises ``DataError`` if either input is constant."""
    p, t = _check_pair(pred, truth)
    pc, tc = p - p.mean(), t - t.mean()
    denom = np.sqrt(np.dot(pc, pc) * np.dot(tc, tc))
    if denom == 0 or not np.isfinite(denom):
        raise DataError("correlation undefined for zero-variance input")
    return float(np.clip(np.dot(pc, tc) / denom, -1.0, 1.0))
