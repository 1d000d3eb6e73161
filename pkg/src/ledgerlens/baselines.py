"""Comparison detectors: PCA reconstruction error and Local Outlier Factor.

Both consume the same one-hot matrix as the autoencoder. PCA diagonalises
the covariance with cyclic Jacobi rotations; LOF follows Breunig et al.
exactly, with brute-force distances and tie-inclusive k-neighbourhoods.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError

JACOBI_TOL = 1e-10
JACOBI_MAX_SWEEPS = 100
LRD_SENTINEL = 1e10


def jacobi_eigh(matrix, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` sorted by non-increasing
    eigenvalue, eigenvectors as columns. Sweeps until the off-diagonal
    Frobenius norm is at most ``tol``.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"expected a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise DataError("matrix is not symmetric")
    a = (a + a.T) / 2
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        # summed directly; subtracting the diagonal from the full norm cancels badly
        if np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)) <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # theta ** 2 would overflow
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app, aqq = a[p, p], a[q, q]
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, :] = a[:, p]
                a[q, :] = a[:, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericalError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    axes: np.ndarray          # (D, c), orthonormal columns
    eigenvalues: np.ndarray   # all D eigenvalues, non-increasing

    @property
    def c(self) -> int:
        return self.axes.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.axes @ self.axes.T


def pca_fit(matrix, c: int) -> PcaModel:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("PCA needs a 2-D matrix")
    n, d = x.shape
    if not 1 <= c < d:
        raise DataError(f"component count c={c} must satisfy 1 <= c < D={d}")
    if n <= c:
        raise DataError(f"PCA with c={c} needs more than {c} rows, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    vals, vecs = jacobi_eigh(cov)
    return PcaModel(mean, vecs[:, :c].copy(), vals)


def pca_score(model: PcaModel, rows) -> np.ndarray | float:
    """Squared residual of each row outside the retained principal subspace."""
    r = np.asarray(rows, dtype=np.float64)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    if r.shape[1] != model.mean.size:
        raise DataError(f"rows have {r.shape[1]} columns, model expects {model.mean.size}")
    centered = r - model.mean
    resid = centered - (centered @ model.axes) @ model.axes.T
    out = np.einsum("ij,ij->i", resid, resid)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class LofConfig:
    k: int = 50


def _sq_norms(x: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", x, x)


def _distances(x: np.ndarray, norms: np.ndarray, rows: slice) -> np.ndarray:
    sq = norms[rows, None] + norms[None, :] - 2.0 * (x[rows] @ x.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def lof_scores(matrix, config: LofConfig | int = LofConfig(), chunk: int = 512) -> np.ndarray:
    """Local Outlier Factor of every row.

    The k-neighbourhood holds every other row within the k-distance, so it
    may exceed k under ties. When all reachability distances of a row are
    zero (duplicates) its density is capped at a large finite sentinel.
    Sums use ``math.fsum`` so results do not depend on summation order.
    Squared distances are formed as ``|x|^2 + |y|^2 - 2 x.y``, which is exact
    for small-integer (e.g. one-hot) data.
    """
    k = config.k if isinstance(config, LofConfig) else int(config)
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("LOF needs a 2-D matrix")
    n = x.shape[0]
    if not 1 <= k < n:
        raise DataError(f"LOF needs 1 <= k < N, got k={k}, N={n}")
    norms = _sq_norms(x)
    chunks = [slice(s, min(s + chunk, n)) for s in range(0, n, chunk)]

    kdist = np.empty(n)
    for rows in chunks:
        d = _distances(x, norms, rows)
        d[np.arange(rows.stop - rows.start), np.arange(rows.start, rows.stop)] = np.inf
        kdist[rows] = np.partition(d, k - 1, axis=1)[:, k - 1]

    def neighbourhoods(rows):
        d = _distances(x, norms, rows)
        local = np.arange(rows.stop - rows.start)
        d[local, np.arange(rows.start, rows.stop)] = np.inf
        return d, d <= kdist[rows, None]

    lrd = np.empty(n)
    for rows in chunks:
        d, mask = neighbourhoods(rows)
        reach = np.maximum(d, kdist[None, :])
        for i, p in enumerate(range(rows.start, rows.stop)):
            nb = reach[i, mask[i]]
            total = math.fsum(nb)
            lrd[p] = LRD_SENTINEL if total == 0.0 else 1.0 / (total / nb.size)

    lof = np.empty(n)
    for rows in chunks:
        _, mask = neighbourhoods(rows)
        for i, p in enumerate(range(rows.start, rows.stop)):
            ratios = lrd[mask[i]] / lrd[p]
            lof[p] = math.fsum(ratios) / ratios.size
    return lof
