"""Complex linear-algebra wrappers and seeded k-means."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or 0 in a.shape:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def hermitian_eig(matrix, rtol: float = 1e-10) -> EigenDecomposition:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues descending.

    Args:
        matrix: square complex (or real symmetric) array.
        rtol: allowed ``||A - A^H||_F / ||A||_F``.

    Raises:
        ValueError: the input is not square or not Hermitian.
    """
    a = _as_matrix(matrix)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"hermitian_eig needs a square matrix, got {a.shape}")
    scale = np.linalg.norm(a)
    if scale > 0 and np.linalg.norm(a - a.conj().T) > rtol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    w, v = np.linalg.eigh(a)
    order = np.argsort(w)[::-1]
    return EigenDecomposition(w[order], v[:, order])


def svd(matrix, full_matrices: bool = False):
    """Return ``(U, s, V)`` with ``A = U diag(s) V^H`` and ``s`` descending.

    Note the third output is ``V`` itself (not ``V^H``), so right singular
    vectors are its columns.
    """
    a = _as_matrix(matrix)
    u, s, vh = np.linalg.svd(a, full_matrices=full_matrices)
    return u, s, vh.conj().T


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-8,
           return_trace: bool = False):
    """Lloyd's algorithm with k-means++ seeding.

    Args:
        points: ``(n, d)`` real coordinates.
        k: number of clusters, ``1 <= k <= n``.
        seed: seeds the k-means++ draws; identical seeds give identical output.
        max_iter: Lloyd iteration cap.
        tol: stop when the relative drop of the within-cluster sum of
            squares falls below this.
        return_trace: also return the objective after every iteration.

    Returns:
        ``(labels, centroids)`` or ``(labels, centroids, trace)``.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must satisfy 1 <= k <= number of points ({n})")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))

    trace = []
    labels = np.zeros(n, dtype=int)
    prev = np.inf
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(dist, axis=1)
        obj = float(dist[np.arange(n), labels].sum())
        trace.append(obj)
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        if np.isfinite(prev) and prev - obj <= tol * max(prev, 1e-300):
            break
        prev = obj
    dist = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(dist, axis=1)
    trace.append(float(dist[np.arange(n), labels].sum()))
    if return_trace:
        return labels, centroids, np.array(trace)
    return labels, centroids
