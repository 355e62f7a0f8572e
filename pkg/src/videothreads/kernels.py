"""Dense linear-algebra and clustering primitives.

Everything here operates on float64 C-order numpy arrays and is pure:
identical inputs (plus seed, where one applies) produce bit-identical
outputs, so the kernels are safe to call from concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClusteringError,
    ConvergenceError,
    NonFiniteError,
    NotSymmetricError,
    ShapeError,
    ZeroNormRowError,
)

SYMMETRY_ATOL = 1e-10
_QL_MAX_SWEEPS = 60


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite 2-D array and return it as float64 C-order."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class EigenDecomposition:
    """Full symmetric eigendecomposition.

    ``eigenvalues`` are sorted ascending; column j of ``eigenvectors`` is the
    unit-norm eigenvector for ``eigenvalues[j]``, with its first non-negligible
    component forced positive so results are reproducible.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eigen(a) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix.

    Householder tridiagonalization followed by implicit-shift QL; dense and
    exact to roughly machine precision for the sizes this library needs
    (a few thousand nodes at most).
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"matrix must be square, got {n}x{m}")
    if n > 1 and not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_ATOL):
        worst = float(np.max(np.abs(a - a.T)))
        raise NotSymmetricError(f"matrix is not symmetric (max |A - A^T| = {worst:.3e})")

    diag, offdiag, q = _householder_tridiagonalize(a)
    _ql_implicit_shift(diag, offdiag, q)

    order = np.argsort(diag, kind="stable")
    values = diag[order]
    vectors = q[:, order]
    _canonical_signs(vectors)
    return EigenDecomposition(values, vectors)


def _householder_tridiagonalize(a: np.ndarray):
    """Reduce symmetric ``a`` to tridiagonal form, accumulating the transform.

    Returns (diag, offdiag, q) with offdiag[i] the coupling between i and i+1
    (offdiag[n-1] unused) and q the orthogonal accumulation such that
    q @ T @ q.T reconstructs ``a``.
    """
    n = a.shape[0]
    t = a.copy()
    q = np.eye(n)
    for k in range(n - 2):
        x = t[k + 1 :, k]
        norm_x = float(np.linalg.norm(x))
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(norm_x, x[0])  # avoids cancellation
        v_norm = float(np.linalg.norm(v))
        if v_norm == 0.0:
            continue
        v /= v_norm
        # Apply P = I - 2 v v^T symmetrically to the trailing block.
        t[k + 1 :, k:] -= 2.0 * np.outer(v, v @ t[k + 1 :, k:])
        t[:, k + 1 :] -= 2.0 * np.outer(t[:, k + 1 :] @ v, v)
        q[:, k + 1 :] -= 2.0 * np.outer(q[:, k + 1 :] @ v, v)
    diag = np.diag(t).copy()
    offdiag = np.zeros(n)
    if n > 1:
        sub = np.diag(t, -1)
        sup = np.diag(t, 1)
        offdiag[: n - 1] = 0.5 * (sub + sup)  # rounding left tiny asymmetry
    return diag, offdiag, q


def _ql_implicit_shift(d: np.ndarray, e: np.ndarray, z: np.ndarray) -> None:
    """QL iterations with implicit Wilkinson shifts on a tridiagonal matrix.

    ``d`` and ``e`` are updated in place; accumulated rotations are applied to
    the columns of ``z``. On return ``d`` holds the eigenvalues (unordered)
    and the columns of ``z`` the matching eigenvectors.
    """
    n = d.size
    if n <= 1:
        return
    eps = np.finfo(np.float64).eps
    for l in range(n):
        for sweep in range(_QL_MAX_SWEEPS + 1):
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            if sweep == _QL_MAX_SWEEPS:
                raise ConvergenceError(f"QL failed to converge for eigenvalue {l}")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            broke_down = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    broke_down = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                col = z[:, i + 1].copy()
                z[:, i + 1] = s * z[:, i] + c * col
                z[:, i] = c * z[:, i] - s * col
            if broke_down:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0


def _canonical_signs(vectors: np.ndarray) -> None:
    """Flip eigenvector columns so the first non-negligible entry is positive."""
    n = vectors.shape[1]
    for j in range(n):
        col = vectors[:, j]
        threshold = 1e-12 * max(float(np.max(np.abs(col))), 1e-300)
        nz = np.flatnonzero(np.abs(col) > threshold)
        lead = nz[0] if nz.size else 0
        if col[lead] < 0.0:
            vectors[:, j] = -col


def cosine_similarity_matrix(x) -> np.ndarray:
    """Pairwise cosine similarities between the rows of ``x``.

    Output is exactly symmetric with a unit diagonal and entries clipped to
    [-1, 1]; a zero-norm row raises ZeroNormRowError naming the row.
    """
    x = as_matrix(x, "x")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormRowError(int(zero[0]), "x")
    unit = x / norms[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.clip(sim, -1.0, 1.0, out=sim)
    np.fill_diagonal(sim, 1.0)
    return sim


@dataclass(frozen=True)
class KMeansResult:
    """Lloyd's algorithm output: per-point labels, centroids, final inertia.

    For the cosine metric, points are L2-normalized up front and centroids
    are means in that normalized space.
    """

    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def kmeans(points, k: int, metric: str = "euclidean", seed: int = 0,
           max_iter: int = 100, n_init: int = 8) -> KMeansResult:
    """Deterministic k-means with k-means++ seeding.

    metric="euclidean" minimizes within-cluster squared distance;
    metric="cosine" assigns by maximum cosine similarity on L2-normalized
    points (inertia is the summed cosine distance). Each restart runs Lloyd
    iterations to an assignment fixpoint or ``max_iter``; the best of
    ``n_init`` seeded restarts (lowest inertia) is returned.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if n == 0:
        raise ClusteringError("cannot cluster an empty point set")
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} must be in [1, {n}]")
    if max_iter < 1:
        raise ClusteringError(f"max_iter={max_iter} must be >= 1")
    if n_init < 1:
        raise ClusteringError(f"n_init={n_init} must be >= 1")
    if metric not in ("euclidean", "cosine"):
        raise ClusteringError(f"unknown metric {metric!r}")

    if metric == "cosine":
        norms = np.linalg.norm(pts, axis=1)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ZeroNormRowError(int(zero[0]), "points")
        pts = pts / norms[:, None]

    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(n_init):
        result = _lloyd_once(pts, k, metric, rng, max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _lloyd_once(pts: np.ndarray, k: int, metric: str, rng: np.random.Generator,
                max_iter: int, history: list | None = None) -> KMeansResult:
    centroids = _kmeanspp_seeds(pts, k, rng)
    assignments = _assign(pts, centroids, metric)
    if history is not None:
        history.append(_inertia(pts, centroids, assignments, metric))
    for _ in range(max_iter):
        centroids = _cluster_means(pts, assignments, k, centroids)
        new_assignments = _assign(pts, centroids, metric)
        if history is not None:
            history.append(_inertia(pts, centroids, new_assignments, metric))
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    return KMeansResult(assignments, centroids, _inertia(pts, centroids, assignments, metric))


def _kmeanspp_seeds(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = rng.integers(n)
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total == 0.0:
            chosen[i] = rng.integers(n)
        else:
            chosen[i] = rng.choice(n, p=d2 / total)
        d2 = np.minimum(d2, np.sum((pts - pts[chosen[i]]) ** 2, axis=1))
    return pts[chosen].copy()


def _assign(pts: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        return np.argmin(d2, axis=1)
    sims = _cosine_to_centroids(pts, centroids)
    return np.argmax(sims, axis=1)


def _cosine_to_centroids(pts: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Points are unit rows here; a degenerate zero centroid gets similarity
    # below any cosine so no point prefers it.
    norms = np.linalg.norm(centroids, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    sims = pts @ (centroids / safe[:, None]).T
    sims[:, norms == 0.0] = -2.0
    return sims


def _cluster_means(pts: np.ndarray, assignments: np.ndarray, k: int,
                   previous: np.ndarray) -> np.ndarray:
    centroids = previous.copy()
    for c in range(k):
        members = assignments == c
        if members.any():
            centroids[c] = pts[members].mean(axis=0)
    return centroids


def _inertia(pts: np.ndarray, centroids: np.ndarray, assignments: np.ndarray,
             metric: str) -> float:
    picked = centroids[assignments]
    if metric == "euclidean":
        return float(np.sum((pts - picked) ** 2))
    sims = _cosine_to_centroids(pts, centroids)
    chosen = sims[np.arange(pts.shape[0]), assignments]
    chosen = np.where(chosen < -1.0, 0.0, chosen)  # zero-centroid convention
    return float(np.sum(1.0 - chosen))
