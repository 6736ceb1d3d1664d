"""Neighborhood construction and local tangent-space estimation.

Neighborhoods are fixed-size: the K closest points in Euclidean metric,
always counting the point itself first at distance zero. Ties are broken
by smaller index, and distances are computed from explicit coordinate
differences (never the expanded inner-product form) so exact ties stay
exact and that rule means something. A variable-K / fixed-radius scheme
would be the natural alternative for stability but there is no principled
way to couple the radius to the sample size, so only fixed K is provided.

Tangent frames come from PCA of the neighborhood displacement Gram matrix.
The coordinate columns are eigenvectors scaled by sqrt-eigenvalue, which
makes them actual projected coordinates in isometric units: their pairwise
distances equal the pairwise distances of the orthogonal projections onto
the fitted subspace.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import PointCloud
from .errors import DataError, RankDeficientError

__all__ = [
    "NeighborhoodIndex",
    "TangentFrameEntry",
    "knn",
    "local_gram",
    "tangent_frame",
    "trimmed_tangent_frame",
]


@dataclass(frozen=True)
class NeighborhoodIndex:
    """Per-point neighbor lists and displacement stacks.

    indices[i] lists the K neighborhood members of point i, self first,
    then nondecreasing distance with index tie-break. displacements[i, j]
    is points[indices[i, j]] - points[i].
    """

    indices: np.ndarray
    displacements: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        disp = np.asarray(self.displacements, dtype=np.float64)
        if idx.ndim != 2 or disp.shape[:2] != idx.shape:
            raise DataError("inconsistent neighborhood arrays")
        idx.setflags(write=False)
        disp.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "displacements", disp)

    @property
    def k(self):
        return self.indices.shape[1]

    @property
    def n_points(self):
        return self.indices.shape[0]


def _order_candidates(candidates, dist2):
    # nondecreasing distance, ties by smaller index
    return candidates[np.lexsort((candidates, dist2))]


def _row_neighbors(i, candidates, dist2, k):
    ordered = _order_candidates(candidates, dist2)
    ordered = ordered[ordered != i]
    return np.concatenate(([i], ordered[: k - 1]))


def _brute_rows(points, k, chunk=256):
    n_pts = points.shape[0]
    indices = np.empty((n_pts, k), dtype=np.int64)
    for start in range(0, n_pts, chunk):
        stop = min(start + chunk, n_pts)
        diffs = points[start:stop, None, :] - points[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diffs, diffs)
        for row, i in enumerate(range(start, stop)):
            d2 = dist2[row]
            if k == n_pts:
                candidates = np.arange(n_pts)
            else:
                part = np.argpartition(d2, k - 1)[:k]
                # pull in every point tied with the k-th distance so the
                # index rule, not argpartition's whim, settles the boundary
                candidates = np.flatnonzero(d2 <= d2[part].max())
            indices[i] = _row_neighbors(i, candidates, d2[candidates], k)
    return indices


def _shell_offsets(ring, n_dim):
    if ring == 0:
        yield (0,) * n_dim
        return
    rng = range(-ring, ring + 1)
    for offset in itertools.product(rng, repeat=n_dim):
        if max(abs(o) for o in offset) == ring:
            yield offset


def _grid_rows(points, k):
    """Uniform-grid accelerator; produces exactly the brute-force result."""
    n_pts, n_dim = points.shape
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    cells = max(1, int(round((n_pts / 4.0) ** (1.0 / n_dim))))
    width = np.where(span > 0, span / cells, 1.0)
    ids = np.clip(((points - lo) / width).astype(np.int64), 0, cells - 1)
    buckets = {}
    for idx, key in enumerate(map(tuple, ids)):
        buckets.setdefault(key, []).append(idx)
    min_width = float(width.min())

    indices = np.empty((n_pts, k), dtype=np.int64)
    for i in range(n_pts):
        center = ids[i]
        collected = []
        ring = 0
        while True:
            for offset in _shell_offsets(ring, n_dim):
                cell = tuple(center[a] + offset[a] for a in range(n_dim))
                if any(c < 0 or c >= cells for c in cell):
                    continue
                collected.extend(buckets.get(cell, ()))
            exhausted = ring >= cells
            if len(collected) >= k:
                cand = np.asarray(collected, dtype=np.int64)
                diffs = points[cand] - points[i]
                d2 = (diffs * diffs).sum(axis=1)
                kth = np.partition(d2, k - 1)[k - 1]
                # anything not yet seen sits at distance >= ring * min_width;
                # the >= lets equal-distance ties in the next ring compete
                if exhausted or kth < (ring * min_width) ** 2:
                    indices[i] = _row_neighbors(i, cand, d2, k)
                    break
            elif exhausted:
                raise DataError("grid search exhausted before finding K neighbors")
            ring += 1
    return indices


def knn(cloud, k, method="brute"):
    """Build K-nearest neighborhoods (self included, first).

    method 'brute' is the O(N^2) reference; 'grid' is a uniform-grid
    accelerator constrained to return identical neighborhoods.
    """
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(np.asarray(cloud), 1)
    k = int(k)
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > cloud.n_points:
        raise DataError(f"k={k} exceeds the number of points N={cloud.n_points}")
    points = cloud.points
    if method == "brute":
        indices = _brute_rows(points, k)
    elif method == "grid":
        indices = _grid_rows(points, k)
    else:
        raise ValueError(f"unknown knn method {method!r}")
    displacements = points[indices] - points[:, None, :]
    return NeighborhoodIndex(indices=indices, displacements=displacements)


def local_gram(cloud, nbr, i):
    """Displacement Gram matrix of neighborhood i: G_jk = eps_j . eps_k."""
    eps = nbr.displacements[i]
    gram = eps @ eps.T
    return 0.5 * (gram + gram.T)


@dataclass(frozen=True)
class TangentFrameEntry:
    """PCA tangent coordinates of one neighborhood.

    u has shape (K, d); column k holds the k-th projected coordinate of all
    neighborhood members, scaled so its squared norm equals the k-th Gram
    eigenvalue. spectrum holds all K eigenvalues, decreasing.
    """

    u: np.ndarray
    spectrum: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        spectrum = np.asarray(self.spectrum, dtype=np.float64)
        u.setflags(write=False)
        spectrum.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "spectrum", spectrum)

    @property
    def dim(self):
        return self.u.shape[1]

    @property
    def decay_ratio(self):
        """lambda_{d+1} / lambda_d, the usual 'is d enough' diagnostic."""
        d = self.dim
        if d >= self.spectrum.shape[0] or self.spectrum[d - 1] <= 0:
            return math.nan
        return float(self.spectrum[d] / self.spectrum[d - 1])


_RANK_RTOL = 1e-12


def _fix_signs(vectors):
    out = vectors.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        scale = np.abs(v).max()
        if scale == 0:
            continue
        nonzero = np.flatnonzero(np.abs(v) > 1e-12 * scale)
        if nonzero.size and v[nonzero[0]] < 0:
            out[:, col] = -v
    return out


def tangent_frame(gram, d):
    """Tangent coordinates from the eigendecomposition of a local Gram matrix.

    Raises RankDeficientError when the numerical rank of the Gram matrix
    (eigenvalues above 1e-12 of the largest) is below d. Eigenvector signs
    follow a first-nonzero-entry-positive convention for reproducibility.
    """
    gram = np.asarray(gram, dtype=np.float64)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram must be square")
    k = gram.shape[0]
    if not 1 <= d <= k:
        raise ValueError(f"d must lie in [1, {k}], got {d}")
    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = eigvals[::-1]
    eigvecs = eigvecs[:, ::-1]
    lam_max = max(float(eigvals[0]), 0.0)
    rank = int(np.sum(eigvals > _RANK_RTOL * lam_max)) if lam_max > 0 else 0
    if rank < d:
        raise RankDeficientError(
            f"neighborhood has numerical rank {rank} < d={d}", rank=rank
        )
    vectors = _fix_signs(eigvecs[:, :d])
    u = vectors * np.sqrt(np.clip(eigvals[:d], 0.0, None))
    return TangentFrameEntry(u=u, spectrum=eigvals)


def trimmed_tangent_frame(cloud, nbr, i, d, trim_fraction):
    """Tangent frame after discarding the worst off-subspace neighbors.

    Fits PCA once, drops the ceil(trim_fraction * K) members with largest
    orthogonal residual (never the self point), and refits once. Returns
    (entry, kept) where kept holds the surviving within-neighborhood
    positions; entry.u rows correspond to kept.
    """
    if not 0.0 <= trim_fraction < 0.5:
        raise ValueError("trim_fraction must lie in [0, 0.5)")
    eps = nbr.displacements[i]
    k = eps.shape[0]
    drop = math.ceil(trim_fraction * k)
    if k - drop < d + 1:
        raise DataError(
            f"trimming {drop} of {k} neighbors leaves fewer than d+1={d + 1} points"
        )
    entry = tangent_frame(eps @ eps.T, d)
    if drop == 0:
        return entry, np.arange(k)
    norms2 = (eps * eps).sum(axis=1)
    resid2 = np.clip(norms2 - (entry.u**2).sum(axis=1), 0.0, None)
    # largest residual first, index ascending on ties
    order = np.lexsort((np.arange(k), -resid2))
    dropped = set()
    for pos in order:
        if pos == 0:
            continue
        dropped.add(int(pos))
        if len(dropped) == drop:
            break
    kept = np.array([p for p in range(k) if p not in dropped], dtype=np.int64)
    trimmed = eps[kept]
    return tangent_frame(trimmed @ trimmed.T, d), kept
