"""Polyharmonic (thin-plate) interpolation on flat coordinate charts.

Green's functions of the squared-Laplacian energy for r = |s - t|:

    d = 1:  r^3 / 12
    d = 2:  r^2 log(r) / (8 pi), value 0 at r = 0
    d = 3:  -r / (8 pi)

Higher chart dimensions are rejected: the d >= 4 kernels are singular at
zero and pointwise evaluation stops being well posed.

The smoothed interpolant g(s) = sum_j a_j G(|s - s_j|) + b0 + b . s is the
solution of

    (G + lam I) a + X b = y,    X' a = 0,

solved in block form: first b from the projected normal equations, then a
by back-substitution. Both identities then hold to solver precision by
construction, for every lam >= 0.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DataError, NumericalError, RankDeficientError

__all__ = ["TpsModel", "green_kernel", "tps_fit", "tps_eval"]


def green_kernel(r, d):
    """Green's function of the squared Laplacian at distance r in d dims."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise DataError("distances must be nonnegative")
    if d == 1:
        return r**3 / 12.0
    if d == 2:
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = r[pos] ** 2 * np.log(r[pos]) / (8.0 * np.pi)
        return out
    if d == 3:
        return -r / (8.0 * np.pi)
    raise DataError(f"green_kernel supports d in {{1, 2, 3}}, got d={d}")


@dataclass(frozen=True)
class TpsModel:
    """Fitted kernel + affine expansion. centers (M, d), a (M,), b (d+1,)."""

    centers: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lam: float
    dim: int


def _pairwise_distances(left, right):
    diff = left[:, None, :] - right[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def tps_fit(centers, values, lam=0.0):
    """Fit the kernel-plus-affine system at the given smoothing level."""
    centers = np.ascontiguousarray(np.asarray(centers, dtype=np.float64))
    if centers.ndim != 2:
        raise DataError("centers must be a 2-d array (M, d)")
    m, d = centers.shape
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.shape[0] != m:
        raise DataError(f"got {values.shape[0]} values for {m} centers")
    if not (np.isfinite(centers).all() and np.isfinite(values).all()):
        raise DataError("centers and values must be finite")
    lam = float(lam)
    if lam < 0:
        raise DataError("lam must be nonnegative")
    if m < d + 1:
        raise DataError(f"need at least d+1 = {d + 1} centers, got {m}")

    dist = _pairwise_distances(centers, centers)
    if lam == 0.0:
        off = dist + np.eye(m)
        if np.any(off == 0.0):
            raise DataError("duplicate centers are singular at lam = 0")
    gram = green_kernel(dist, d) + lam * np.eye(m)

    design = np.hstack([np.ones((m, 1)), centers])
    svals = np.linalg.svd(design, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise RankDeficientError(
            "affine design is rank deficient (centers lie on a hyperplane)"
        )

    try:
        lu, piv = lu_factor(gram)
        ginv_design = lu_solve((lu, piv), design)
        ginv_y = lu_solve((lu, piv), values)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"kernel system factorization failed: {exc}") from exc
    normal = design.T @ ginv_design
    rhs = design.T @ ginv_y
    try:
        b = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"projected normal equations singular: {exc}") from exc
    a = lu_solve((lu, piv), values - design @ b)
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericalError("non-finite coefficients from the kernel solve")
    coeff_a = a.copy()
    coeff_a.setflags(write=False)
    coeff_b = b.copy()
    coeff_b.setflags(write=False)
    frozen = centers.copy()
    frozen.setflags(write=False)
    return TpsModel(centers=frozen, a=coeff_a, b=coeff_b, lam=lam, dim=d)


def tps_eval(model, query):
    """Evaluate at one point (d,) -> float or a batch (Q, d) -> (Q,)."""
    pts = np.asarray(query, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != model.dim:
        raise DataError(f"query must have trailing dimension {model.dim}")
    if not np.isfinite(pts).all():
        raise DataError("query points must be finite")
    kern = green_kernel(_pairwise_distances(pts, model.centers), model.dim)
    out = kern @ model.a + model.b[0] + pts @ model.b[1:]
    return float(out[0]) if single else out
