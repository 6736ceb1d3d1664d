"""Shared numerical oracles.

Everything here is computed by a route independent of the code under test:
closed-form solves, brute-force least squares, scipy reference
implementations. Tests compare the library against these, never against
itself.
"""

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import subspace_angles


def affine_align_error(coords, truth):
    """Relative RMS left after the best affine map from coords to truth."""
    n = coords.shape[0]
    design = np.hstack([np.ones((n, 1)), coords])
    sol, *_ = np.linalg.lstsq(design, truth, rcond=None)
    resid = truth - design @ sol
    return float(np.linalg.norm(resid) / np.linalg.norm(truth - truth.mean(axis=0)))


def max_angle_deg(a, b):
    """Largest principal angle between the column spans, in degrees."""
    return float(np.degrees(subspace_angles(a, b).max()))


def second_difference_weights(x):
    # unique 3-point second-derivative rule: moment system [1,dx,dx^2] w = [0,0,2]
    x = np.asarray(x, dtype=np.float64)
    delta = x - x[0]
    vandermonde = np.vstack([np.ones(3), delta, delta**2])
    return np.linalg.solve(vandermonde, np.array([0.0, 0.0, 2.0]))


def natural_cubic(knots, values, probes):
    return CubicSpline(knots, values, bc_type="natural")(probes)


def min_norm_rows(u, pairs):
    """Second-partial functionals solved directly as min-norm least squares.

    The constraint system: annihilate constants and the tangent coordinates,
    hit each quadratic monomial u_a*u_b with 2 (a == b) or 1 (a < b), zero
    on the others.
    """
    k, d = u.shape
    cols = [np.ones(k)] + [u[:, j] for j in range(d)]
    for a, b in pairs:
        cols.append(u[:, a] * u[:, b])
    design = np.column_stack(cols)
    rows = np.empty((len(pairs), k))
    for r, (a, b) in enumerate(pairs):
        target = np.zeros(design.shape[1])
        target[1 + d + r] = 2.0 if a == b else 1.0
        rows[r], *_ = np.linalg.lstsq(design.T, target, rcond=None)
    return rows


def augmented_refit_value(points, d, y, lam, k, query):
    """Predict at query by re-solving the smoother with the query adjoined
    at zero weight. Quadratic cost, so guarded to small clouds; used only to
    cross-check the local out-of-sample path.
    """
    from hesspline.data import PointCloud
    from hesspline.hessian import estimate
    from hesspline.solver import fit_weighted

    n = len(y)
    if n > 200:
        raise ValueError("refit oracle is O(N^2); keep N <= 200")
    cloud = PointCloud(np.vstack([points, query]), d)
    form = estimate(cloud, k=k)
    weights = np.ones(n + 1)
    weights[n] = 0.0
    result = fit_weighted(form, np.append(np.asarray(y, dtype=np.float64), 0.0), weights, lam)
    return float(result.fitted[n])
