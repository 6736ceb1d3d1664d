"""Out-of-sample evaluation and classification on top of fitted values.

A query point is handled entirely locally: take its K nearest training
points, build tangent coordinates by PCA of the displacements measured
from the query itself (so the query sits exactly at the chart origin), and
evaluate a local model of the fitted values at that origin.

Local models:
  local_tps     kernel-plus-affine interpolant in the tangent chart,
                lightly ridged for conditioning (chart dim at most 3)
  local_linear  affine least squares, value = intercept; its 'convex'
                variant is an inverse-distance average, guaranteed to stay
                inside the convex hull of the neighboring values

Classification smooths one indicator per class (a single column for the
binary case) against one shared penalty form and routes class scores
through the same out-of-sample machinery.
"""

from dataclasses import dataclass

import numpy as np

from .data import PointCloud, SplineFit, as_values, min_neighborhood_size
from .errors import DataError
from .hessian import estimate
from .neighbors import tangent_frame
from .solver import fit
from .tps import green_kernel, tps_eval, tps_fit

__all__ = [
    "Prediction",
    "ClassifierModel",
    "predict_oos",
    "classify_fit",
    "classify_scores",
    "classify_predict",
]

METHODS = ("local_tps", "local_linear")
VARIANTS = ("affine", "convex")


@dataclass(frozen=True)
class Prediction:
    """One out-of-sample value plus the local evidence that produced it."""

    value: float
    method: str
    neighborhood: np.ndarray
    tangent_spectrum: np.ndarray
    variant: str | None = None


def _query_vector(cloud, x_star):
    x = np.asarray(x_star, dtype=np.float64).reshape(-1)
    if x.shape[0] != cloud.ambient_dim:
        raise DataError(
            f"query has {x.shape[0]} coordinates, expected {cloud.ambient_dim}"
        )
    if not np.isfinite(x).all():
        raise DataError("query point must be finite")
    return x


def _nearest(cloud, x, k):
    diffs = cloud.points - x[None, :]
    d2 = np.einsum("ij,ij->i", diffs, diffs)
    kth = np.partition(d2, k - 1)[k - 1]
    candidates = np.flatnonzero(d2 <= kth)
    ordered = candidates[np.lexsort((candidates, d2[candidates]))]
    idx = ordered[:k]
    return idx, diffs[idx], np.sqrt(d2[idx])


def _fitted_values(fitted, n):
    values = fitted.fitted if isinstance(fitted, SplineFit) else as_values(fitted, "fitted")
    if values.shape[0] != n:
        raise DataError(f"fitted length {values.shape[0]} does not match N={n}")
    return values


def predict_oos(
    cloud,
    fitted,
    x_star,
    k=12,
    method="local_tps",
    lambda_loc=None,
    variant="affine",
):
    """Predict the smoothed value at an arbitrary feature-space point."""
    if method not in METHODS:
        raise DataError(f"method must be one of {METHODS}, got {method!r}")
    if variant not in VARIANTS:
        raise DataError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if method == "local_tps" and variant != "affine":
        raise DataError("variant applies to local_linear only")
    d = cloud.intrinsic_dim
    values = _fitted_values(fitted, cloud.n_points)
    x = _query_vector(cloud, x_star)
    if not d + 2 <= k <= cloud.n_points:
        raise DataError(f"k must lie in [{d + 2}, {cloud.n_points}], got {k}")
    idx, disp, dist = _nearest(cloud, x, k)
    local = values[idx]

    gram = disp @ disp.T
    gram = 0.5 * (gram + gram.T)

    if method == "local_linear" and variant == "convex":
        # no chart needed; report the raw displacement spectrum
        spectrum = np.linalg.eigvalsh(gram)[::-1].copy()
        exact = np.flatnonzero(dist == 0.0)
        if exact.size:
            value = float(local[exact[0]])
        else:
            wts = 1.0 / dist
            wts /= wts.sum()
            value = float(wts @ local)
        spectrum.setflags(write=False)
        return Prediction(
            value=value,
            method=method,
            neighborhood=idx,
            tangent_spectrum=spectrum,
            variant=variant,
        )

    frame = tangent_frame(gram, d)
    centers = frame.u
    origin = np.zeros(d)
    if method == "local_tps":
        if lambda_loc is None:
            kernel = green_kernel(
                np.sqrt(
                    np.maximum(
                        np.einsum("ik,ik->i", centers, centers)[:, None]
                        + np.einsum("jk,jk->j", centers, centers)[None, :]
                        - 2.0 * (centers @ centers.T),
                        0.0,
                    )
                ),
                d,
            )
            lambda_loc = 1e-8 * float(np.abs(kernel).mean())
        model = tps_fit(centers, local, lam=lambda_loc)
        value = tps_eval(model, origin)
    else:
        design = np.hstack([np.ones((k, 1)), centers])
        beta, *_ = np.linalg.lstsq(design, local, rcond=None)
        value = float(beta[0])
    return Prediction(
        value=value,
        method=method,
        neighborhood=idx,
        tangent_spectrum=frame.spectrum,
        variant=variant if method == "local_linear" else None,
    )


@dataclass(frozen=True)
class ClassifierModel:
    """Smoothed class-indicator surfaces over a training cloud.

    scores has one column per class, except the binary case, which keeps a
    single column scoring classes[1] (the larger label).
    """

    cloud: PointCloud
    scores: np.ndarray
    classes: tuple
    lam: float
    k: int


def classify_fit(cloud, labels, lam=1.0, k=12, form=None, solver_tolerance=1e-10):
    """Smooth one indicator per class against a shared penalty form."""
    labels = list(labels)
    if len(labels) != cloud.n_points:
        raise DataError(
            f"got {len(labels)} labels for {cloud.n_points} points"
        )
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise DataError("classification needs at least two classes")
    if form is None:
        form = estimate(cloud, k=k)
    arr = np.array(labels)
    if len(classes) == 2:
        targets = [(arr == classes[1]).astype(np.float64)]
    else:
        targets = [(arr == c).astype(np.float64) for c in classes]
    columns = [
        fit(form, t, lam, solver_tolerance=solver_tolerance).fitted for t in targets
    ]
    scores = np.column_stack(columns)
    scores.setflags(write=False)
    return ClassifierModel(cloud=cloud, scores=scores, classes=classes, lam=lam, k=k)


def _query_matrix(cloud, queries):
    q = np.asarray(queries, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != cloud.ambient_dim:
        raise DataError(f"queries must have trailing dimension {cloud.ambient_dim}")
    return q, single


def classify_scores(model, queries, method="local_linear", variant="affine", k=None):
    """Out-of-sample class scores, one row per query."""
    q, single = _query_matrix(model.cloud, queries)
    k = model.k if k is None else k
    out = np.empty((q.shape[0], model.scores.shape[1]))
    for i in range(q.shape[0]):
        for j in range(model.scores.shape[1]):
            out[i, j] = predict_oos(
                model.cloud,
                model.scores[:, j],
                q[i],
                k=k,
                method=method,
                variant=variant,
            ).value
    return out[0] if single else out


def classify_predict(model, queries, method="local_linear", variant="affine", k=None):
    """Predicted labels; binary ties at score 0.5 go to the smaller class,
    multiclass ties to the class earliest in sort order."""
    q, single = _query_matrix(model.cloud, queries)
    scores = np.atleast_2d(classify_scores(model, q, method=method, variant=variant, k=k))
    if len(model.classes) == 2:
        picks = [model.classes[1] if s > 0.5 else model.classes[0] for s in scores[:, 0]]
    else:
        picks = [model.classes[int(np.argmax(row))] for row in scores]
    return picks[0] if single else picks
