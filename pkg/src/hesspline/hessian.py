"""Per-point Hessian functionals and the assembled penalty quadratic form.

Each neighborhood yields d(d+1)/2 row functionals that map neighborhood
values to estimates of the second partials at the center, in the local
tangent coordinates. They are built by modified Gram-Schmidt on the design

    [ 1 | u_1 .. u_d | u_a * u_b for a <= b ]

followed by a triangular correction of the quadratic block so that each
row h satisfies, exactly:

    h . 1 = 0,   h . u_k = 0,
    h . (u_a * u_b) = 2 if a == b else 1 for its own pair, 0 for any other.

Those constraints make the rows reproduce every polynomial of degree <= 2
in the tangent coordinates; the correction is algebraically the minimum
norm solution of the constraint system and degenerates to a plain
rescaling whenever the orthogonalized quadratic columns are already
mutually orthogonal.

The global form is the contraction

    H[j, m] = (1/N) sum_i sum_{(a,b)} c_ab * H_(ab),j^(i) * H_(ab),m^(i)

with c_ab = 1 on the diagonal and 2 off it, so f' H f accumulates the full
squared Frobenius norm of the estimated Hessians, both symmetric copies of
each off-diagonal entry counted.

No unit normalization is applied to inputs of the spectral embedding; the
smoothing solver is scale-equivariant and coordinate recovery only needs
the span.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_triangular

from .data import as_values, atomic_write_text, min_neighborhood_size
from .errors import DataError, NumericalError, RankDeficientError
from .neighbors import TangentFrameEntry, knn, tangent_frame, trimmed_tangent_frame

__all__ = [
    "LocalHessian",
    "HessianForm",
    "NullEmbedding",
    "index_pairs",
    "local_hessian",
    "assemble",
    "estimate",
    "quadratic_form",
    "null_embedding",
    "write_coordinate_text",
]

THREADS_ENV = "HESSPLINE_THREADS"


def _thread_count():
    raw = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_points(fn, count):
    threads = _thread_count()
    if threads == 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def index_pairs(d):
    """(a, b) with 0 <= a <= b < d, lexicographic; the row order of LocalHessian."""
    return tuple((a, b) for a in range(d) for b in range(a, d))


@dataclass(frozen=True)
class LocalHessian:
    """Second-partial row functionals for one neighborhood.

    rows has shape (d(d+1)/2, K); rows[r] @ f(neighborhood) estimates the
    (a, b) = pairs[r] second partial of f at the center point.
    """

    rows: np.ndarray
    pairs: tuple

    def apply(self, values):
        return self.rows @ np.asarray(values, dtype=np.float64)


_MGS_RTOL = 1e-10


def _mgs(mat):
    """Modified Gram-Schmidt QR with a relative rank guard per column."""
    n_rows, n_cols = mat.shape
    q = np.empty((n_rows, n_cols))
    r = np.zeros((n_cols, n_cols))
    for j in range(n_cols):
        v = mat[:, j].copy()
        norm0 = np.linalg.norm(v)
        for p in range(j):
            r[p, j] = q[:, p] @ v
            v -= r[p, j] * q[:, p]
        norm = np.linalg.norm(v)
        if norm <= _MGS_RTOL * norm0 or norm == 0.0:
            raise RankDeficientError(
                f"design column {j} is numerically dependent on earlier columns",
                column=j,
            )
        r[j, j] = norm
        q[:, j] = v / norm
    return q, r


def local_hessian(frame, k, d):
    """Build the constrained second-partial rows from a tangent frame."""
    if not isinstance(frame, TangentFrameEntry):
        raise TypeError("frame must be a TangentFrameEntry")
    u = frame.u
    if u.shape != (k, d):
        raise DataError(f"frame shape {u.shape} does not match (K={k}, d={d})")
    pairs = index_pairs(d)
    n_cols = 1 + d + len(pairs)
    if k < n_cols:
        raise DataError(
            f"K={k} is below the full-rank minimum {min_neighborhood_size(d)} for d={d}"
        )
    design = np.empty((k, n_cols))
    design[:, 0] = 1.0
    design[:, 1 : 1 + d] = u
    for offset, (a, b) in enumerate(pairs):
        design[:, 1 + d + offset] = u[:, a] * u[:, b]
    q, r = _mgs(design)
    q_quad = q[:, 1 + d :]
    r_quad = r[1 + d :, 1 + d :]
    targets = np.array([2.0 if a == b else 1.0 for a, b in pairs])
    rows = targets[:, None] * solve_triangular(r_quad, q_quad.T, lower=False)
    rows.setflags(write=False)
    return LocalHessian(rows=rows, pairs=pairs)


@dataclass(frozen=True)
class HessianForm:
    """Assembled N x N sparse symmetric PSD penalty form.

    skipped lists points whose neighborhoods were too degenerate to
    contribute (when assembled under the skip_point policy).
    """

    matrix: sp.csr_matrix
    skipped: tuple = ()
    k: int | None = None

    @property
    def n_points(self):
        return self.matrix.shape[0]

    def trace(self):
        return float(self.matrix.diagonal().sum())


def _resolve_frame(item, nbr, i):
    """frames entries may be None, a TangentFrameEntry, or (entry, positions)."""
    if item is None:
        return None, None
    if isinstance(item, TangentFrameEntry):
        return item, nbr.indices[i]
    entry, positions = item
    return entry, nbr.indices[i][np.asarray(positions, dtype=np.int64)]


def assemble(cloud, nbr, frames, config=None, policy="skip_point"):
    """Contract per-point local Hessians into the global quadratic form.

    frames is a length-N sequence of tangent frames (see _resolve_frame for
    the accepted entry shapes; None marks an already-skipped point). Under
    policy 'skip_point' rank-deficient neighborhoods contribute nothing and
    are reported in the result; under 'fail' the first one raises.
    """
    if policy not in ("skip_point", "fail"):
        raise DataError(f"unknown policy {policy!r}")
    n_pts = cloud.n_points
    d = cloud.intrinsic_dim
    if len(frames) != n_pts:
        raise DataError("frames length does not match the cloud")
    if config is not None and config.k != nbr.k:
        raise DataError(f"config.k={config.k} disagrees with neighborhood K={nbr.k}")
    pairs = index_pairs(d)
    contraction = np.array([1.0 if a == b else 2.0 for a, b in pairs])

    def rows_for(i):
        entry, members = _resolve_frame(frames[i], nbr, i)
        if entry is None:
            return None
        try:
            lh = local_hessian(entry, entry.u.shape[0], d)
        except (RankDeficientError, DataError) as exc:
            if policy == "fail":
                raise RankDeficientError(
                    f"neighborhood of point {i} is degenerate: {exc}",
                    rank=getattr(exc, "rank", None),
                    column=getattr(exc, "column", None),
                    point=i,
                ) from exc
            return None
        return lh.rows, members

    results = _map_points(rows_for, n_pts)

    row_parts, col_parts, val_parts, skipped = [], [], [], []
    for i, item in enumerate(results):
        if item is None:
            skipped.append(i)
            continue
        rows, members = item
        block = rows.T @ (rows * contraction[:, None])
        size = members.shape[0]
        row_parts.append(np.repeat(members, size))
        col_parts.append(np.tile(members, size))
        val_parts.append(block.ravel())
    if not val_parts:
        raise NumericalError("every neighborhood was degenerate; nothing to assemble")
    values = np.concatenate(val_parts) / n_pts
    coo = sp.coo_matrix(
        (values, (np.concatenate(row_parts), np.concatenate(col_parts))),
        shape=(n_pts, n_pts),
    )
    matrix = coo.tocsr()
    matrix = (matrix + matrix.T) * 0.5
    return HessianForm(matrix=matrix, skipped=tuple(skipped), k=nbr.k)


def estimate(cloud, k=12, policy="skip_point", trim_fraction=0.0, knn_method="brute"):
    """One-call pipeline: neighborhoods, tangent frames, assembled form."""
    d = cloud.intrinsic_dim
    if k < min_neighborhood_size(d):
        raise DataError(
            f"k={k} is below the full-rank minimum {min_neighborhood_size(d)} for d={d}"
        )
    nbr = knn(cloud, k, method=knn_method)

    def frame_of(i):
        try:
            if trim_fraction > 0.0:
                return trimmed_tangent_frame(cloud, nbr, i, d, trim_fraction)
            eps = nbr.displacements[i]
            return tangent_frame(eps @ eps.T, d)
        except (RankDeficientError, DataError) as exc:
            if policy == "fail":
                raise RankDeficientError(
                    f"neighborhood of point {i} is degenerate: {exc}",
                    rank=getattr(exc, "rank", None),
                    point=i,
                ) from exc
            return None

    frames = _map_points(frame_of, cloud.n_points)
    return assemble(cloud, nbr, frames, policy=policy)


def quadratic_form(form, values):
    """f(X)' H f(X): the estimated integrated squared Hessian of f."""
    f = as_values(values, "values")
    if f.shape[0] != form.n_points:
        raise DataError(
            f"value length {f.shape[0]} does not match form size {form.n_points}"
        )
    return float(f @ (form.matrix @ f))


@dataclass(frozen=True)
class NullEmbedding:
    """Near-null coordinates of the penalty form plus its eigenvalue report.

    coords columns are eigenvectors of the d smallest nonconstant
    eigenvalues (constant direction deflated first). eigenvalues is the
    kernel-dimension diagnostic: the d + n_extra smallest raw eigenvalues
    of the form, ascending, identical in meaning on both solver paths.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    nonconstant_eigenvalues: np.ndarray
    method: str

    def __post_init__(self):
        for name in ("coords", "eigenvalues", "nonconstant_eigenvalues"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _fix_column_signs(mat):
    out = mat.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        scale = np.abs(v).max()
        if scale == 0:
            continue
        lead = np.flatnonzero(np.abs(v) > 1e-12 * scale)
        if lead.size and v[lead[0]] < 0:
            out[:, col] = -v
    return out


def null_embedding(form, d, dense_cutoff=4096, n_extra=10):
    """Eigenvectors of the d smallest nonconstant eigenvalues of the form.

    The constant direction (an exact null vector by construction) is
    deflated by a rank-one shift before the eigensolve, so the returned
    columns are orthogonal to it. Below dense_cutoff the solve is a dense
    eigendecomposition; above it a shift-invert Lanczos iteration. Either
    way the reported eigenvalues are the smallest d + n_extra.
    """
    n_pts = form.n_points
    if n_pts <= d + 1:
        raise DataError(f"need N > d+1 = {d + 1}, got N={n_pts}")
    want = min(n_pts - 2, d + n_extra)
    if n_pts <= dense_cutoff:
        dense = form.matrix.toarray()
        dense = 0.5 * (dense + dense.T)
        raw = np.linalg.eigvalsh(dense)
        shift = 2.0 * abs(raw[-1]) + 1.0
        dense += shift / n_pts  # rank-one shift of the constant direction
        vals, vecs = np.linalg.eigh(dense)
        coords = _fix_column_signs(vecs[:, :d])
        return NullEmbedding(
            coords=coords,
            eigenvalues=raw[:want],
            nonconstant_eigenvalues=vals[:want],
            method="dense",
        )

    scale = max(form.trace() / n_pts, 1e-30)
    try:
        raw, vecs = spla.eigsh(form.matrix, k=want, sigma=-1e-8 * scale, which="LM")
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(f"eigensolver failed to converge: {exc}") from exc
    order = np.argsort(raw)
    raw = raw[order]
    vecs = vecs[:, order]
    # project the constant direction out of the computed near-null subspace
    centered = vecs - vecs.mean(axis=0, keepdims=True)
    q, r = np.linalg.qr(centered)
    keep = np.abs(np.diag(r)) > 1e-8 * max(np.abs(np.diag(r)).max(), 1e-300)
    q = q[:, keep]
    if q.shape[1] < d:
        raise NumericalError("deflated subspace is smaller than d; increase n_extra")
    small = q.T @ (form.matrix @ q)
    small = 0.5 * (small + small.T)
    svals, svecs = np.linalg.eigh(small)
    coords = _fix_column_signs(q @ svecs[:, :d])
    return NullEmbedding(
        coords=coords,
        eigenvalues=raw,
        nonconstant_eigenvalues=svals,
        method="lanczos",
    )


def write_coordinate_text(form, path):
    """Dump the stored nonzeros as 'row col value' lines for inspection."""
    coo = form.matrix.tocoo()
    lines = [
        f"{i} {j} {float(v)!r}"
        for i, j, v in zip(coo.row, coo.col, coo.data, strict=True)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")
