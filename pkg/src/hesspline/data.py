"""Core domain types and dataset serialization.

Numeric payloads are float64 arrays marked read-only after validation, so
every container here is immutable and safe to share across threads.

Exchange formats: CSV for point sets and responses (header ``x1..xn`` and
then optional ``y``, ``w``, ``label`` columns, in that order), JSON for
fits. Floats are written with ``repr`` so round-trips are bit-exact for
finite doubles.
"""

import csv
import json
import os
import re
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "PointCloud",
    "ResponseVector",
    "WeightVector",
    "FitConfig",
    "SplineFit",
    "Dataset",
    "load_dataset",
    "read_table",
    "write_points_csv",
    "save_fit",
    "load_fit",
    "atomic_write_text",
]


def _readonly(arr):
    arr.setflags(write=False)
    return arr


def _validated_array(values, name, ndim):
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return _readonly(arr)


def as_values(y, name="y"):
    """Coerce a ResponseVector, WeightVector, or array-like to a 1-D float array."""
    if isinstance(y, ResponseVector):
        return y.values
    if isinstance(y, WeightVector):
        return y.weights
    return _validated_array(y, name, 1)


@dataclass(frozen=True)
class PointCloud:
    """N points in feature space R^n with a declared intrinsic dimension d.

    d is taken on faith from the caller; nothing here infers it from the
    data. 1 <= d <= n is enforced, as is finiteness of every coordinate.
    """

    points: np.ndarray
    intrinsic_dim: int

    def __post_init__(self):
        pts = _validated_array(self.points, "points", 2)
        object.__setattr__(self, "points", pts)
        d = int(self.intrinsic_dim)
        if not 1 <= d <= pts.shape[1]:
            raise DataError(
                f"intrinsic_dim must lie in [1, {pts.shape[1]}], got {d}"
            )
        object.__setattr__(self, "intrinsic_dim", d)

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def ambient_dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class ResponseVector:
    """Length-N vector of observed responses."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _validated_array(self.values, "values", 1))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative observation weights; at least one must be positive.

    The reweighting loop keeps sum(w) = N, but that normalization is a
    property of the loop, not of the container.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _validated_array(self.weights, "weights", 1)
        if np.any(w < 0):
            raise DataError("weights must be nonnegative")
        if not np.any(w > 0):
            raise DataError("at least one weight must be positive")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class FitConfig:
    """Knobs shared by the fitting pipeline.

    The full-rank requirement K >= 1 + d + d(d+1)/2 involves the cloud's d
    and is checked where both are known (see hessian.estimate); here only
    the standalone invariants are enforced.
    """

    lam: float = 1.0
    k: int = 12
    solver_tolerance: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise DataError(f"lam must be finite and >= 0, got {self.lam}")
        if int(self.k) < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        if not (np.isfinite(self.solver_tolerance) and self.solver_tolerance > 0):
            raise DataError("solver_tolerance must be positive")
        object.__setattr__(self, "seed", int(self.seed))


def min_neighborhood_size(d):
    """Smallest K for which the local quadratic design can have full rank."""
    return 1 + d + d * (d + 1) // 2


@dataclass(frozen=True)
class SplineFit:
    """Result of one smoothing solve.

    diagnostics is a plain JSON-able dict; standing keys are
    ``residual_norm``, ``edf`` (trace of the smoother, None unless
    requested), ``skipped_points``, ``solver`` and, for reweighted fits,
    ``converged`` and ``rho_scale``. ``k`` is the neighborhood size used to
    build the penalty when the pipeline knows it, else None.
    """

    fitted: np.ndarray
    lam: float
    weights: WeightVector
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)
    k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "fitted", _validated_array(self.fitted, "fitted", 1))
        if len(self.weights) != self.fitted.shape[0]:
            raise DataError("weights length does not match fitted length")

    @property
    def n_points(self):
        return self.fitted.shape[0]


# ---------------------------------------------------------------------------
# file I/O

_XCOL = re.compile(r"^x(\d+)$")


def atomic_write_text(path, text):
    """Write text to path via a temp file + rename in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    # repr of a Python float is the shortest string that round-trips
    return repr(float(value))


@dataclass(frozen=True)
class Dataset:
    """Everything a dataset file may carry: points plus optional columns."""

    points: np.ndarray
    response: np.ndarray | None = None
    weights: np.ndarray | None = None
    labels: tuple | None = None


def _parse_float(token, where):
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"could not parse numeric value {token!r} at {where}") from None
    if not np.isfinite(value):
        raise DataError(f"non-finite value {token!r} at {where}")
    return value


def _read_table_csv(path):
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    n = 0
    while n < len(header) and _XCOL.match(header[n]):
        n += 1
    if n == 0:
        raise DataError(f"{path}: header must start with coordinate columns x1..xn")
    expected = [f"x{j + 1}" for j in range(n)]
    if header[:n] != expected:
        raise DataError(f"{path}: coordinate columns must be named x1..x{n} in order")
    tail = header[n:]
    allowed = [name for name in ("y", "w", "label") if name in tail]
    if tail != allowed or len(set(tail)) != len(tail):
        raise DataError(
            f"{path}: trailing columns must be a subset of y, w, label in that order"
        )
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(header)
    points = np.empty((len(rows), n))
    response = np.empty(len(rows)) if "y" in tail else None
    weights = np.empty(len(rows)) if "w" in tail else None
    labels = [] if "label" in tail else None
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {width}")
        for j in range(n):
            points[i, j] = _parse_float(row[j], f"row {i + 2}, column {header[j]}")
        col = n
        if response is not None:
            response[i] = _parse_float(row[col], f"row {i + 2}, column y")
            col += 1
        if weights is not None:
            weights[i] = _parse_float(row[col], f"row {i + 2}, column w")
            col += 1
        if labels is not None:
            labels.append(row[col].strip())
    return Dataset(
        points=_readonly(points),
        response=None if response is None else _readonly(response),
        weights=None if weights is None else _readonly(weights),
        labels=None if labels is None else tuple(labels),
    )


def _read_table_json(path):
    with open(path) as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict) or "points" not in payload:
        raise DataError(f"{path}: JSON dataset must be an object with a 'points' key")
    points = _validated_array(payload["points"], "points", 2)
    n_rows = points.shape[0]

    def _optional(key):
        if key not in payload or payload[key] is None:
            return None
        arr = _validated_array(payload[key], key, 1)
        if arr.shape[0] != n_rows:
            raise DataError(f"{path}: '{key}' length does not match points")
        return arr

    labels = payload.get("labels")
    if labels is not None:
        if len(labels) != n_rows:
            raise DataError(f"{path}: 'labels' length does not match points")
        labels = tuple(str(item) for item in labels)
    return Dataset(
        points=points,
        response=_optional("response"),
        weights=_optional("weights"),
        labels=labels,
    )


def read_table(path, fmt="csv"):
    """Read a dataset file into a Dataset record.

    fmt is 'csv' or 'json'. CSV must follow the x1..xn [,y][,w][,label]
    header contract; JSON is an object {points, response?, weights?, labels?}.
    """
    if fmt == "csv":
        return _read_table_csv(path)
    if fmt == "json":
        return _read_table_json(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path, fmt="csv", *, intrinsic_dim):
    """Load a dataset as (PointCloud, ResponseVector or None).

    intrinsic_dim is required: the file format carries no d and d is never
    inferred from the data.
    """
    table = read_table(path, fmt)
    cloud = PointCloud(table.points, intrinsic_dim)
    response = None if table.response is None else ResponseVector(table.response)
    return cloud, response


def write_points_csv(path, points, response=None, weights=None, labels=None):
    """Write a dataset CSV under the x1..xn [,y][,w][,label] contract, atomically."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError("points must be a 2-D array")
    header = [f"x{j + 1}" for j in range(points.shape[1])]
    columns = []
    if response is not None:
        header.append("y")
        columns.append([_fmt(v) for v in np.asarray(response, dtype=np.float64)])
    if weights is not None:
        header.append("w")
        columns.append([_fmt(v) for v in np.asarray(weights, dtype=np.float64)])
    if labels is not None:
        header.append("label")
        columns.append([str(v) for v in labels])
    for col in columns:
        if len(col) != points.shape[0]:
            raise DataError("optional column length does not match points")
    lines = [",".join(header)]
    for i in range(points.shape[0]):
        row = [_fmt(v) for v in points[i]]
        row.extend(col[i] for col in columns)
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_fit(fit, path):
    """Serialize a SplineFit as JSON: {lambda, K, fitted, weights, diagnostics}.

    Floats go through repr, so a load_fit round-trip reproduces the fitted
    vector bit-exactly.
    """
    if not isinstance(fit, SplineFit):
        raise DataError("save_fit expects a SplineFit")
    diagnostics = dict(fit.diagnostics)
    diagnostics["iterations"] = int(fit.iterations)
    payload = {
        "lambda": fit.lam,
        "K": fit.k,
        "fitted": [float(v) for v in fit.fitted],
        "weights": [float(v) for v in fit.weights.weights],
        "diagnostics": diagnostics,
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def load_fit(path):
    """Inverse of save_fit."""
    with open(path) as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
    try:
        diagnostics = dict(payload.get("diagnostics") or {})
        iterations = int(diagnostics.pop("iterations", 0))
        k = payload.get("K")
        return SplineFit(
            fitted=np.asarray(payload["fitted"], dtype=np.float64),
            lam=float(payload["lambda"]),
            weights=WeightVector(np.asarray(payload["weights"], dtype=np.float64)),
            iterations=iterations,
            diagnostics=diagnostics,
            k=None if k is None else int(k),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed fit JSON ({exc})") from None
