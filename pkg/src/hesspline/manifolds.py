"""Synthetic flat manifolds with known locally isometric parameterizations.

Each generator samples parameters uniformly on a rectangle Theta and maps
them through an embedding whose pullback metric is the identity, so
parameter distances of nearby points agree with embedded Euclidean
distances to second order. That makes the parameter columns usable as
ground-truth isometric coordinates in every downstream test.

Kinds
-----
flat_square
    Identity embedding of a d-dimensional box (d = number of extent rows).
swiss_roll
    Planar spiral (t cos t, t sin t) swept along a height axis. The spiral
    is re-parameterized by arclength (numerically inverted by bisection),
    otherwise the textbook map is not isometric.
cylinder
    (x, cos(2 pi y)/(2 pi), sin(2 pi y)/(2 pi)): flat, one wrapped
    coordinate of circumference 1.
clifford_torus
    (cos u, sin u, cos v, sin v) with unit radii: flat, boundaryless, both
    coordinates wrapped, parameters in arclength units.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import ResponseVector, as_values
from .errors import DataError

__all__ = [
    "KINDS",
    "RESPONSE_KINDS",
    "ManifoldSpec",
    "GroundTruth",
    "default_extent",
    "generate",
    "response",
    "add_noise",
    "parameter_distance",
    "spiral_arclength",
]

KINDS = ("flat_square", "swiss_roll", "cylinder", "clifford_torus")
RESPONSE_KINDS = ("constant", "linear", "quadratic", "sine")


def spiral_arclength(t):
    """Arclength of the spiral (t cos t, t sin t) from 0 to t.

    The speed is sqrt(1 + t^2), so the integral has the closed form
    (t sqrt(1+t^2) + asinh t) / 2.
    """
    t = np.asarray(t, dtype=np.float64)
    return 0.5 * (t * np.sqrt(1.0 + t * t) + np.arcsinh(t))


def _invert_spiral_arclength(s, tol=1e-10):
    """Solve spiral_arclength(t) = s for t >= 0 by monotone bisection."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise DataError("swiss_roll arclength parameters must be nonnegative")
    hi = 1.0
    while spiral_arclength(hi) < s.max():
        hi *= 2.0
    lo_v = np.zeros_like(s)
    hi_v = np.full_like(s, hi)
    while np.max(hi_v - lo_v) > tol:
        mid = 0.5 * (lo_v + hi_v)
        below = spiral_arclength(mid) < s
        lo_v = np.where(below, mid, lo_v)
        hi_v = np.where(below, hi_v, mid)
    return 0.5 * (lo_v + hi_v)


# Default parameter rectangles. The swiss roll covers the classic winding
# t in [1.5 pi, 4.5 pi], expressed in arclength units.
_SWISS_S = (
    float(spiral_arclength(1.5 * math.pi)),
    float(spiral_arclength(4.5 * math.pi)),
)
_DEFAULT_EXTENT = {
    "flat_square": ((0.0, 1.0), (0.0, 1.0)),
    "swiss_roll": (_SWISS_S, (0.0, 20.0)),
    "cylinder": ((0.0, 2.0), (0.0, 1.0)),
    "clifford_torus": ((0.0, 2.0 * math.pi), (0.0, 2.0 * math.pi)),
}


def default_extent(kind):
    try:
        return _DEFAULT_EXTENT[kind]
    except KeyError:
        raise DataError(f"unknown manifold kind {kind!r}") from None


@dataclass(frozen=True)
class ManifoldSpec:
    """Which manifold to sample, over what parameter rectangle, with what seed."""

    kind: str
    extent: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown manifold kind {self.kind!r}")
        extent = self.extent if self.extent is not None else default_extent(self.kind)
        extent = tuple((float(lo), float(hi)) for lo, hi in extent)
        for lo, hi in extent:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise DataError(f"bad extent ({lo}, {hi}): bounds must be finite with hi > lo")
        if self.kind != "flat_square" and len(extent) != 2:
            raise DataError(f"{self.kind} takes exactly 2 parameter dimensions")
        if self.kind == "swiss_roll" and extent[0][0] < 0:
            raise DataError("swiss_roll arclength extent must be nonnegative")
        # wrapped coordinates cannot cover more than one full turn
        if self.kind == "cylinder" and extent[1][1] - extent[1][0] > 1.0 + 1e-12:
            raise DataError("cylinder angular extent is limited to width 1 (one turn)")
        if self.kind == "clifford_torus":
            for lo, hi in extent:
                if hi - lo > 2.0 * math.pi + 1e-12:
                    raise DataError("clifford_torus extents are limited to width 2*pi")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def dim(self):
        return len(self.extent)


@dataclass(frozen=True)
class GroundTruth:
    """Sampled parameters, their embedding, and (optionally) a true response."""

    params: np.ndarray
    embedded: np.ndarray
    f_values: np.ndarray | None = None

    def with_response(self, kind, coeffs):
        values = response(self.params, kind, coeffs).values
        return replace(self, f_values=values)


def _embed(kind, params):
    if kind == "flat_square":
        return params.copy()
    if kind == "swiss_roll":
        t = _invert_spiral_arclength(params[:, 0])
        return np.column_stack((t * np.cos(t), params[:, 1], t * np.sin(t)))
    if kind == "cylinder":
        angle = 2.0 * math.pi * params[:, 1]
        radius = 1.0 / (2.0 * math.pi)
        return np.column_stack((params[:, 0], radius * np.cos(angle), radius * np.sin(angle)))
    if kind == "clifford_torus":
        u, v = params[:, 0], params[:, 1]
        return np.column_stack((np.cos(u), np.sin(u), np.cos(v), np.sin(v)))
    raise DataError(f"unknown manifold kind {kind!r}")


def generate(spec, n_points):
    """Sample n_points parameters i.i.d. uniform on Theta and embed them.

    Pure function of (spec, n_points): the same spec and count always
    reproduce the same GroundTruth.
    """
    if n_points < 1:
        raise DataError(f"n_points must be >= 1, got {n_points}")
    rng = np.random.default_rng(spec.seed)
    lows = np.array([lo for lo, _ in spec.extent])
    highs = np.array([hi for _, hi in spec.extent])
    params = rng.uniform(lows, highs, size=(n_points, spec.dim))
    return GroundTruth(params=params, embedded=_embed(spec.kind, params))


def response(params, kind, coeffs):
    """Evaluate a test response f on parameter rows.

    kind / coeffs:
      constant   scalar c                        -> c everywhere
      linear     length-d vector c               -> c . theta
      quadratic  symmetric d x d matrix A        -> theta^T A theta
      sine       (amplitude, frequency)          -> amp * prod_j sin(freq * theta_j)
    """
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 2:
        raise DataError("params must be an N x d matrix")
    d = params.shape[1]
    if kind == "constant":
        c = np.ravel(np.asarray(coeffs, dtype=np.float64))
        if c.size != 1:
            raise DataError("constant response takes a single coefficient")
        values = np.full(params.shape[0], c[0])
    elif kind == "linear":
        c = np.ravel(np.asarray(coeffs, dtype=np.float64))
        if c.size != d:
            raise DataError(f"linear response needs {d} coefficients, got {c.size}")
        values = params @ c
    elif kind == "quadratic":
        a = np.asarray(coeffs, dtype=np.float64)
        if a.shape != (d, d):
            raise DataError(f"quadratic response needs a {d}x{d} matrix, got {a.shape}")
        if not np.allclose(a, a.T, atol=1e-12):
            raise DataError("quadratic coefficient matrix must be symmetric")
        values = np.einsum("ij,jk,ik->i", params, a, params)
    elif kind == "sine":
        c = np.ravel(np.asarray(coeffs, dtype=np.float64))
        if c.size != 2:
            raise DataError("sine response takes (amplitude, frequency)")
        values = c[0] * np.prod(np.sin(c[1] * params), axis=1)
    else:
        raise DataError(f"unknown response kind {kind!r}")
    return ResponseVector(values)


def add_noise(y, sigma, seed=0):
    """Add i.i.d. N(0, sigma^2) noise from a seeded generator; sigma=0 is a no-op."""
    if sigma < 0:
        raise DataError("sigma must be >= 0")
    values = as_values(y)
    if sigma == 0:
        return y if isinstance(y, ResponseVector) else ResponseVector(values)
    rng = np.random.default_rng(seed)
    return ResponseVector(values + rng.normal(0.0, sigma, size=values.shape[0]))


def parameter_distance(kind, a, b):
    """Geodesic distance on Theta between parameter rows a and b.

    Wrapped coordinates (cylinder's second, both torus coordinates) are
    compared modulo their period.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    delta = np.abs(a - b)
    if kind == "cylinder":
        delta[:, 1] = np.minimum(delta[:, 1] % 1.0, 1.0 - delta[:, 1] % 1.0)
    elif kind == "clifford_torus":
        period = 2.0 * math.pi
        wrapped = delta % period
        delta = np.minimum(wrapped, period - wrapped)
    elif kind not in ("flat_square", "swiss_roll"):
        raise DataError(f"unknown manifold kind {kind!r}")
    out = np.sqrt((delta * delta).sum(axis=1))
    return out if out.shape[0] > 1 else float(out[0])
