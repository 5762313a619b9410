"""Planar geometry: affine transforms, B-spline curves, and curve distances.

Point sets are plain ``(n, 2)`` float arrays in pixel units, origin at the
top-left corner, x growing rightward (columns) and y downward (rows).
A positive rotation angle maps the +x axis toward +y in this frame.
All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import FitError

__all__ = [
    "BSplineCurve",
    "as_points",
    "make_affine",
    "affine_compose",
    "affine_inverse",
    "apply_affine",
    "fit_bspline",
    "eval_bspline",
    "msd",
    "resample_by_arclength",
]


def as_points(pts, min_len: int = 1, name: str = "points") -> np.ndarray:
    """Coerce to an (n, 2) float64 array and validate it."""
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] < min_len:
        raise ValueError(f"{name} needs at least {min_len} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr


# ---------------------------------------------------------------------------
# Affine transforms, stored as 2x3 matrices mapping (x, y, 1) -> (x', y').
# ---------------------------------------------------------------------------

def _as_3x3(m: np.ndarray) -> np.ndarray:
    out = np.eye(3)
    out[:2, :] = m
    return out


def make_affine(
    rotation_deg: float = 0.0,
    translate: tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
    hflip: bool = False,
    center: tuple[float, float] = (0.0, 0.0),
    image_width: float | None = None,
) -> np.ndarray:
    """Build a 2x3 affine matrix from augmentation parameters.

    Factors apply in a fixed order: horizontal flip about the vertical image
    axis (x' = W-1-x), then scaling about `center`, then rotation about
    `center`, then translation.  Identity parameters give the identity matrix.

    `image_width` is required when `hflip` is set.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    cx, cy = float(center[0]), float(center[1])
    tx, ty = float(translate[0]), float(translate[1])

    m = np.eye(3)
    if hflip:
        if image_width is None:
            raise ValueError("image_width is required for a horizontal flip")
        flip = np.array([[-1.0, 0.0, image_width - 1.0],
                         [0.0, 1.0, 0.0],
                         [0.0, 0.0, 1.0]])
        m = flip @ m
    if scale != 1.0:
        s = float(scale)
        sc = np.array([[s, 0.0, (1.0 - s) * cx],
                       [0.0, s, (1.0 - s) * cy],
                       [0.0, 0.0, 1.0]])
        m = sc @ m
    if rotation_deg != 0.0:
        th = np.deg2rad(rotation_deg)
        c, s = np.cos(th), np.sin(th)
        # rotate about (cx, cy): p' = R (p - c) + c
        rot = np.array([[c, -s, cx - c * cx + s * cy],
                        [s, c, cy - s * cx - c * cy],
                        [0.0, 0.0, 1.0]])
        m = rot @ m
    if tx != 0.0 or ty != 0.0:
        tr = np.array([[1.0, 0.0, tx],
                       [0.0, 1.0, ty],
                       [0.0, 0.0, 1.0]])
        m = tr @ m
    return m[:2, :]


def affine_compose(second: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Matrix for applying `first`, then `second`."""
    return (_as_3x3(second) @ _as_3x3(first))[:2, :]


def affine_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse transform; raises if the linear part is singular."""
    a = np.asarray(m, dtype=np.float64)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) < 1e-12:
        raise ValueError("affine transform is not invertible")
    return np.linalg.inv(_as_3x3(a))[:2, :]


def apply_affine(m: np.ndarray, pts, sort_by_x: bool = False) -> np.ndarray:
    """Map each point through the transform, preserving order.

    With `sort_by_x` the result is re-sorted by ascending x, for callers that
    need a monotone polyline afterwards (a flip reverses x order).
    """
    arr = as_points(pts)
    out = arr @ np.asarray(m, dtype=np.float64)[:, :2].T + np.asarray(m)[:, 2]
    if sort_by_x:
        out = out[np.argsort(out[:, 0], kind="stable")]
    return out


# ---------------------------------------------------------------------------
# B-spline curves: clamped knots, least-squares fit, evaluation.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BSplineCurve:
    """Parametric spline: `degree`, clamped knot vector, (n, 2) control points."""

    degree: int
    knots: np.ndarray
    control: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        control = as_points(self.control, min_len=2, name="control points")
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if len(knots) != len(control) + self.degree + 1:
            raise ValueError(
                f"knot count {len(knots)} != control count {len(control)} "
                f"+ degree {self.degree} + 1"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("knot vector must be non-decreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "control", control)


def chord_length_params(pts: np.ndarray) -> np.ndarray:
    """Cumulative chord-length parameters normalized to [0, 1]."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0.0:
        raise FitError("cannot parameterize a degenerate (zero-length) point set")
    t = np.concatenate([[0.0], np.cumsum(seg)]) / total
    t[-1] = 1.0
    return t


def clamped_uniform_knots(n_control: int, degree: int) -> np.ndarray:
    """Clamped knot vector on [0, 1] with uniformly spaced interior knots."""
    n_interior = n_control - degree - 1
    interior = np.arange(1, n_interior + 1) / (n_interior + 1)
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def bspline_basis(knots: np.ndarray, degree: int, t: np.ndarray) -> np.ndarray:
    """Evaluate all basis functions at `t` via the Cox-de Boor recursion.

    Returns a (len(t), n_control) matrix.  The parameter domain's right
    endpoint is treated as inclusive so clamped curves interpolate their
    last control point.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    n_basis = len(knots) - degree - 1
    # degree-0: indicator of [knots[i], knots[i+1]); domain end handled below
    b = np.zeros((len(t), len(knots) - 1))
    for i in range(len(knots) - 1):
        if knots[i + 1] > knots[i]:
            b[:, i] = (t >= knots[i]) & (t < knots[i + 1])
    at_end = t >= knots[n_basis]
    if np.any(at_end):
        last = max(i for i in range(len(knots) - 1) if knots[i + 1] > knots[i])
        b[at_end] = 0.0
        b[at_end, last] = 1.0
    for k in range(1, degree + 1):
        nxt = np.zeros((len(t), len(knots) - 1 - k))
        for i in range(len(knots) - 1 - k):
            left = knots[i + k] - knots[i]
            if left > 0:
                nxt[:, i] += (t - knots[i]) / left * b[:, i]
            right = knots[i + k + 1] - knots[i + 1]
            if right > 0:
                nxt[:, i] += (knots[i + k + 1] - t) / right * b[:, i + 1]
        b = nxt
    return b[:, :n_basis]


def fit_bspline(pts, n_control: int | None = None) -> BSplineCurve:
    """Least-squares B-spline through an ordered point sequence.

    Uses chord-length parameterization and clamped uniform knots; the first
    and last control points are pinned to the first and last input points so
    the curve interpolates its endpoints.  Defaults: `n_control`
    = min(len(pts), 8), degree = min(3, n_control - 1).
    """
    arr = as_points(pts, min_len=2)
    m = arr.shape[0]
    if n_control is None:
        n_control = min(m, 8)
    if n_control < 2:
        raise FitError(f"need at least 2 control points, got {n_control}")
    if n_control > m:
        raise FitError(f"n_control={n_control} exceeds point count {m}")
    degree = min(3, n_control - 1)
    t = chord_length_params(arr)
    knots = clamped_uniform_knots(n_control, degree)
    if n_control == 2:
        control = arr[[0, -1]]
    else:
        basis = bspline_basis(knots, degree, t)
        rhs = arr - np.outer(basis[:, 0], arr[0]) - np.outer(basis[:, -1], arr[-1])
        interior, *_ = np.linalg.lstsq(basis[:, 1:-1], rhs, rcond=None)
        control = np.vstack([arr[0], interior, arr[-1]])
    return BSplineCurve(degree=degree, knots=knots, control=control)


def eval_bspline(curve: BSplineCurve, n_samples: int = 100) -> np.ndarray:
    """Evaluate the curve at `n_samples` parameters uniform over its domain."""
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    lo = curve.knots[curve.degree]
    hi = curve.knots[len(curve.control)]
    t = np.linspace(lo, hi, n_samples)
    return bspline_basis(curve.knots, curve.degree, t) @ curve.control


# ---------------------------------------------------------------------------
# Curve-to-curve distance and resampling.
# ---------------------------------------------------------------------------

def msd(a, b) -> float:
    """Mean sum of distances between two point sequences.

    Averages the nearest-point distance from every point of `a` to `b` and
    from every point of `b` to `a`:
    (sum_i min_j |a_i - b_j| + sum_j min_i |b_j - a_i|) / (|a| + |b|).
    Symmetric, non-negative, zero iff the point sets coincide.
    """
    pa = as_points(a, min_len=1, name="a")
    pb = as_points(b, min_len=1, name="b")
    d = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    return float((d.min(axis=1).sum() + d.min(axis=0).sum()) / (len(pa) + len(pb)))


def resample_by_arclength(pts, n: int) -> np.ndarray:
    """Resample a polyline at `n` equally spaced arc-length positions.

    Endpoints are preserved exactly.  Raises on zero-length polylines.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    arr = as_points(pts, min_len=2)
    seg = np.linalg.norm(np.diff(arr, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0.0:
        raise ValueError("cannot resample a zero-length polyline")
    targets = np.linspace(0.0, s[-1], n)
    out = np.column_stack([
        np.interp(targets, s, arr[:, 0]),
        np.interp(targets, s, arr[:, 1]),
    ])
    out[0] = arr[0]
    out[-1] = arr[-1]
    return out
