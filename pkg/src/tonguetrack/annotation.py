"""Automatic landmark annotation on tongue contours.

Converts binary contour masks into monotone-x polylines, places a fixed
number of landmarks on them (equally spaced vertical lines, or random
positions with a minimum-gap constraint), and reverts landmark sets back to
continuous contours through a spline fit.  Also owns the landmark CSV
format shared with the dataset tooling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, MaskError, SpacingError, SpanError
from .geometry import as_points, eval_bspline, fit_bspline

__all__ = [
    "SpacingPolicy",
    "contour_from_mask",
    "equal_spaced_landmarks",
    "random_spaced_landmarks",
    "place_landmarks",
    "revert_to_contour",
    "write_landmarks_csv",
    "read_landmarks_csv",
]

MAX_SPACING_ATTEMPTS = 1000


@dataclass(frozen=True)
class SpacingPolicy:
    """How landmarks are placed along a contour.

    `kind` is "equal" or "random".  For random placement, `min_dist_x` is
    the smallest allowed x-gap between neighbours (None means W/(2n) with W
    the image width, or the contour span when no width is known) and `seed`
    makes the draw reproducible.
    """

    kind: str = "random"
    n_points: int = 10
    min_dist_x: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("equal", "random"):
            raise ValueError(f"spacing kind must be 'equal' or 'random', got {self.kind!r}")
        if self.n_points < 2:
            raise ValueError(f"n_points must be >= 2, got {self.n_points}")
        if self.min_dist_x is not None and self.min_dist_x <= 0:
            raise ValueError(f"min_dist_x must be positive, got {self.min_dist_x}")


def contour_from_mask(mask) -> np.ndarray:
    """Reduce a binary mask (H, W) to a monotone-x polyline.

    Each column that contains set pixels contributes one point at
    (column, mean set row); columns without set pixels are skipped.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise MaskError(f"mask must be 2-D, got shape {m.shape}")
    occ = m > 0
    cols = np.flatnonzero(occ.any(axis=0))
    if len(cols) < 2:
        raise MaskError(
            f"mask needs set pixels in at least 2 columns, found {len(cols)}"
        )
    rows = np.arange(m.shape[0], dtype=np.float64)
    counts = occ[:, cols].sum(axis=0)
    ys = (rows @ occ[:, cols]) / counts
    return np.column_stack([cols.astype(np.float64), ys])


def _monotone_contour(contour) -> np.ndarray:
    c = as_points(contour, min_len=2, name="contour")
    if np.any(np.diff(c[:, 0]) <= 0):
        raise ValueError("contour x-coordinates must be strictly increasing")
    return c


def _interp_y(contour: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return np.interp(xs, contour[:, 0], contour[:, 1])


def equal_spaced_landmarks(contour, n: int, width: float) -> np.ndarray:
    """Landmarks where the contour meets n equally dispersed vertical lines.

    Lines sit at x = (k + 0.5) * width / n; lines outside the contour's
    x-span are clipped to its ends.  Raises when fewer than two lines
    intersect the span.
    """
    c = _monotone_contour(contour)
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    xs = (np.arange(n) + 0.5) * (width / n)
    x_lo, x_hi = c[0, 0], c[-1, 0]
    inside = np.count_nonzero((xs >= x_lo) & (xs <= x_hi))
    if inside < 2:
        raise SpanError(
            f"contour x-span [{x_lo:g}, {x_hi:g}] intersects only {inside} "
            f"of {n} sampling lines"
        )
    xs = np.clip(xs, x_lo, x_hi)
    return np.column_stack([xs, _interp_y(c, xs)])


def _replace_outliers(ys: np.ndarray) -> np.ndarray:
    """Median-filter gross outliers: a value more than 3 MADs from its
    5-point neighbourhood median is replaced by that median."""
    n = len(ys)
    win = min(5, n)
    out = ys.copy()
    for i in range(n):
        lo = min(max(0, i - win // 2), n - win)
        nb = ys[lo:lo + win]
        med = np.median(nb)
        mad = np.median(np.abs(nb - med))
        if np.abs(ys[i] - med) > 3.0 * mad:
            out[i] = med
    return out


def random_spaced_landmarks(
    contour, policy: SpacingPolicy, width: float | None = None
) -> np.ndarray:
    """Landmarks at random x-positions with a minimum-gap constraint.

    Draws n positions uniformly over the contour's x-span and rejects the
    draw until all adjacent gaps reach `min_dist_x` (at most 1000 attempts).
    The y values are interpolated on the contour, then passed through the
    outlier-replacement rule.  Deterministic for a given policy seed.
    """
    if policy.kind != "random":
        raise ValueError(f"policy kind must be 'random', got {policy.kind!r}")
    c = _monotone_contour(contour)
    n = policy.n_points
    x_lo, x_hi = float(c[0, 0]), float(c[-1, 0])
    span = x_hi - x_lo
    if span <= 0:
        raise SpanError("contour has zero x-span")
    if policy.min_dist_x is not None:
        min_dist = float(policy.min_dist_x)
    else:
        base = float(width) if width is not None else span
        min_dist = base / (2.0 * n)
    if (n - 1) * min_dist > span:
        raise SpacingError(
            f"cannot place {n} points with gaps >= {min_dist:g} px in a span "
            f"of {span:g} px"
        )
    rng = np.random.default_rng(policy.seed)
    cand = np.sort(rng.uniform(x_lo, x_hi, size=(MAX_SPACING_ATTEMPTS, n)), axis=1)
    ok = np.flatnonzero((np.diff(cand, axis=1) >= min_dist).all(axis=1))
    if ok.size:
        xs = cand[ok[0]]
    else:
        # rejection starves near the feasibility boundary; draw from the same
        # conditional distribution directly: sorted uniforms on the
        # gap-reduced span, spread apart by min_dist
        reduced = span - (n - 1) * min_dist
        xs = np.sort(rng.uniform(0.0, reduced, size=n))
        xs += x_lo + np.arange(n) * min_dist
    ys = _replace_outliers(_interp_y(c, xs))
    return np.column_stack([xs, ys])


def place_landmarks(contour, policy: SpacingPolicy, width: float) -> np.ndarray:
    """Dispatch to the equal or random placement rule."""
    if policy.kind == "equal":
        return equal_spaced_landmarks(contour, policy.n_points, width)
    return random_spaced_landmarks(contour, policy, width)


def revert_to_contour(landmarks, n_samples: int = 100) -> np.ndarray:
    """Reconstruct a continuous contour from a landmark set via spline fit."""
    pts = as_points(landmarks, min_len=2, name="landmarks")
    return eval_bspline(fit_bspline(pts), n_samples)


# ---------------------------------------------------------------------------
# Landmark CSV: header "filename,n,x1,y1,...,xN,yN", one row per image.
# ---------------------------------------------------------------------------

def write_landmarks_csv(path, rows: list[tuple[str, np.ndarray]]) -> None:
    """Write landmark rows; every row must carry the same point count."""
    if not rows:
        raise ValueError("no landmark rows to write")
    n = len(rows[0][1])
    header = ["filename", "n"]
    for i in range(1, n + 1):
        header += [f"x{i}", f"y{i}"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, pts in rows:
            arr = as_points(pts, min_len=2, name=f"landmarks for {name}")
            if len(arr) != n:
                raise ValueError(
                    f"row {name!r} has {len(arr)} points, expected {n}"
                )
            writer.writerow([name, n] + [f"{v:.8g}" for v in arr.ravel()])


def read_landmarks_csv(path) -> list[tuple[str, np.ndarray]]:
    """Read landmark rows back as (filename, (n, 2) array) pairs."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"landmark file not found: {path}")
    rows: list[tuple[str, np.ndarray]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["filename", "n"]:
            raise DataFormatError(f"{path}: bad landmark CSV header: {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                name, n = row[0], int(row[1])
                coords = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except (IndexError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed row") from exc
            if len(coords) != 2 * n:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {2 * n} coordinates, got {len(coords)}"
                )
            rows.append((name, coords.reshape(n, 2)))
    return rows
