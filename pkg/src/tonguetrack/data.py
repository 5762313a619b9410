"""Synthetic ultrasound-like data, augmentation, normalization and disk I/O.

The synthetic generator is a desk-scale stand-in for a clinical database:
it draws a smooth bright band (a tongue-surface-like curve with a Gaussian
cross-section) over a dark background, multiplies in Rayleigh speckle and
adds Gaussian noise.  Ground-truth landmarks are placed on the clean curve
before any noise.

All randomness flows through `numpy.random.Generator` objects seeded from
explicit integers (or tuples of integers), so generation, splits and
augmentation are reproducible item by item regardless of execution order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .annotation import (
    SpacingPolicy,
    place_landmarks,
    read_landmarks_csv,
    write_landmarks_csv,
)
from .exceptions import DataFormatError
from .geometry import (
    affine_inverse,
    apply_affine,
    as_points,
    eval_bspline,
    fit_bspline,
    make_affine,
)

__all__ = [
    "Sample",
    "AugmentConfig",
    "SynthConfig",
    "generate_contour",
    "synth_generate",
    "make_dataset",
    "split_dataset",
    "augment",
    "warp_image",
    "normalize",
    "denormalize",
    "write_pgm",
    "read_pgm",
    "save_dataset",
    "load_dataset",
]

GENERATOR_VERSION = 1


@dataclass
class Sample:
    """One annotated frame: image (H, W) in [0, 1] plus pixel landmarks."""

    image: np.ndarray
    landmarks: np.ndarray
    id: str

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


@dataclass(frozen=True)
class AugmentConfig:
    """Geometric augmentation ranges; angles in degrees, offsets in pixels."""

    rot_deg: tuple[float, float] = (-25.0, 25.0)
    translate_px: tuple[float, float] = (-30.0, 30.0)
    scale: tuple[float, float] = (0.5, 2.0)
    hflip_prob: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.scale[0] <= 0:
            raise ValueError(f"scale range must be positive, got {self.scale}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic frame generator parameters.

    `band_sigma` is the Gaussian cross-section of the bright band in pixels,
    `speckle_scale` the Rayleigh scale of the multiplicative speckle field
    (0 disables it), `noise_sigma` the additive Gaussian noise level
    (0 disables it), and `curve_bumps` the number of random control points
    shaping the curve.
    """

    width: int = 128
    height: int = 128
    band_sigma: float = 3.0
    speckle_scale: float = 0.8
    noise_sigma: float = 0.03
    curve_bumps: int = 6
    n_points: int = 10
    spacing: SpacingPolicy = field(default_factory=SpacingPolicy)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if self.band_sigma <= 0:
            raise ValueError("band_sigma must be positive")
        if self.speckle_scale < 0 or self.noise_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if self.curve_bumps < 2:
            raise ValueError("curve_bumps must be >= 2")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")


def generate_contour(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw a smooth tongue-like curve as a dense monotone-x polyline.

    Control x-positions are jittered across [0.1 W, 0.9 W]; control heights
    random-walk inside [0.3 H, 0.8 H] so consecutive chords stay gentle and
    the fitted spline remains single-valued in x.
    """
    w, h = cfg.width, cfg.height
    k = cfg.curve_bumps
    x_lo, x_hi = 0.1 * w, 0.9 * w
    xs = np.linspace(x_lo, x_hi, k)
    if k > 2:
        jitter = (x_hi - x_lo) / (4.0 * k)
        xs[1:-1] += rng.uniform(-jitter, jitter, size=k - 2)
    y_lo, y_hi = 0.3 * h, 0.8 * h
    ys = np.empty(k)
    ys[0] = rng.uniform(y_lo + 0.05 * h, y_hi - 0.05 * h)
    for i in range(1, k):
        ys[i] = np.clip(ys[i - 1] + rng.uniform(-0.15 * h, 0.15 * h), y_lo, y_hi)
    curve = fit_bspline(np.column_stack([xs, ys]), n_control=min(k, 8))
    dense = eval_bspline(curve, n_samples=4 * max(w, h))
    # parametric overshoot can fold x back very slightly; keep a strictly
    # increasing subsequence so interpolation stays well defined
    keep = np.concatenate([[True], np.diff(dense[:, 0]) > 0])
    return dense[keep]


def synth_generate(cfg: SynthConfig, seed) -> Sample:
    """Render one synthetic frame with ground-truth landmarks.

    Deterministic per (cfg, seed).  Landmarks follow cfg.spacing and are
    placed on the clean curve; speckle and additive noise only affect the
    image.
    """
    rng = np.random.default_rng(seed)
    w, h = cfg.width, cfg.height
    contour = generate_contour(cfg, rng)
    background = rng.uniform(0.02, 0.08)
    amplitude = rng.uniform(0.65, 0.9)
    policy = dataclasses.replace(
        cfg.spacing, n_points=cfg.n_points, seed=int(rng.integers(2**63))
    )
    landmarks = place_landmarks(contour, policy, width=w)

    ygrid, xgrid = np.mgrid[0:h, 0:w]
    pixels = np.column_stack([xgrid.ravel(), ygrid.ravel()]).astype(np.float64)
    dist, _ = cKDTree(contour).query(pixels)
    dist = dist.reshape(h, w)
    img = background + amplitude * np.exp(-(dist**2) / (2.0 * cfg.band_sigma**2))
    if cfg.speckle_scale > 0:
        img = img * rng.rayleigh(scale=cfg.speckle_scale, size=(h, w))
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(image=img, landmarks=landmarks, id="synth")


def make_dataset(cfg: SynthConfig, count: int, seed: int) -> list[Sample]:
    """Generate `count` samples with per-item seeds derived from `seed`."""
    samples = []
    for i in range(count):
        s = synth_generate(cfg, (seed, i))
        s.id = f"{i:05d}"
        samples.append(s)
    return samples


def split_dataset(
    samples: list, ratios=(0.90, 0.05, 0.05), seed: int = 0
) -> tuple[list, list, list]:
    """Shuffle deterministically and partition into train/val/test.

    Validation and test sizes are floors of their ratios; the remainder
    goes to training.  Partitions are disjoint and cover the input.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(samples)
    if n < 20:
        raise ValueError(f"need at least 20 samples to split, got {n}")
    n_val = int(np.floor(ratios[1] * n))
    n_test = int(np.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


# ---------------------------------------------------------------------------
# Geometric augmentation: one affine warp applied to image and landmarks.
# ---------------------------------------------------------------------------

def warp_image(img: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Warp by inverse mapping with bilinear interpolation, filling with 0."""
    h, w = img.shape
    inv = affine_inverse(m)
    ygrid, xgrid = np.mgrid[0:h, 0:w]
    src_x = inv[0, 0] * xgrid + inv[0, 1] * ygrid + inv[0, 2]
    src_y = inv[1, 0] * xgrid + inv[1, 1] * ygrid + inv[1, 2]
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    wx = (src_x - x0).astype(img.dtype)
    wy = (src_y - y0).astype(img.dtype)

    def gather(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.zeros(img.shape, dtype=img.dtype)
        vals[inside] = img[yi[inside], xi[inside]]
        return vals

    out = (1 - wy) * ((1 - wx) * gather(y0, x0) + wx * gather(y0, x0 + 1)) \
        + wy * ((1 - wx) * gather(y0 + 1, x0) + wx * gather(y0 + 1, x0 + 1))
    return out


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Randomly warp a sample, keeping image and landmarks in lockstep.

    Draws rotation, translation, scale and flip from the configured ranges;
    transforms that push any landmark out of the frame are redrawn (up to
    10 times) before falling back to the identity.
    """
    if not cfg.enabled:
        return sample
    h, w = sample.image.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    for _ in range(10):
        rot = rng.uniform(*cfg.rot_deg)
        tx = rng.uniform(*cfg.translate_px)
        ty = rng.uniform(*cfg.translate_px)
        sc = rng.uniform(*cfg.scale)
        flip = rng.random() < cfg.hflip_prob
        m = make_affine(rot, (tx, ty), sc, flip, center, image_width=w)
        pts = apply_affine(m, sample.landmarks, sort_by_x=True)
        in_frame = (
            (pts[:, 0] >= 0) & (pts[:, 0] <= w - 1)
            & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1)
        )
        if np.all(in_frame):
            return Sample(
                image=warp_image(sample.image, m),
                landmarks=pts,
                id=sample.id,
            )
    return Sample(image=sample.image.copy(), landmarks=sample.landmarks.copy(),
                  id=sample.id)


# ---------------------------------------------------------------------------
# Network-boundary normalization.
# ---------------------------------------------------------------------------

def normalize(sample: Sample) -> tuple[np.ndarray, np.ndarray]:
    """Return ((1, H, W) image tensor, (2n,) target in [0, 1]).

    Targets are interleaved (x1, y1, ..., xn, yn) divided by (W-1, H-1).
    Raises if any landmark lies outside the frame.
    """
    h, w = sample.image.shape
    pts = as_points(sample.landmarks, min_len=1, name="landmarks")
    if np.any((pts[:, 0] < 0) | (pts[:, 0] > w - 1)
              | (pts[:, 1] < 0) | (pts[:, 1] > h - 1)):
        raise ValueError(f"sample {sample.id!r} has landmarks outside the frame")
    target = np.empty(2 * len(pts), dtype=np.float64)
    target[0::2] = pts[:, 0] / (w - 1)
    target[1::2] = pts[:, 1] / (h - 1)
    return sample.image[None, :, :], target


def denormalize(target, width: int, height: int) -> np.ndarray:
    """Invert `normalize`: (2n,) unit coordinates back to (n, 2) pixels."""
    vec = np.asarray(target, dtype=np.float64).reshape(-1)
    if len(vec) % 2 != 0:
        raise ValueError(f"target length must be even, got {len(vec)}")
    pts = np.empty((len(vec) // 2, 2), dtype=np.float64)
    pts[:, 0] = vec[0::2] * (width - 1)
    pts[:, 1] = vec[1::2] * (height - 1)
    return pts


# ---------------------------------------------------------------------------
# Disk format: 8-bit binary greymaps (P5) plus a landmark CSV and meta.json.
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    """Write a [0, 1] image as a binary P5 greymap with maxval 255."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def _pgm_tokens(data: bytes, count: int, path) -> list[bytes]:
    """Read `count` whitespace-separated header tokens, honoring # comments.

    Returns the tokens plus the offset of the first raster byte.
    """
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise DataFormatError(f"{path}: truncated greymap header")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            start = i
            while i < len(data) and not data[i:i + 1].isspace():
                i += 1
            tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= len(data) or not data[i:i + 1].isspace():
        raise DataFormatError(f"{path}: malformed greymap header")
    tokens.append(i + 1)
    return tokens


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 greymap into a float32 [0, 1] image."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"image file not found: {path}")
    data = path.read_bytes()
    if data[:2] != b"P5":
        raise DataFormatError(f"{path}: not a binary greymap (bad magic {data[:2]!r})")
    magic, ws, hs, maxval, offset = _pgm_tokens(data, 4, path)
    try:
        w, h, mv = int(ws), int(hs), int(maxval)
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed greymap header") from exc
    if mv != 255:
        raise DataFormatError(f"{path}: unsupported maxval {mv} (only 255)")
    raster = data[offset:offset + w * h]
    if len(raster) != w * h:
        raise DataFormatError(
            f"{path}: raster has {len(raster)} bytes, expected {w * h}"
        )
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return img.astype(np.float32) / 255.0


def save_dataset(directory, samples: list[Sample], seed: int | None = None) -> None:
    """Write samples as images/*.pgm + landmarks.csv + meta.json."""
    if not samples:
        raise ValueError("no samples to save")
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        name = f"{s.id}.pgm"
        write_pgm(directory / "images" / name, s.image)
        rows.append((name, s.landmarks))
    write_landmarks_csv(directory / "landmarks.csv", rows)
    meta = {
        "width": samples[0].width,
        "height": samples[0].height,
        "n_points": len(samples[0].landmarks),
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset(directory) -> list[Sample]:
    """Read a dataset directory back; every CSV row must have its image
    and vice versa."""
    directory = Path(directory)
    images_dir = directory / "images"
    if not images_dir.is_dir():
        raise DataFormatError(f"missing images directory: {images_dir}")
    rows = read_landmarks_csv(directory / "landmarks.csv")
    on_disk = {p.name for p in images_dir.glob("*.pgm")}
    listed = {name for name, _ in rows}
    orphan_rows = sorted(listed - on_disk)
    if orphan_rows:
        raise DataFormatError(
            f"landmark rows without an image file: {', '.join(orphan_rows[:5])}"
        )
    orphan_images = sorted(on_disk - listed)
    if orphan_images:
        raise DataFormatError(
            f"image files without a landmark row: {', '.join(orphan_images[:5])}"
        )
    samples = []
    for name, pts in rows:
        img = read_pgm(images_dir / name)
        samples.append(Sample(image=img, landmarks=pts, id=Path(name).stem))
    return samples
