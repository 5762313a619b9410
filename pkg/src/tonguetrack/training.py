"""Training loop with online augmentation, evaluation, and benchmarking.

Training is a single logical writer over the model; per-item RNG streams
are derived from (seed, purpose tag, epoch, index) so shuffling,
augmentation and dropout are reproducible bit for bit regardless of how
batches are assembled.
"""

from __future__ import annotations

import dataclasses
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .annotation import revert_to_contour
from .data import (
    AugmentConfig,
    Sample,
    SynthConfig,
    augment,
    denormalize,
    make_dataset,
    normalize,
    split_dataset,
)
from .exceptions import (
    CorruptCheckpointError,
    FitError,
    NotACheckpointError,
    UnsupportedVersionError,
)
from .geometry import as_points, msd, resample_by_arclength
from .network import LandmarkNet, NetworkConfig, loss_mse

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "TrainResult",
    "train",
    "EvalReport",
    "evaluate",
    "evaluate_predictions",
    "predict_landmarks",
    "infer_landmarks",
    "constant_center_landmarks",
    "save_checkpoint",
    "load_checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
    "BenchmarkResult",
    "benchmark_framerate",
    "SweepRow",
    "point_count_sweep",
]

CHECKPOINT_MAGIC = b"TNET"
CHECKPOINT_VERSION = 1

# purpose tags keeping independent seed streams apart
_SHUFFLE, _AUGMENT, _DROPOUT = 11, 12, 13

_EVAL_BATCH = 64
_CURVE_SAMPLES = 100


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule hyperparameters."""

    lr: float = 5e-4
    batch_size: int = 30
    epochs: int = 10
    max_iterations: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch_size < 2:
            raise ValueError(
                f"batch_size must be >= 2 (batch norm), got {self.batch_size}"
            )
        if self.epochs < 0 or self.max_iterations < 0:
            raise ValueError("epochs and max_iterations must be >= 0")


@dataclass
class AdamState:
    """First/second moment estimates per parameter, plus the step count."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[tuple[str, np.ndarray]]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for _, p in params],
            v=[np.zeros_like(p) for _, p in params],
        )


def adam_step(
    params: list[tuple[str, np.ndarray]],
    grads: list[tuple[str, np.ndarray]],
    state: AdamState,
    cfg: TrainConfig,
) -> None:
    """One Adam update, in place on the parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists must align")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, ((name, p), (gname, g)) in enumerate(zip(params, grads)):
        if g is None or p.shape != g.shape:
            raise ValueError(f"gradient mismatch for {name}: {gname}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)


@dataclass
class TrainResult:
    model: LandmarkNet
    train_loss: list[float]
    val_loss: list[float]
    val_msd: list[float]
    best_model: LandmarkNet
    best_val_msd: float


def _batch_tensors(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = zip(*(normalize(s) for s in samples))
    return np.stack(xs), np.stack(ys).astype(np.float32)


def _validation_loss(model: LandmarkNet, samples: list[Sample]) -> float:
    total, count = 0.0, 0
    for i in range(0, len(samples), _EVAL_BATCH):
        x, y = _batch_tensors(samples[i:i + _EVAL_BATCH])
        pred = model.forward(x, training=False)
        diff = pred.astype(np.float64) - y
        total += float((diff**2).sum())
        count += diff.size
    return total / count


def train(
    model: LandmarkNet,
    train_set: list[Sample],
    val_set: list[Sample],
    cfg: TrainConfig,
) -> TrainResult:
    """Optimize `model` on `train_set` with online augmentation.

    Runs min(epochs * ceil(len(train)/batch), max_iterations) Adam steps.
    After each epoch the validation loss and validation MSD are recorded,
    and the model with the lowest validation MSD is kept as `best_model`.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("training set is empty")
    if n < cfg.batch_size:
        raise ValueError(
            f"training set ({n}) smaller than batch_size ({cfg.batch_size})"
        )
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = min(cfg.epochs * steps_per_epoch, cfg.max_iterations)
    adam = AdamState.for_params(model.parameters())
    train_loss: list[float] = []
    val_loss: list[float] = []
    val_msd: list[float] = []
    best_model = model.copy()
    best_val = float("inf")
    step = 0
    for epoch in range(cfg.epochs):
        if step >= total_steps:
            break
        order = np.random.default_rng((cfg.seed, _SHUFFLE, epoch)).permutation(n)
        for start in range(0, n, cfg.batch_size):
            if step >= total_steps:
                break
            batch = []
            for idx in order[start:start + cfg.batch_size]:
                s = train_set[int(idx)]
                if cfg.augment.enabled:
                    rng = np.random.default_rng(
                        (cfg.seed, _AUGMENT, epoch, int(idx))
                    )
                    s = augment(s, cfg.augment, rng)
                batch.append(s)
            x, y = _batch_tensors(batch)
            drop_rng = np.random.default_rng((cfg.seed, _DROPOUT, step))
            pred = model.forward(x, training=True, rng=drop_rng)
            loss, dpred = loss_mse(pred, y.astype(pred.dtype))
            model.backward(dpred)
            adam_step(model.parameters(), model.gradients(), adam, cfg)
            train_loss.append(loss)
            step += 1
        if val_set:
            val_loss.append(_validation_loss(model, val_set))
            report = evaluate(model, val_set)
            val_msd.append(report.mean)
            if report.mean < best_val:
                best_val = report.mean
                best_model = model.copy()
    if not val_set or not val_msd:
        best_model = model.copy()
        best_val = float("nan")
    return TrainResult(model, train_loss, val_loss, val_msd, best_model, best_val)


# ---------------------------------------------------------------------------
# Evaluation: landmark sets are reverted to contours and compared by MSD.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    """Per-sample MSD values in pixels plus summary statistics."""

    per_sample: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.per_sample, dtype=np.float64)
        if arr.size < 1:
            raise ValueError("evaluation report needs at least one sample")
        object.__setattr__(self, "per_sample", arr)

    @property
    def n(self) -> int:
        return int(self.per_sample.size)

    @property
    def mean(self) -> float:
        return float(self.per_sample.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.per_sample))

    @property
    def p95(self) -> float:
        return float(np.percentile(self.per_sample, 95))

    def record(self) -> str:
        return (
            f"msd_mean_px={self.mean:.6g} msd_median_px={self.median:.6g} "
            f"msd_p95_px={self.p95:.6g} n={self.n}"
        )


def _eval_curve(landmarks: np.ndarray) -> np.ndarray:
    """Landmarks -> comparable contour: spline revert + uniform resampling.

    Degenerate landmark sets (all points coincident, as a constant
    predictor emits) cannot be spline-fitted; they are compared as raw
    point sets instead.
    """
    try:
        return resample_by_arclength(
            revert_to_contour(landmarks, _CURVE_SAMPLES), _CURVE_SAMPLES
        )
    except (FitError, ValueError):
        return as_points(landmarks)


def predict_landmarks(model: LandmarkNet, samples: list[Sample]) -> np.ndarray:
    """Eval-mode predictions for a sample list, in pixels: (B, N, 2)."""
    out = []
    for i in range(0, len(samples), _EVAL_BATCH):
        chunk = samples[i:i + _EVAL_BATCH]
        x = np.stack([normalize(s)[0] for s in chunk])
        pred = model.forward(x, training=False)
        for s, row in zip(chunk, pred):
            out.append(denormalize(row, s.width, s.height))
    return np.stack(out)


def infer_landmarks(model: LandmarkNet, image: np.ndarray) -> np.ndarray:
    """Predict landmarks for one raw image: (N, 2) pixels."""
    c, h, w = model.config.in_shape
    img = np.asarray(image, dtype=np.float32)
    if img.shape != (h, w):
        raise ValueError(
            f"image shape {img.shape} does not match the model input {h}x{w}"
        )
    pred = model.forward(img[None, None, :, :], training=False)[0]
    return denormalize(pred, w, h)


def evaluate_predictions(
    predicted: np.ndarray, samples: list[Sample]
) -> EvalReport:
    """MSD between reverted predicted and ground-truth contours."""
    if len(samples) == 0:
        raise ValueError("evaluation set is empty")
    per = [
        msd(_eval_curve(pred), _eval_curve(s.landmarks))
        for pred, s in zip(predicted, samples)
    ]
    return EvalReport(np.array(per))


def evaluate(model: LandmarkNet, samples: list[Sample]) -> EvalReport:
    """Evaluate a model on annotated samples."""
    if len(samples) == 0:
        raise ValueError("evaluation set is empty")
    return evaluate_predictions(predict_landmarks(model, samples), samples)


def constant_center_landmarks(width: int, height: int, n: int) -> np.ndarray:
    """The degenerate baseline: every landmark at the image center."""
    return np.tile([(width - 1) / 2.0, (height - 1) / 2.0], (n, 1))


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, architecture, then raw little-endian float32.
# ---------------------------------------------------------------------------

def encode_checkpoint(model: LandmarkNet, adam: AdamState | None = None) -> bytes:
    cfg = model.config
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<4I", cfg.n_points, *cfg.in_shape))
    parts.append(struct.pack("<I", len(cfg.conv_channels)))
    parts.append(struct.pack(f"<{len(cfg.conv_channels)}I", *cfg.conv_channels))
    parts.append(struct.pack("<I", len(cfg.fc_sizes)))
    parts.append(struct.pack(f"<{len(cfg.fc_sizes)}I", *cfg.fc_sizes))
    parts.append(struct.pack("<3f", cfg.dropout_p, cfg.bn_eps, cfg.bn_momentum))
    parts.append(struct.pack("<B", 1 if adam is not None else 0))
    for _, arr in model.state_arrays():
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if adam is not None:
        parts.append(struct.pack("<Q", adam.t))
        for moments in (adam.m, adam.v):
            for arr in moments:
                parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        if self.offset + count > len(self.data):
            raise CorruptCheckpointError(
                f"checkpoint truncated at byte {self.offset} while reading {what} "
                f"({count} bytes needed, {len(self.data) - self.offset} left)"
            )
        out = self.data[self.offset:self.offset + count]
        self.offset += count
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def decode_checkpoint(data: bytes) -> tuple[LandmarkNet, AdamState | None]:
    if data[:4] != CHECKPOINT_MAGIC:
        raise NotACheckpointError(
            f"not a checkpoint: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    r = _Reader(data)
    r.take(4, "magic")
    (version,) = r.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {version} unsupported; this build reads "
            f"version {CHECKPOINT_VERSION}"
        )
    n_points, c, h, w = r.unpack("<4I", "architecture")
    (n_conv,) = r.unpack("<I", "conv channel count")
    conv = r.unpack(f"<{n_conv}I", "conv channels")
    (n_fc,) = r.unpack("<I", "fc size count")
    fc = r.unpack(f"<{n_fc}I", "fc sizes")
    dropout_p, bn_eps, bn_momentum = r.unpack("<3f", "regularization config")
    (has_adam,) = r.unpack("<B", "optimizer flag")
    try:
        cfg = NetworkConfig(
            n_points=n_points, in_shape=(c, h, w), conv_channels=tuple(conv),
            fc_sizes=tuple(fc), dropout_p=float(dropout_p),
            bn_eps=float(bn_eps), bn_momentum=float(bn_momentum),
        )
    except ValueError as exc:
        raise CorruptCheckpointError(f"invalid architecture in checkpoint: {exc}") from exc
    model = LandmarkNet(cfg, seed=0, dtype=np.float32)
    arrays = [(name, r.array(arr.shape, name)) for name, arr in model.state_arrays()]
    model.load_state_arrays(arrays)
    adam = None
    if has_adam:
        (t,) = r.unpack("<Q", "optimizer step count")
        params = model.parameters()
        m = [r.array(p.shape, f"adam m for {name}") for name, p in params]
        v = [r.array(p.shape, f"adam v for {name}") for name, p in params]
        adam = AdamState(m=m, v=v, t=int(t))
    if r.offset != len(data):
        raise CorruptCheckpointError(
            f"checkpoint has {len(data) - r.offset} unexpected trailing bytes "
            f"at offset {r.offset}"
        )
    return model, adam


def save_checkpoint(path, model: LandmarkNet, adam: AdamState | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(model, adam))


def load_checkpoint(path) -> tuple[LandmarkNet, AdamState | None]:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# ---------------------------------------------------------------------------
# Throughput benchmark and the output-size sweep harness.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkResult:
    frames: int
    seconds: float

    @property
    def fps(self) -> float:
        return self.frames / self.seconds


def benchmark_framerate(
    model: LandmarkNet, frames: list[np.ndarray], warmup: int = 0
) -> BenchmarkResult:
    """Frame-by-frame eval-mode throughput (batch 1), excluding disk I/O.

    Each timed iteration covers normalization, the forward pass and
    coordinate denormalization.  `warmup` leading frames are discarded.
    """
    if len(frames) - warmup < 1:
        raise ValueError(
            f"need at least 1 frame after {warmup} warmup frames, got {len(frames)}"
        )
    for img in frames[:warmup]:
        infer_landmarks(model, img)
    start = time.perf_counter()
    for img in frames[warmup:]:
        infer_landmarks(model, img)
    elapsed = time.perf_counter() - start
    return BenchmarkResult(frames=len(frames) - warmup, seconds=max(elapsed, 1e-12))


@dataclass(frozen=True)
class SweepRow:
    n_points: int
    msd_mean: float
    fps: float


def point_count_sweep(
    n_list: list[int],
    data_cfg: SynthConfig,
    train_cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
    count: int = 200,
    bench_frames: int = 20,
) -> list[SweepRow]:
    """Retrain and evaluate the model for each output point count.

    Every arm regenerates the synthetic dataset with the same base seed, so
    the reported MSD column is reproducible run to run (frame rate is a
    wall-clock measurement and naturally varies).
    """
    base = net_cfg or NetworkConfig()
    rows = []
    for n in n_list:
        if not 5 <= n <= 100:
            raise ValueError(f"point count {n} outside the supported range [5, 100]")
        cfg_n = dataclasses.replace(
            data_cfg,
            n_points=n,
            spacing=dataclasses.replace(data_cfg.spacing, n_points=n),
        )
        samples = make_dataset(cfg_n, count, seed=train_cfg.seed)
        train_set, val_set, test_set = split_dataset(samples, seed=train_cfg.seed)
        ncfg = dataclasses.replace(
            base, n_points=n, in_shape=(1, cfg_n.height, cfg_n.width)
        )
        model = LandmarkNet(ncfg, seed=train_cfg.seed)
        result = train(model, train_set, val_set, train_cfg)
        report = evaluate(result.best_model, test_set)
        bench = benchmark_framerate(
            result.best_model,
            [s.image for s in test_set[:bench_frames]],
            warmup=min(3, max(0, bench_frames - 1)),
        )
        rows.append(SweepRow(n_points=n, msd_mean=report.mean, fps=bench.fps))
    return rows
