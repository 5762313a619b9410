"""Tongue-surface landmark tracking for ultrasound frames.

A small convolutional network regresses N landmark coordinates directly
from a grayscale frame in one step; spline fitting reverts the landmarks
to a continuous contour for MSD-based evaluation.  Includes a synthetic
data generator, automatic annotation from contour masks, keypoint-aware
augmentation, and a CLI covering the full pipeline.
"""

from .annotation import (
    SpacingPolicy,
    contour_from_mask,
    equal_spaced_landmarks,
    random_spaced_landmarks,
    revert_to_contour,
)
from .data import (
    AugmentConfig,
    Sample,
    SynthConfig,
    augment,
    denormalize,
    load_dataset,
    make_dataset,
    normalize,
    save_dataset,
    split_dataset,
    synth_generate,
)
from .estimator import LandmarkRegressor
from .geometry import (
    BSplineCurve,
    apply_affine,
    eval_bspline,
    fit_bspline,
    make_affine,
    msd,
    resample_by_arclength,
)
from .network import LandmarkNet, NetworkConfig, loss_mse
from .training import (
    AdamState,
    EvalReport,
    TrainConfig,
    adam_step,
    benchmark_framerate,
    evaluate,
    infer_landmarks,
    load_checkpoint,
    point_count_sweep,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AugmentConfig",
    "BSplineCurve",
    "EvalReport",
    "LandmarkNet",
    "LandmarkRegressor",
    "NetworkConfig",
    "Sample",
    "SpacingPolicy",
    "SynthConfig",
    "TrainConfig",
    "adam_step",
    "apply_affine",
    "augment",
    "benchmark_framerate",
    "contour_from_mask",
    "denormalize",
    "equal_spaced_landmarks",
    "eval_bspline",
    "evaluate",
    "fit_bspline",
    "infer_landmarks",
    "load_checkpoint",
    "load_dataset",
    "loss_mse",
    "make_affine",
    "make_dataset",
    "msd",
    "normalize",
    "point_count_sweep",
    "random_spaced_landmarks",
    "resample_by_arclength",
    "revert_to_contour",
    "save_checkpoint",
    "save_dataset",
    "split_dataset",
    "synth_generate",
    "train",
]
