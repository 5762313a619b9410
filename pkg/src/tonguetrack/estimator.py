"""Scikit-learn estimator facade over the landmark-regression pipeline.

`LandmarkRegressor` exposes the network + training loop with the familiar
fit/predict/score surface so it drops into sklearn tooling (clone,
get_params, pipelines).  X is a stack of grayscale frames, y the flattened
pixel coordinates (x1, y1, ..., xN, yN) per frame.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import AugmentConfig, Sample, denormalize
from .network import LandmarkNet, NetworkConfig
from .training import TrainConfig, evaluate_predictions, train

__all__ = ["LandmarkRegressor"]


class LandmarkRegressor(BaseEstimator, RegressorMixin):
    """Regress landmark coordinates directly from grayscale frames.

    Parameters mirror the training defaults: Adam with learning rate 5e-4,
    minibatches of 30, 10 epochs capped at 1000 steps, online geometric
    augmentation, and a small validation split used to retain the best
    model by contour MSD.
    """

    def __init__(
        self,
        n_points: int = 10,
        conv_channels: tuple[int, ...] = (16, 32, 64, 128),
        fc_sizes: tuple[int, ...] = (256, 128),
        dropout_p: float = 0.5,
        learning_rate: float = 5e-4,
        batch_size: int = 30,
        epochs: int = 10,
        max_iterations: int = 1000,
        augment: bool = True,
        val_fraction: float = 0.05,
        seed: int = 0,
    ):
        self.n_points = n_points
        self.conv_channels = conv_channels
        self.fc_sizes = fc_sizes
        self.dropout_p = dropout_p
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_iterations = max_iterations
        self.augment = augment
        self.val_fraction = val_fraction
        self.seed = seed

    def _check_images(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 3:
            raise ValueError(
                f"X must be a (n_samples, height, width) image stack, got {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if X.min() < 0 or X.max() > 1:
            raise ValueError("image intensities must lie in [0, 1]")
        return X

    def _to_samples(self, X, y) -> list[Sample]:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[1] != 2 * self.n_points:
            raise ValueError(
                f"y must have shape (n_samples, {2 * self.n_points}), got {y.shape}"
            )
        if len(X) != len(y):
            raise ValueError(f"X and y lengths differ: {len(X)} vs {len(y)}")
        return [
            Sample(image=img, landmarks=row.reshape(-1, 2), id=str(i))
            for i, (img, row) in enumerate(zip(X, y))
        ]

    def fit(self, X, y):
        """Train the network; keeps the lowest-validation-MSD model."""
        X = self._check_images(X)
        samples = self._to_samples(X, y)
        n = len(samples)
        n_val = int(np.floor(self.val_fraction * n))
        order = np.random.default_rng(self.seed).permutation(n)
        val_set = [samples[i] for i in order[:n_val]]
        train_set = [samples[i] for i in order[n_val:]]
        h, w = X.shape[1:]
        net = LandmarkNet(
            NetworkConfig(
                n_points=self.n_points,
                in_shape=(1, h, w),
                conv_channels=tuple(self.conv_channels),
                fc_sizes=tuple(self.fc_sizes),
                dropout_p=self.dropout_p,
            ),
            seed=self.seed,
        )
        cfg = TrainConfig(
            lr=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            max_iterations=self.max_iterations,
            seed=self.seed,
            augment=AugmentConfig(enabled=self.augment),
        )
        result = train(net, train_set, val_set, cfg)
        self.net_ = result.best_model
        self.train_loss_ = result.train_loss
        self.val_msd_ = result.val_msd
        self.best_val_msd_ = result.best_val_msd
        self.n_features_in_ = h * w
        return self

    def predict(self, X) -> np.ndarray:
        """Pixel coordinates per frame, shaped like y: (n, 2 * n_points)."""
        check_is_fitted(self, "net_")
        X = self._check_images(X)
        c, h, w = self.net_.config.in_shape
        if X.shape[1:] != (h, w):
            raise ValueError(
                f"frames are {X.shape[1:]}, the fitted model expects {(h, w)}"
            )
        out = np.empty((len(X), 2 * self.net_.config.n_points))
        for i in range(0, len(X), 64):
            chunk = X[i:i + 64]
            pred = self.net_.forward(chunk[:, None, :, :], training=False)
            for j, row in enumerate(pred):
                out[i + j] = denormalize(row, w, h).ravel()
        return out

    def score(self, X, y) -> float:
        """Negative mean contour MSD in pixels (greater is better)."""
        check_is_fitted(self, "net_")
        X = self._check_images(X)
        samples = self._to_samples(X, y)
        pred = self.predict(X).reshape(len(X), -1, 2)
        return -evaluate_predictions(pred, samples).mean
