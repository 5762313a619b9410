"""Coordinate-regression CNN built from scratch on numpy.

Four conv blocks (3x3 conv, batch norm, ReLU, 2x2 max pool) feed two
dropout-equipped dense layers and a linear head that emits 2N normalized
landmark coordinates.  Every layer implements an exact analytic backward
pass; the test suite verifies each against central finite differences.

Layers cache what their backward pass needs on forward, so a network
instance must not be shared by concurrent training steps.  Eval-mode
forward mutates nothing and is safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NetworkConfig",
    "Conv2D",
    "BatchNorm",
    "ReLU",
    "MaxPool2x2",
    "Flatten",
    "Dense",
    "Dropout",
    "LandmarkNet",
    "loss_mse",
]


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    `in_shape` is (channels, height, width); spatial dims must be divisible
    by 2**len(conv_channels) so the pooling chain lands on whole pixels.
    """

    n_points: int = 10
    in_shape: tuple[int, int, int] = (1, 128, 128)
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    fc_sizes: tuple[int, ...] = (256, 128)
    dropout_p: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        c, h, w = self.in_shape
        factor = 2 ** len(self.conv_channels)
        if h % factor or w % factor or h == 0 or w == 0:
            raise ValueError(
                f"input {h}x{w} not divisible by the pooling factor {factor}"
            )

    @property
    def out_size(self) -> int:
        return 2 * self.n_points


def _im2col(x: np.ndarray, k: int, pad: int) -> tuple[np.ndarray, tuple[int, int]]:
    """(B, C, H, W) -> (B, C*k*k, Ho*Wo) patch matrix for stride-1 windows."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = np.empty((b, c, k, k, ho, wo), dtype=x.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, :, di, dj] = x[:, :, di:di + ho, dj:dj + wo]
    return cols.reshape(b, c * k * k, ho * wo), (ho, wo)


class Conv2D:
    """Stride-1 zero-padded cross-correlation with learnable kernels.

    Forward runs one matrix product over the im2col patch matrix, which is
    cached for the weight gradient.  The input gradient scatters column
    gradients back with one strided slice-add per kernel offset, avoiding a
    second patch expansion.
    """

    def __init__(self, in_ch: int, out_ch: int, ksize: int = 3, pad: int | None = None):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        self.pad = ksize // 2 if pad is None else pad
        self.weight = np.zeros((out_ch, in_ch, ksize, ksize))
        self.bias = np.zeros(out_ch)
        self.dweight = None
        self.dbias = None
        self._cache = None

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        fan_in = self.in_ch * self.ksize * self.ksize
        std = np.sqrt(2.0 / fan_in)
        self.weight = rng.normal(0.0, std, self.weight.shape).astype(dtype)
        self.bias = np.zeros(self.out_ch, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ValueError(
                f"expected (B, {self.in_ch}, H, W) input, got {x.shape}"
            )
        b, c, h, w = x.shape
        if h + 2 * self.pad < self.ksize or w + 2 * self.pad < self.ksize:
            raise ValueError(
                f"kernel {self.ksize} with pad {self.pad} does not fit {h}x{w}"
            )
        cols, (ho, wo) = _im2col(x, self.ksize, self.pad)
        y = np.matmul(self.weight.reshape(self.out_ch, -1), cols)
        y += self.bias[:, None].astype(x.dtype)
        self._cache = (cols, (h, w), (ho, wo))
        return y.reshape(b, self.out_ch, ho, wo)

    def backward(self, dy):
        cols, (h, w), (ho, wo) = self._cache
        b = dy.shape[0]
        k, p = self.ksize, self.pad
        dyf = dy.reshape(b, self.out_ch, ho * wo)
        self.dbias = dyf.sum(axis=(0, 2))
        dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0)
        self.dweight = dw.reshape(self.weight.shape)
        dcols = np.matmul(self.weight.reshape(self.out_ch, -1).T, dyf)
        dcols = dcols.reshape(b, self.in_ch, k, k, ho, wo)
        dxp = np.zeros((b, self.in_ch, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + ho, dj:dj + wo] += dcols[:, :, di, dj]
        return dxp[:, :, p:p + h, p:p + w]


class BatchNorm:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.dgamma = None
        self.dbeta = None
        self._cache = None

    def init_params(self, rng, dtype) -> None:
        self.gamma = np.ones(self.num_features, dtype=dtype)
        self.beta = np.zeros(self.num_features, dtype=dtype)
        self.running_mean = np.zeros(self.num_features, dtype=dtype)
        self.running_var = np.ones(self.num_features, dtype=dtype)

    def _shape(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, self.num_features, 1, 1)
        if x.ndim == 2:
            return (0,), (1, self.num_features)
        raise ValueError(f"batch norm expects 2-D or 4-D input, got {x.ndim}-D")

    def forward(self, x, training=False, rng=None):
        axes, pshape = self._shape(x)
        if x.shape[1] != self.num_features:
            raise ValueError(
                f"expected {self.num_features} channels, got {x.shape}"
            )
        if training:
            if x.shape[0] < 2:
                raise ValueError("batch norm needs a batch of >= 2 in train mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(x.dtype)
            self.running_var = ((1 - m) * self.running_var + m * var).astype(x.dtype)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(pshape)) * inv.reshape(pshape)
        self._cache = (xhat, inv, axes, pshape, training,
                       x.size // self.num_features)
        return self.gamma.reshape(pshape) * xhat + self.beta.reshape(pshape)

    def backward(self, dy):
        xhat, inv, axes, pshape, training, count = self._cache
        self.dgamma = (dy * xhat).sum(axis=axes)
        self.dbeta = dy.sum(axis=axes)
        dxhat = dy * self.gamma.reshape(pshape)
        if not training:
            return dxhat * inv.reshape(pshape)
        s1 = dxhat.sum(axis=axes).reshape(pshape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(pshape)
        return (inv.reshape(pshape) / count) * (count * dxhat - s1 - xhat * s2)


class ReLU:
    def forward(self, x, training=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0)


class MaxPool2x2:
    """2x2 stride-2 max pooling; backward routes to the first max on ties."""

    def forward(self, x, training=False, rng=None):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"pooling needs even spatial dims, got {h}x{w}")
        win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(b, c, h // 2, w // 2, 4)
        self._argmax = win.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(win, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        b, c, h, w = self._in_shape
        grad = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(grad, self._argmax[..., None], dy[..., None], axis=-1)
        grad = grad.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return grad.reshape(b, c, h, w)


class Flatten:
    def forward(self, x, training=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense:
    """Affine map y = x W^T + b."""

    def __init__(self, in_features: int, out_features: int, head: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        self.head = head
        self.weight = np.zeros((out_features, in_features))
        self.bias = np.zeros(out_features)
        self.dweight = None
        self.dbias = None
        self._x = None

    def init_params(self, rng, dtype) -> None:
        if self.head:
            std = np.sqrt(2.0 / (self.in_features + self.out_features))
        else:
            std = np.sqrt(2.0 / self.in_features)
        self.weight = rng.normal(0.0, std, self.weight.shape).astype(dtype)
        self.bias = np.zeros(self.out_features, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(
                f"expected (B, {self.in_features}) input, got {x.shape}"
            )
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dy):
        self.dweight = dy.T @ self._x
        self.dbias = dy.sum(axis=0)
        return dy @ self.weight


class Dropout:
    """Inverted dropout: kept units are rescaled so eval is an identity."""

    def __init__(self, p: float = 0.5):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x, training=False, rng=None):
        if not training or self.p == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng stream")
        keep = 1.0 - self.p
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask.astype(x.dtype)

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask.astype(dy.dtype)


class LandmarkNet:
    """The full regression network; owns parameters and layer order."""

    def __init__(self, config: NetworkConfig, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = dtype
        c, h, w = config.in_shape
        self.layers: list[tuple[str, object]] = []
        in_ch = c
        for i, out_ch in enumerate(config.conv_channels, start=1):
            self.layers.append((f"conv{i}", Conv2D(in_ch, out_ch)))
            self.layers.append((f"bn{i}", BatchNorm(out_ch, config.bn_eps,
                                                    config.bn_momentum)))
            self.layers.append((f"relu{i}", ReLU()))
            self.layers.append((f"pool{i}", MaxPool2x2()))
            in_ch = out_ch
        self.layers.append(("flatten", Flatten()))
        factor = 2 ** len(config.conv_channels)
        in_feat = in_ch * (h // factor) * (w // factor)
        for i, size in enumerate(config.fc_sizes, start=1):
            self.layers.append((f"fc{i}", Dense(in_feat, size)))
            self.layers.append((f"fc{i}_relu", ReLU()))
            self.layers.append((f"fc{i}_drop", Dropout(config.dropout_p)))
            in_feat = size
        self.layers.append(("head", Dense(in_feat, config.out_size, head=True)))
        rng = np.random.default_rng(seed)
        for _, layer in self.layers:
            if hasattr(layer, "init_params"):
                layer.init_params(rng, dtype)

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1:] != self.config.in_shape:
            raise ValueError(
                f"expected batch of shape (B, {self.config.in_shape}), got {x.shape}"
            )
        for _, layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dy) -> np.ndarray:
        for _, layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    _PARAM_FIELDS = {
        Conv2D: ("weight", "bias"),
        Dense: ("weight", "bias"),
        BatchNorm: ("gamma", "beta"),
    }
    _GRAD_FIELDS = {
        Conv2D: ("dweight", "dbias"),
        Dense: ("dweight", "dbias"),
        BatchNorm: ("dgamma", "dbeta"),
    }

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """Learnable arrays in a fixed, checkpoint-stable order."""
        out = []
        for name, layer in self.layers:
            for attr in self._PARAM_FIELDS.get(type(layer), ()):
                out.append((f"{name}.{attr}", getattr(layer, attr)))
        return out

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        layer_name, attr = name.split(".")
        layer = dict(self.layers)[layer_name]
        setattr(layer, attr, value)

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        """Gradients matching `parameters`, valid after a backward pass."""
        out = []
        for name, layer in self.layers:
            params = self._PARAM_FIELDS.get(type(layer), ())
            grads = self._GRAD_FIELDS.get(type(layer), ())
            for attr, gattr in zip(params, grads):
                out.append((f"{name}.{attr}", getattr(layer, gattr)))
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus batch-norm running statistics."""
        out = list(self.parameters())
        for name, layer in self.layers:
            if isinstance(layer, BatchNorm):
                out.append((f"{name}.running_mean", layer.running_mean))
                out.append((f"{name}.running_var", layer.running_var))
        return out

    def load_state_arrays(self, arrays: list[tuple[str, np.ndarray]]) -> None:
        expected = [name for name, _ in self.state_arrays()]
        got = [name for name, _ in arrays]
        if expected != got:
            raise ValueError(f"state mismatch: expected {expected}, got {got}")
        layers = dict(self.layers)
        for name, value in arrays:
            layer_name, attr = name.split(".")
            current = getattr(layers[layer_name], attr)
            if current.shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {current.shape} vs {value.shape}"
                )
            setattr(layers[layer_name], attr, value.astype(self.dtype))

    def copy(self) -> "LandmarkNet":
        dup = LandmarkNet(self.config, seed=0, dtype=self.dtype)
        dup.load_state_arrays([(n, a.copy()) for n, a in self.state_arrays()])
        return dup

    def parameter_count(self, include_batchnorm: bool = True) -> int:
        total = 0
        for name, arr in self.parameters():
            if not include_batchnorm and (".gamma" in name or ".beta" in name):
                continue
            total += arr.size
        return total


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over batch and coordinates, with its gradient."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff**2))
    return loss, (2.0 / diff.size) * diff
