"""Supervised kriging network.

A residual CNN predicts, for every pixel, (2K+1)^2 kriging weights. They
are normalized to sum to one and applied to the pixel's neighbourhood of
the upsampled low-resolution input (the "repeat input" branch), so the
super-resolved value is a local weighted average of observations.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Prediction head starts as a near-identity filter: the centre tap bias is
# one and the head kernel is shrunk so the initial channel sums sit near 1.
HEAD_INIT_SCALE = 1e-3
INPUT_SCALE = 1.0 / 255.0


@dataclass(frozen=True)
class NetworkConfig:
    K: int = 3
    feature_depth: int = 128
    units: int = 9
    scales: tuple = (2, 3, 4)

    def __post_init__(self):
        if self.K < 1 or self.feature_depth < 1 or self.units < 0:
            raise ValueError(f"invalid network config {self}")
        if not set(self.scales) <= {2, 3, 4} or not self.scales:
            raise ValueError(f"scales must be a non-empty subset of {{2, 3, 4}}, got {self.scales}")

    @property
    def taps(self) -> int:
        return (2 * self.K + 1) ** 2

    @property
    def conv_layers(self) -> int:
        return 2 + 2 * self.units

    @property
    def center(self) -> int:
        return 2 * self.K * self.K + 2 * self.K


class NetworkParams:
    """Ordered, named network tensors.

    Trainable tensors have ``requires_grad`` set; batch-norm running
    statistics are stored alongside them as non-trainable buffers.
    """

    def __init__(self, config: NetworkConfig, tensors: OrderedDict | None = None):
        self.config = config
        self.tensors: OrderedDict[str, Tensor] = tensors if tensors is not None else OrderedDict()

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def add(self, name: str, data: np.ndarray, trainable: bool = True):
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        self.tensors[name] = Tensor(data, requires_grad=trainable, name=name)

    def trainable(self) -> dict:
        return OrderedDict((k, t) for k, t in self.tensors.items() if t.requires_grad)

    def arrays(self) -> OrderedDict:
        return OrderedDict((k, t.data) for k, t in self.tensors.items())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "NetworkParams":
        out = NetworkParams(self.config)
        for k, t in self.tensors.items():
            out.add(k, t.data.astype(dtype, copy=True), t.requires_grad)
        return out

    def copy(self) -> "NetworkParams":
        out = NetworkParams(self.config)
        for k, t in self.tensors.items():
            out.add(k, t.data.copy(), t.requires_grad)
        return out


def _conv_names(prefix):
    return f"{prefix}.weight", f"{prefix}.bias"


def _bn_names(prefix):
    return tuple(f"{prefix}.{s}" for s in ("scale", "shift", "running_mean", "running_var"))


def build_network(config: NetworkConfig = NetworkConfig(), seed: int = 0, dtype=np.float32) -> NetworkParams:
    """Entry conv, ``units`` pre-activation residual units, BN-ReLU-dropout and
    the weight prediction conv. Convolutions use He-normal initialization."""
    rng = np.random.default_rng(seed)
    d = config.feature_depth
    params = NetworkParams(config)

    def conv(prefix, cin, cout, gain=1.0):
        std = np.sqrt(2.0 / (cin * 9)) * gain
        w, b = _conv_names(prefix)
        params.add(w, (rng.standard_normal((cout, cin, 3, 3)) * std).astype(dtype))
        params.add(b, np.zeros(cout, dtype=dtype))

    def bn(prefix, c):
        scale, shift, rmean, rvar = _bn_names(prefix)
        params.add(scale, np.ones(c, dtype=dtype))
        params.add(shift, np.zeros(c, dtype=dtype))
        params.add(rmean, np.zeros(c, dtype=dtype), trainable=False)
        params.add(rvar, np.ones(c, dtype=dtype), trainable=False)

    conv("entry", 1, d)
    for u in range(config.units):
        for j in range(2):
            bn(f"unit{u}.bn{j}", d)
            conv(f"unit{u}.conv{j}", d, d)
    bn("head.bn", d)
    conv("head.conv", d, config.taps, gain=HEAD_INIT_SCALE)
    params["head.conv.bias"].data[config.center] = 1
    return params


def _bn(params, prefix, x, training):
    scale, shift, rmean, rvar = (params[n] for n in _bn_names(prefix))
    return ad.batchnorm(x, scale, shift, rmean, rvar, training)


def _conv(params, prefix, x):
    w, b = _conv_names(prefix)
    return ad.conv2d(x, params[w], params[b], pad=1)


def forward(params: NetworkParams, x, training: bool = False, rng=None, dropout: float = 0.3) -> Tensor:
    """Raw (unnormalized) weight field for an (N, 1, H, W) batch of intensities."""
    cfg = params.config
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    h = _conv(params, "entry", ad.mul(x, np.asarray(INPUT_SCALE, dtype=x.dtype)))
    for u in range(cfg.units):
        r = h
        for j in range(2):
            r = ad.relu(_bn(params, f"unit{u}.bn{j}", r, training))
            r = _conv(params, f"unit{u}.conv{j}", r)
        h = ad.add(h, r)
    h = ad.relu(_bn(params, "head.bn", h, training))
    h = ad.dropout(h, dropout, rng, training)
    return _conv(params, "head.conv", h)


def repeat_input(img, K: int) -> np.ndarray:
    """Stack of the (2K+1)^2 shifted copies of an image, edge replicated.

    Accepts (H, W) or (N, H, W) and returns (n, H, W) or (N, n, H, W).
    Channel k = (dy + K) * (2K + 1) + (dx + K) holds img[y + dy, x + dx].
    """
    img = np.asarray(img)
    single = img.ndim == 2
    if single:
        img = img[None]
    if img.ndim != 3 or img.shape[1] < 1 or img.shape[2] < 1:
        raise ValueError(f"expected a non-empty (H, W) or (N, H, W) array, got {img.shape}")
    n, h, w = img.shape
    padded = np.pad(img, ((0, 0), (K, K), (K, K)), mode="edge")
    size = 2 * K + 1
    out = np.empty((n, size * size, h, w), dtype=img.dtype)
    for dy in range(size):
        for dx in range(size):
            out[:, dy * size + dx] = padded[:, dy:dy + h, dx:dx + w]
    return out[0] if single else out


def normalize_weights(raw) -> np.ndarray | Tensor:
    """Make each pixel's weights sum to one (channel axis 1 for batches)."""
    if isinstance(raw, Tensor):
        return ad.normalize_sum(raw)
    raw = np.asarray(raw)
    if raw.ndim == 3:
        return ad.normalize_sum(Tensor(raw[None])).data[0]
    return ad.normalize_sum(Tensor(raw)).data


def apply_weights(weights, stack):
    """Per-pixel dot product between weights and the neighbourhood stack."""
    if isinstance(weights, Tensor) or isinstance(stack, Tensor):
        return ad.channel_dot(weights, stack)
    weights = np.asarray(weights)
    stack = np.asarray(stack)
    if weights.shape != stack.shape:
        raise ValueError(f"shape mismatch: {weights.shape} vs {stack.shape}")
    return np.einsum("...khw,...khw->...hw", weights, stack)


def predict(params: NetworkParams, lr_up, training: bool = False, rng=None, dropout: float = 0.3):
    """Differentiable super-resolution of an (N, H, W) batch -> (N, 1, H, W) tensor."""
    lr_up = np.asarray(lr_up)
    x = Tensor(lr_up[:, None])
    weights = normalize_weights(forward(params, x, training, rng, dropout))
    stack = Tensor(repeat_input(lr_up, params.config.K))
    return apply_weights(weights, stack)


@dataclass
class Inference:
    sr: np.ndarray
    weights: np.ndarray = field(repr=False)


def super_resolve(lr_up, params: NetworkParams, config: NetworkConfig | None = None) -> Inference:
    """Evaluation-mode super-resolution of a single (H, W) upsampled image.

    The network runs in its parameter dtype; normalization and the weighted
    sum are done in float64. Returns the image and the normalized
    (n, H, W) weight field.
    """
    config = config or params.config
    if config != params.config:
        raise ValueError("parameters were built for a different network config")
    lr_up = np.asarray(lr_up, dtype=np.float64)
    if lr_up.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {lr_up.shape}")
    dtype = next(iter(params.tensors.values())).dtype
    with ad.no_grad():
        raw = forward(params, lr_up[None, None].astype(dtype), training=False).data[0]
    weights = normalize_weights(raw.astype(np.float64))
    sr = apply_weights(weights, repeat_input(lr_up, config.K))
    return Inference(sr, weights)
