"""Training-set assembly, empirical-risk minimization and checkpoints."""

from __future__ import annotations

import contextlib
import io
import json
import logging
import math
import os
import struct
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .deep_kriging import NetworkConfig, NetworkParams, build_network, predict
from .image_core import PatchSet, augment, degrade, extract_patches, modcrop, to_luma
from .image_io import read_image
from .metrics import list_images

log = logging.getLogger(__name__)

MAGIC = b"DKRG"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    dropout: float = 0.3
    clip_norm: float = 1.0
    iterations: int = 2000
    seed: int = 0
    scales: tuple = (2, 3, 4)
    patch: int = 31
    stride: int = 21
    checkpoint_every: int = 500

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "clip_norm", "patch", "stride", "checkpoint_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.seed < 0:
            raise ValueError("iterations and seed must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if not self.scales or not set(self.scales) <= {2, 3, 4}:
            raise ValueError(f"scales must be a non-empty subset of {{2, 3, 4}}, got {self.scales}")


# -- data -------------------------------------------------------------------


def patches_for_image(img, scales, rotations=(0, 1, 2, 3), size=31, stride=21, source=None):
    sets = []
    for v in augment([img], scales=scales, rotations=rotations):
        hr = modcrop(v.image, v.scale)
        if min(hr.shape) < size:
            continue
        sets.append(extract_patches(degrade(hr, v.scale), hr, size, stride,
                                    source=(source, v.rotation, v.scale)))
    return sets


def build_training_set(image_dir, config: TrainConfig = TrainConfig(), rotations=(0, 1, 2, 3),
                       dtype=np.float32) -> PatchSet:
    """All (upsampled-LR, HR) patch pairs of every augmented image, in a
    seeded random order."""
    sets = []
    for path in list_images(image_dir):
        try:
            img = to_luma(read_image(path))
        except Exception as exc:  # unreadable or unsupported file
            log.warning("skipping %s: %s", path, exc)
            continue
        sets += patches_for_image(img, config.scales, rotations, config.patch, config.stride,
                                  source=os.path.basename(path))
    if not sets:
        raise ValueError(f"no training patches could be built from {image_dir}")
    data = PatchSet.concat(sets)
    order = np.random.default_rng(config.seed).permutation(len(data))
    return PatchSet(data.lr[order].astype(dtype), data.hr[order].astype(dtype),
                    [data.sources[i] for i in order])


def empirical_risk(pred, target) -> float:
    """Mean squared error over batch and pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


# -- checkpoints ------------------------------------------------------------


class CheckpointFormatError(ValueError):
    pass


class CorruptCheckpointError(CheckpointFormatError):
    pass


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: NetworkParams
    adam: ad.AdamState = field(default_factory=ad.AdamState)
    iteration: int = 0
    rng_state: dict | None = None
    version: int = FORMAT_VERSION


def _pack_array(buf, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    cfg = ckpt.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    buf.write(struct.pack("<4I", cfg.K, cfg.feature_depth, cfg.units, len(cfg.scales)))
    buf.write(struct.pack(f"<{len(cfg.scales)}I", *cfg.scales))
    buf.write(struct.pack("<I", ckpt.iteration))
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(rng)))
    buf.write(rng)
    a = ckpt.adam
    buf.write(struct.pack("<4dI", a.lr, a.beta1, a.beta2, a.eps, a.step))

    records = list(ckpt.params.arrays().items())
    for name in ckpt.params.trainable():
        if name in a.m:
            records.append((f"adam.m/{name}", a.m[name]))
            records.append((f"adam.v/{name}", a.v[name]))
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _pack_array(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    data = checkpoint_bytes(ckpt)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("not a DKRG checkpoint (bad magic)")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    K, depth, units, nscales = r.unpack("<4I")
    scales = r.unpack(f"<{nscales}I")
    try:
        config = NetworkConfig(K, depth, units, tuple(scales))
    except ValueError as exc:
        raise CorruptCheckpointError(f"invalid network config: {exc}") from exc
    (iteration,) = r.unpack("<I")
    (rng_len,) = r.unpack("<I")
    try:
        rng_state = json.loads(r.take(rng_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError("unreadable RNG state") from exc
    lr, b1, b2, eps, step = r.unpack("<4dI")
    adam = ad.AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, step=step)

    template = build_network(config, seed=0)
    shapes = {k: t.shape for k, t in template.tensors.items()}
    arrays = OrderedDict()
    (count,) = r.unpack("<I")
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8", errors="strict")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I")
        size = math.prod(dims)
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        arrays[name] = arr
    if r.pos != len(data):
        raise CorruptCheckpointError("trailing bytes after last record")

    params = NetworkParams(config)
    for name, shape in shapes.items():
        if name not in arrays:
            raise CorruptCheckpointError(f"missing parameter {name!r}")
        if arrays[name].shape != shape:
            raise CheckpointFormatError(f"parameter {name!r} has shape {arrays[name].shape}, expected {shape}")
        params.add(name, arrays[name], template[name].requires_grad)
    for name, arr in arrays.items():
        if name.startswith(("adam.m/", "adam.v/")):
            pname = name.split("/", 1)[1]
            if pname not in shapes or arr.shape != shapes[pname]:
                raise CheckpointFormatError(f"optimizer record {name!r} does not match the network")
            (adam.m if name.startswith("adam.m/") else adam.v)[pname] = arr
        elif name not in shapes:
            raise CheckpointFormatError(f"unexpected record {name!r}")
    return Checkpoint(config, params, adam, iteration, rng_state, version)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())


# -- optimization -----------------------------------------------------------


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, last_good: Checkpoint):
        super().__init__(message)
        self.last_good = last_good


@contextlib.contextmanager
def blas_threads(n: int | None):
    """Limit BLAS threads; ``n == 0`` means strict single-threaded."""
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, n)):
        yield


def _snapshot(params, adam, iteration, rng) -> Checkpoint:
    return Checkpoint(
        params.config,
        params.copy(),
        replace(adam, m={k: v.copy() for k, v in adam.m.items()}, v={k: v.copy() for k, v in adam.v.items()}),
        iteration,
        rng.bit_generator.state,
    )


def initial_checkpoint(params: NetworkParams, config: TrainConfig) -> Checkpoint:
    rng = np.random.default_rng(config.seed)
    return Checkpoint(params.config, params, ad.AdamState(lr=config.learning_rate), 0, rng.bit_generator.state)


def train_step(params: NetworkParams, lr_batch, hr_batch, adam: ad.AdamState, config: TrainConfig, rng):
    params.zero_grad()
    pred = predict(params, lr_batch, training=True, rng=rng, dropout=config.dropout)
    loss = ad.mse(pred, hr_batch[:, None])
    if not math.isfinite(float(loss.data)):
        raise FloatingPointError(f"non-finite loss {float(loss.data)}")
    loss.backward()
    trainable = params.trainable()
    grads = OrderedDict((k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in trainable.items())
    arrays = OrderedDict((k, t.data) for k, t in trainable.items())
    norm = ad.adam_step(arrays, grads, adam, config.clip_norm)
    return float(loss.data), norm


def train(config: TrainConfig, dataset: PatchSet, start: Checkpoint, log_file=None, strict: bool = False):
    """Minimize the mean squared error of the kriging estimate with Adam.

    Yields a Checkpoint every ``config.checkpoint_every`` iterations and
    after the last one. `log_file` receives ``iter,loss,grad_norm,seconds``
    rows; in strict mode the wall-clock column is written as ``NA`` so the
    log is reproducible byte for byte.
    """
    params = start.params
    adam = start.adam
    adam.lr = config.learning_rate
    rng = np.random.default_rng()
    if start.rng_state is not None:
        rng.bit_generator.state = start.rng_state
    else:
        rng = np.random.default_rng(config.seed)
    iteration = start.iteration
    if log_file is not None and iteration == 0:
        log_file.write("iter,loss,grad_norm,seconds\n")
    last_good = _snapshot(params, adam, iteration, rng)
    t0 = time.perf_counter()
    n = len(dataset)
    if n == 0:
        raise ValueError("empty training set")
    end = start.iteration + config.iterations
    while iteration < end:
        idx = rng.integers(0, n, size=config.batch_size)
        try:
            loss, norm = train_step(params, dataset.lr[idx], dataset.hr[idx], adam, config, rng)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"training diverged at iteration {iteration + 1}: {exc}", last_good) from exc
        iteration += 1
        if log_file is not None:
            secs = "NA" if strict else f"{time.perf_counter() - t0:.3f}"
            log_file.write(f"{iteration},{loss!r},{norm!r},{secs}\n")
            log_file.flush()
        if iteration % config.checkpoint_every == 0 or iteration == end:
            last_good = _snapshot(params, adam, iteration, rng)
            yield last_good
    if config.iterations == 0:
        yield last_good
