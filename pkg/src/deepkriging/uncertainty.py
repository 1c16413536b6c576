"""Bias and variance diagnostics of the kriging-weight estimator."""

from __future__ import annotations

import csv
import logging
import math
import os

import numpy as np

from .covariance import CovarianceModel, empirical_covariance, eval_covariance, fit_gaussian_model
from .deep_kriging import NetworkConfig, NetworkParams, build_network, super_resolve
from .image_io import read_image, write_image

log = logging.getLogger(__name__)

VARIANCE_MAX_LAG = 20


def window_offsets(K: int) -> np.ndarray:
    """(n, 2) offsets (dy, dx) in the channel order of ``repeat_input``."""
    r = np.arange(-K, K + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([dy.ravel(), dx.ravel()]).astype(np.float64)


def _radius(n: int) -> int:
    K = (math.isqrt(n) - 1) // 2
    if (2 * K + 1) ** 2 != n:
        raise ValueError(f"{n} weights do not form a (2K+1)^2 window")
    return K


def window_covariance(model: CovarianceModel, K: int) -> np.ndarray:
    off = window_offsets(K)
    d = np.sqrt(((off[:, None, :] - off[None, :, :]) ** 2).sum(-1))
    return eval_covariance(model, d)


def fit_image_model(lr_up, max_lag: int = VARIANCE_MAX_LAG) -> CovarianceModel:
    """Gaussian covariance model of an upsampled low-resolution image."""
    lr_up = np.asarray(lr_up, dtype=np.float64)
    max_lag = min(max_lag, min(lr_up.shape) - 1)
    return fit_gaussian_model(empirical_covariance(lr_up, max_lag))


def variance_map(weights, model: CovarianceModel, atol: float = 1e-5) -> np.ndarray:
    """Per-pixel V(x) = sum_{k,k'} w_k(x) w_k'(x) C(|x_k - x_k'|).

    `weights` is an (n, H, W) normalized weight field. Small negative values
    from round-off are clamped to zero.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 3:
        raise ValueError(f"expected an (n, H, W) weight field, got {w.shape}")
    K = _radius(w.shape[0])
    sums = w.sum(axis=0)
    tol = atol * np.maximum(1.0, np.abs(w).sum(axis=0))
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError("weights are not normalized (channel sums differ from 1)")
    cov = window_covariance(model, K)
    v = np.einsum("khw,khw->hw", w, np.tensordot(cov, w, axes=(1, 0)))
    floor = -1e-6 * model.c0
    if np.any(v < floor):
        log.warning("variance map below numerical floor (min %.3g)", v.min())
    return np.maximum(v, 0.0)


def random_params(config: NetworkConfig, rng: np.random.Generator) -> NetworkParams:
    """A freshly initialized network with randomized batch-norm affine terms
    and running statistics."""
    params = build_network(config, seed=int(rng.integers(2**31)))
    for name, t in params.tensors.items():
        if name.endswith(".running_mean"):
            t.data[...] = rng.normal(0.0, 1.0, t.shape)
        elif name.endswith(".running_var"):
            t.data[...] = rng.uniform(0.25, 4.0, t.shape)
        elif name.endswith(".scale"):
            t.data[...] = rng.uniform(0.5, 1.5, t.shape)
        elif name.endswith(".shift") and not name.startswith("head"):
            t.data[...] = rng.normal(0.0, 0.5, t.shape)
    return params


def bias_probe(params: NetworkParams | None = None, trials: int = 100, size: int = 12,
               config: NetworkConfig | None = None, seed: int = 0) -> float:
    """Max |output - c| over constant images c and random parameter draws.

    When `params` is given it is used for the first trial and its config for
    the random draws.
    """
    rng = np.random.default_rng(seed)
    if config is None:
        config = params.config if params is not None else NetworkConfig()
    worst = 0.0
    for t in range(trials):
        c = 0.0 if t == 0 else float(rng.uniform(0, 255))
        p = params if (t == 0 and params is not None) else random_params(config, rng)
        out = super_resolve(np.full((size, size), c), p).sr
        worst = max(worst, float(np.max(np.abs(out - c))))
    return worst


def coverage_stat(sr, hr, variance, k: float = 3.0) -> float:
    """Fraction of pixels with |sr - hr| <= k * sqrt(V)."""
    sr, hr, v = (np.asarray(a, dtype=np.float64) for a in (sr, hr, variance))
    if not (sr.shape == hr.shape == v.shape):
        raise ValueError("sr, hr and variance must share dimensions")
    err = np.abs(sr - hr)
    covered = np.where(v > 0, err <= k * np.sqrt(np.maximum(v, 0)), err == 0)
    return float(covered.mean())


def _block_means(a, block):
    h = a.shape[0] // block * block
    w = a.shape[1] // block * block
    if h == 0 or w == 0:
        raise ValueError(f"image {a.shape} smaller than one {block}x{block} block")
    return a[:h, :w].reshape(h // block, block, w // block, block).mean(axis=(1, 3))


def error_variance_correlation(sr, hr, variance, block: int = 8) -> float:
    """Pearson correlation between block-mean squared error and block-mean variance."""
    sr, hr, v = (np.asarray(a, dtype=np.float64) for a in (sr, hr, variance))
    if not (sr.shape == hr.shape == v.shape):
        raise ValueError("sr, hr and variance must share dimensions")
    e = _block_means((sr - hr) ** 2, block).ravel()
    m = _block_means(v, block).ravel()
    if e.std() == 0 or m.std() == 0:
        log.warning("correlation undefined for a constant block map; reporting 0")
        return 0.0
    return float(np.corrcoef(e, m)[0, 1])


# -- heatmaps ---------------------------------------------------------------


def _sidecar(path) -> str:
    return os.fspath(path) + ".txt"


def render_heatmap(variance, path) -> None:
    """Min-max normalized 8-bit PGM plus a ``<path>.txt`` sidecar holding
    ``min max`` for de-normalization."""
    v = np.asarray(variance, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        q = np.round((v - lo) / (hi - lo) * 255.0)
    else:
        q = np.full(v.shape, 128.0)
    write_image(path, q)
    with open(_sidecar(path), "w") as fh:
        fh.write(f"{lo!r} {hi!r}\n")


def load_heatmap(path) -> np.ndarray:
    q = read_image(path)
    with open(_sidecar(path)) as fh:
        lo, hi = (float(x) for x in fh.read().split())
    if hi == lo:
        return np.full(q.shape, lo)
    return lo + q / 255.0 * (hi - lo)


def write_stats_csv(path, rows) -> None:
    """rows: iterable of (image, psnr, ssim, coverage, corr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "psnr", "ssim", "coverage", "corr"])
        for image, p, s, cov, r in rows:
            writer.writerow([image, f"{p:.4f}", f"{s:.6f}", f"{cov:.6f}", f"{r:.6f}"])
