"""Ordinary kriging: the Lagrange-augmented covariance system and a windowed
super-resolution baseline built on it."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
from scipy.ndimage import gaussian_filter
from scipy.spatial.distance import cdist

from .covariance import (
    CovarianceModel,
    DegenerateFieldError,
    empirical_covariance,
    eval_covariance,
    fit_gaussian_model,
)
from .image_core import bicubic_resize

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
JITTER = 1e-8
# covariance fit on high-pass residuals of each window (LR pixels)
DETREND_SIGMA = 2.0
MAX_LAG = 5


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class KrigingSystem:
    matrix: np.ndarray
    sites: np.ndarray
    model: CovarianceModel

    @property
    def n(self) -> int:
        return len(self.sites)


@dataclass
class KrigingWeights:
    weights: np.ndarray
    lagrange: float | np.ndarray


def build_system(sites, model: CovarianceModel) -> KrigingSystem:
    sites = np.atleast_2d(np.asarray(sites, dtype=np.float64))
    n = len(sites)
    if n < 1:
        raise ValueError("at least one known site is required")
    if len(np.unique(sites, axis=0)) != n:
        raise SingularSystemError("duplicate known sites make the kriging system singular")
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = eval_covariance(model, cdist(sites, sites))
    a[:n, n] = 1.0
    a[n, :n] = 1.0
    return KrigingSystem(a, sites, model)


def _rcond(lu, piv, anorm):
    getrf_con = lapack.get_lapack_funcs("gecon", (lu,))
    rcond, info = getrf_con(lu, anorm, norm="1")
    return rcond if info == 0 else 0.0


class Factorization:
    """LU factorization (partial pivoting) of a kriging matrix, jittered once
    when its 1-norm condition estimate exceeds ``COND_LIMIT``."""

    def __init__(self, system: KrigingSystem, cond_limit: float = COND_LIMIT):
        self.system = system
        a = system.matrix
        self.jittered = False
        self.lu, self.piv, self.cond = self._factor(a)
        if self.cond > cond_limit:
            a = a.copy()
            n = system.n
            a[np.arange(n), np.arange(n)] += JITTER * system.model.c0
            self.jittered = True
            self.lu, self.piv, self.cond = self._factor(a)
            if self.cond > cond_limit:
                log.warning("kriging system still ill-conditioned after jitter (cond ~ %.3g)", self.cond)

    @staticmethod
    def _factor(a):
        anorm = np.linalg.norm(a, 1)
        lu, piv = sla.lu_factor(a, check_finite=False)
        if np.any(np.diag(lu) == 0):
            raise SingularSystemError("kriging matrix is exactly singular")
        rcond = _rcond(lu, piv, anorm)
        return lu, piv, (np.inf if rcond == 0 else 1.0 / rcond)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.lu_solve((self.lu, self.piv), rhs, check_finite=False)


def rhs_vectors(system: KrigingSystem, targets) -> np.ndarray:
    """Right-hand sides (C_1*, ..., C_n*, 1) stacked as columns."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    b = np.ones((system.n + 1, len(targets)))
    b[: system.n] = eval_covariance(system.model, cdist(system.sites, targets))
    return b


def solve_weights(system: KrigingSystem, target, factorization: Factorization | None = None) -> KrigingWeights:
    """Kriging weights for one target site.

    The unknown vector of the system is (w_1..w_n, -lambda); the returned
    ``lagrange`` is lambda itself.
    """
    fac = factorization or Factorization(system)
    b = rhs_vectors(system, target)[:, 0]
    x = fac.solve(b)
    return KrigingWeights(x[:-1], -float(x[-1]))


def krige_point(values, weights: KrigingWeights) -> float:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != weights.weights.shape:
        raise ValueError(f"{values.shape[0]} values for {weights.weights.shape[0]} weights")
    return float(np.dot(weights.weights, values))


def kriging_variance(system: KrigingSystem, weights: KrigingWeights, target) -> float:
    """Ordinary-kriging variance C(0) - sum_i w_i C(|x_i - x*|) + lambda."""
    c_star = eval_covariance(system.model, cdist(system.sites, np.atleast_2d(target))[:, 0])
    return float(system.model.c0 - np.dot(weights.weights, c_star) + weights.lagrange)


# -- windowed super-resolution --------------------------------------------


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Window origins covering [0, length); the last window is flush with the end."""
    if length <= window:
        return [0]
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] + window < length:
        starts.append(length - window)
    return starts


def lattice_coords(n: int, s: int, offset: float) -> np.ndarray:
    """High-resolution coordinate of each of n low-resolution samples."""
    return s * np.arange(n) + offset


def _fallback_model(s: int) -> CovarianceModel:
    return CovarianceModel(1.0, float(s))


def detrend(block: np.ndarray, sigma: float = DETREND_SIGMA) -> np.ndarray:
    """High-pass residual: block minus its Gaussian-smoothed trend.

    ``sigma=0`` removes only the mean.
    """
    block = np.asarray(block, dtype=np.float64)
    if sigma <= 0:
        return block - block.mean()
    return block - gaussian_filter(block, sigma, mode="nearest")


def fit_window_model(lr_block: np.ndarray, s: int, max_lag: int = MAX_LAG,
                     detrend_sigma: float | None = DETREND_SIGMA) -> CovarianceModel | None:
    """Gaussian model fitted on the LR samples of a window, distances in HR pixels.

    The fit runs on the detrended residual; ``detrend_sigma=None`` fits raw
    intensities instead.
    """
    lag = min(max_lag, min(lr_block.shape) - 1)
    if lag < 2:
        return None
    field = lr_block if detrend_sigma is None else detrend(lr_block, detrend_sigma)
    emp = empirical_covariance(field, lag)
    try:
        model = fit_gaussian_model(emp)
    except DegenerateFieldError:
        return None
    return CovarianceModel(model.c0, model.sigma * s)


def _krige_window(lr, s, offset, y0, y1, x0, x1, max_lag, diagnostics=None):
    h, w = lr.shape
    rows = lattice_coords(h, s, offset)
    cols = lattice_coords(w, s, offset)
    ri = np.nonzero((rows >= y0) & (rows < y1))[0]
    ci = np.nonzero((cols >= x0) & (cols < x1))[0]
    if len(ri) * len(ci) < 4:
        return None
    block = lr[np.ix_(ri, ci)]
    fitted = fit_window_model(block, s, max_lag)
    model = fitted or _fallback_model(s)
    if diagnostics is not None:
        diagnostics[(y0, x0)] = (model.c0, model.sigma, fitted is None)

    sy, sx = np.meshgrid(rows[ri], cols[ci], indexing="ij")
    sites = np.column_stack([sy.ravel(), sx.ravel()])
    system = build_system(sites, model)
    fac = Factorization(system)

    ty, tx = np.meshgrid(np.arange(y0, y1, dtype=np.float64), np.arange(x0, x1, dtype=np.float64), indexing="ij")
    targets = np.column_stack([ty.ravel(), tx.ravel()])
    weights = fac.solve(rhs_vectors(system, targets))[:-1]
    est = (block.ravel() @ weights).reshape(y1 - y0, x1 - x0)

    # known sites lying on the HR grid pass through unchanged
    on_grid = (np.abs(sites - np.round(sites)) < 1e-9).all(axis=1)
    if on_grid.any():
        iy = np.round(sites[on_grid, 0]).astype(int) - y0
        ix = np.round(sites[on_grid, 1]).astype(int) - x0
        est[iy, ix] = block.ravel()[on_grid]
    return est


def local_krige_sr(
    lr,
    s: int,
    window: int = 90,
    stride: int = 81,
    offset: float | None = None,
    max_lag: int = MAX_LAG,
    workers: int = 1,
    fit_csv=None,
) -> np.ndarray:
    """Super-resolve `lr` by a factor `s` with windowed ordinary kriging.

    Known sites are the LR samples placed on the HR grid at
    ``s * i + offset``; the default offset ``(s - 1) / 2`` is the LR pixel
    center. Each window fits its own Gaussian covariance model from the LR
    samples it contains, and overlapping window estimates are averaged.
    Windows with fewer than 4 known sites fall back to bicubic.
    `fit_csv`, if given, receives one ``y0,x0,c0,sigma,fallback`` row per
    window.
    """
    lr = np.asarray(lr, dtype=np.float64)
    if offset is None:
        offset = (s - 1) / 2.0
    h, w = lr.shape
    H, W = h * s, w * s
    boxes = [
        (y0, min(y0 + window, H), x0, min(x0 + window, W))
        for y0 in window_starts(H, window, stride)
        for x0 in window_starts(W, window, stride)
    ]

    diagnostics = {} if fit_csv is not None else None

    def run(box):
        return _krige_window(lr, s, offset, *box, max_lag, diagnostics)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, boxes))
    else:
        results = [run(b) for b in boxes]

    acc = np.zeros((H, W))
    cnt = np.zeros((H, W))
    fallback = None
    for (y0, y1, x0, x1), est in zip(boxes, results):
        if est is None:
            log.warning("window (%d:%d, %d:%d) has < 4 known sites; using bicubic", y0, y1, x0, x1)
            if fallback is None:
                fallback = bicubic_resize(lr, s)
            est = fallback[y0:y1, x0:x1]
        acc[y0:y1, x0:x1] += est
        cnt[y0:y1, x0:x1] += 1
    if fit_csv is not None:
        _write_fit_csv(fit_csv, diagnostics)
    return acc / cnt


def _write_fit_csv(path, diagnostics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y0", "x0", "c0", "sigma", "fallback"])
        for (y0, x0), (c0, sigma, fallback) in sorted(diagnostics.items()):
            writer.writerow([y0, x0, repr(c0), repr(sigma), int(fallback)])
