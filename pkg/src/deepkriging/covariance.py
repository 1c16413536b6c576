"""Empirical covariance of a single image and Gaussian covariance-model fitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class DegenerateFieldError(ValueError):
    """Raised when an empirical covariance carries no positive correlation."""


@dataclass
class EmpiricalCovariance:
    lags: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if not (len(self.lags) == len(self.values) == len(self.counts)):
            raise ValueError("lags, values and counts must have equal length")
        if len(self.lags) and (self.lags[0] != 0 or np.any(np.diff(self.lags) <= 0)):
            raise ValueError("lags must start at 0 and be strictly increasing")
        if np.any(self.counts <= 0):
            raise ValueError("every reported lag needs a positive count")

    @property
    def max_lag(self) -> float:
        return float(self.lags[-1])

    def scaled(self, factor: float) -> "EmpiricalCovariance":
        """Same covariance with lags expressed in units `factor` times smaller."""
        return EmpiricalCovariance(self.lags * factor, self.values, self.counts)


@dataclass(frozen=True)
class CovarianceModel:
    """Gaussian covariance C(d) = c0 * exp(-d^2 / sigma^2)."""

    c0: float
    sigma: float

    def __post_init__(self):
        if not (self.c0 > 0 and self.sigma > 0):
            raise ValueError(f"c0 and sigma must be positive, got {self.c0}, {self.sigma}")

    def __call__(self, distance):
        return eval_covariance(self, distance)


def eval_covariance(model: CovarianceModel, distance):
    d = np.asarray(distance, dtype=np.float64)
    out = model.c0 * np.exp(-(d * d) / (model.sigma * model.sigma))
    return float(out) if out.ndim == 0 else out


def empirical_covariance(img, max_lag: int) -> EmpiricalCovariance:
    """Isotropic covariance c(tau) = mean f(x) f(x + tau) - mu^2.

    Horizontal and vertical pairs at each integer lag are pooled; diagonal
    pairs are not used. A 1-pixel-wide image contributes along its long
    axis only.
    """
    f = np.asarray(img, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    h, w = f.shape
    if max_lag < 0 or max_lag >= max(h, w) or (min(h, w) > 1 and max_lag >= min(h, w)):
        raise ValueError(f"max_lag={max_lag} too large for a {h}x{w} image")
    mu = f.mean()
    lags = np.arange(max_lag + 1)
    values = np.empty(max_lag + 1)
    counts = np.empty(max_lag + 1)
    for tau in lags:
        total = 0.0
        n = 0
        if tau == 0:
            total = float(np.sum(f * f))
            n = f.size
        else:
            if w > tau:
                total += float(np.sum(f[:, :-tau] * f[:, tau:]))
                n += h * (w - tau)
            if h > tau:
                total += float(np.sum(f[:-tau, :] * f[tau:, :]))
                n += (h - tau) * w
        values[tau] = total / n - mu * mu
        counts[tau] = n
    return EmpiricalCovariance(lags, values, counts)


def _best_amplitude(emp: EmpiricalCovariance, sigma: float):
    g = np.exp(-(emp.lags ** 2) / sigma ** 2)
    wg = emp.counts * g
    denom = float(np.dot(wg, g))
    c0 = float(np.dot(wg, emp.values)) / denom if denom > 0 else 0.0
    c0 = max(c0, 0.0)
    resid = c0 * g - emp.values
    return c0, float(np.dot(emp.counts, resid * resid))


def fit_objective(emp: EmpiricalCovariance, c0: float, sigma: float) -> float:
    resid = c0 * np.exp(-(emp.lags ** 2) / sigma ** 2) - emp.values
    return float(np.dot(emp.counts, resid * resid))


def fit_gaussian_model(
    emp: EmpiricalCovariance,
    sigma_min: float = 0.1,
    sigma_max: float | None = None,
    rtol: float = 1e-6,
) -> CovarianceModel:
    """Weighted least-squares fit of (c0, sigma).

    For fixed sigma the optimal c0 is closed form, so only sigma is searched:
    a 100-point log grid over [sigma_min, 4 * max_lag] locates the basin and
    golden-section search refines it to `rtol` relative bracket width.
    """
    if np.count_nonzero(emp.counts > 0) < 3:
        raise ValueError("at least three lags are needed to fit a covariance model")
    if emp.values[0] <= 0 or np.all(emp.values <= 0):
        raise DegenerateFieldError("empirical covariance has no positive variance")
    if sigma_max is None:
        sigma_max = 4.0 * emp.max_lag

    grid = np.geomspace(sigma_min, sigma_max, 100)
    objective = [_best_amplitude(emp, s)[1] for s in grid]
    i = int(np.argmin(objective))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]

    def f(s):
        return _best_amplitude(emp, s)[1]

    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > rtol * max(abs(b), 1e-300):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    candidates = [(f1, x1), (f2, x2), (objective[i], grid[i]), (f(lo), lo), (f(hi), hi)]
    _, sigma = min(candidates)
    c0, _ = _best_amplitude(emp, sigma)
    if c0 <= 0:
        raise DegenerateFieldError("best Gaussian fit has non-positive amplitude")
    return CovarianceModel(c0, float(sigma))


def dump_csv(path, emp: EmpiricalCovariance, model: CovarianceModel | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "c", "count", "fitted"])
        for tau, c, n in zip(emp.lags, emp.values, emp.counts):
            fitted = "" if model is None else repr(eval_covariance(model, tau))
            writer.writerow([repr(float(tau)), repr(float(c)), int(n), fitted])
