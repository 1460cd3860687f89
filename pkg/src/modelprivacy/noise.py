"""Perturbation generators: IID Gaussian, constant, and long-range dependent noise.

Long-range dependent noise is fractional Gaussian noise (fGn) with Hurst
index ``H = 1 - gamma/2``, whose lag-k autocorrelation behaves like
``H(2H-1) k**(-gamma)``.  It is sampled exactly by circulant embedding
(Davies-Harte).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import QuerySet
from .errors import ConfigurationError

SeedLike = int | np.random.Generator | np.random.SeedSequence | None


def as_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_variance(v: float) -> None:
    if not v >= 0:
        raise ConfigurationError(f"noise variance must be >= 0, got {v}")


@dataclass(frozen=True)
class IIDGaussian:
    variance: float

    def __post_init__(self):
        _check_variance(self.variance)


@dataclass(frozen=True)
class Constant:
    tau: float


@dataclass(frozen=True)
class LongRange:
    variance: float
    gamma: float

    def __post_init__(self):
        _check_variance(self.variance)
        hurst_from_gamma(self.gamma)

    @property
    def hurst(self) -> float:
        return hurst_from_gamma(self.gamma)


NoiseSpec = IIDGaussian | Constant | LongRange


def hurst_from_gamma(gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"long-range decay exponent gamma must be in (0, 1), got {gamma}")
    return 1.0 - gamma / 2.0


def fgn_autocorrelation(lags, hurst: float) -> np.ndarray:
    """Autocorrelation of unit-variance fGn at integer ``lags``."""
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


def sample_iid_gaussian(n: int, variance: float, seed: SeedLike = None) -> np.ndarray:
    if variance < 0:
        raise ConfigurationError(f"variance must be >= 0, got {variance}")
    return np.sqrt(variance) * as_rng(seed).standard_normal(n)


def sample_fgn(n: int, hurst: float, variance: float = 1.0, seed: SeedLike = None) -> np.ndarray:
    """Exact stationary fGn sample of length ``n`` by circulant embedding."""
    if n < 2:
        raise ConfigurationError("fGn sampling needs n >= 2")
    if not 0.0 < hurst < 1.0:
        raise ConfigurationError(f"Hurst index must be in (0, 1), got {hurst}")
    if variance < 0:
        raise ConfigurationError(f"variance must be >= 0, got {variance}")
    rng = as_rng(seed)
    acf = fgn_autocorrelation(np.arange(n), hurst)
    row = np.concatenate([acf, acf[-2:0:-1]])
    m = row.size
    eig = np.fft.fft(row).real
    # fGn embeddings are PSD for every H; tiny negatives are round-off
    if eig.min() < -1e-10 * eig.max():
        raise AssertionError(f"circulant embedding is not PSD (min eigenvalue {eig.min():.3g})")
    eig = np.clip(eig, 0.0, None)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    path = np.fft.fft(np.sqrt(eig / m) * z)
    return np.sqrt(variance) * path.real[:n]


def sample_long_range(n: int, variance: float, gamma: float, seed: SeedLike = None) -> np.ndarray:
    """Gaussian noise with correlation decaying like ``k**(-gamma)``."""
    return sample_fgn(n, hurst_from_gamma(gamma), variance, seed)


def sample_noise(spec: NoiseSpec, n: int, seed: SeedLike = None) -> np.ndarray:
    if isinstance(spec, IIDGaussian):
        return sample_iid_gaussian(n, spec.variance, seed)
    if isinstance(spec, Constant):
        return np.full(n, float(spec.tau))
    if isinstance(spec, LongRange):
        return sample_long_range(n, spec.variance, spec.gamma, seed)
    raise ConfigurationError(f"unknown noise spec {spec!r}")


def assign_noise_by_query_order(noise, queries: QuerySet, coordinate: int = 0) -> np.ndarray:
    """Reorder ``noise`` so the i-th smallest query receives ``noise[i]``.

    Ties in the ordering coordinate keep the original query order.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (queries.n,):
        raise ConfigurationError(f"need {queries.n} noise values, got {noise.shape}")
    if not 0 <= coordinate < queries.d:
        raise ConfigurationError(f"ordering coordinate {coordinate} out of range for d={queries.d}")
    order = np.argsort(queries.column(coordinate), kind="stable")
    out = np.empty_like(noise)
    out[order] = noise
    return out
