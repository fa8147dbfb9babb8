"""Nonideal ADC front-end: a Lloyd-Max scalar quantizer applied elementwise
to the real and imaginary parts of the received signal.

The codebook is trained per trial on the actual received frame (adaptive),
with one shared codebook for real and imaginary parts since the received
signal is circularly symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TrainingError(ValueError):
    """Not enough distinct samples to train the requested codebook."""


@dataclass
class QuantizerCodebook:
    """Scalar quantizer: sorted reproduction levels and midpoint thresholds."""

    bits: int
    levels: np.ndarray       # 2**bits ascending reproduction values
    thresholds: np.ndarray   # 2**bits - 1 decision boundaries (midpoints)
    distortion: float        # final training MSE
    history: np.ndarray      # per-iteration distortion, non-increasing

    def quantize_real(self, x: np.ndarray) -> np.ndarray:
        # Values exactly on a threshold go to the lower level.
        idx = np.digitize(x, self.thresholds, right=True)
        return self.levels[idx]


def _midpoints(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels[:-1] + levels[1:])


def train_lloyd_max(samples: np.ndarray, bits: int, max_iters: int = 100,
                    tol: float = 1e-6) -> QuantizerCodebook:
    """Alternating centroid/boundary design minimizing mean-square distortion.

    Iterates until the relative distortion change drops below ``tol`` or
    ``max_iters`` is reached. Empty cells are repaired by splitting the cell
    contributing the most distortion. The distortion sequence is checked to
    be non-increasing.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n_levels = 1 << bits
    if bits < 1:
        raise ValueError("need at least one bit")
    if np.unique(x).size < n_levels:
        raise TrainingError(
            f"need >= {n_levels} distinct samples, got {np.unique(x).size}")

    # Equiprobable initialization from sample quantiles.
    q = (np.arange(n_levels) + 0.5) / n_levels
    levels = np.quantile(x, q)
    levels = _force_distinct(levels, x)

    history = []
    prev = np.inf
    for _ in range(max_iters):
        thresholds = _midpoints(levels)
        cells = np.digitize(x, thresholds, right=True)
        counts = np.bincount(cells, minlength=n_levels)
        sums = np.bincount(cells, weights=x, minlength=n_levels)
        err2 = np.bincount(cells, weights=(x - levels[cells]) ** 2, minlength=n_levels)
        if np.any(counts == 0):
            levels = _split_worst_cell(levels, counts, err2)
            continue
        levels = np.sort(sums / counts)
        thresholds = _midpoints(levels)
        cells = np.digitize(x, thresholds, right=True)
        distortion = float(np.mean((x - levels[cells]) ** 2))
        history.append(distortion)
        if distortion > prev + 1e-15:
            raise AssertionError("Lloyd-Max distortion increased")
        if prev < np.inf and prev > 0 and (prev - distortion) / prev < tol:
            break
        if distortion == 0.0:
            break
        prev = distortion
    return QuantizerCodebook(bits, levels, _midpoints(levels),
                             history[-1] if history else 0.0, np.array(history))


def _force_distinct(levels: np.ndarray, x: np.ndarray) -> np.ndarray:
    if np.unique(levels).size == levels.size:
        return levels
    span = max(x.max() - x.min(), 1.0)
    bumps = np.linspace(0, 1e-9 * span, levels.size)
    return np.sort(np.unique(levels + bumps)[:levels.size])


def _split_worst_cell(levels: np.ndarray, counts: np.ndarray,
                      err2: np.ndarray) -> np.ndarray:
    """Move each empty cell's level next to the highest-distortion level."""
    levels = levels.copy()
    err2 = err2.copy()
    for i in np.flatnonzero(counts == 0):
        worst = int(np.argmax(err2))
        gap = np.min(np.abs(np.diff(np.sort(levels)))) if levels.size > 1 else 1.0
        levels[i] = levels[worst] + 0.25 * max(gap, 1e-12)
        err2[worst] *= 0.5
    return np.sort(levels)


def quantize(r: np.ndarray, codebook: QuantizerCodebook) -> np.ndarray:
    """Map each real/imag component to its nearest reproduction level."""
    r = np.asarray(r)
    if np.iscomplexobj(r):
        return codebook.quantize_real(r.real) + 1j * codebook.quantize_real(r.imag)
    return codebook.quantize_real(r.astype(float))


class IdentityFrontend:
    """Infinite-resolution reference mode (adc_bits = 0)."""

    bits = 0

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return np.asarray(r)


class AdcFrontend:
    """Trains per call on the incoming frame and quantizes it."""

    def __init__(self, bits: int, max_iters: int = 100, tol: float = 1e-6):
        if bits < 1:
            raise ValueError("use IdentityFrontend for the ideal ADC")
        self.bits = bits
        self.max_iters = max_iters
        self.tol = tol

    def __call__(self, r: np.ndarray) -> np.ndarray:
        parts = np.concatenate([np.asarray(r).real.ravel(), np.asarray(r).imag.ravel()])
        codebook = train_lloyd_max(parts, self.bits, self.max_iters, self.tol)
        return quantize(r, codebook)


def passthrough() -> IdentityFrontend:
    """Identity front-end factory, the ideal-ADC reference."""
    return IdentityFrontend()


def make_frontend(bits: int):
    return passthrough() if bits == 0 else AdcFrontend(bits)


def uniform_midrise_mse(samples: np.ndarray, bits: int) -> float:
    """Best-loading uniform mid-rise quantizer MSE on the samples (test oracle)."""
    from scipy.optimize import minimize_scalar
    x = np.asarray(samples, dtype=float).ravel()
    n_levels = 1 << bits

    def mse(step: float) -> float:
        if step <= 0:
            return np.inf
        idx = np.clip(np.floor(x / step), -n_levels // 2, n_levels // 2 - 1)
        return float(np.mean((x - (idx + 0.5) * step) ** 2))

    upper = 4.0 * np.std(x) / max(n_levels // 2, 1) + 1e-12
    res = minimize_scalar(mse, bounds=(upper * 1e-3, upper * 8), method="bounded",
                          options={"xatol": upper * 1e-6})
    return float(res.fun)
