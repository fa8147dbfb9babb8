"""OTFS modulation between the delay-Doppler grid and the time domain, and
the training-sequence-interleaved frame used for grant-free uplink access.

Grid conventions
----------------
A delay-Doppler grid ``X`` has shape (M, N): axis 0 is the delay index l
(equivalently the within-block sample position), axis 1 the Doppler index k.
The time-frequency grid has shape (M, N) as well: axis 0 is the subcarrier
index m, axis 1 the multicarrier symbol index n.

The ISFFT is the unitary symmetric convention

    X_tf[m, n] = (1/sqrt(NM)) * sum_{l,k} X[l,k] exp(j2pi(nk/N - ml/M)),

i.e. an orthonormal inverse DFT along the Doppler axis and an orthonormal
forward DFT along the delay axis. Each multicarrier symbol is then an
orthonormal inverse DFT of a time-frequency column (rectangular pulse,
no per-block cyclic prefix: the interleaved training blocks absorb the
channel memory instead of guard intervals).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Array shape inconsistent with the configured numerology."""


@dataclass(frozen=True)
class OtfsNumerology:
    """Sizing of one uplink frame.

    Parameters
    ----------
    m : delay bins (subcarriers) per multicarrier symbol.
    n : Doppler bins (payload symbols) per frame.
    delta_f : subcarrier spacing in Hz; the sample rate is B = m * delta_f.
    m_t : training sequence length in samples.
    f_c : carrier frequency in Hz.
    l_max : channel delay spread bound in samples (delay taps are < l_max).
    d_max : maximum residual time-of-arrival offset in samples.
    """

    m: int
    n: int
    delta_f: float
    m_t: int
    f_c: float = 10e9
    l_max: int = 16
    d_max: int = 8

    def __post_init__(self):
        if self.m < 2 or self.n < 1:
            raise ValueError(f"need m >= 2 and n >= 1, got ({self.m}, {self.n})")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")
        if self.l_max < 1 or self.d_max < 0:
            raise ValueError("need l_max >= 1 and d_max >= 0")
        if self.non_isi_len <= 0:
            raise ValueError(
                f"m_t = {self.m_t} leaves no non-ISI window over "
                f"l_max + d_max = {self.combined_delay_span}"
            )

    @property
    def bandwidth(self) -> float:
        return self.m * self.delta_f

    @property
    def combined_delay_span(self) -> int:
        """Delay uncertainty window L = l_max + d_max (dictionary taps per terminal)."""
        return self.l_max + self.d_max

    @property
    def non_isi_len(self) -> int:
        """Training samples per block that cannot see preceding payload."""
        return self.m_t - self.combined_delay_span

    @property
    def frame_len(self) -> int:
        """(n+1) training blocks interleaved with n payload blocks."""
        return (self.n + 1) * self.m_t + self.n * self.m

    @property
    def ts_starts(self) -> np.ndarray:
        return np.arange(self.n + 1) * (self.m_t + self.m)

    @property
    def payload_starts(self) -> np.ndarray:
        return self.m_t + np.arange(self.n) * (self.m_t + self.m)

    @property
    def snapshot_spacing(self) -> int:
        """Samples between consecutive training block starts."""
        return self.m_t + self.m

    @property
    def doppler_span(self) -> float:
        """Unambiguous one-sided Doppler range of the snapshot estimator, Hz."""
        return self.bandwidth / self.snapshot_spacing

    def doppler_step(self, n_bins: int | None = None) -> float:
        """Doppler lattice resolution for an n_bins lattice (default n)."""
        return self.doppler_span / (n_bins if n_bins else self.n)

    def validate_doppler_coverage(self, nu_max: float) -> None:
        if nu_max >= self.doppler_span:
            raise ValueError(
                f"nu_max = {nu_max:.1f} Hz exceeds the unambiguous span "
                f"B/(M+M_t) = {self.doppler_span:.1f} Hz"
            )


@dataclass(frozen=True)
class TrainingSequence:
    """Per-terminal non-orthogonal time-domain identifier, unit average power."""

    terminal_id: int
    samples: np.ndarray

    @classmethod
    def for_terminal(cls, terminal_id: int, m_t: int, seed: int) -> "TrainingSequence":
        """Deterministic i.i.d. complex Gaussian sequence for (seed, terminal id)."""
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(terminal_id,)))
        s = rng.standard_normal(m_t) + 1j * rng.standard_normal(m_t)
        s /= np.sqrt(np.mean(np.abs(s) ** 2))
        return cls(terminal_id, s)


@dataclass
class TsOtfsFrame:
    """Serialized frame [TS | P0 | TS | P1 | ... | TS | P(n-1) | TS]."""

    samples: np.ndarray
    ts_starts: np.ndarray
    payload_starts: np.ndarray
    m: int = field(default=0)
    m_t: int = field(default=0)


def _check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise DimensionError(f"expected a 2-D grid, got shape {grid.shape}")
    return grid.astype(complex, copy=False)


def isfft(grid: np.ndarray) -> np.ndarray:
    """Delay-Doppler grid -> time-frequency grid (unitary)."""
    grid = _check_grid(grid)
    return np.fft.fft(np.fft.ifft(grid, axis=1, norm="ortho"), axis=0, norm="ortho")


def sfft(tf: np.ndarray) -> np.ndarray:
    """Time-frequency grid -> delay-Doppler grid; exact inverse of isfft."""
    tf = _check_grid(tf)
    return np.fft.ifft(np.fft.fft(tf, axis=1, norm="ortho"), axis=0, norm="ortho")


def otfs_modulate(grid: np.ndarray, num: OtfsNumerology | None = None) -> np.ndarray:
    """Modulate a (M, N) grid to N payload blocks, returned as shape (M, N).

    Block n (column n of the result) is the orthonormal IDFT over the
    subcarrier axis of time-frequency symbol n. Works on a batch if ``grid``
    has a leading batch axis (shape (..., M, N)).
    """
    grid = np.asarray(grid, dtype=complex)
    if num is not None and grid.shape[-2:] != (num.m, num.n):
        raise DimensionError(f"grid shape {grid.shape} != ({num.m}, {num.n})")
    tf = np.fft.fft(np.fft.ifft(grid, axis=-1, norm="ortho"), axis=-2, norm="ortho")
    return np.fft.ifft(tf, axis=-2, norm="ortho")


def otfs_demodulate(blocks: np.ndarray, num: OtfsNumerology | None = None) -> np.ndarray:
    """Inverse of otfs_modulate: per-block DFT then SFFT. Batch-safe."""
    blocks = np.asarray(blocks, dtype=complex)
    if num is not None and blocks.shape[-2:] != (num.m, num.n):
        raise DimensionError(f"payload shape {blocks.shape} != ({num.m}, {num.n})")
    tf = np.fft.fft(blocks, axis=-2, norm="ortho")
    return np.fft.ifft(np.fft.fft(tf, axis=-1, norm="ortho"), axis=-2, norm="ortho")


def payload_to_serial(blocks: np.ndarray) -> np.ndarray:
    """Concatenate payload blocks (..., M, N) in symbol order to (..., N*M)."""
    blocks = np.asarray(blocks)
    return np.swapaxes(blocks, -1, -2).reshape(*blocks.shape[:-2], -1)


def assemble_frame(grid: np.ndarray, ts: TrainingSequence, num: OtfsNumerology) -> TsOtfsFrame:
    """Interleave (n+1) copies of the training sequence with the payload blocks."""
    if len(ts.samples) != num.m_t:
        raise DimensionError(f"training sequence length {len(ts.samples)} != m_t {num.m_t}")
    blocks = otfs_modulate(grid, num)
    samples = np.zeros(num.frame_len, dtype=complex)
    for start in num.ts_starts:
        samples[start:start + num.m_t] = ts.samples
    for n_sym, start in enumerate(num.payload_starts):
        samples[start:start + num.m] = blocks[:, n_sym]
    return TsOtfsFrame(samples, num.ts_starts.copy(), num.payload_starts.copy(),
                       m=num.m, m_t=num.m_t)


def extract_payload(samples: np.ndarray, num: OtfsNumerology) -> np.ndarray:
    """Pull the N payload blocks out of a frame-length signal, shape (..., M, N)."""
    samples = np.asarray(samples)
    if samples.shape[-1] != num.frame_len:
        raise DimensionError(f"frame length {samples.shape[-1]} != {num.frame_len}")
    cols = [samples[..., s:s + num.m] for s in num.payload_starts]
    return np.stack(cols, axis=-1)


def parse_frame(frame: TsOtfsFrame, num: OtfsNumerology):
    """Recover (grid, ts samples) from a noiseless frame; round-trip of assemble."""
    ts = frame.samples[:num.m_t]
    grid = otfs_demodulate(extract_payload(frame.samples, num), num)
    return grid, ts


def effective_modulation_matrix(num: OtfsNumerology) -> np.ndarray:
    """Dense (M*N, M*N) matrix mapping vec(grid) to the serial payload signal.

    Brute-force oracle built from the definitions; only intended for small
    (M, N) in tests.
    """
    mn = num.m * num.n
    out = np.empty((mn, mn), dtype=complex)
    for idx in range(mn):
        grid = np.zeros((num.m, num.n), dtype=complex)
        grid[idx // num.n, idx % num.n] = 1.0
        out[:, idx] = otfs_modulate(grid, num).T.ravel()
    return out
