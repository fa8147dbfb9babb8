"""CP-OFDM baseline modem: per-symbol unitary IDFT with cyclic prefix,
full-band pilot preamble, per-subcarrier LS estimation and one-tap
equalization. Deliberately Doppler-blind (quasi-static assumption), which is
exactly what the comparison against the delay-Doppler chain probes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .waveform import DimensionError, OtfsNumerology


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class OfdmNumerology:
    """CP-OFDM frame sized to occupy the same airtime as the uplink frame."""

    m: int                 # subcarriers
    cp: int                # cyclic prefix length, >= channel memory
    n_symbols: int         # OFDM symbols per frame
    n_pilot_symbols: int   # leading full-band pilot (preamble) symbols

    def __post_init__(self):
        if self.cp < 0 or self.n_symbols < 1:
            raise ConfigurationError("invalid OFDM sizing")
        if not 0 <= self.n_pilot_symbols <= self.n_symbols:
            raise ConfigurationError("pilot symbols must fit in the frame")

    @property
    def symbol_len(self) -> int:
        return self.m + self.cp

    @property
    def frame_len(self) -> int:
        return self.n_symbols * self.symbol_len

    @property
    def n_data_symbols(self) -> int:
        return self.n_symbols - self.n_pilot_symbols

    @classmethod
    def matched_to(cls, num: OtfsNumerology, cp: int | None = None,
                   n_pilot_symbols: int | None = None) -> "OfdmNumerology":
        """Size the OFDM frame to the training-interleaved frame's duration.

        The symbol count is the nearest fit; the residual duration mismatch
        must stay within one CP so the comparison is resource-fair, otherwise
        this raises a configuration error. The pilot preamble defaults to the
        same overhead fraction the training sequences occupy.
        """
        cp = cp if cp else num.combined_delay_span
        if cp < num.l_max:
            raise ConfigurationError(f"cp = {cp} shorter than channel memory {num.l_max}")
        sym = num.m + cp
        n_symbols = max(1, round(num.frame_len / sym))
        if abs(num.frame_len - n_symbols * sym) > cp:
            raise ConfigurationError(
                f"no CP-OFDM symbol count matches frame length {num.frame_len} "
                f"within one CP ({cp}) for symbol length {sym}; adjust ofdm_cp")
        if n_pilot_symbols is None:
            ts_fraction = (num.n + 1) * num.m_t / num.frame_len
            n_pilot_symbols = min(n_symbols - 1, max(1, round(ts_fraction * n_symbols)))
        return cls(num.m, cp, n_symbols, n_pilot_symbols)


def ofdm_modulate(tf_grid: np.ndarray, num: OfdmNumerology) -> np.ndarray:
    """Per-symbol orthonormal IDFT plus CP, symbols concatenated in order."""
    tf_grid = np.asarray(tf_grid, dtype=complex)
    if tf_grid.shape != (num.m, num.n_symbols):
        raise DimensionError(f"grid shape {tf_grid.shape} != ({num.m}, {num.n_symbols})")
    blocks = np.fft.ifft(tf_grid, axis=0, norm="ortho")
    with_cp = np.vstack([blocks[-num.cp:, :], blocks]) if num.cp else blocks
    return with_cp.T.ravel()


def ofdm_demodulate(signal: np.ndarray, num: OfdmNumerology) -> np.ndarray:
    """Strip CPs and DFT each symbol; returns (..., M, n_symbols)."""
    signal = np.asarray(signal, dtype=complex)
    if signal.shape[-1] != num.frame_len:
        raise DimensionError(f"frame length {signal.shape[-1]} != {num.frame_len}")
    sym = signal.reshape(*signal.shape[:-1], num.n_symbols, num.symbol_len)
    return np.moveaxis(np.fft.fft(sym[..., num.cp:], axis=-1, norm="ortho"), -1, -2)


def ls_channel_estimate(rx_pilots: np.ndarray, tx_pilots: np.ndarray) -> np.ndarray:
    """Per-subcarrier LS over the pilot symbols: H[m] = <y, x>/<x, x>."""
    num = np.sum(rx_pilots * np.conj(tx_pilots), axis=-1)
    den = np.sum(np.abs(tx_pilots) ** 2, axis=-1)
    return num / np.where(den == 0, 1.0, den)


def equalize_one_tap(rx_grid: np.ndarray, h: np.ndarray, reg: float = 0.0) -> np.ndarray:
    """Scalar per-subcarrier equalizer y/h (with optional diagonal loading)."""
    h = np.asarray(h)
    return rx_grid * (np.conj(h) / (np.abs(h) ** 2 + reg))[:, None]
