"""Conventional embedded delay-Doppler pilot baseline.

Each frame is a single OTFS grid with one strong pilot impulse, a guard
region spanning the full Doppler axis and the delay uncertainty window, and
data on the remaining delay rows; a frame-level cyclic prefix makes the
channel circular. Channel readout is thresholding around the pilot with a
peak-picked (hence lattice-quantized) Doppler, which is exactly where this
scheme pays for fractional Doppler and where Doppler-axis oversampling of
the readout helps it.

Multi-terminal use assigns pilot positions (delay slot row, Doppler bin) by
terminal id. Positions repeat once the id count exceeds the number of
collision-free positions; ids sharing a fired position are all declared
active since impulse pilots carry no identity beyond their position. That
ambiguity is the conventional scheme's own overhead limitation and is
reported, not patched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import dd_cir_on_lattice, doppler_leakage_kernel
from .ofdm import ConfigurationError
from .waveform import OtfsNumerology, otfs_demodulate, otfs_modulate, payload_to_serial


@dataclass(frozen=True)
class DdPilotLayout:
    """Pilot/guard/data geometry shared by every terminal's frame."""

    num: OtfsNumerology
    cp: int
    slot_rows: tuple[int, ...]
    data_rows: tuple[int, ...]
    pilot_amplitude: float

    @classmethod
    def for_numerology(cls, num: OtfsNumerology, cp: int | None = None,
                       frame_energy: float | None = None) -> "DdPilotLayout":
        span = num.combined_delay_span
        cp = cp if cp is not None else span
        if cp < span:
            raise ConfigurationError(f"cp = {cp} below delay span {span}")
        if 2 * span > num.m:
            raise ConfigurationError(
                f"guard region ({span} rows) too small a fit for m = {num.m}: "
                "no data rows remain")
        n_slots = max(1, num.m // (2 * span))
        pitch = num.m // n_slots
        slots = tuple(s * pitch for s in range(n_slots))
        readout = np.zeros(num.m, dtype=bool)
        for r in slots:
            readout[(r + np.arange(span)) % num.m] = True
        data = tuple(
            int(r) for r in range(num.m)
            if not readout[(r + np.arange(span)) % num.m].any()
        )
        if not data:
            raise ConfigurationError("guard regions leave no data rows")
        # Same total transmit energy as the training-interleaved frame.
        target = frame_energy if frame_energy is not None else float(num.frame_len)
        grid_budget = target * (num.n * num.m) / (num.n * num.m + cp)
        pilot_energy = grid_budget - len(data) * num.n
        if pilot_energy <= 0:
            raise ConfigurationError("energy budget leaves nothing for the pilot")
        return cls(num, cp, slots, data, float(np.sqrt(pilot_energy)))

    @property
    def frame_len(self) -> int:
        return self.num.n * self.num.m + self.cp

    @property
    def n_data_bins(self) -> int:
        return len(self.data_rows) * self.num.n

    def pilot_position(self, terminal_id: int) -> tuple[int, int]:
        row = self.slot_rows[(terminal_id // self.num.n) % len(self.slot_rows)]
        return row, terminal_id % self.num.n

    def position_sharers(self, terminal_id: int, k: int) -> list[int]:
        pos = self.pilot_position(terminal_id)
        return [i for i in range(k) if self.pilot_position(i) == pos]

    def doppler_step(self, n_bins: int | None = None) -> float:
        """Doppler resolution of this frame's own lattice (symbol spacing M)."""
        n_bins = n_bins or self.num.n
        return self.num.bandwidth / (self.num.m * n_bins)


def build_pilot_frame(layout: DdPilotLayout, terminal_id: int,
                      data_symbols: np.ndarray | None = None) -> np.ndarray:
    """Time-domain frame: CP + modulated (pilot + guard + data) grid."""
    num = layout.num
    grid = np.zeros((num.m, num.n), dtype=complex)
    row, bin_ = layout.pilot_position(terminal_id)
    grid[row, bin_] = layout.pilot_amplitude
    if data_symbols is not None:
        grid[list(layout.data_rows), :] = np.asarray(data_symbols).reshape(
            len(layout.data_rows), num.n)
    serial = payload_to_serial(otfs_modulate(grid, num))
    return np.concatenate([serial[-layout.cp:], serial]) if layout.cp else serial


def strip_cp_and_demodulate(received: np.ndarray, layout: DdPilotLayout) -> np.ndarray:
    """(A, frame_len) -> received DD grids (A, M, N)."""
    num = layout.num
    serial = np.asarray(received)[..., layout.cp:]
    blocks = np.swapaxes(serial.reshape(*serial.shape[:-1], num.n, num.m), -1, -2)
    return otfs_demodulate(blocks, num)


def readout_noise_floor(grids: np.ndarray, layout: DdPilotLayout) -> float:
    """Robust per-cell noise estimate from the readout cells (median based)."""
    rows = []
    for r in layout.slot_rows:
        rows.extend(((r + np.arange(layout.num.combined_delay_span)) % layout.num.m))
    cells = np.abs(grids[:, sorted(set(rows)), :]) ** 2
    return float(np.median(cells) / np.log(2.0))


def dd_pilot_baseline_ce(grids: np.ndarray, layout: DdPilotLayout, terminal_id: int,
                         steering: np.ndarray, oversample: int = 1,
                         energy_tau: float = 3.0,
                         noise_floor: float | None = None):
    """Thresholding readout of one terminal's DD response around its pilot.

    Combines antennas with the known steering, thresholds delay rows in the
    readout window against the noise floor, picks the Doppler peak on an
    ``oversample``-times padded lattice near the assigned bin, and divides
    out the pilot amplitude and the model phase at the quantized Doppler.

    Returns (delays, gains, nu_hat, raw_readout); empty arrays if nothing
    crosses the threshold (zero channel -> zero estimate).
    """
    num = layout.num
    span = num.combined_delay_span
    row0, bin_ = layout.pilot_position(terminal_id)
    a = grids.shape[0]
    floor = readout_noise_floor(grids, layout) if noise_floor is None else noise_floor

    combined = np.einsum("a,aml->ml", steering.conj(), grids) / a  # (M, N)
    rows = (row0 + np.arange(span)) % num.m
    readout = combined[rows, :]                                    # (span, N)
    row_energy = np.sum(np.abs(readout) ** 2, axis=1)
    # Steering-combined noise power is floor / A per cell.
    keep = np.flatnonzero(row_energy > energy_tau * num.n * floor / a)
    if keep.size == 0:
        return (np.array([], dtype=int), np.array([], dtype=complex), 0.0, readout)

    n_bins = oversample * num.n
    # Strongest retained row fixes the Doppler for the whole response
    # (all paths of a terminal share one Doppler).
    dominant = readout[keep[int(np.argmax(row_energy[keep]))]]
    padded = np.fft.fft(np.fft.ifft(dominant), n_bins)
    # The response peaks at lattice position (x + assigned bin) mod N; the
    # peak is quantized to the oversampled lattice, the scheme's built-in
    # Doppler resolution limit.
    peak = int(np.argmax(np.abs(padded))) * num.n / n_bins
    x_hat = (peak - bin_) % num.n

    model = doppler_leakage_kernel(x_hat + bin_ - np.arange(num.n), num.n, num.n)
    nu_hat = x_hat * layout.doppler_step()
    delays, gains = [], []
    denom = layout.pilot_amplitude * float(np.sum(np.abs(model) ** 2))
    for d in keep:
        phase = np.exp(2j * np.pi * nu_hat * (layout.cp + row0 + int(d)) / num.bandwidth)
        g = np.sum(readout[d] * np.conj(model)) / (denom * phase)
        delays.append(int(d))
        gains.append(g)
    return (np.array(delays, dtype=int), np.array(gains, dtype=complex),
            float(nu_hat), readout)


def canonical_cir_from_readout(delays: np.ndarray, gains: np.ndarray, nu_hat: float,
                               num: OtfsNumerology, n_bins: int) -> np.ndarray:
    """Map a readout estimate onto the common reference DD lattice."""
    return dd_cir_on_lattice(None, num, n_bins, gains=gains, doppler=nu_hat,
                             delays=delays)
