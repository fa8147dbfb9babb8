"""Gray-mapped constellations used by the modems and the detector."""

from __future__ import annotations

import numpy as np

_GRAY2 = np.array([0, 1, 3, 2])


def _qam16_points():
    # Gray-coded 4-PAM per axis, unit average power (E|x|^2 = 1).
    pam = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
    pts = np.empty(16, dtype=complex)
    bits = np.empty((16, 4), dtype=np.int8)
    for i in range(4):
        for q in range(4):
            idx = 4 * i + q
            pts[idx] = pam[i] + 1j * pam[q]
            bits[idx, :2] = [(_GRAY2[i] >> 1) & 1, _GRAY2[i] & 1]
            bits[idx, 2:] = [(_GRAY2[q] >> 1) & 1, _GRAY2[q] & 1]
    return pts, bits


class Constellation:
    """Unit-power Gray-mapped constellation with hard-decision demapping.

    Tie-breaking is deterministic: equidistant inputs map to the point that
    is lexicographically smallest by (real, imag), so an all-zero soft input
    under QPSK demaps to the bits of (-1-1j)/sqrt(2).
    """

    def __init__(self, name: str = "qpsk"):
        name = name.lower()
        if name == "qpsk":
            # bit pair (b0, b1) -> ((1-2*b0) + 1j*(1-2*b1))/sqrt(2)
            pts = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)
            bits = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int8)
        elif name in ("qam16", "16qam"):
            pts, bits = _qam16_points()
        else:
            raise ValueError(f"unknown constellation {name!r}")
        # Sort points lexicographically so argmin tie-breaks to the smallest.
        order = np.lexsort((pts.imag, pts.real))
        self.name = name
        self.points = pts[order]
        self.bit_table = bits[order]
        self.bits_per_symbol = self.bit_table.shape[1]

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        """Map a flat 0/1 array (length divisible by bits_per_symbol) to symbols."""
        bits = np.asarray(bits, dtype=np.int8).reshape(-1, self.bits_per_symbol)
        keys = bits @ (1 << np.arange(self.bits_per_symbol - 1, -1, -1))
        lut_keys = self.bit_table @ (1 << np.arange(self.bits_per_symbol - 1, -1, -1))
        lut = np.empty(1 << self.bits_per_symbol, dtype=complex)
        lut[lut_keys] = self.points
        return lut[keys]

    def demap(self, soft: np.ndarray) -> np.ndarray:
        """Nearest-point hard decision; returns a flat 0/1 int8 array."""
        soft = np.asarray(soft, dtype=complex).ravel()
        d2 = np.abs(soft[:, None] - self.points[None, :]) ** 2
        idx = np.argmin(d2, axis=1)
        return self.bit_table[idx].ravel()

    def random_bits(self, n_symbols: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, 2, size=n_symbols * self.bits_per_symbol).astype(np.int8)
