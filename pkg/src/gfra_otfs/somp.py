"""Simultaneous orthogonal matching pursuit for multiple-measurement-vector
sparse recovery with a common row support across all measurement columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StopRule:
    """Greedy stopping policy.

    max_taps bounds the support size. If ``noise_referenced`` is set, the
    support is truncated after the fact at the first iteration whose residual
    energy fell below 1.05 * rows * cols * sigma2_hat, where sigma2_hat is
    estimated from the trailing residual with a degrees-of-freedom
    correction. Otherwise ``rel_threshold`` stops once the residual energy
    drops below rel_threshold * ||Y||^2.
    """

    max_taps: int
    rel_threshold: float = 0.0
    noise_referenced: bool = True
    noise_margin: float = 1.05


@dataclass
class SompResult:
    support: np.ndarray            # selected row indices, selection order
    coefficients: np.ndarray       # (len(support), cols) LS refit on the support
    residual_energy: np.ndarray    # residual energy after 0..T selections
    noise_floor: float             # trailing-residual noise variance estimate
    residual: np.ndarray           # final residual matrix

    def dense_rows(self, n_rows: int) -> np.ndarray:
        """Coefficients scattered into the full row space (zeros elsewhere)."""
        out = np.zeros((n_rows, self.coefficients.shape[1]), dtype=complex)
        if self.support.size:
            out[self.support] = self.coefficients
        return out


def somp_recover(y: np.ndarray, dictionary: np.ndarray, stop: StopRule) -> SompResult:
    """Greedy MMV recovery of row-sparse coefficients.

    Each iteration selects the dictionary column maximizing the summed
    correlation energy across all measurement columns, then jointly refits
    all selected columns by least squares. The residual energy is strictly
    decreasing while new columns carry any correlation.
    """
    y = np.asarray(y, dtype=complex)
    psi = np.asarray(dictionary, dtype=complex)
    if y.ndim != 2 or psi.ndim != 2 or y.shape[0] != psi.shape[0]:
        raise ValueError(f"incompatible shapes {y.shape} and {psi.shape}")
    rows, cols = y.shape
    n_atoms = psi.shape[1]
    max_taps = min(stop.max_taps, n_atoms, rows)

    support: list[int] = []
    residual = y
    res_energy = [float(np.vdot(y, y).real)]
    coeffs = np.zeros((0, cols), dtype=complex)
    chosen = np.zeros(n_atoms, dtype=bool)
    coeff_steps = []

    for _ in range(max_taps):
        corr = psi.conj().T @ residual
        metric = np.einsum("ij,ij->i", corr, corr.conj()).real
        metric[chosen] = -1.0
        best = int(np.argmax(metric))
        if metric[best] <= 0:
            break
        support.append(best)
        chosen[best] = True
        sub = psi[:, support]
        coeffs, *_ = np.linalg.lstsq(sub, y, rcond=None)
        residual = y - sub @ coeffs
        res_energy.append(float(np.vdot(residual, residual).real))
        coeff_steps.append(coeffs)

    res_energy = np.array(res_energy)
    t_final = len(support)
    dof = max(rows - t_final, 1)
    noise_floor = res_energy[-1] / (dof * cols)

    t_stop = t_final
    if stop.noise_referenced:
        threshold = stop.noise_margin * rows * cols * noise_floor
        below = np.flatnonzero(res_energy <= threshold)
        if below.size:
            t_stop = int(below[0])
    elif stop.rel_threshold > 0:
        below = np.flatnonzero(res_energy <= stop.rel_threshold * res_energy[0])
        if below.size:
            t_stop = int(below[0])

    if t_stop < t_final:
        support = support[:t_stop]
        if t_stop == 0:
            coeffs = np.zeros((0, cols), dtype=complex)
            residual = y
        else:
            coeffs = coeff_steps[t_stop - 1]
            residual = y - psi[:, support] @ coeffs
        res_energy = res_energy[:t_stop + 1]

    return SompResult(np.array(support, dtype=int), coeffs, res_energy,
                      float(noise_floor), residual)
