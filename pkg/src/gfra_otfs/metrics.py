"""Trial metrics: activity error rate and channel-estimation NMSE."""

from __future__ import annotations

import numpy as np


def compute_aer(true_ats, est_ats, k: int) -> float:
    """(misses + false alarms) / K."""
    true_set, est_set = set(true_ats), set(est_ats)
    for s in (true_set, est_set):
        if any(not 0 <= t < k for t in s):
            raise ValueError(f"terminal ids {sorted(s)} outside 0..{k - 1}")
    return (len(true_set - est_set) + len(est_set - true_set)) / k


def compute_nmse(true_cirs: dict[int, np.ndarray], est_cirs: dict[int, np.ndarray],
                 terminals) -> float | None:
    """Mean over terminals of ||h_hat - h||^2 / ||h||^2.

    Terminals with zero true energy are excluded; an empty terminal set is a
    missing value (None), not zero.
    """
    values = []
    for t in terminals:
        h = np.asarray(true_cirs[t])
        h_hat = np.asarray(est_cirs[t])
        if h.shape != h_hat.shape:
            raise ValueError(f"lattice mismatch for terminal {t}: "
                             f"{h.shape} vs {h_hat.shape}")
        energy = float(np.sum(np.abs(h) ** 2))
        if energy == 0.0:
            continue
        values.append(float(np.sum(np.abs(h_hat - h) ** 2)) / energy)
    return float(np.mean(values)) if values else None
