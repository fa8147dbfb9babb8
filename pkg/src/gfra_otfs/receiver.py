"""Joint active-terminal identification and channel estimation from the
quantized uplink frame.

Stages: extract the non-ISI tail of each received training block (those
samples depend only on transmitted training sequences, never on payload),
recover the delay-domain CIRs of all potential terminals jointly via SOMP
in multiple-measurement-vector form, threshold per-terminal channel-gain
energy against the recovered noise floor (CG-AD), refine each detected
terminal's Doppler with a padded periodogram plus Newton steps over the
training-block snapshots, and LS-fit the path gains against the exact
regenerated training response.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import dd_cir_on_lattice
from .ofdm import OfdmNumerology, ofdm_demodulate
from .somp import SompResult, StopRule, somp_recover
from .waveform import OtfsNumerology, TrainingSequence


class ReceiverConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReceiverConfig:
    cgad_tau: float = 3.0
    somp_max_taps: int = 0          # 0 -> min(G - 1, ceil(1.5 * k_a) * paths)
    doppler_pad_factor: int = 32
    oversample_doppler: int = 1     # reconstruction lattice N' = this * N

    def max_taps(self, g: int, k_a_nominal: int, paths: int) -> int:
        if self.somp_max_taps > 0:
            return self.somp_max_taps
        return max(1, min(g - 1, int(np.ceil(1.5 * k_a_nominal)) * paths))


@dataclass
class NonIsiObservation:
    """G x ((N+1)*A) observation; column i*A + a is snapshot i, antenna a."""

    y: np.ndarray
    timestamps: np.ndarray
    n_antennas: int

    @property
    def n_snapshots(self) -> int:
        return len(self.timestamps)


def extract_non_isi(received: np.ndarray, num: OtfsNumerology) -> NonIsiObservation:
    """Copy the payload-independent tail of every training block.

    Samples [start + l_max + d_max, start + m_t) of training block i depend
    only on that block's transmitted sequence because the channel memory has
    flushed any preceding payload by then.
    """
    received = np.atleast_2d(np.asarray(received))
    g = num.non_isi_len
    if g <= 0:
        raise ReceiverConfigError("non-ISI window is empty")
    if received.shape[-1] != num.frame_len:
        raise ReceiverConfigError(
            f"received length {received.shape[-1]} != frame length {num.frame_len}")
    a = received.shape[0]
    offset = num.combined_delay_span
    cols = []
    for start in num.ts_starts:
        block = received[:, start + offset:start + num.m_t]   # (A, G)
        cols.append(block.T)                                   # (G, A)
    y = np.concatenate(cols, axis=1)
    return NonIsiObservation(y, num.ts_starts.copy(), a)


@dataclass
class MmvDictionary:
    """Windowed Toeplitz shifts of every terminal's training sequence."""

    psi: np.ndarray          # (G, K*L), unit-norm columns
    scales: np.ndarray       # original column norms
    n_terminals: int
    taps_per_terminal: int
    max_coherence: float

    def block(self, terminal: int) -> slice:
        l = self.taps_per_terminal
        return slice(terminal * l, (terminal + 1) * l)

    def atom_index(self, terminal: int, delay: int) -> int:
        return terminal * self.taps_per_terminal + delay

    def split_atom(self, atom: int) -> tuple[int, int]:
        return divmod(atom, self.taps_per_terminal)


def build_dictionary(ts_list: list[TrainingSequence], num: OtfsNumerology) -> MmvDictionary:
    """Sensing matrix relating non-ISI observations to delay-domain CIR rows."""
    if not ts_list:
        raise ValueError("need at least one training sequence")
    g = num.non_isi_len
    l = num.combined_delay_span
    offset = num.combined_delay_span
    k = len(ts_list)
    psi = np.empty((g, k * l), dtype=complex)
    rows = np.arange(g)
    for ki, ts in enumerate(ts_list):
        for d in range(l):
            psi[:, ki * l + d] = ts.samples[offset + rows - d]
    scales = np.linalg.norm(psi, axis=0)
    psi = psi / scales
    gram = np.abs(psi.conj().T @ psi)
    np.fill_diagonal(gram, 0.0)
    return MmvDictionary(psi, scales, k, l, float(gram.max()))


def cg_ad(snapshots: SompResult, dictionary: MmvDictionary, n_cols: int,
          tau: float, noise_floor: float | None = None) -> list[int]:
    """Channel-gain activity detector on aggregate recovered CIR energy.

    Terminal k is active iff the mean squared recovered coefficient energy
    over its dictionary block and all measurement columns exceeds
    tau * noise_floor.
    """
    floor = snapshots.noise_floor if noise_floor is None else noise_floor
    energies = terminal_energies(snapshots, dictionary, n_cols)
    return sorted(int(k) for k, e in energies.items() if e > tau * floor)


def terminal_energies(snapshots: SompResult, dictionary: MmvDictionary,
                      n_cols: int) -> dict[int, float]:
    out: dict[int, float] = {}
    for row, atom in enumerate(snapshots.support):
        k, _ = dictionary.split_atom(int(atom))
        e = float(np.sum(np.abs(snapshots.coefficients[row]) ** 2)) / n_cols
        out[k] = out.get(k, 0.0) + e
    return out


def _refine_tone(s: np.ndarray, pad_factor: int) -> float:
    """Frequency of a single complex tone in cycles/sample over [0, 1).

    Zero-padded periodogram peak, three-point parabolic interpolation, then
    two Newton steps on the periodogram itself.
    """
    n = len(s)
    nfft = max(pad_factor * n, 8)
    spec = np.fft.fft(s, nfft)
    mag = np.abs(spec)
    b = int(np.argmax(mag))
    alpha, beta, gamma = mag[(b - 1) % nfft], mag[b], mag[(b + 1) % nfft]
    denom = alpha - 2 * beta + gamma
    delta = 0.5 * (alpha - gamma) / denom if abs(denom) > 1e-30 else 0.0
    f = (b + np.clip(delta, -0.5, 0.5)) / nfft

    i = np.arange(n)
    for _ in range(2):
        w = np.exp(-2j * np.pi * f * i)
        s0 = np.sum(s * w)
        s1 = np.sum(s * w * (-2j * np.pi * i))
        s2 = np.sum(s * w * (-2j * np.pi * i) ** 2)
        p1 = 2.0 * np.real(np.conj(s0) * s1)
        p2 = 2.0 * (np.real(np.conj(s0) * s2) + np.abs(s1) ** 2)
        if p2 >= 0:  # not at a local max curvature, keep the interpolated value
            break
        f -= p1 / p2
    return float(f % 1.0)


def estimate_doppler(trajectory: np.ndarray, timestamps: np.ndarray,
                     bandwidth: float, pad_factor: int = 32) -> float:
    """Doppler of one recovered tap from its training-snapshot trajectory.

    ``trajectory`` has shape (n_snapshots, A). Each antenna is estimated
    separately and the results averaged with tap-energy weights; antennas are
    unwrapped toward the strongest antenna's estimate before averaging.
    """
    traj = np.atleast_2d(np.asarray(trajectory, dtype=complex))
    if traj.shape[0] < 2:
        raise ValueError("need at least two snapshots to estimate Doppler")
    spacing = np.diff(np.asarray(timestamps, dtype=float))
    if not np.allclose(spacing, spacing[0]):
        raise ValueError("snapshots must be uniformly spaced")
    dt = spacing[0]

    weights = np.sum(np.abs(traj) ** 2, axis=0)
    freqs = np.array([_refine_tone(traj[:, a], pad_factor) for a in range(traj.shape[1])])
    ref = freqs[int(np.argmax(weights))]
    freqs -= np.round(freqs - ref)  # unwrap (cycles/snapshot) toward the strongest
    if weights.sum() == 0:
        return 0.0
    f = float(np.sum(weights * freqs) / weights.sum())
    return (f % 1.0) * bandwidth / dt


@dataclass
class GainFitResult:
    gains: dict[int, np.ndarray]     # per terminal, aligned with kept_delays
    kept_delays: dict[int, np.ndarray]
    condition_number: float
    dropped_taps: list[tuple[int, int]] = field(default_factory=list)


def ls_fit_gains(obs: NonIsiObservation, supports: dict[int, np.ndarray],
                 dopplers: dict[int, float], ts_list: list[TrainingSequence],
                 steering: dict[int, np.ndarray], num: OtfsNumerology) -> GainFitResult:
    """Joint LS fit of complex path gains for all detected terminals.

    The basis regenerates the exact non-ISI training response at the
    estimated (delay, Doppler) of every tap, including the intra-window
    Doppler ramp and the known steering, so a noiseless fit at the true
    parameters returns the true gains. Rank-deficient bases drop the weakest
    tap and refit.
    """
    g = num.non_isi_len
    offset = num.combined_delay_span
    rows = np.arange(g)
    taps = [(k, int(d)) for k in sorted(supports) for d in supports[k]]
    if not taps:
        return GainFitResult({}, {}, 0.0)

    y_vec = obs.y.ravel(order="F")
    dropped: list[tuple[int, int]] = []
    while True:
        basis = np.empty((y_vec.size, len(taps)), dtype=complex)
        for j, (k, d) in enumerate(taps):
            nu = dopplers[k]
            base = ts_list[k].samples[offset + rows - d] * np.exp(
                2j * np.pi * nu * (offset + rows) / num.bandwidth)
            snap = np.exp(2j * np.pi * nu * obs.timestamps / num.bandwidth)
            col = np.einsum("i,a,r->iar", snap, steering[k], base)
            basis[:, j] = col.ravel()
        coef, _, rank, sv = np.linalg.lstsq(basis, y_vec, rcond=None)
        if rank == len(taps) or len(taps) <= 1:
            cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else np.inf
            break
        dropped.append(taps.pop(int(np.argmin(np.abs(coef)))))

    gains: dict[int, list] = {k: [] for k in supports}
    kept: dict[int, list] = {k: [] for k in supports}
    for (k, d), c in zip(taps, coef):
        gains[k].append(c)
        kept[k].append(d)
    return GainFitResult({k: np.array(v) for k, v in gains.items()},
                         {k: np.array(v, dtype=int) for k, v in kept.items()},
                         cond, dropped)


@dataclass
class EstimationResult:
    """Receiver output feeding the detector and the metrics."""

    ats: list[int]
    delays: dict[int, np.ndarray]
    dopplers: dict[int, float]
    gains: dict[int, np.ndarray]
    cirs: dict[int, np.ndarray]
    noise_floor: float
    diagnostics: dict = field(default_factory=dict)


def run_gf_receiver(received: np.ndarray, ts_list: list[TrainingSequence],
                    steering: dict[int, np.ndarray], num: OtfsNumerology,
                    cfg: ReceiverConfig, k_a_nominal: int = 10,
                    paths: int = 3) -> EstimationResult:
    """Full joint ATI + CE chain on one received (A, frame_len) signal."""
    obs = extract_non_isi(received, num)
    dictionary = build_dictionary(ts_list, num)
    n_cols = obs.y.shape[1]
    stop = StopRule(max_taps=cfg.max_taps(num.non_isi_len, k_a_nominal, paths))
    somp = somp_recover(obs.y, dictionary.psi, stop)
    ats = cg_ad(somp, dictionary, n_cols, cfg.cgad_tau)

    supports: dict[int, np.ndarray] = {}
    dopplers: dict[int, float] = {}
    row_of_atom = {int(a): r for r, a in enumerate(somp.support)}
    for k in ats:
        atoms = [int(a) for a in somp.support if dictionary.split_atom(int(a))[0] == k]
        delays = np.array(sorted(dictionary.split_atom(a)[1] for a in atoms), dtype=int)
        supports[k] = delays
        energies = [float(np.sum(np.abs(somp.coefficients[row_of_atom[a]]) ** 2))
                    for a in atoms]
        dominant = atoms[int(np.argmax(energies))]
        traj = somp.coefficients[row_of_atom[dominant]].reshape(obs.n_snapshots, -1)
        dopplers[k] = estimate_doppler(traj, obs.timestamps, num.bandwidth,
                                       cfg.doppler_pad_factor)

    fit = ls_fit_gains(obs, supports, dopplers, ts_list, steering, num)
    n_bins = cfg.oversample_doppler * num.n
    cirs = {
        k: dd_cir_on_lattice(None, num, n_bins, gains=fit.gains[k],
                             doppler=dopplers[k], delays=fit.kept_delays[k])
        for k in fit.kept_delays if len(fit.kept_delays[k])
    }
    return EstimationResult(
        ats, fit.kept_delays, dopplers, fit.gains,
        cirs, somp.noise_floor,
        diagnostics={
            "max_coherence": dictionary.max_coherence,
            "somp_taps": int(somp.support.size),
            "ls_condition": fit.condition_number,
            "dropped_taps": fit.dropped_taps,
        },
    )


def ofdm_baseline_receiver(received: np.ndarray, pilots: dict[int, np.ndarray],
                           steering: dict[int, np.ndarray], num: OtfsNumerology,
                           onum: OfdmNumerology, cfg: ReceiverConfig,
                           k_a_nominal: int = 10, paths: int = 3):
    """SOMP + CG-AD on the full-band pilot preamble under a quasi-static
    (Doppler-blind) channel model, then per-subcarrier LS channel estimates.

    Returns (EstimationResult with nu_hat = 0, tf_estimates) where
    tf_estimates[k] is an (A, M) per-subcarrier response for the detector.
    """
    grids = ofdm_demodulate(received, onum)          # (A, M, S)
    aualt, m, _ = grids.shape
    l = num.combined_delay_span
    k = len(pilots)

    # Delay-response dictionary on the subcarrier axis.
    mm = np.arange(m)
    psi = np.empty((m, k * l), dtype=complex)
    for ki in range(k):
        for d in range(l):
            psi[:, ki * l + d] = pilots[ki] * np.exp(-2j * np.pi * mm * d / m)
    scales = np.linalg.norm(psi, axis=0)
    psi /= scales

    y = grids[:, :, :onum.n_pilot_symbols]           # (A, M, P)
    y = np.moveaxis(y, 1, 0).reshape(m, -1)          # columns = (antenna, symbol)
    n_cols = y.shape[1]
    stop = StopRule(max_taps=cfg.max_taps(m, k_a_nominal, paths))
    somp = somp_recover(y, psi, stop)
    dictionary = MmvDictionary(psi, scales, k, l, 0.0)
    ats = cg_ad(somp, dictionary, n_cols, cfg.cgad_tau)

    supports: dict[int, np.ndarray] = {}
    gains: dict[int, np.ndarray] = {}
    cirs: dict[int, np.ndarray] = {}
    tf_estimates: dict[int, np.ndarray] = {}
    row_of_atom = {int(at): r for r, at in enumerate(somp.support)}
    n_bins = cfg.oversample_doppler * num.n
    for kk in ats:
        atoms = [int(at) for at in somp.support if dictionary.split_atom(int(at))[0] == kk]
        delays = np.array(sorted(dictionary.split_atom(at)[1] for at in atoms), dtype=int)
        supports[kk] = delays
        h_ad = np.zeros((aualt, len(delays)), dtype=complex)
        for j, at in enumerate(sorted(atoms, key=lambda at: dictionary.split_atom(at)[1])):
            row = somp.coefficients[row_of_atom[at]].reshape(aualt, onum.n_pilot_symbols)
            h_ad[:, j] = row.mean(axis=1) / scales[at]
        g_d = (steering[kk].conj() @ h_ad) / aualt
        gains[kk] = g_d
        cirs[kk] = dd_cir_on_lattice(None, num, n_bins, gains=g_d, doppler=0.0,
                                     delays=delays)
        phase = np.exp(-2j * np.pi * np.outer(mm, delays) / m)
        tf_estimates[kk] = h_ad @ phase.T
    est = EstimationResult(ats, supports, {kk: 0.0 for kk in ats}, gains, cirs,
                           somp.noise_floor,
                           diagnostics={"somp_taps": int(somp.support.size)})
    return est, tf_estimates
