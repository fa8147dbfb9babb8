"""Per-trial simulation pipelines for the three access schemes.

A trial draws one population, one activity pattern and one channel
realization, then runs each requested scheme over the same channel (frames
and noise differ per scheme, channel parameters are shared, so cross-scheme
comparisons are paired). All randomness derives from stateless purpose-keyed
seed sequences, which makes records independent of worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import dd_pilot as ddp
from .channel import (ChannelRealization, ConstellationGeometry, apply_channel,
                      dd_cir_on_lattice, draw_activity, draw_population,
                      steering_vector)
from .config import ExperimentConfig
from .constellation import Constellation
from .detector import (UserCsi, build_effective_channel, compute_ber, demap,
                       ls_detect)
from .metrics import compute_aer, compute_nmse
from .ofdm import OfdmNumerology, ofdm_demodulate, ofdm_modulate
from .quantizer import make_frontend
from .receiver import ReceiverConfig, ofdm_baseline_receiver, run_gf_receiver
from .waveform import OtfsNumerology, TrainingSequence, assemble_frame, \
    extract_payload, otfs_demodulate

# Purpose ids for the stateless seed derivation (root, sweep, trial, purpose).
_POP, _ACT, _PAYLOAD_TS, _PAYLOAD_OFDM, _PAYLOAD_DDP = 0, 1, 2, 3, 4
_NOISE_TS, _NOISE_OFDM, _NOISE_DDP = 5, 6, 7
_OFDM_PILOT_STREAM = 101


def purpose_rng(root_seed: int, sweep_idx: int, trial_idx: int,
                purpose: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(root_seed, spawn_key=(sweep_idx, trial_idx, purpose)))


def ofdm_pilot_bank(k: int, m: int, root_seed: int) -> dict[int, np.ndarray]:
    """Fixed unit-power non-orthogonal pilot per potential terminal."""
    out = {}
    for tid in range(k):
        rng = np.random.default_rng(
            np.random.SeedSequence(root_seed, spawn_key=(_OFDM_PILOT_STREAM, tid)))
        p = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        out[tid] = p / np.sqrt(np.mean(np.abs(p) ** 2))
    return out


@dataclass
class ExperimentContext:
    """Immutable per-experiment state shared by all trials."""

    cfg: ExperimentConfig
    num: OtfsNumerology
    geom: ConstellationGeometry
    ts_list: list[TrainingSequence]
    constellation: Constellation
    rcfg: ReceiverConfig
    onum: OfdmNumerology | None = None
    ofdm_pilots: dict[int, np.ndarray] | None = None
    ofdm_scale: float = 1.0
    ddp_layout: ddp.DdPilotLayout | None = None

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "ExperimentContext":
        num = OtfsNumerology(cfg.m, cfg.n, cfg.delta_f, cfg.m_t, cfg.f_c,
                             cfg.l_max, cfg.d_max)
        num.validate_doppler_coverage(cfg.nu_max)
        geom = ConstellationGeometry(cfg.orbital_altitude, cfg.f_c, cfg.nu_max)
        ts_list = [TrainingSequence.for_terminal(tid, cfg.m_t, cfg.seed)
                   for tid in range(cfg.k)]
        rcfg = ReceiverConfig(cfg.cgad_tau, cfg.somp_max_taps,
                              cfg.doppler_pad_factor, cfg.oversample_doppler)
        ctx = cls(cfg, num, geom, ts_list, Constellation(cfg.constellation), rcfg)
        if "ofdm_baseline" in cfg.scheme:
            ctx.onum = OfdmNumerology.matched_to(
                num, cfg.ofdm_cp or None, cfg.ofdm_pilot_symbols or None)
            ctx.ofdm_pilots = ofdm_pilot_bank(cfg.k, cfg.m, cfg.seed)
            ctx.ofdm_scale = float(np.sqrt(num.frame_len / ctx.onum.frame_len))
        if "otfs_dd_pilot" in cfg.scheme:
            ctx.ddp_layout = ddp.DdPilotLayout.for_numerology(
                num, cfg.dd_pilot_cp or None, float(num.frame_len))
        return ctx

    @property
    def n_bins(self) -> int:
        return self.cfg.oversample_doppler * self.cfg.n


@dataclass
class TrialResult:
    scheme: str
    aer: float | None = None
    misses: int = 0
    false_alarms: int = 0
    nmse: float | None = None
    ber: float | None = None
    runtimes: dict[str, float] = field(default_factory=dict)


def _truth_cirs(ctx: ExperimentContext, population, active_set) -> dict[int, np.ndarray]:
    return {tid: dd_cir_on_lattice(population[tid], ctx.num, ctx.n_bins)
            for tid in active_set}


def _genie_csi(population, steering, active_set) -> list[UserCsi]:
    return [UserCsi(tid, population[tid].combined_delays, population[tid].gains,
                    population[tid].doppler, steering[tid])
            for tid in sorted(active_set)]


def _estimated_csi(est, steering) -> list[UserCsi]:
    out = []
    for tid in est.ats:
        delays = est.delays.get(tid, np.array([], dtype=int))
        if len(delays) == 0:
            continue
        out.append(UserCsi(tid, delays, est.gains[tid], est.dopplers[tid],
                           steering[tid]))
    return out


def _cap_to_antennas(csi_list: list[UserCsi], n_antennas: int) -> list[UserCsi]:
    """Detector identifiability guard: keep the strongest A terminals."""
    if len(csi_list) <= n_antennas:
        return csi_list
    order = sorted(csi_list, key=lambda c: -float(np.sum(np.abs(c.gains) ** 2)))
    kept = order[:n_antennas]
    return sorted(kept, key=lambda c: c.terminal_id)


def _synth_response(signal: np.ndarray, csi: UserCsi, bandwidth: float) -> np.ndarray:
    """(A, len) response of one terminal's known signal at parametric CSI."""
    from .channel import _shift_add
    shifted = np.zeros_like(signal)
    for d, g in zip(csi.delays, csi.gains):
        _shift_add(shifted, signal, int(d), g)
    t = np.arange(signal.shape[-1])
    shifted = shifted * np.exp(2j * np.pi * csi.doppler * t / bandwidth)
    return np.outer(csi.steering, shifted)


def run_ts_otfs_trial(ctx: ExperimentContext, population, activity, realization,
                      steering, seeds) -> TrialResult:
    cfg, num = ctx.cfg, ctx.num
    res = TrialResult("ts_otfs")
    t0 = time.perf_counter()

    payload_rng = seeds["payload_ts"]
    true_bits, grids, frames = {}, {}, {}
    for tid in sorted(activity.active_set):
        bits = ctx.constellation.random_bits(num.m * num.n, payload_rng)
        true_bits[tid] = bits
        grids[tid] = ctx.constellation.map_bits(bits).reshape(num.m, num.n)
        frames[tid] = assemble_frame(grids[tid], ctx.ts_list[tid], num).samples
    rx = apply_channel(frames, realization, seeds["noise_ts"])
    res.runtimes["channel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rx_q = make_frontend(cfg.adc_bits)(rx)
    res.runtimes["frontend"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    est = run_gf_receiver(rx_q, ctx.ts_list, steering, num, ctx.rcfg,
                          k_a_nominal=cfg.k_a, paths=cfg.paths)
    res.runtimes["receiver"] = time.perf_counter() - t0

    true_set = activity.active_set
    res.misses = len(true_set - set(est.ats))
    res.false_alarms = len(set(est.ats) - true_set)
    if "aer" in cfg.metrics:
        res.aer = compute_aer(true_set, est.ats, cfg.k)
    if "nmse" in cfg.metrics:
        truth = _truth_cirs(ctx, population, true_set)
        both = sorted(true_set & set(est.cirs))
        res.nmse = compute_nmse(truth, est.cirs, both)
    if "ber" not in cfg.metrics:
        return res

    t0 = time.perf_counter()
    if cfg.genie_csi:
        csi_list = _genie_csi(population, steering, true_set)
    else:
        csi_list = _cap_to_antennas(_estimated_csi(est, steering), cfg.antennas)
    detected = [c.terminal_id for c in csi_list]
    est_bits: dict[int, np.ndarray] = {}
    if csi_list:
        # Cancel the training contribution of every detected terminal, then
        # demodulate the payload region.
        clean = rx_q.astype(complex, copy=True)
        ts_frame = np.zeros(num.frame_len, dtype=complex)
        for csi in csi_list:
            for start in num.ts_starts:
                ts_frame[start:start + num.m_t] = ctx.ts_list[csi.terminal_id].samples
            clean -= _synth_response(ts_frame, csi, num.bandwidth)
            ts_frame[:] = 0
        y_dd = otfs_demodulate(extract_payload(clean, num), num)
        h = build_effective_channel(csi_list, num)
        reg = None if cfg.detector_reg < 0 else cfg.detector_reg
        x, diag = ls_detect(y_dd.reshape(cfg.antennas, -1).ravel(), h, reg,
                            cfg.solver_tol, cfg.solver_max_iters)
        for j, tid in enumerate(detected):
            est_bits[tid] = demap(x[j], ctx.constellation)
    else:
        diag = None
    report = compute_ber(est_bits, true_bits, true_set, detected, diag)
    res.ber = report.aggregate_ber
    res.runtimes["detector"] = time.perf_counter() - t0
    return res


def run_ofdm_trial(ctx: ExperimentContext, population, activity, realization,
                   steering, seeds) -> TrialResult:
    cfg, num, onum = ctx.cfg, ctx.num, ctx.onum
    res = TrialResult("ofdm_baseline")
    t0 = time.perf_counter()

    payload_rng = seeds["payload_ofdm"]
    n_data = onum.n_data_symbols * num.m
    true_bits, frames, data_grids = {}, {}, {}
    for tid in sorted(activity.active_set):
        bits = ctx.constellation.random_bits(n_data, payload_rng)
        true_bits[tid] = bits
        data = ctx.constellation.map_bits(bits).reshape(num.m, onum.n_data_symbols)
        grid = np.empty((num.m, onum.n_symbols), dtype=complex)
        grid[:, :onum.n_pilot_symbols] = ctx.ofdm_pilots[tid][:, None]
        grid[:, onum.n_pilot_symbols:] = data
        data_grids[tid] = data
        frames[tid] = ctx.ofdm_scale * ofdm_modulate(grid, onum)
    rx = apply_channel(frames, realization, seeds["noise_ofdm"])
    res.runtimes["channel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rx_q = make_frontend(cfg.adc_bits)(rx)
    res.runtimes["frontend"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    est, tf_est = ofdm_baseline_receiver(rx_q, ctx.ofdm_pilots, steering, num,
                                         onum, ctx.rcfg, cfg.k_a, cfg.paths)
    # The transmit scale rides along every recovered coefficient.
    if ctx.ofdm_scale != 1.0:
        for tid in est.gains:
            est.gains[tid] = est.gains[tid] / ctx.ofdm_scale
            est.cirs[tid] = est.cirs[tid] / ctx.ofdm_scale
    res.runtimes["receiver"] = time.perf_counter() - t0

    true_set = activity.active_set
    res.misses = len(true_set - set(est.ats))
    res.false_alarms = len(set(est.ats) - true_set)
    if "aer" in cfg.metrics:
        res.aer = compute_aer(true_set, est.ats, cfg.k)
    if "nmse" in cfg.metrics:
        truth = _truth_cirs(ctx, population, true_set)
        both = sorted(true_set & set(est.cirs))
        res.nmse = compute_nmse(truth, est.cirs, both)
    if "ber" not in cfg.metrics:
        return res

    t0 = time.perf_counter()
    if cfg.genie_csi:
        # Genie for this scheme means true taps; the quasi-static model is
        # still Doppler-blind, that is the scheme's own limitation.
        detected = sorted(true_set)
        tf_genie = {}
        mm = np.arange(num.m)
        for tid in detected:
            prof = population[tid]
            phases = np.exp(-2j * np.pi * np.outer(mm, prof.combined_delays) / num.m)
            tf_genie[tid] = ctx.ofdm_scale * np.outer(
                steering[tid], phases @ prof.gains)
        tf_est = tf_genie
    else:
        # tf_est from the receiver already carries the transmit scale, which
        # keeps the per-subcarrier solve scale-consistent.
        detected = sorted(set(est.ats))[: cfg.antennas]
    est_bits = {}
    if detected:
        rx_grids = ofdm_demodulate(rx_q, onum)
        data_rx = rx_grids[:, :, onum.n_pilot_symbols:]
        h_stack = np.stack([tf_est[tid] for tid in detected], axis=0)  # (K, A, M)
        soft = _ofdm_mud(data_rx, h_stack, reg=max(cfg.detector_reg, 0.0))
        for j, tid in enumerate(detected):
            est_bits[tid] = demap(soft[j].ravel(), ctx.constellation)
    report = compute_ber(est_bits, true_bits, true_set, detected)
    res.ber = report.aggregate_ber
    res.runtimes["detector"] = time.perf_counter() - t0
    return res


def _ofdm_mud(data_rx: np.ndarray, h_stack: np.ndarray, reg: float = 0.0) -> np.ndarray:
    """Per-subcarrier LS: y[a, m, n] = sum_k H[k, a, m] x[k, m, n].

    Returns (K, M, N_data) soft symbols.
    """
    k = h_stack.shape[0]
    hm = h_stack.transpose(2, 1, 0)                  # (M, A, K)
    gram = np.einsum("mak,mal->mkl", hm.conj(), hm)
    floor = 1e-10 * np.mean(np.abs(np.einsum("mkk->mk", gram))) + 1e-30
    gram = gram + max(reg, floor) * np.eye(k)[None, :, :]
    rhs = np.einsum("mak,amn->mkn", hm.conj(), data_rx)
    sol = np.linalg.solve(gram, rhs)                 # (M, K, N)
    return np.moveaxis(sol, 0, 1)                    # (K, M, N)


def run_dd_pilot_trial(ctx: ExperimentContext, population, activity, realization,
                       steering, seeds) -> TrialResult:
    cfg, num, layout = ctx.cfg, ctx.num, ctx.ddp_layout
    res = TrialResult("otfs_dd_pilot")
    t0 = time.perf_counter()

    payload_rng = seeds["payload_ddp"]
    true_bits, frames = {}, {}
    n_data = layout.n_data_bins
    for tid in sorted(activity.active_set):
        bits = ctx.constellation.random_bits(n_data, payload_rng)
        true_bits[tid] = bits
        data = ctx.constellation.map_bits(bits)
        frames[tid] = ddp.build_pilot_frame(layout, tid, data)
    rx = apply_channel(frames, realization, seeds["noise_ddp"])
    res.runtimes["channel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rx_q = make_frontend(cfg.adc_bits)(rx)
    grids = ddp.strip_cp_and_demodulate(rx_q, layout)
    floor = ddp.readout_noise_floor(grids, layout)

    # Pilot-position energy detection; ids sharing a fired position all fire.
    est_ats = []
    span = num.combined_delay_span
    for tid in range(cfg.k):
        row0, bin_ = layout.pilot_position(tid)
        rows = (row0 + np.arange(span)) % num.m
        bins = np.array([bin_ - 1, bin_, bin_ + 1]) % num.n
        cells = grids[:, rows[:, None], bins[None, :]]
        if float(np.mean(np.abs(cells) ** 2)) > cfg.cgad_tau * floor:
            est_ats.append(tid)

    estimates = {}
    for tid in est_ats:
        delays, gains, nu_hat, _ = ddp.dd_pilot_baseline_ce(
            grids, layout, tid, steering[tid], cfg.oversample_doppler,
            cfg.cgad_tau, floor)
        if delays.size:
            estimates[tid] = (delays, gains, nu_hat)
    res.runtimes["receiver"] = time.perf_counter() - t0

    true_set = activity.active_set
    res.misses = len(true_set - set(est_ats))
    res.false_alarms = len(set(est_ats) - true_set)
    if "aer" in cfg.metrics:
        res.aer = compute_aer(true_set, est_ats, cfg.k)
    if "nmse" in cfg.metrics:
        truth = _truth_cirs(ctx, population, true_set)
        cirs = {tid: ddp.canonical_cir_from_readout(d, g, nu, num, ctx.n_bins)
                for tid, (d, g, nu) in estimates.items()}
        both = sorted(true_set & set(cirs))
        res.nmse = compute_nmse(truth, cirs, both)
    if "ber" not in cfg.metrics:
        return res

    t0 = time.perf_counter()
    if cfg.genie_csi:
        csi_list = _genie_csi(population, steering, true_set)
    else:
        csi_list = [UserCsi(tid, d, g, nu, steering[tid])
                    for tid, (d, g, nu) in sorted(estimates.items())]
        csi_list = _cap_to_antennas(csi_list, cfg.antennas)
    detected = [c.terminal_id for c in csi_list]
    est_bits = {}
    if csi_list:
        h = build_effective_channel(csi_list, num, layout=layout)
        # Subtract the known pilot contribution of every detected terminal.
        y = grids.reshape(cfg.antennas, -1).astype(complex)
        mn = num.m * num.n
        for j, csi in enumerate(csi_list):
            row, bin_ = layout.pilot_position(csi.terminal_id)
            pilot_vec = np.zeros(mn, dtype=complex)
            pilot_vec[row * num.n + bin_] = layout.pilot_amplitude
            y -= np.outer(csi.steering, h.user_ops[j] @ pilot_vec)
        data_idx = np.array([r * num.n + k_ for r in layout.data_rows
                             for k_ in range(num.n)])
        hm = _MaskedChannel(h, data_idx)
        reg = None if cfg.detector_reg < 0 else cfg.detector_reg
        x, diag = ls_detect_masked(y.ravel(), hm, reg, cfg.solver_tol,
                                   cfg.solver_max_iters)
        for j, tid in enumerate(detected):
            est_bits[tid] = demap(x[j], ctx.constellation)
    report = compute_ber(est_bits, true_bits, true_set, detected)
    res.ber = report.aggregate_ber
    res.runtimes["detector"] = time.perf_counter() - t0
    return res


class _MaskedChannel:
    """Effective channel restricted to the data bins of every user."""

    def __init__(self, h, data_idx: np.ndarray):
        self.h = h
        self.data_idx = data_idx
        mn = h.m * h.n
        self.mn = mn

    @property
    def shape(self):
        return (self.h.shape[0], self.h.n_users * self.data_idx.size)

    @property
    def n_users(self):
        return self.h.n_users

    @property
    def n_antennas(self):
        return self.h.n_antennas

    def matvec(self, x):
        xk = np.zeros((self.h.n_users, self.mn), dtype=complex)
        xk[:, self.data_idx] = np.asarray(x).reshape(self.h.n_users, -1)
        return self.h.matvec(xk.ravel())

    def rmatvec(self, y):
        full = self.h.rmatvec(y).reshape(self.h.n_users, self.mn)
        return full[:, self.data_idx].ravel()

    def frobenius_sq(self):
        return self.h.frobenius_sq()


def ls_detect_masked(y, hm: _MaskedChannel, reg, tol, max_iters):
    from scipy.sparse.linalg import LinearOperator, lsqr

    from .detector import IdentifiabilityError, SolveDiagnostics
    if hm.n_users > hm.n_antennas:
        raise IdentifiabilityError(
            f"K_hat = {hm.n_users} users exceed A = {hm.n_antennas} antennas")
    if reg is None:
        reg = 1e-6 * hm.frobenius_sq() / hm.shape[1]
    op = LinearOperator(hm.shape, matvec=hm.matvec, rmatvec=hm.rmatvec, dtype=complex)
    result = lsqr(op, np.asarray(y, dtype=complex).ravel(), damp=float(np.sqrt(reg)),
                  atol=tol, btol=tol, iter_lim=max_iters)
    x, istop, itn, r1norm = result[0], result[1], result[2], result[3]
    diag = SolveDiagnostics(int(itn), float(r1norm), istop in (1, 2, 4, 5), int(istop))
    return x.reshape(hm.n_users, -1), diag


_RUNNERS = {
    "ts_otfs": run_ts_otfs_trial,
    "ofdm_baseline": run_ofdm_trial,
    "otfs_dd_pilot": run_dd_pilot_trial,
}


def run_trial(ctx: ExperimentContext, sweep_idx: int, trial_idx: int) -> dict[str, TrialResult]:
    """One full trial across the configured schemes (shared channel draw)."""
    cfg = ctx.cfg
    population = draw_population(cfg.k, ctx.num, ctx.geom,
                                 purpose_rng(cfg.seed, sweep_idx, trial_idx, _POP),
                                 n_paths=cfg.paths)
    activity = draw_activity(population,
                             cfg.k_a,
                             purpose_rng(cfg.seed, sweep_idx, trial_idx, _ACT))
    steering = {p.terminal_id: steering_vector(p.aoa, cfg.antennas)
                for p in population}
    realization = ChannelRealization.from_population(
        population, activity, cfg.antennas, cfg.snr_db, ctx.num.bandwidth)
    seeds = {
        "payload_ts": purpose_rng(cfg.seed, sweep_idx, trial_idx, _PAYLOAD_TS),
        "payload_ofdm": purpose_rng(cfg.seed, sweep_idx, trial_idx, _PAYLOAD_OFDM),
        "payload_ddp": purpose_rng(cfg.seed, sweep_idx, trial_idx, _PAYLOAD_DDP),
        "noise_ts": purpose_rng(cfg.seed, sweep_idx, trial_idx, _NOISE_TS),
        "noise_ofdm": purpose_rng(cfg.seed, sweep_idx, trial_idx, _NOISE_OFDM),
        "noise_ddp": purpose_rng(cfg.seed, sweep_idx, trial_idx, _NOISE_DDP),
    }
    return {scheme: _RUNNERS[scheme](ctx, population, activity, realization,
                                     steering, seeds)
            for scheme in cfg.scheme}
