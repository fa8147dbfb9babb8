"""Terminal population, sparse delay-Doppler uplink channels, and their
application to superimposed frames.

Every terminal sees a few-path channel whose paths share one Doppler shift
(scatterers sit near the terminal, so all multipath components arrive at the
satellite from nearly the same angle). Delays are integer samples; Doppler
is continuous, so the sampled delay-Doppler response exhibits fractional
Doppler leakage across the lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .waveform import OtfsNumerology

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS = 6_371_000.0
MU_EARTH = 3.986004418e14  # standard gravitational parameter, m^3/s^2


class ConsistencyError(ValueError):
    """Frames and channel realization disagree on the terminal set."""


@dataclass(frozen=True)
class ConstellationGeometry:
    """Orbit and carrier parameters fixing the Doppler range."""

    orbital_altitude: float = 550e3
    f_c: float = 10e9
    nu_max: float = 178.2e3
    c: float = SPEED_OF_LIGHT

    @property
    def orbital_velocity(self) -> float:
        return np.sqrt(MU_EARTH / (EARTH_RADIUS + self.orbital_altitude))


def doppler_from_geometry(elevation: float, geom: ConstellationGeometry,
                          contact_angle: float | None = None) -> float:
    """Doppler shift for a pass geometry, clipped to [0, nu_max].

    The line-of-sight rate is v_sat * cos(contact angle) where the contact
    angle is the angle between the satellite velocity and the line of sight;
    at closest approach of a zenith pass it is 90 degrees (zero radial rate).
    By default the contact angle is derived from the elevation for a terminal
    in the orbital plane ahead of the satellite.
    """
    if not 0.0 < elevation <= np.pi / 2:
        raise ValueError(f"elevation must be in (0, pi/2], got {elevation}")
    if contact_angle is None:
        # In-plane geometry: line of sight from satellite to terminal makes
        # angle (elevation + earth-central offset) with the velocity vector;
        # the standard bound is cos(contact) <= R_E cos(el) / (R_E + h_o).
        cos_contact = EARTH_RADIUS * np.cos(elevation) / (EARTH_RADIUS + geom.orbital_altitude)
    else:
        cos_contact = np.cos(contact_angle)
    nu = (geom.f_c / geom.c) * geom.orbital_velocity * cos_contact
    return float(np.clip(nu, 0.0, geom.nu_max))


@dataclass
class TerminalProfile:
    """One potential uplink terminal and its ground-truth channel parameters."""

    terminal_id: int
    delays: np.ndarray          # integer path delays, each < l_max
    gains: np.ndarray           # complex path gains, sum E|g|^2 = 1
    doppler: float              # one Doppler shift (Hz) shared by all paths
    toa_offset: int             # residual synchronization offset, <= d_max
    aoa: tuple[float, float]    # (azimuth, elevation) radians
    active: bool = False

    @property
    def combined_delays(self) -> np.ndarray:
        """Delay taps as the receiver sees them: path delay + ToA offset."""
        return self.delays + self.toa_offset


def steering_vector(aoa: tuple[float, float], n_antennas: int) -> np.ndarray:
    """Unit-modulus array response; square counts use a UPA, otherwise a ULA."""
    az, el = aoa
    u = np.cos(el) * np.cos(az)
    v = np.cos(el) * np.sin(az)
    side = int(round(np.sqrt(n_antennas)))
    if side * side == n_antennas and side > 1:
        ax = np.exp(-1j * np.pi * np.arange(side) * u)
        ay = np.exp(-1j * np.pi * np.arange(side) * v)
        return np.kron(ax, ay)
    return np.exp(-1j * np.pi * np.arange(n_antennas) * u)


def draw_population(k: int, num: OtfsNumerology, geom: ConstellationGeometry,
                    seed, n_paths: int = 3, rician_k_db: float = 10.0,
                    decay_db_per_tap: float = 3.0) -> list[TerminalProfile]:
    """Draw K terminals with i.i.d. geometry, deterministic under the seed.

    Doppler ~ U[0, nu_max]; n_paths distinct integer delays uniform over
    [0, l_max) with an exponential power-delay profile (decay per ordered
    tap) and a Rician line-of-sight component on the first path; AoA uniform
    over the service cone (elevation above 30 degrees).
    """
    if k < 1:
        raise ValueError("need at least one terminal")
    if n_paths > num.l_max:
        raise ValueError(f"{n_paths} distinct delays do not fit in l_max={num.l_max}")
    rng = np.random.default_rng(seed)
    kappa = 10.0 ** (rician_k_db / 10.0)
    powers = 10.0 ** (-decay_db_per_tap * np.arange(n_paths) / 10.0)
    powers /= powers.sum()
    population = []
    for tid in range(k):
        delays = np.sort(rng.choice(num.l_max, size=n_paths, replace=False))
        gains = np.sqrt(powers / 2.0) * (rng.standard_normal(n_paths)
                                         + 1j * rng.standard_normal(n_paths))
        # Rician line of sight on the earliest path.
        los_phase = np.exp(2j * np.pi * rng.random())
        gains[0] = np.sqrt(powers[0]) * (
            np.sqrt(kappa / (kappa + 1.0)) * los_phase
            + np.sqrt(1.0 / (kappa + 1.0)) * (rng.standard_normal()
                                              + 1j * rng.standard_normal()) / np.sqrt(2.0)
        )
        nu = rng.uniform(0.0, geom.nu_max) if geom.nu_max > 0 else 0.0
        toa = int(rng.integers(0, num.d_max + 1))
        aoa = (rng.uniform(0.0, 2 * np.pi), rng.uniform(np.pi / 6, np.pi / 2))
        population.append(TerminalProfile(tid, delays, gains, nu, toa, aoa))
    return population


@dataclass
class ActivityPattern:
    k: int
    active_set: frozenset[int]

    @property
    def k_a(self) -> int:
        return len(self.active_set)


def draw_activity(population: list[TerminalProfile], k_a: int, seed) -> ActivityPattern:
    """Mark a uniformly random K_a-subset active, deterministic under the seed."""
    k = len(population)
    if k_a > k:
        raise ValueError(f"k_a = {k_a} exceeds population size {k}")
    rng = np.random.default_rng(seed)
    chosen = frozenset(int(i) for i in rng.choice(k, size=k_a, replace=False))
    for prof in population:
        prof.active = prof.terminal_id in chosen
    return ActivityPattern(k, chosen)


@dataclass
class ChannelRealization:
    """Per-trial channel state: active terminals, their parameters, noise level."""

    terminals: dict[int, TerminalProfile]
    steering: dict[int, np.ndarray]
    noise_var: float
    n_antennas: int
    bandwidth: float

    @classmethod
    def from_population(cls, population: list[TerminalProfile], activity: ActivityPattern,
                        n_antennas: int, snr_db: float, bandwidth: float,
                        noiseless: bool = False) -> "ChannelRealization":
        terms = {p.terminal_id: p for p in population if p.terminal_id in activity.active_set}
        steer = {tid: steering_vector(p.aoa, n_antennas) for tid, p in terms.items()}
        sigma2 = 0.0 if noiseless else 10.0 ** (-snr_db / 10.0)
        return cls(terms, steer, sigma2, n_antennas, bandwidth)


def _shift_add(out: np.ndarray, sig: np.ndarray, shift: int, scale) -> None:
    """out[..., shift:] += scale * sig[..., :n-shift]; samples outside are dropped."""
    if shift == 0:
        out += scale * sig
    elif shift < out.shape[-1]:
        out[..., shift:] += scale * sig[..., :out.shape[-1] - shift]


def apply_channel(frames: dict[int, np.ndarray], realization: ChannelRealization,
                  rng: np.random.Generator | None = None,
                  cyclic: bool = False) -> np.ndarray:
    """Superimpose the delayed, Doppler-shifted, steered uplink frames.

    Returns an (A, frame_len) array

        r_a[t] = sum_k steer_a(k) sum_p g_{k,p} e^{j2pi nu_k t / B}
                 s_k[t - l_{k,p} - toa_k] + w_a[t]

    with samples outside a frame treated as zero. ``cyclic=True`` is a test
    mode that wraps delays modulo the frame length (used to compare the
    end-to-end chain against the circular delay-Doppler convolution oracle).
    """
    missing = set(frames) - set(realization.terminals)
    if missing:
        raise ConsistencyError(f"terminals {sorted(missing)} not in the realization")
    lengths = {f.shape[-1] for f in frames.values()}
    if len(lengths) > 1:
        raise ConsistencyError(f"frames have mixed lengths {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    a = realization.n_antennas
    out = np.zeros((a, n), dtype=complex)
    t = np.arange(n)
    for tid, sig in frames.items():
        prof = realization.terminals[tid]
        ramp = np.exp(2j * np.pi * prof.doppler * t / realization.bandwidth)
        shifted = np.zeros(n, dtype=complex)
        for delay, gain in zip(prof.combined_delays, prof.gains):
            if cyclic:
                shifted += gain * np.roll(sig, delay)
            else:
                _shift_add(shifted, sig, int(delay), gain)
        out += np.outer(realization.steering[tid], ramp * shifted)
    if realization.noise_var > 0:
        if rng is None:
            raise ValueError("rng required when noise_var > 0")
        scale = np.sqrt(realization.noise_var / 2.0)
        out += scale * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


def doppler_leakage_kernel(bin_offsets: np.ndarray, window: int, n_bins: int) -> np.ndarray:
    """Dirichlet leakage of a tone onto a zero-padded DFT lattice.

    ``bin_offsets`` are (tone position - bin index) in lattice-bin units for
    an ``n_bins`` lattice whose underlying observation window is ``window``
    symbols. Offset 0 gives 1; with n_bins == window, integer offsets give 0.
    """
    u = np.asarray(bin_offsets, dtype=float)
    i = np.arange(window)
    return np.exp(2j * np.pi * np.multiply.outer(u, i) / n_bins).mean(axis=-1)


def dd_cir_on_lattice(profile: TerminalProfile, num: OtfsNumerology,
                      n_doppler_bins: int | None = None,
                      gains: np.ndarray | None = None,
                      doppler: float | None = None,
                      delays: np.ndarray | None = None) -> np.ndarray:
    """Sample a terminal's continuous DD response onto an (M, N') lattice.

    Rows are combined delay taps (path delay + ToA); the Doppler axis holds
    the fractional-Doppler leakage of the terminal's tone across an
    ``n_doppler_bins`` lattice spanning the unambiguous range, with the
    payload-symbol count as the observation window. Used both as the NMSE
    ground truth and (with estimated parameters) as the reconstruction, so
    the two live on an identical lattice map.
    """
    n_bins = n_doppler_bins or num.n
    gains = profile.gains if gains is None else np.asarray(gains)
    nu = profile.doppler if doppler is None else doppler
    delays = profile.combined_delays if delays is None else np.asarray(delays)
    cir = np.zeros((num.m, n_bins), dtype=complex)
    x = nu / num.doppler_step(n_bins)
    leak = doppler_leakage_kernel(x - np.arange(n_bins), num.n, n_bins)
    for delay, gain in zip(delays, gains):
        cir[int(delay) % num.m, :] += gain * leak
    return cir
