"""Flat key-value experiment configuration.

The on-disk format is one ``key = value`` per line with ``#`` comments, no
nesting. Every key is validated against the documented schema before any
trial runs; unknown keys are rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

SCHEMES = ("ts_otfs", "otfs_dd_pilot", "ofdm_baseline")
METRICS = ("aer", "nmse", "ber")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


@dataclass
class ExperimentConfig:
    # numerology
    m: int = 64
    n: int = 8
    m_t: int = 80
    delta_f: float = 480e3
    f_c: float = 10e9
    # channel / population
    orbital_altitude: float = 550e3
    nu_max: float = 178.2e3
    l_max: int = 16
    d_max: int = 8
    paths: int = 3
    k: int = 100
    k_a: int = 10
    antennas: int = 16
    snr_db: float = 15.0
    # front end
    adc_bits: int = 0
    # receiver
    cgad_tau: float = 3.0
    somp_max_taps: int = 0
    doppler_pad_factor: int = 32
    oversample_doppler: int = 1
    # detector
    detector_reg: float = -1.0       # < 0 selects the documented auto ridge
    solver_tol: float = 1e-8
    solver_max_iters: int = 500
    genie_csi: bool = False
    constellation: str = "qpsk"
    # baselines
    ofdm_cp: int = 0                 # 0 -> l_max + d_max
    ofdm_pilot_symbols: int = 0      # 0 -> match the TS overhead fraction
    dd_pilot_cp: int = 0             # 0 -> l_max + d_max
    # harness
    scheme: tuple[str, ...] = ("ts_otfs",)
    metrics: tuple[str, ...] = METRICS
    trials: int = 200
    seed: int = 12345
    workers: int = 1
    sweep_var: str = ""
    sweep_values: tuple[float, ...] = ()

    def replace_value(self, key: str, value) -> "ExperimentConfig":
        import dataclasses
        return dataclasses.replace(self, **{key: value})


_INT_RANGES = {
    "m": (2, 1 << 16), "n": (1, 1 << 12), "m_t": (2, 1 << 16),
    "l_max": (1, 1 << 12), "d_max": (0, 1 << 12), "paths": (1, 64),
    "k": (1, 100000), "k_a": (0, 100000), "antennas": (1, 4096),
    "adc_bits": (0, 8), "somp_max_taps": (0, 1 << 16),
    "doppler_pad_factor": (2, 4096), "oversample_doppler": (1, 2),
    "solver_max_iters": (1, 100000), "ofdm_cp": (0, 1 << 16),
    "ofdm_pilot_symbols": (0, 1 << 12), "dd_pilot_cp": (0, 1 << 16),
    "trials": (1, 10_000_000), "seed": (0, 2 ** 63 - 1), "workers": (1, 1024),
}
_POSITIVE_FLOATS = ("delta_f", "f_c", "orbital_altitude", "cgad_tau", "solver_tol")
_SWEEPABLE = ("snr_db", "nu_max", "k_a", "adc_bits", "antennas", "trials",
              "oversample_doppler", "cgad_tau")


def _parse_bool(key: str, text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def parse_config_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(stripped.split()[0], f"line {lineno} is not 'key = value'")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(key, "duplicate key")
        raw[key] = value.strip()
    return raw


def build_config(raw: dict[str, str]) -> ExperimentConfig:
    """Validate the raw mapping and produce a typed config."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    cfg = ExperimentConfig()
    values: dict[str, object] = {}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(key, "unknown key")
        current = getattr(cfg, key)
        if key in ("scheme", "metrics"):
            values[key] = tuple(s.strip() for s in text.split(",") if s.strip())
        elif key == "sweep_values":
            try:
                values[key] = tuple(float(v) for v in text.split(",") if v.strip())
            except ValueError:
                raise ConfigError(key, f"expected comma-separated numbers, got {text!r}")
        elif isinstance(current, bool):
            values[key] = _parse_bool(key, text)
        elif isinstance(current, int):
            try:
                values[key] = int(text)
            except ValueError:
                raise ConfigError(key, f"expected an integer, got {text!r}")
        elif isinstance(current, float):
            try:
                values[key] = float(text)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {text!r}")
        else:
            values[key] = text
    merged = ExperimentConfig(**values)
    validate_config(merged)
    return merged


def validate_config(cfg: ExperimentConfig) -> None:
    for key, (lo, hi) in _INT_RANGES.items():
        v = getattr(cfg, key)
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or not lo <= v <= hi:
            raise ConfigError(key, f"must be an integer in [{lo}, {hi}], got {v!r}")
    for key in _POSITIVE_FLOATS:
        v = getattr(cfg, key)
        if not v > 0:
            raise ConfigError(key, f"must be positive, got {v!r}")
    if cfg.nu_max < 0:
        raise ConfigError("nu_max", "must be >= 0")
    if cfg.detector_reg >= 0 and not np.isfinite(cfg.detector_reg):
        raise ConfigError("detector_reg", "must be finite")
    if cfg.k_a > cfg.k:
        raise ConfigError("k_a", f"exceeds k = {cfg.k}")
    if cfg.paths > cfg.l_max:
        raise ConfigError("paths", f"needs paths <= l_max = {cfg.l_max} distinct delays")
    if cfg.m_t <= cfg.l_max + cfg.d_max:
        raise ConfigError("m_t", f"must exceed l_max + d_max = {cfg.l_max + cfg.d_max}")
    if cfg.constellation not in ("qpsk", "qam16"):
        raise ConfigError("constellation", f"must be qpsk or qam16, got {cfg.constellation!r}")
    if not cfg.scheme:
        raise ConfigError("scheme", "no scheme selected")
    for s in cfg.scheme:
        if s not in SCHEMES:
            raise ConfigError("scheme", f"{s!r} not one of {SCHEMES}")
    if len(set(cfg.scheme)) != len(cfg.scheme):
        raise ConfigError("scheme", "duplicate scheme")
    for mname in cfg.metrics:
        if mname not in METRICS:
            raise ConfigError("metrics", f"{mname!r} not one of {METRICS}")
    if not cfg.metrics:
        raise ConfigError("metrics", "no metric selected")
    if cfg.sweep_var:
        if cfg.sweep_var not in _SWEEPABLE:
            raise ConfigError("sweep_var", f"must be one of {_SWEEPABLE}")
        if not cfg.sweep_values:
            raise ConfigError("sweep_values", "sweep_var set but no sweep_values")
    # Doppler coverage of the snapshot estimator.
    span = cfg.m * cfg.delta_f / (cfg.m + cfg.m_t)
    if cfg.nu_max >= span:
        raise ConfigError(
            "nu_max", f"{cfg.nu_max:.1f} Hz is outside the unambiguous span "
            f"B/(M+M_t) = {span:.1f} Hz; raise delta_f or shrink the frame")


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_config(parse_config_text(fh.read()))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def sweep_points(cfg: ExperimentConfig):
    """(sweep_var, value, per-point config) triplets; one point if no sweep."""
    if not cfg.sweep_var:
        yield ("none", 0.0, cfg)
        return
    for v in cfg.sweep_values:
        current = getattr(cfg, cfg.sweep_var)
        cast = int(round(v)) if isinstance(current, (int, np.integer)) else float(v)
        point = cfg.replace_value(cfg.sweep_var, cast)
        validate_config(point)
        yield (cfg.sweep_var, float(v), point)
