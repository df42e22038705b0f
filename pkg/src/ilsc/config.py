"""System parameters, named profiles and config-file loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Raised for parameter sets that violate a SystemConfig invariant."""


@dataclass(frozen=True)
class SystemConfig:
    """All physical and algorithmic knobs of one simulation.

    Defaults are the full-size parameter set (the ``paper`` profile); use
    :func:`profile` for the desk-scale variant. Powers are in dBm,
    frequencies in Hz and distances in meters.
    """

    n_bs: int = 512
    n_ut: int = 32
    n_rf_bs: int = 4
    n_rf_ut: int = 4
    n_streams: int = 4
    f_c: float = 47e9
    bandwidth: float = 5e9
    m_subcarriers: int = 64
    d_spacing: float | None = None
    q_bs: int = 18
    p_t_ul: float = 20.0
    p_t_dl: float = 30.0
    noise_psd: float = -174.0
    snr_target_db: float | None = 30.0
    rho: int = 2
    s_rings: int = 20
    # 16x the commonly quoted 1.5: the ring formula below places its outer ring
    # at 4*R_r/((S-1)*eta), so 1.5 would start the lattice at ~117 m.
    eta: float = 24.0
    damping: float = 0.8
    t_iter: int = 100
    amp_tol: float = 1e-7
    amp_init_snr_db: float = 10.0
    t_grd: int = 10
    g_los: int = 4
    l_max: int = 6
    los: bool = True
    k_smooth: int | None = None
    ut_grid_factor: int = 2
    ut_angle_range: tuple[float, float] = (-math.pi / 3, math.pi / 3)
    ut_range: tuple[float, float] = (5.0, 50.0)
    scatterer_angle_range: tuple[float, float] = (-math.pi / 3, math.pi / 3)
    scatterer_range: tuple[float, float] = (5.0, 20.0)
    ut_facing_spread: float = math.pi / 3
    pl_intercept: float = 32.4
    pl_exponent_los: float = 2.1
    pl_exponent_nlos: float = 3.19
    pl_nlos_offset: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.n_bs >= self.n_rf_bs >= 1:
            raise ConfigError("need n_bs >= n_rf_bs >= 1")
        if not self.n_ut >= self.n_rf_ut >= 1:
            raise ConfigError("need n_ut >= n_rf_ut >= 1")
        if self.m_subcarriers < 1:
            raise ConfigError("m_subcarriers must be >= 1")
        if self.rho < 1 or self.s_rings < 1:
            raise ConfigError("lattice needs rho >= 1 and s_rings >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError("damping must lie in [0, 1)")
        if self.g_los < 1 or self.n_ut % self.g_los:
            raise ConfigError("g_los must divide n_ut")
        if self.q_bs < 1 or self.t_iter < 1 or self.t_grd < 0:
            raise ConfigError("q_bs, t_iter must be >= 1 and t_grd >= 0")
        if self.l_max < 0:
            raise ConfigError("l_max must be >= 0")
        if self.bandwidth <= 0 or self.f_c <= 0:
            raise ConfigError("f_c and bandwidth must be positive")
        if self.k_smooth is not None and not 1 <= self.k_smooth < self.n_ut:
            raise ConfigError("k_smooth must satisfy 1 <= k_smooth < n_ut")

    # derived quantities

    @property
    def wavelength_c(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def spacing(self) -> float:
        return self.wavelength_c / 2 if self.d_spacing is None else self.d_spacing

    @property
    def p_meas(self) -> int:
        """Measurement length P = Q_BS * N_RF_BS."""
        return self.q_bs * self.n_rf_bs

    @property
    def subcarrier_freqs(self) -> np.ndarray:
        m = np.arange(self.m_subcarriers)
        return self.f_c - self.bandwidth / 2 + (m + 0.5) * self.bandwidth / self.m_subcarriers

    @property
    def wavelengths(self) -> np.ndarray:
        return SPEED_OF_LIGHT / self.subcarrier_freqs

    @property
    def noise_dbm(self) -> float:
        return self.noise_psd + 10 * math.log10(self.bandwidth)

    @property
    def noise_power(self) -> float:
        """AWGN power sigma^2 in mW."""
        return 10 ** (self.noise_dbm / 10)

    @property
    def bs_aperture(self) -> float:
        return (self.n_bs - 1) * self.spacing

    @property
    def ut_aperture(self) -> float:
        return (self.n_ut - 1) * self.spacing

    @property
    def rayleigh_distance(self) -> float:
        return 2 * self.bs_aperture ** 2 / self.wavelength_c

    @property
    def smoothing(self) -> int:
        return self.n_ut // 2 if self.k_smooth is None else self.k_smooth

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": dict(n_bs=128, n_ut=16, m_subcarriers=16, s_rings=10, eta=5.0, t_iter=200),
}


def profile(name: str = "desk", **overrides) -> SystemConfig:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    return SystemConfig(**{**base, **overrides})


def config_from_dict(data: dict, base: SystemConfig | None = None) -> SystemConfig:
    base = base or SystemConfig()
    known = {f.name: f for f in fields(SystemConfig)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    clean = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        clean[k] = v
    return base.replace(**clean)


def read_mapping(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path: str | Path, base: SystemConfig | None = None) -> SystemConfig:
    """Read a JSON or YAML file whose keys are SystemConfig field names.

    An optional ``profile`` key selects the base profile before the other
    keys are applied.
    """
    data = read_mapping(path)
    prof = data.pop("profile", None)
    if prof is not None:
        base = profile(prof)
    return config_from_dict(data, base)


def with_measurement_length(cfg: SystemConfig, p: int) -> SystemConfig:
    if p % cfg.n_rf_bs:
        raise ConfigError(f"P={p} is not a multiple of n_rf_bs={cfg.n_rf_bs}")
    return cfg.replace(q_bs=p // cfg.n_rf_bs)

