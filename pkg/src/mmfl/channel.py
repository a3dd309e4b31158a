"""Downlink channel realizations and receiver noise levels.

All powers are in watts. Channel gains are linear power gains.
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0


@dataclass(frozen=True)
class ChannelParams:
    pathloss_intercept_db: float = -169.2
    pathloss_exponent: float = 35.0
    shadowing_std_db: float = 8.0
    distance_range_km: tuple = (0.02, 0.5)
    bandwidth_hz: float = 1e7
    noise_psd_dbm_hz: float = -174.0
    device_noise_figure_db: float = 8.0
    bs_noise_figure_db: float = 2.0
    bs_power_budget_dbm: float = 47.0

    def __post_init__(self):
        lo, hi = self.distance_range_km
        if not 0 < lo < hi:
            raise ConfigurationError(f"bad distance range {self.distance_range_km}")
        if self.shadowing_std_db < 0 or self.bandwidth_hz <= 0:
            raise ConfigurationError("shadowing std and bandwidth must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown channel parameters: {sorted(unknown)}")
        d = dict(d)
        if "distance_range_km" in d:
            d["distance_range_km"] = tuple(d["distance_range_km"])
        return cls(**d)

    @property
    def downlink_noise_var(self):
        return noise_variance(self.noise_psd_dbm_hz, self.bandwidth_hz,
                              self.device_noise_figure_db)

    @property
    def uplink_noise_var(self):
        return noise_variance(self.noise_psd_dbm_hz, self.bandwidth_hz,
                              self.bs_noise_figure_db)

    @property
    def power_per_use(self):
        """Average BS transmit power per channel use, in watts."""
        return float(dbm_to_watt(self.bs_power_budget_dbm))


@dataclass(frozen=True)
class ChannelRealization:
    frame_index: int
    h: np.ndarray
    gains: np.ndarray

    @property
    def num_devices(self):
        return self.h.shape[0]

    @property
    def num_antennas(self):
        return self.h.shape[1]


def path_gain(d_km, shadow_db=0.0, intercept_db=-169.2, exponent=35.0):
    """Linear path gain ``10^((intercept - exponent*log10(d) - shadow)/10)``."""
    d_km = np.asarray(d_km, dtype=float)
    if np.any(d_km <= 0):
        raise ValueError("distance must be positive")
    gain_db = intercept_db - exponent * np.log10(d_km) - np.asarray(shadow_db)
    out = 10.0 ** (gain_db / 10.0)
    return float(out) if out.ndim == 0 else out


def draw_distances(params, K, rng):
    lo, hi = params.distance_range_km
    d = rng.uniform(lo, hi, size=K)
    # uniform() samples [lo, hi); the model needs the open interval
    return np.where(d <= lo, np.nextafter(lo, hi), d)


def rayleigh_channel(gains, N, rng):
    """Rows ``sqrt(G_k) * hbar_k`` with ``hbar_k ~ CN(0, I_N)``."""
    gains = np.asarray(gains, dtype=float)
    K = gains.shape[0]
    hbar = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2.0)
    return np.sqrt(gains)[:, None] * hbar


def draw_channel(params, distances, N, rng, frame_index=0):
    """Draw one frame's ``K x N`` downlink channel with fresh shadowing."""
    distances = np.asarray(distances, dtype=float)
    lo, hi = params.distance_range_km
    if np.any(distances <= lo) or np.any(distances >= hi):
        raise ConfigurationError(f"device distances must lie in ({lo}, {hi}) km")
    shadow = rng.normal(0.0, params.shadowing_std_db, size=distances.shape[0])
    gains = path_gain(distances, shadow, params.pathloss_intercept_db,
                      params.pathloss_exponent)
    gains = np.atleast_1d(gains)
    h = rayleigh_channel(gains, N, rng)
    return ChannelRealization(frame_index=frame_index, h=h, gains=gains)


def noise_variance(psd_dbm_hz, bandwidth_hz, noise_figure_db):
    """Receiver noise power in watts for the given PSD, bandwidth and NF."""
    if bandwidth_hz <= 0:
        raise ValueError("bandwidth must be positive")
    dbm = psd_dbm_hz + 10.0 * np.log10(bandwidth_hz) + noise_figure_db
    return float(dbm_to_watt(dbm))
