"""
User drops and channel realizations for a single-cell MISO downlink.

Users are dropped uniformly over a disk around the base station, see
large-scale fading made of distance path loss plus log-normal shadowing, and
i.i.d. Rayleigh small-scale fading on every antenna.

Randomness is drawn from Philox streams keyed by ``(seed, *stream, purpose)``
so positions, shadowing and fading never share draws and a drop can be
regenerated independently of any other.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CellGeometry",
    "ChannelMatrix",
    "substream",
    "horizontal_distances",
    "drop_users",
    "sample_channels",
    "dbm_to_watt",
    "generate_drop",
]

POSITIONS, SHADOWING, FADING = 0, 1, 2


@dataclass(frozen=True)
class CellGeometry:
    """Cell layout and propagation parameters.

    ``intercept_db`` is the large-scale gain at 1 m; it shifts every power
    figure by a constant and can be used to recalibrate absolute levels.
    """

    radius_km: float = 0.75
    bs_height_m: float = 25.0
    path_loss_exponent: float = 3.52
    shadowing_std_db: float = 8.0
    noise_dbm: float = -90.0
    intercept_db: float = 0.0

    def __post_init__(self):
        if not self.radius_km > 0:
            raise ValueError("radius_km must be positive")
        if not self.path_loss_exponent > 2:
            raise ValueError("path_loss_exponent must exceed 2")
        if not self.shadowing_std_db >= 0:
            raise ValueError("shadowing_std_db must be nonnegative")
        if not self.bs_height_m >= 0:
            raise ValueError("bs_height_m must be nonnegative")

    @property
    def noise_w(self):
        return dbm_to_watt(self.noise_dbm)


@dataclass(frozen=True)
class ChannelMatrix:
    """Channels ``H`` (``nt x k``, column ``k`` is user k) and noise powers in watts."""

    H: np.ndarray
    noise_w: np.ndarray

    @property
    def nt(self):
        return self.H.shape[0]

    @property
    def k(self):
        return self.H.shape[1]


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def substream(seed, *key):
    """Independent generator for ``(seed, *key)``; keys are nonnegative ints."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(ss))


def horizontal_distances(geom, k, seed, stream=()):
    """Distances (m) of ``k`` users dropped uniformly on the cell disk."""
    if k < 1:
        raise ValueError("need at least one user")
    rng = substream(seed, *stream, POSITIONS)
    radius_m = 1000.0 * geom.radius_km
    return radius_m * np.sqrt(rng.random(k))


def drop_users(geom, k, seed, stream=()):
    """
    Linear large-scale power gains for ``k`` users.

    The gain in dB is ``intercept - 10 alpha log10(d / 1 m) + X`` where ``d``
    includes the base-station height and ``X ~ N(0, shadowing_std_db^2)``.
    """
    horiz = horizontal_distances(geom, k, seed, stream)
    dist = np.hypot(horiz, geom.bs_height_m)
    shadow = substream(seed, *stream, SHADOWING).standard_normal(k) * geom.shadowing_std_db
    gain_db = geom.intercept_db - 10.0 * geom.path_loss_exponent * np.log10(dist) + shadow
    return 10.0 ** (gain_db / 10.0)


def sample_channels(gains, nt, seed, stream=(), noise_dbm=-90.0):
    """
    Rayleigh-faded channels ``h_k = sqrt(gain_k) g_k``, ``g_k ~ CN(0, I)``.
    """
    if nt < 1:
        raise ValueError("need at least one antenna")
    gains = np.asarray(gains, dtype=float).reshape(-1)
    k = gains.size
    rng = substream(seed, *stream, FADING)
    fading = rng.standard_normal((nt, k, 2)) @ np.array([1.0, 1j]) / np.sqrt(2.0)
    h = fading * np.sqrt(gains)
    noise = np.full(k, float(dbm_to_watt(noise_dbm)))
    return ChannelMatrix(H=h, noise_w=noise)


def generate_drop(geom, nt, k, seed, drop_id=0):
    """One Monte-Carlo drop: positions, shadowing and fading for ``k`` users."""
    stream = (drop_id,)
    gains = drop_users(geom, k, seed, stream)
    return sample_channels(gains, nt, seed, stream, geom.noise_dbm)
