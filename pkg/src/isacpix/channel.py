"""Deterministic free-space reference channels and Doppler impairment.

Per base station k the vehicle matrix H_v[k] (N_p x N_p) carries the
direct pixel->BS gain on its diagonal and two-leg scattered gains off
the diagonal; the sensing matrix H_s[k] (N_s x N_p) carries the two-leg
vehicle->target->BS gains.
"""
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .scene import DomainError

RHO_VEHICLE = 1.0  # vehicle scattering factor; reflectivity folds into p


def los_gain(a, b, wavelength):
    """Free-space gain between two points: (lam / 4 pi d) e^{-j 2 pi d / lam}.

    Raises DomainError below the one-wavelength exclusion radius.
    """
    d = math.dist(tuple(a), tuple(b))
    if d < wavelength:
        raise DomainError(
            f"distance {d:.4g} m below exclusion radius {wavelength:.4g} m")
    return (wavelength / (4.0 * math.pi * d)) * np.exp(-2j * math.pi * d / wavelength)


@dataclass(frozen=True)
class ChannelSet:
    """Per-BS reference gain matrices, immutable."""
    h_v: np.ndarray  # (K, N_p, N_p) complex
    h_s: np.ndarray  # (K, N_s, N_p) complex
    wavelength: float
    carrier_frequency: float

    def __post_init__(self):
        self.h_v.setflags(write=False)
        self.h_s.setflags(write=False)

    @property
    def k(self):
        return self.h_v.shape[0]

    @property
    def n_p(self):
        return self.h_v.shape[1]

    @property
    def n_s(self):
        return self.h_s.shape[1]

    def h_nlos(self, k):
        """Off-diagonal (scattered) part of H_v[k]."""
        out = self.h_v[k].copy()
        np.fill_diagonal(out, 0.0)
        return out


@dataclass(frozen=True)
class DopplerSpec:
    symbol_duration: float       # seconds
    enabled: bool = True

    def __post_init__(self):
        if self.symbol_duration <= 0:
            raise DomainError("symbol duration must be positive")


def build_vehicle_channel(geometry, wavelength=None):
    """All-BS vehicle gain stack (K, N_p, N_p)."""
    lam = geometry.wavelength if wavelength is None else wavelength
    pix = np.ascontiguousarray(geometry.pos_centers)
    d_pp = np.linalg.norm(pix[:, None, :] - pix[None, :, :], axis=-1)
    off = ~np.eye(len(pix), dtype=bool)
    if np.any(d_pp[off] < 1e-12):
        raise DomainError("coincident positioning pixel centers")
    return kernels.build_vehicle_gains(
        pix, np.ascontiguousarray(geometry.bs_positions), lam, RHO_VEHICLE)


def build_sensing_channel(geometry, wavelength=None):
    """All-BS sensing gain stack (K, N_s, N_p)."""
    lam = geometry.wavelength if wavelength is None else wavelength
    return kernels.build_sensing_gains(
        np.ascontiguousarray(geometry.sens_centers),
        np.ascontiguousarray(geometry.pos_centers),
        np.ascontiguousarray(geometry.bs_positions), lam)


def build_channels(geometry):
    return ChannelSet(h_v=build_vehicle_channel(geometry),
                      h_s=build_sensing_channel(geometry),
                      wavelength=geometry.wavelength,
                      carrier_frequency=3.0e8 / geometry.wavelength)


def apply_doppler(channels, spec, truth, geometry, rng_seed=0):
    """Impaired copy for measurement synthesis only.

    Each occupied transmitting pixel n gets a unit-magnitude phase
    exp(j 2 pi T v_proj / lam) on its column of H_v[k] and H_s[k], where
    v_proj projects the vehicle speed (random heading per vehicle) onto
    the pixel -> BS k direction. The reference set stays untouched.
    """
    if not spec.enabled:
        return channels
    rng = np.random.default_rng(rng_seed)
    occ = np.flatnonzero(truth.p)
    headings = {int(n): rng.uniform(0.0, 2.0 * math.pi) for n in occ}
    h_v = channels.h_v.copy()
    h_s = channels.h_s.copy()
    lam = channels.wavelength
    for n in occ:
        speed = truth.v[n]
        if speed == 0.0:
            continue
        center = geometry.pos_centers[n]
        bearing = np.arctan2(geometry.bs_positions[:, 1] - center[1],
                             geometry.bs_positions[:, 0] - center[0])
        v_proj = speed * np.cos(headings[int(n)] - bearing)  # per BS
        phase = np.exp(2j * math.pi * spec.symbol_duration * v_proj / lam)
        h_v[:, :, n] *= phase[:, None]
        h_s[:, :, n] *= phase[:, None]
    return replace(channels, h_v=h_v, h_s=h_s)


# --------------------------------------------------------------------------
# Binary cache: header (magic, dims, wavelength, geometry hash) + payload
# of row-major little-endian float64 (re, im) pairs.
# --------------------------------------------------------------------------

_MAGIC = b"ISACCHN1"


def save_channel_cache(path, channels, geometry):
    k, n_p, n_s = channels.k, channels.n_p, channels.n_s
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQdd", k, n_p, n_s,
                             channels.wavelength, channels.carrier_frequency))
        fh.write(geometry.geometry_hash())
        for arr in (channels.h_v, channels.h_s):
            flat = np.ascontiguousarray(arr).ravel()
            pairs = np.empty(2 * flat.size)
            pairs[0::2] = flat.real
            pairs[1::2] = flat.imag
            fh.write(pairs.astype("<f8").tobytes())


def load_channel_cache(path, geometry=None):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise DomainError("not a channel cache file")
        k, n_p, n_s, lam, freq = struct.unpack("<QQQdd", fh.read(40))
        digest = fh.read(32)
        if geometry is not None and digest != geometry.geometry_hash():
            raise DomainError("channel cache geometry hash mismatch")
        def read_complex(shape):
            count = 2 * int(np.prod(shape))
            pairs = np.frombuffer(fh.read(8 * count), dtype="<f8")
            return (pairs[0::2] + 1j * pairs[1::2]).reshape(shape)
        h_v = read_complex((k, n_p, n_p))
        h_s = read_complex((k, n_s, n_p))
    return ChannelSet(h_v=h_v, h_s=h_s, wavelength=lam, carrier_frequency=freq)


def get_channels(geometry, cache_path=None):
    """Build channels, round-tripping through an optional binary cache."""
    if cache_path is not None:
        import os
        if os.path.exists(cache_path):
            try:
                return load_channel_cache(cache_path, geometry)
            except DomainError:
                pass
        channels = build_channels(geometry)
        save_channel_cache(cache_path, channels, geometry)
        return channels
    return build_channels(geometry)
