"""Measurement synthesis and the two effective linear systems.

Received symbol per BS: y_k = p^T H_v[k] s + x^T H_s[k] s + n_k with
circular Gaussian noise calibrated to the requested SNR.
"""
import math
from dataclasses import dataclass

import numpy as np

from .scene import DomainError


@dataclass(frozen=True)
class MeasurementBatch:
    y: np.ndarray          # complex (K,)
    noise_var: float
    snr_db: float
    doppler: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        self.y.setflags(write=False)

    @property
    def k(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class EffectiveSystem:
    """Linear system b ~ A u for one GAMP sub-problem."""
    a: np.ndarray
    b: np.ndarray
    kind: str  # "symbols" (complex unknown) | "scattering" (real unknown)

    def __post_init__(self):
        if self.a.shape[0] != self.b.shape[0]:
            raise DomainError("A and b row counts differ")
        if self.kind not in ("symbols", "scattering"):
            raise DomainError(f"unknown system kind {self.kind!r}")


def noiseless_signal(truth, channels):
    """Noiseless part of y for all K base stations."""
    pv = truth.p @ channels.h_v          # (K, N_p)
    xs = truth.x @ channels.h_s          # (K, N_p)
    return (pv + xs) @ truth.s


def synthesize(truth, channels, snr_db, rng_seed=0, doppler=False):
    """Exact bilinear evaluation plus AWGN at the requested SNR.

    ``snr_db=inf`` disables noise.
    """
    signal = noiseless_signal(truth, channels)
    k = signal.shape[0]
    if math.isinf(snr_db):
        return MeasurementBatch(y=signal, noise_var=0.0, snr_db=snr_db,
                                doppler=doppler, rng_seed=rng_seed)
    power = float(np.mean(np.abs(signal) ** 2))
    if power == 0.0:
        raise DomainError("zero noiseless power: cannot calibrate finite SNR")
    noise_var = power / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(rng_seed)
    noise = math.sqrt(noise_var / 2.0) * (rng.standard_normal(k)
                                          + 1j * rng.standard_normal(k))
    return MeasurementBatch(y=signal + noise, noise_var=noise_var,
                            snr_db=snr_db, doppler=doppler, rng_seed=rng_seed)


def symbol_system(channels, p_hat, x_hat, y):
    """Effective system of the symbol-detection sub-problem.

    Row k of A is p_hat^T H_v[k] + x_hat^T H_s[k]; b is y.
    """
    a = p_hat @ channels.h_v + x_hat @ channels.h_s  # (K, N_p)
    return EffectiveSystem(a=a, b=np.asarray(y), kind="symbols")


def scatter_system(channels, p_hat, s_hat, y):
    """Effective system of the sensing sub-problem.

    b_k = y_k - p_hat^T H_v[k] s_hat; row k of A is (H_s[k] s_hat)^T,
    so b ~ A x for the real-valued scattering unknown.
    """
    b = np.asarray(y) - (p_hat @ channels.h_v) @ s_hat
    a = channels.h_s @ s_hat  # (K, N_s)
    return EffectiveSystem(a=a, b=b, kind="scattering")


def stack_real(system, noise_var):
    """Stacked real form of a complex system with a real unknown.

    Real and imaginary parts of A and b stack to 2K rows; the complex
    noise variance splits evenly, so the per-row variance halves.
    """
    a = np.concatenate([system.a.real, system.a.imag], axis=0)
    b = np.concatenate([system.b.real, system.b.imag], axis=0)
    return EffectiveSystem(a=a, b=b, kind="scattering"), noise_var / 2.0


def prune_columns(system, support):
    """Drop the columns outside ``support`` (boolean mask over unknowns)."""
    return EffectiveSystem(a=system.a[:, support], b=system.b, kind=system.kind)
