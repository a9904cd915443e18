"""Hot numerical kernels with numba and pure-numpy variants.

Contains the scalar posterior-moment maps (denoisers) used inside the
message-passing inner loop and the pairwise free-space gain assembly.
The two variants implement identical arithmetic; ``backend.USE_NUMBA``
picks the dispatched version exported at the bottom.
"""
import math

import numpy as np
from scipy.special import erfcx as _sp_erfcx, log_ndtr as _sp_log_ndtr, ndtr as _sp_ndtr

from .backend import USE_NUMBA

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_NEG_INF = -np.inf


# --------------------------------------------------------------------------
# Truncated-Gaussian moments on [0, 1]
# --------------------------------------------------------------------------

def _trunc01_moments_np(mu, sd):
    """Moments of N(mu, sd^2) truncated to [0, 1].

    Returns (log_mass, mean, var). Stable for |mu| many sd away from the
    interval via erfcx ratios; the straddling case uses ndtr directly.
    """
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    flip = mu > 0.5
    mu_w = np.where(flip, 1.0 - mu, mu)

    alpha = (0.0 - mu_w) / sd
    beta = (1.0 - mu_w) / sd

    logz = np.empty_like(mu_w)
    r_a = np.empty_like(mu_w)
    r_b = np.empty_like(mu_w)

    # Right-tail branch: interval entirely above the mean (alpha >= 0).
    tail = alpha >= 0.0
    if np.any(tail):
        a = alpha[tail] / math.sqrt(2.0)
        b = beta[tail] / math.sqrt(2.0)
        d = b * b - a * a
        ed = np.exp(-d)
        denom = _sp_erfcx(a) - _sp_erfcx(b) * ed
        denom = np.maximum(denom, 1e-300)
        logz[tail] = -a * a + np.log(0.5 * denom)
        r_a[tail] = _SQRT_2_OVER_PI / denom
        r_b[tail] = r_a[tail] * ed
    direct = ~tail
    if np.any(direct):
        al = alpha[direct]
        be = beta[direct]
        z = _sp_ndtr(be) - _sp_ndtr(al)
        z = np.maximum(z, 1e-300)
        logz[direct] = np.log(z)
        r_a[direct] = np.exp(-0.5 * al * al) / (_SQRT_2PI * z)
        r_b[direct] = np.exp(-0.5 * be * be) / (_SQRT_2PI * z)

    delta = r_a - r_b
    mean_w = mu_w + sd * delta
    var = sd * sd * (1.0 + alpha * r_a - beta * r_b - delta * delta)
    var = np.maximum(var, 0.0)
    mean = np.where(flip, 1.0 - mean_w, mean_w)
    return logz, mean, var


# --------------------------------------------------------------------------
# Scatter denoiser: spike + Gaussian restricted to (0, 1]
# --------------------------------------------------------------------------

def scatter_moments_np(r, tau, gamma, theta, sigma, lam):
    """Posterior mean/variance of x under the interval-limited
    Bernoulli-Gaussian prior, observed through r = x + N(0, tau)."""
    r = np.asarray(r, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if gamma <= 0.0:
        z = np.zeros_like(r)
        return z, z.copy()

    sig2 = sigma * sigma
    s2 = sig2 + tau
    mu = (r * sig2 + theta * tau) / s2
    nu = sig2 * tau / s2
    sd = np.sqrt(nu)

    logz, m1, v1 = _trunc01_moments_np(mu, sd)
    l1 = math.log(gamma) - 0.5 * np.log(2.0 * math.pi * s2) \
        - (r - theta) ** 2 / (2.0 * s2) + logz
    spike_w = 1.0 - gamma + lam
    if spike_w > 0.0:
        l0 = math.log(spike_w) - 0.5 * np.log(2.0 * math.pi * tau) \
            - r * r / (2.0 * tau)
    else:
        l0 = np.full_like(r, _NEG_INF)
    with np.errstate(over="ignore"):
        pi1 = 1.0 / (1.0 + np.exp(np.clip(l0 - l1, -745.0, 745.0)))
    mean = pi1 * m1
    ex2 = pi1 * (v1 + m1 * m1)
    var = np.maximum(ex2 - mean * mean, 0.0)
    return mean, var


def scatter_responsibilities_np(r, tau, gamma, theta, sigma, lam):
    """Slab responsibility and slab-conditional moments, for EM updates."""
    r = np.asarray(r, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sig2 = sigma * sigma
    s2 = sig2 + tau
    mu = (r * sig2 + theta * tau) / s2
    nu = sig2 * tau / s2
    sd = np.sqrt(nu)
    logz, m1, v1 = _trunc01_moments_np(mu, sd)
    if gamma <= 0.0:
        return np.zeros_like(r), m1, v1
    l1 = math.log(gamma) - 0.5 * np.log(2.0 * math.pi * s2) \
        - (r - theta) ** 2 / (2.0 * s2) + logz
    spike_w = 1.0 - gamma + lam
    if spike_w > 0.0:
        l0 = math.log(spike_w) - 0.5 * np.log(2.0 * math.pi * tau) \
            - r * r / (2.0 * tau)
    else:
        l0 = np.full_like(r, _NEG_INF)
    with np.errstate(over="ignore"):
        pi1 = 1.0 / (1.0 + np.exp(np.clip(l0 - l1, -745.0, 745.0)))
    return pi1, m1, v1


# --------------------------------------------------------------------------
# Symbol denoiser: spike + complex Gaussian mixture
# --------------------------------------------------------------------------

def symbol_moments_np(r, tau, gamma, omega, theta, sigma):
    """Posterior mean/variance of a complex symbol under the
    Bernoulli-Gaussian-mixture prior, observed through r = s + CN(0, tau).

    sigma(m) is the standard deviation in the total-complex-variance
    convention: E|s - theta_m|^2 = sigma(m)^2 under component m.
    """
    r = np.asarray(r, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    n = r.shape[0]
    m_comp = len(omega)
    if gamma <= 0.0:
        z = np.zeros(n, dtype=complex)
        return z, np.zeros(n)

    sig2 = np.asarray(sigma, dtype=float) ** 2          # (M,)
    s2 = sig2[None, :] + tau[:, None]                   # (N, M)
    diff2 = np.abs(r[:, None] - np.asarray(theta)[None, :]) ** 2
    with np.errstate(divide="ignore"):
        log_w = np.log(gamma * np.asarray(omega, dtype=float))
    lm = log_w[None, :] - np.log(math.pi * s2) - diff2 / s2   # (N, M)
    if gamma < 1.0:
        l0 = math.log(1.0 - gamma) - np.log(math.pi * tau) - np.abs(r) ** 2 / tau
    else:
        l0 = np.full(n, _NEG_INF)

    all_l = np.concatenate([l0[:, None], lm], axis=1)   # (N, M+1)
    lmax = np.max(all_l, axis=1, keepdims=True)
    w = np.exp(all_l - lmax)
    w /= np.sum(w, axis=1, keepdims=True)
    pm = w[:, 1:]                                       # component weights

    mu = (r[:, None] * sig2[None, :] + np.asarray(theta)[None, :] * tau[:, None]) / s2
    nu = sig2[None, :] * tau[:, None] / s2
    mean = np.sum(pm * mu, axis=1)
    ex2 = np.sum(pm * (np.abs(mu) ** 2 + nu), axis=1)
    var = np.maximum(ex2 - np.abs(mean) ** 2, 0.0)
    return mean, var


def symbol_responsibilities_np(r, tau, gamma, omega, theta, sigma):
    """Per-component posterior weights plus conditional moments, for EM."""
    r = np.asarray(r, dtype=complex)
    tau = np.asarray(tau, dtype=float)
    n = r.shape[0]
    sig2 = np.asarray(sigma, dtype=float) ** 2
    s2 = sig2[None, :] + tau[:, None]
    diff2 = np.abs(r[:, None] - np.asarray(theta)[None, :]) ** 2
    with np.errstate(divide="ignore"):
        log_w = np.log(gamma * np.asarray(omega, dtype=float)) if gamma > 0 \
            else np.full(len(omega), _NEG_INF)
    lm = log_w[None, :] - np.log(math.pi * s2) - diff2 / s2
    if 0.0 < gamma < 1.0:
        l0 = math.log(1.0 - gamma) - np.log(math.pi * tau) - np.abs(r) ** 2 / tau
    elif gamma >= 1.0:
        l0 = np.full(n, _NEG_INF)
    else:
        l0 = np.zeros(n)
    all_l = np.concatenate([l0[:, None], lm], axis=1)
    lmax = np.max(all_l, axis=1, keepdims=True)
    w = np.exp(all_l - lmax)
    w /= np.sum(w, axis=1, keepdims=True)
    mu = (r[:, None] * sig2[None, :] + np.asarray(theta)[None, :] * tau[:, None]) / s2
    nu = sig2[None, :] * tau[:, None] / s2
    return w, mu, nu


# --------------------------------------------------------------------------
# Free-space gain assembly
# --------------------------------------------------------------------------

def _los_gain_array(dist, lam):
    return (lam / (4.0 * math.pi * dist)) * np.exp(-2j * math.pi * dist / lam)


def build_vehicle_gains_np(pix, bs, lam, rho_v):
    """Per-BS vehicle gain matrices, shape (K, N_p, N_p).

    Diagonal: LOS pixel->BS. Off-diagonal (i, j): LOS(pixel_i, pixel_j)
    times LOS(pixel_j, BS_k) times the vehicle scattering factor.
    """
    d_pp = np.linalg.norm(pix[:, None, :] - pix[None, :, :], axis=-1)
    np.fill_diagonal(d_pp, lam)  # placeholder; diagonal overwritten below
    d_pb = np.linalg.norm(pix[:, None, :] - bs[None, :, :], axis=-1)
    g_pp = _los_gain_array(d_pp, lam)
    g_pb = _los_gain_array(d_pb, lam)
    hv = g_pp[None, :, :] * g_pb.T[:, None, :] * rho_v
    n_p = pix.shape[0]
    idx = np.arange(n_p)
    hv[:, idx, idx] = g_pb.T
    return hv


def build_sensing_gains_np(sens, pix, bs, lam):
    """Per-BS sensing gain matrices, shape (K, N_s, N_p).

    Entry (m, i): LOS(pos pixel_i, sens pixel_m) times LOS(sens pixel_m,
    BS_k). Distances below one wavelength are floored at lambda.
    """
    d_sp = np.linalg.norm(sens[:, None, :] - pix[None, :, :], axis=-1)
    d_sp = np.maximum(d_sp, lam)
    d_sb = np.linalg.norm(sens[:, None, :] - bs[None, :, :], axis=-1)
    g_sp = _los_gain_array(d_sp, lam)
    g_sb = _los_gain_array(d_sb, lam)
    return g_sp[None, :, :] * g_sb.T[:, :, None]


# --------------------------------------------------------------------------
# Numba variants
# --------------------------------------------------------------------------

if USE_NUMBA:
    from numba import njit, prange

    @njit(cache=True)
    def _erfcx_nb(x):
        # Only called with x >= 0 from the truncated-moment branch.
        if x < 25.0:
            return math.erfc(x) * math.exp(x * x)
        inv2 = 1.0 / (x * x)
        series = 1.0 + inv2 * (-0.5 + inv2 * (0.75 + inv2 * (-1.875 + inv2 * 6.5625)))
        return series / (x * math.sqrt(math.pi))

    @njit(cache=True)
    def _ndtr_nb(x):
        return 0.5 * math.erfc(-x / math.sqrt(2.0))

    @njit(cache=True)
    def _trunc01_scalar_nb(mu, sd):
        flip = mu > 0.5
        mu_w = 1.0 - mu if flip else mu
        alpha = (0.0 - mu_w) / sd
        beta = (1.0 - mu_w) / sd
        if alpha >= 0.0:
            a = alpha / math.sqrt(2.0)
            b = beta / math.sqrt(2.0)
            d = b * b - a * a
            ed = math.exp(-d)
            denom = _erfcx_nb(a) - _erfcx_nb(b) * ed
            if denom < 1e-300:
                denom = 1e-300
            logz = -a * a + math.log(0.5 * denom)
            r_a = _SQRT_2_OVER_PI / denom
            r_b = r_a * ed
        else:
            z = _ndtr_nb(beta) - _ndtr_nb(alpha)
            if z < 1e-300:
                z = 1e-300
            logz = math.log(z)
            r_a = math.exp(-0.5 * alpha * alpha) / (_SQRT_2PI * z)
            r_b = math.exp(-0.5 * beta * beta) / (_SQRT_2PI * z)
        delta = r_a - r_b
        mean_w = mu_w + sd * delta
        var = sd * sd * (1.0 + alpha * r_a - beta * r_b - delta * delta)
        if var < 0.0:
            var = 0.0
        mean = 1.0 - mean_w if flip else mean_w
        return logz, mean, var

    @njit(cache=True)
    def scatter_moments_nb(r, tau, gamma, theta, sigma, lam):
        n = r.shape[0]
        mean = np.zeros(n)
        var = np.zeros(n)
        if gamma <= 0.0:
            return mean, var
        sig2 = sigma * sigma
        spike_w = 1.0 - gamma + lam
        lg = math.log(gamma)
        ls = math.log(spike_w) if spike_w > 0.0 else -np.inf
        for i in range(n):
            t = tau[i]
            s2 = sig2 + t
            mu = (r[i] * sig2 + theta * t) / s2
            nu = sig2 * t / s2
            logz, m1, v1 = _trunc01_scalar_nb(mu, math.sqrt(nu))
            l1 = lg - 0.5 * math.log(2.0 * math.pi * s2) \
                - (r[i] - theta) ** 2 / (2.0 * s2) + logz
            l0 = ls - 0.5 * math.log(2.0 * math.pi * t) \
                - r[i] * r[i] / (2.0 * t) if spike_w > 0.0 else -np.inf
            dl = l0 - l1
            if dl > 745.0:
                dl = 745.0
            elif dl < -745.0:
                dl = -745.0
            pi1 = 1.0 / (1.0 + math.exp(dl))
            m = pi1 * m1
            ex2 = pi1 * (v1 + m1 * m1)
            v = ex2 - m * m
            mean[i] = m
            var[i] = v if v > 0.0 else 0.0
        return mean, var

    @njit(cache=True)
    def symbol_moments_nb(r, tau, gamma, omega, theta, sigma):
        n = r.shape[0]
        m_comp = omega.shape[0]
        mean = np.zeros(n, dtype=np.complex128)
        var = np.zeros(n)
        if gamma <= 0.0:
            return mean, var
        sig2 = sigma * sigma
        lw = np.empty(m_comp)
        for m in range(m_comp):
            lw[m] = math.log(gamma * omega[m]) if omega[m] > 0.0 else -np.inf
        l0_base = math.log(1.0 - gamma) if gamma < 1.0 else -np.inf
        logs = np.empty(m_comp + 1)
        mu = np.empty(m_comp, dtype=np.complex128)
        nu = np.empty(m_comp)
        for i in range(n):
            t = tau[i]
            ri = r[i]
            logs[0] = l0_base - math.log(math.pi * t) - abs(ri) ** 2 / t \
                if gamma < 1.0 else -np.inf
            for m in range(m_comp):
                s2 = sig2[m] + t
                d = ri - theta[m]
                logs[m + 1] = lw[m] - math.log(math.pi * s2) \
                    - (d.real * d.real + d.imag * d.imag) / s2
                mu[m] = (ri * sig2[m] + theta[m] * t) / s2
                nu[m] = sig2[m] * t / s2
            lmax = logs[0]
            for m in range(1, m_comp + 1):
                if logs[m] > lmax:
                    lmax = logs[m]
            tot = 0.0
            for m in range(m_comp + 1):
                tot += math.exp(logs[m] - lmax)
            mn = 0.0 + 0.0j
            ex2 = 0.0
            for m in range(m_comp):
                pm = math.exp(logs[m + 1] - lmax) / tot
                mn += pm * mu[m]
                ex2 += pm * (abs(mu[m]) ** 2 + nu[m])
            mean[i] = mn
            v = ex2 - abs(mn) ** 2
            var[i] = v if v > 0.0 else 0.0
        return mean, var

    @njit(cache=True, parallel=False)
    def build_vehicle_gains_nb(pix, bs, lam, rho_v):
        # The two pairwise gain tables are computed once (O(N^2 + N K)
        # trig calls); the triple loop only multiplies.
        n_p = pix.shape[0]
        k = bs.shape[0]
        c = -2.0 * math.pi / lam
        amp = lam / (4.0 * math.pi)
        g_pp = np.empty((n_p, n_p), dtype=np.complex128)
        for i in range(n_p):
            for j in range(n_p):
                if i == j:
                    g_pp[i, j] = 0.0
                    continue
                d = math.sqrt((pix[i, 0] - pix[j, 0]) ** 2
                              + (pix[i, 1] - pix[j, 1]) ** 2)
                g_pp[i, j] = amp / d * (math.cos(c * d) + 1j * math.sin(c * d))
        g_pb = np.empty((k, n_p), dtype=np.complex128)
        for kk in range(k):
            for j in range(n_p):
                d = math.sqrt((pix[j, 0] - bs[kk, 0]) ** 2
                              + (pix[j, 1] - bs[kk, 1]) ** 2)
                g_pb[kk, j] = amp / d * (math.cos(c * d) + 1j * math.sin(c * d))
        out = np.empty((k, n_p, n_p), dtype=np.complex128)
        for kk in range(k):
            for j in range(n_p):
                gjb = g_pb[kk, j]
                for i in range(n_p):
                    out[kk, i, j] = gjb if i == j else g_pp[i, j] * gjb * rho_v
        return out

    @njit(cache=True, parallel=False)
    def build_sensing_gains_nb(sens, pix, bs, lam):
        n_s = sens.shape[0]
        n_p = pix.shape[0]
        k = bs.shape[0]
        c = -2.0 * math.pi / lam
        amp = lam / (4.0 * math.pi)
        g_sp = np.empty((n_s, n_p), dtype=np.complex128)
        for m in range(n_s):
            for i in range(n_p):
                d = math.sqrt((sens[m, 0] - pix[i, 0]) ** 2
                              + (sens[m, 1] - pix[i, 1]) ** 2)
                if d < lam:
                    d = lam
                g_sp[m, i] = amp / d * (math.cos(c * d) + 1j * math.sin(c * d))
        g_sb = np.empty((k, n_s), dtype=np.complex128)
        for kk in range(k):
            for m in range(n_s):
                d = math.sqrt((sens[m, 0] - bs[kk, 0]) ** 2
                              + (sens[m, 1] - bs[kk, 1]) ** 2)
                g_sb[kk, m] = amp / d * (math.cos(c * d) + 1j * math.sin(c * d))
        out = np.empty((k, n_s, n_p), dtype=np.complex128)
        for kk in range(k):
            for m in range(n_s):
                gmb = g_sb[kk, m]
                for i in range(n_p):
                    out[kk, m, i] = g_sp[m, i] * gmb
        return out

    scatter_moments = scatter_moments_nb
    symbol_moments = symbol_moments_nb
    build_vehicle_gains = build_vehicle_gains_nb
    build_sensing_gains = build_sensing_gains_nb
else:
    scatter_moments = scatter_moments_np
    symbol_moments = symbol_moments_np
    build_vehicle_gains = build_vehicle_gains_np
    build_sensing_gains = build_sensing_gains_np
