"""Generalized approximate message passing with pluggable scalar priors.

Sum-product GAMP for b = A u + n with an AWGN output channel of known
variance. The two priors are the spike-plus-Gaussian-mixture symbol
prior and the spike-plus-truncated-Gaussian scattering prior; both
expose exact posterior mean/variance maps (denoisers).
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import kernels
from .scene import QPSK

_TAU_MAX = 1e30
_VAR_FLOOR = 1e-300


class SolverDivergence(RuntimeError):
    """Raised when the iteration produces non-finite state.

    Carries the last finite state on the ``state`` attribute.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SymbolPrior:
    """Bernoulli-Gaussian-mixture prior on complex symbols.

    ``sigma`` uses the total-complex-variance convention:
    E|s - theta_m|^2 = sigma_m^2 within component m.
    """
    gamma: float
    omega: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        theta = np.asarray(self.theta, dtype=complex)
        sigma = np.asarray(self.sigma, dtype=float)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if abs(omega.sum() - 1.0) > 1e-9 or np.any(omega < 0):
            raise ValueError("mixture weights must form a simplex vector")
        if np.any(sigma <= 0):
            raise ValueError("component standard deviations must be positive")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def qpsk(cls, gamma, sigma=0.05):
        m = len(QPSK)
        return cls(gamma=gamma, omega=np.full(m, 1.0 / m), theta=QPSK.copy(),
                   sigma=np.full(m, sigma))

    def mean(self):
        return self.gamma * np.sum(self.omega * self.theta)

    def second_moment(self):
        return self.gamma * np.sum(
            self.omega * (np.abs(self.theta) ** 2 + self.sigma ** 2))

    def variance(self):
        return self.second_moment() - abs(self.mean()) ** 2

    def denoise(self, r, tau):
        r = np.ascontiguousarray(r, dtype=complex)
        tau = np.clip(np.ascontiguousarray(tau, dtype=float), 1e-300, _TAU_MAX)
        return kernels.symbol_moments(r, tau, self.gamma, self.omega,
                                      self.theta, self.sigma)


def _outside_unit_mass(theta, sigma):
    """Prior mass of N(theta, sigma^2) outside (0, 1]."""
    return ndtr((0.0 - theta) / sigma) + 1.0 - ndtr((1.0 - theta) / sigma)


@dataclass(frozen=True)
class ScatterPrior:
    """Bernoulli-Gaussian prior limited to (0, 1] for scattering values."""
    gamma: float
    theta: float
    sigma: float
    lam: float = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("slab mean must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("slab standard deviation must be positive")
        object.__setattr__(
            self, "lam",
            self.gamma * _outside_unit_mass(self.theta, self.sigma))

    def slab_mass(self):
        return self.gamma - self.lam

    def denoise(self, r, tau):
        r = np.ascontiguousarray(r, dtype=float)
        tau = np.clip(np.ascontiguousarray(tau, dtype=float), 1e-300, _TAU_MAX)
        return kernels.scatter_moments(r, tau, self.gamma, self.theta,
                                       self.sigma, self.lam)


def _scatter_prior_moments(prior):
    """Mean and variance of the full scatter prior (spike included)."""
    from .kernels import _trunc01_moments_np
    logz, m1, v1 = _trunc01_moments_np(np.array([prior.theta]),
                                       np.array([prior.sigma]))
    mass = prior.gamma * math.exp(float(logz[0]))
    mean = mass * float(m1[0])
    ex2 = mass * (float(v1[0]) + float(m1[0]) ** 2)
    return mean, max(ex2 - mean * mean, 0.0)


def denoise_symbol(r, tau, prior):
    """Scalar convenience wrapper around the vectorized symbol denoiser."""
    if not np.isfinite(r) or not np.isfinite(tau) or tau <= 0:
        raise SolverDivergence("non-finite denoiser input")
    mean, var = prior.denoise(np.array([r]), np.array([tau]))
    return complex(mean[0]), float(var[0])


def denoise_scatter(r, tau, prior):
    if not np.isfinite(r) or not np.isfinite(tau) or tau <= 0:
        raise SolverDivergence("non-finite denoiser input")
    mean, var = prior.denoise(np.array([r]), np.array([tau]))
    return float(mean[0]), float(var[0])


@dataclass
class GampState:
    u: np.ndarray           # posterior means
    var: np.ndarray         # posterior variances
    s_msg: np.ndarray       # residual messages (K or 2K)
    r_hat: np.ndarray       # last pseudo-observations
    tau_r: np.ndarray       # last pseudo-channel variances
    iterations: int
    damping: float
    converged: bool
    residual_trace: list


def gamp_solve(system, prior, noise_var, max_iters=50, damping=0.7, tol=1e-8):
    """Run sum-product GAMP on one effective system.

    Returns the final state; raises SolverDivergence (carrying the last
    finite state) if the iteration blows up.
    """
    a = system.a
    b = system.b
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SolverDivergence("non-finite system")
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")

    k, n = a.shape
    a2 = np.abs(a) ** 2
    a2t = a2.T

    m0, v0 = _prior_init(prior)
    u = np.full(n, m0, dtype=a.dtype if np.iscomplexobj(a) else float)
    if system.kind == "symbols":
        u = u.astype(complex)
    tu = np.full(n, max(v0, 1e-12))
    s_msg = np.zeros(k, dtype=u.dtype)
    ts = np.zeros(k)
    r_hat = u.copy()
    tau_r = tu.copy()
    last = None
    residuals = []
    converged = False

    for it in range(max_iters):
        tp = np.maximum(a2 @ tu, _VAR_FLOOR)
        p_hat = a @ u - tp * s_msg
        denom = tp + noise_var
        s_new = (b - p_hat) / denom
        ts_new = 1.0 / denom
        if it == 0:
            s_msg, ts = s_new, ts_new
        else:
            s_msg = damping * s_new + (1.0 - damping) * s_msg
            ts = damping * ts_new + (1.0 - damping) * ts

        tau_r = 1.0 / np.maximum(a2t @ ts, 1.0 / _TAU_MAX)
        r_hat = u + tau_r * (a.conj().T @ s_msg)

        if not (np.all(np.isfinite(r_hat)) and np.all(np.isfinite(tau_r))):
            raise SolverDivergence("iterate diverged", state=last)

        u_new, tu_new = prior.denoise(r_hat, tau_r)
        u_prev = u
        if it == 0:
            u, tu = u_new, tu_new
        else:
            u = damping * u_new + (1.0 - damping) * u
            tu = damping * tu_new + (1.0 - damping) * tu
        tu = np.maximum(tu, 1e-18 * max(v0, 1e-12))

        res = float(np.linalg.norm(b - a @ u) ** 2)
        residuals.append(res)
        if not np.isfinite(res):
            raise SolverDivergence("residual diverged", state=last)
        last = GampState(u=u, var=tu, s_msg=s_msg, r_hat=r_hat, tau_r=tau_r,
                         iterations=it + 1, damping=damping, converged=False,
                         residual_trace=residuals)
        change = np.linalg.norm(u - u_prev) ** 2
        scale = max(np.linalg.norm(u) ** 2, 1e-300)
        if it > 0 and change / scale < tol:
            converged = True
            break

    last.converged = converged
    return last


def _prior_init(prior):
    if isinstance(prior, SymbolPrior):
        return prior.mean(), prior.variance()
    mean, var = _scatter_prior_moments(prior)
    return mean, var


# --------------------------------------------------------------------------
# EM refinement of prior scale parameters
# --------------------------------------------------------------------------

def em_refine(prior, state, update_gamma=False, sigma_floor=1e-3):
    """One EM update of the prior standard deviations.

    Component means stay fixed; scales match posterior second moments
    computed from the final (r_hat, tau_r) summaries. A degenerate
    posterior (vanishing responsibilities) returns the prior unchanged
    with ``warning=True``.
    """
    r, tau = state.r_hat, np.clip(state.tau_r, 1e-300, _TAU_MAX)
    if isinstance(prior, SymbolPrior):
        w, mu, nu = kernels.symbol_responsibilities_np(
            r, tau, prior.gamma, prior.omega, prior.theta, prior.sigma)
        pm = w[:, 1:]
        mass = pm.sum(axis=0)
        if np.all(mass < 1e-12):
            return prior, True
        second = np.sum(pm * (nu + np.abs(mu - prior.theta[None, :]) ** 2),
                        axis=0)
        sigma = prior.sigma.copy()
        ok = mass > 1e-12
        sigma[ok] = np.sqrt(np.maximum(second[ok] / mass[ok], sigma_floor ** 2))
        gamma = prior.gamma
        if update_gamma:
            gamma = float(np.clip(np.mean(1.0 - w[:, 0]), 1e-6, 1.0 - 1e-6))
        return replace(prior, gamma=gamma, sigma=sigma), False

    pi1, m1, v1 = kernels.scatter_responsibilities_np(
        r, tau, prior.gamma, prior.theta, prior.sigma, prior.lam)
    mass = float(pi1.sum())
    if mass < 1e-12:
        return prior, True
    second = float(np.sum(pi1 * (v1 + (m1 - prior.theta) ** 2)))
    sigma = math.sqrt(max(second / mass, sigma_floor ** 2))
    gamma = prior.gamma
    if update_gamma:
        gamma = float(np.clip(mass / len(pi1), 1e-6, 1.0 - 1e-6))
    return ScatterPrior(gamma=gamma, theta=prior.theta, sigma=sigma), False
