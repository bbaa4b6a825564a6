"""Independent numerical oracles used by the test suite.

The spike-and-slab posterior moments are computed here by direct quadrature
over the prior mixture times the Gaussian likelihood, never reusing the
closed-form gain/odds expressions from the package: the angular integral is
carried out with Bessel kernels and the radial integral with adaptive
quadrature.  A plain two-dimensional adaptive integral validates the Bessel
route on a handful of points.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate
from scipy.special import ive


def bg_posterior_oracle(r_abs: float, v: float, mu: float) -> tuple[float, float]:
    """(posterior mean along the observation phase, posterior variance).

    Prior: zero with probability 1-mu, else CN(0, 1/mu).  Observation model
    r = x + CN(0, v) evaluated at |r| = r_abs (phase invariance).  All radial
    integrands are written with exponentially-scaled Bessel functions so the
    peak exponent, (r^2/v) (1 - v a)/(v a) with a = 1/vx + 1/v, stays <= 0.
    """
    vx = 1.0 / mu
    a = 1.0 / vx + 1.0 / v
    # every term shares the slab-marginal exponent -r^2/(vx+v); folding it out
    # keeps all integrands O(1) for arbitrarily large |r|
    log_common = -r_abs**2 / (vx + v)

    rho_peak = r_abs / (v * a)
    width = 1.0 / np.sqrt(a)
    rho_hi = rho_peak + 40.0 * width

    def _radial(power):
        def f(rho):
            z = 2.0 * rho * r_abs / v
            log_w = -a * rho**2 + z - r_abs**2 / v - log_common
            return rho**power * np.exp(log_w) * ive(0 if power != 2 else 1, z)

        val, _ = integrate.quad(
            f, 0.0, rho_hi, points=[rho_peak], epsabs=1e-14, epsrel=1e-12, limit=400
        )
        return val

    slab_scale = 2.0 / (np.pi * vx * v)
    z0 = slab_scale * _radial(1)
    z_spike = (1.0 - mu) * np.exp(-r_abs**2 / v - log_common) / (np.pi * v)
    Z = z_spike + mu * z0
    n_mean = mu * slab_scale * _radial(2)  # uses the first-order Bessel kernel
    n_second = mu * slab_scale * _radial(3)
    mean = n_mean / Z
    second = n_second / Z
    return float(mean), float(second - mean**2)


def bg_posterior_oracle_2d(r_abs: float, v: float, mu: float) -> tuple[float, float]:
    """Same moments via plain 2-D adaptive quadrature (slow; spot checks only)."""
    vx = 1.0 / mu

    def like(xr, xi):
        return np.exp(-((r_abs - xr) ** 2 + xi**2) / v) / (np.pi * v)

    def slab(xr, xi):
        return np.exp(-(xr**2 + xi**2) / vx) / (np.pi * vx)

    opts = dict(epsabs=1e-13, epsrel=1e-11)
    lim = 6.0 * np.sqrt(vx)

    def integ(f):
        val, _ = integrate.dblquad(f, -lim, lim, -lim, lim, **opts)
        return val

    z_slab = integ(lambda xi, xr: slab(xr, xi) * like(xr, xi))
    Z = (1.0 - mu) * like(0.0, 0.0) + mu * z_slab
    n_mean = mu * integ(lambda xi, xr: xr * slab(xr, xi) * like(xr, xi))
    n_second = mu * integ(lambda xi, xr: (xr**2 + xi**2) * slab(xr, xi) * like(xr, xi))
    mean = n_mean / Z
    return float(mean), float(n_second / Z - mean**2)


def bg_scalar_mmse_oracle(v: float, mu: float) -> float:
    """Scalar MMSE at noise level v by integrating the oracle posterior mean
    against the exponential-mixture law of |r|^2."""
    vx = 1.0 / mu
    s = vx + v

    # E|x_hat|^2 = int p(u) |mean(sqrt(u))|^2 du over u = |r|^2
    def mean_sq(u):
        m, _ = bg_posterior_oracle(np.sqrt(u), v, mu)
        return m**2

    acc = 0.0
    for weight, scale in ((1.0 - mu, v), (mu, s)):
        val, _ = integrate.quad(
            lambda z: np.exp(-z) * mean_sq(scale * z),
            0.0,
            np.inf,
            epsabs=1e-13,
            epsrel=1e-11,
            limit=200,
        )
        acc += weight * val
    return 1.0 - acc


def dense_memory_filter_terms(A: np.ndarray, lambda_dagger: float, t_max: int):
    """Dense powers of the shifted Gram matrix and their traces, for expanding
    the memory filter on small instances."""
    M = A.shape[0]
    N = A.shape[1]
    B = lambda_dagger * np.eye(M) - A @ A.conj().T
    powers = [np.eye(M, dtype=complex)]
    for _ in range(t_max):
        powers.append(powers[-1] @ B)
    W = [A.conj().T @ P @ A for P in powers]
    w = [np.trace(Wk).real / N for Wk in W]
    return powers, W, w
