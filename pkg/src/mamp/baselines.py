"""Reference algorithms: LMMSE-based OAMP/VAMP, matched-filter OAMP, plain AMP.

All three consume the same instances and report the same per-iteration record
schema as the long-memory solver, so curves are comparable point by point.
The simulated runs track the input error level with the same residual-energy
estimator used by the long-memory solver; the scalar recursions in
`evolution` start from the idealized unit variance instead.
"""

from __future__ import annotations

import numpy as np

from .core import AlgorithmResult, IterationRecord
from .denoisers import PriorParams, bg_mmse
from .operators import SystemInstance
from .spectral import SpectralProfile


def _residual_error_estimate(z: np.ndarray, N: int, sigma2: float, delta: float,
                             lambda1: float) -> float:
    return (float(np.vdot(z, z).real) / N - delta * sigma2) / lambda1


def lmmse_le(
    x_t: np.ndarray, v_phi: float, instance: SystemInstance
) -> tuple[np.ndarray, float]:
    """Spectral-domain LMMSE linear step with divergence-free scaling.

    Applies the per-mode gain d_i / (rho + d_i^2) with rho = sigma^2 / v_phi,
    then rescales by the trace normalizer so the output is an unbiased
    pseudo-observation of x with variance v_phi (1/eps - 1).
    """
    op = instance.operator
    d = op.singular_values
    if d is None:
        raise ValueError("LMMSE step needs the operator's singular values")
    sigma2 = instance.noise_var
    rho = sigma2 / v_phi
    d_sq = d**2
    eps = float(np.sum(d_sq / (rho + d_sq))) / op.N
    z = instance.y - op.apply(x_t)
    scale = np.full(op.M, 1.0 / rho)
    scale[: len(d)] = 1.0 / (rho + d_sq)  # entries beyond J are killed by A^H
    gamma_hat = op.apply_adjoint(scale * z)
    r = gamma_hat / eps + x_t
    v_gamma = v_phi * (1.0 / eps - 1.0)
    return r, v_gamma


def run_bo_oamp(
    instance: SystemInstance, prior: PriorParams, T: int
) -> AlgorithmResult:
    """LMMSE OAMP/VAMP with the shared extrinsic denoiser."""
    op = instance.operator
    if op.singular_values is None:
        raise ValueError("LMMSE OAMP needs the operator's singular values")
    N = op.N
    delta = op.delta
    sigma2 = instance.noise_var
    lambda1 = float(np.sum(op.singular_values**2)) / N
    x = np.zeros(N, dtype=complex)
    v_phi = _residual_error_estimate(instance.y, N, sigma2, delta, lambda1)
    records: list[IterationRecord] = []
    status = "ok"
    x_hat, v_hat = None, np.inf
    for t in range(1, T + 1):
        r, v_gamma = lmmse_le(x, v_phi, instance)
        out = bg_mmse(r, v_gamma, prior)
        mse = (
            float(np.mean(np.abs(out.posterior_mean - instance.x_true) ** 2))
            if instance.x_true is not None
            else np.nan
        )
        x_hat, v_hat = out.posterior_mean, out.posterior_var
        records.append(
            IterationRecord(
                t, v_gamma, v_phi, out.posterior_var, mse, np.nan, np.nan,
                np.zeros(0), False,
            )
        )
        if out.extrinsic_mean is None:
            status = "early_stop_nle"
            break
        x = out.extrinsic_mean
        z = instance.y - op.apply(x)
        v_phi = _residual_error_estimate(z, N, sigma2, delta, lambda1)
        v_phi = max(v_phi, 1e-12 * records[0].v_phi_bar)
    return AlgorithmResult("bo_oamp", T, records, x_hat, float(v_hat), status)


def run_mf_oamp(
    instance: SystemInstance,
    prior: PriorParams,
    T: int,
    profile: SpectralProfile,
) -> AlgorithmResult:
    """Non-memory matched-filter OAMP: cheap linear step, shared denoiser."""
    op = instance.operator
    N = op.N
    delta = op.delta
    sigma2 = instance.noise_var
    lam1 = float(profile.moments[1])
    lam2 = float(profile.moments[2])
    x = np.zeros(N, dtype=complex)
    v_phi = _residual_error_estimate(instance.y, N, sigma2, delta, lam1)
    records: list[IterationRecord] = []
    status = "ok"
    x_hat, v_hat = None, np.inf
    for t in range(1, T + 1):
        z = instance.y - op.apply(x)
        r = x + op.apply_adjoint(z) / lam1
        v_gamma = (sigma2 * lam1 + v_phi * (lam2 - lam1**2)) / lam1**2
        out = bg_mmse(r, v_gamma, prior)
        mse = (
            float(np.mean(np.abs(out.posterior_mean - instance.x_true) ** 2))
            if instance.x_true is not None
            else np.nan
        )
        x_hat, v_hat = out.posterior_mean, out.posterior_var
        records.append(
            IterationRecord(
                t, v_gamma, v_phi, out.posterior_var, mse, np.nan, np.nan,
                np.zeros(0), False,
            )
        )
        if out.extrinsic_mean is None:
            status = "early_stop_nle"
            break
        x = out.extrinsic_mean
        z = instance.y - op.apply(x)
        v_phi = _residual_error_estimate(z, N, sigma2, delta, lam1)
        v_phi = max(v_phi, 1e-12 * records[0].v_phi_bar)
    return AlgorithmResult("mf_oamp", T, records, x_hat, float(v_hat), status)


def run_amp(instance: SystemInstance, prior: PriorParams, T: int) -> AlgorithmResult:
    """Plain AMP (posterior denoiser, Onsager-corrected residual), undamped.

    Intended for IID ensembles; on ill-conditioned operators it is expected to
    diverge, which is flagged once the residual energy grows 10x above its
    initial level.
    """
    op = instance.operator
    N, M = op.N, op.M
    delta = op.delta
    x = np.zeros(N, dtype=complex)
    onsager = np.zeros(M, dtype=complex)
    records: list[IterationRecord] = []
    status = "ok"
    x_hat, v_hat = None, np.inf
    v_first = None
    for t in range(1, T + 1):
        z = instance.y - op.apply(x) + onsager
        v = float(np.vdot(z, z).real) / M
        if v_first is None:
            v_first = v
        if v > 10.0 * v_first or not np.isfinite(v):
            status = "diverged"
            break
        r = x + op.apply_adjoint(z)
        out = bg_mmse(r, v, prior)
        mse = (
            float(np.mean(np.abs(out.posterior_mean - instance.x_true) ** 2))
            if instance.x_true is not None
            else np.nan
        )
        x = out.posterior_mean
        x_hat, v_hat = x, out.posterior_var
        records.append(
            IterationRecord(
                t, v, v, out.posterior_var, mse, np.nan, np.nan, np.zeros(0), False
            )
        )
        # Onsager term: average denoiser divergence equals v_hat / v exactly
        onsager = (out.posterior_var / v) / delta * z
    return AlgorithmResult("amp", T, records, x_hat, float(v_hat), status)
