"""Covariance state evolution of the long-memory solver and shared fixed points.

The evolution mirrors the simulated recursion exactly on the linear side
(scaled memory weights, analytic output covariances).  The denoiser side is
evaluated either by Monte Carlo over a correlated Gaussian noise history (the
faithful covariance recursion) or deterministically from the scalar MMSE
curve, exploiting the banded structure that optimal damping enforces on the
estimate-error covariance matrix.  Both converge to the analytic LMMSE fixed
point, which is also computed directly from a geometric operator series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import default_rng

from .core import (
    damping_window,
    gamma_covariance_row,
    optimal_damping,
    optimize_theta,
    optimize_xi,
    xi_cost_coefficients,
)
from .denoisers import (
    NonImprovingNLEError,
    PriorParams,
    bg_mmse,
    sample_prior,
    scalar_mmse,
)
from .spectral import MomentTables


class NearSingularCovarianceError(RuntimeError):
    """The tracked noise covariance lost positive definiteness."""


class CorrelatedNoiseSampler:
    """Draws the per-iteration Gaussian noise batch consistent with V_gamma.

    Each new coordinate is generated conditionally on the stored history, so
    the running batch always realizes the tracked covariance even when a fresh
    joint factorization would be numerically indefinite.  Small negative
    conditional variances (within tolerance) are clamped to zero; larger ones
    raise NearSingularCovarianceError.
    """

    def __init__(self, n_mc: int, rng, tol: float = 1e-10):
        self.n = n_mc
        self.rng = rng
        self.tol = tol
        self.history = np.zeros((n_mc, 0), dtype=complex)

    def sample(self, V_gamma: np.ndarray, t: int) -> np.ndarray:
        """Batch for coordinate t (1-based) given rows 1..t of V_gamma."""
        if t == 1:
            v = V_gamma[0, 0].real
            g = self._gaussian(max(v, 0.0))
            eta = g
        else:
            block = V_gamma[: t - 1, : t - 1]
            col = V_gamma[: t - 1, t - 1]
            try:
                alpha = np.linalg.solve(block, col)
            except np.linalg.LinAlgError as exc:
                raise NearSingularCovarianceError(str(exc)) from exc
            v_g = V_gamma[t - 1, t - 1].real - float(
                np.real(V_gamma[t - 1, : t - 1] @ alpha)
            )
            tol = self.tol * max(V_gamma[t - 1, t - 1].real, 1.0)
            if v_g < -tol:
                raise NearSingularCovarianceError(
                    f"conditional variance {v_g:.3e} at iteration {t}"
                )
            v_g = max(v_g, 0.0)
            # conditional mean uses the conjugate weights; identical to the
            # plain transpose form whenever the covariance is real
            eta = self.history @ np.conj(alpha) + self._gaussian(v_g)
        self.history = np.column_stack([self.history, eta])
        return eta

    def _gaussian(self, var: float) -> np.ndarray:
        return (
            self.rng.standard_normal(self.n) + 1j * self.rng.standard_normal(self.n)
        ) * np.sqrt(var / 2.0)


def sample_correlated_noise(
    sampler: CorrelatedNoiseSampler, V_gamma: np.ndarray, t: int
) -> np.ndarray:
    return sampler.sample(V_gamma, t)


@dataclass
class SETrajectory:
    T: int
    v_gamma_diag: np.ndarray
    v_phi_diag: np.ndarray  # post-damping ledger diagonal per iteration
    v_hat: np.ndarray  # predicted posterior variance (the MSE prediction)
    theta: np.ndarray
    xi: np.ndarray
    zeta: list
    V_phi: np.ndarray
    V_gamma: np.ndarray
    status: str
    mode: str

    @property
    def mse_prediction(self) -> np.ndarray:
        return self.v_hat


def run_bo_mamp_se(
    tables: MomentTables,
    prior: PriorParams,
    sigma2: float,
    T: int,
    L: int = 3,
    nle_mode: str = "mc",
    n_mc: int = 100_000,
    rng_seed: int = 0,
    fixed_xi: float | None = None,
    C_max: float = 1e6,
    eps_floor: float = 1e-12,
) -> SETrajectory:
    """Covariance evolution of the damped long-memory recursion.

    nle_mode="mc" evaluates the denoiser cross-covariances by Monte Carlo on a
    correlated noise history (the reference recursion); nle_mode="deterministic"
    replaces them with the scalar MMSE curve under the optimal-damping banded
    covariance structure, which is exact at the fixed point and noise-free, so
    long horizons can be checked to tight tolerances.
    """
    if nle_mode not in ("mc", "deterministic"):
        raise ValueError(f"unknown nle_mode {nle_mode!r}")
    if tables.T < T:
        raise ValueError(f"moment tables sized for T={tables.T}, need {T}")
    ld = tables.lambda_dagger
    ws = tables.w_scaled
    w0 = tables.w0

    V_phi = np.zeros((T + 1, T + 1), dtype=complex)
    V_gamma = np.zeros((T, T), dtype=complex)
    V_phi[0, 0] = 1.0
    v_floor = eps_floor

    rng = default_rng(rng_seed)
    mc = nle_mode == "mc"
    if mc:
        x = sample_prior(prior, n_mc, rng)
        sampler = CorrelatedNoiseSampler(n_mc, rng)
        err_hist = (-x)[:, None].copy()  # damped estimate errors, column per t

    scaled = np.array([1.0])
    weights_history: list[np.ndarray] = []
    eps_history: list[float] = []
    effective = [1]
    v_gamma_diag = np.full(T, np.nan)
    v_phi_diag = np.full(T, np.nan)
    v_hat_arr = np.full(T, np.nan)
    theta_arr = np.full(T, np.nan)
    xi_arr = np.full(T, np.nan)
    zeta_list: list = []
    status = "ok"

    for t in range(1, T + 1):
        v_diag = V_phi[t - 1, t - 1].real
        rho = sigma2 / v_diag
        theta = optimize_theta(ld, rho)
        scaled_prev = scaled[: t - 1] * (theta * ld)
        c0, c1, c2, c3 = xi_cost_coefficients(scaled_prev, V_phi[:t, :t], tables, sigma2)
        if fixed_xi is not None:
            xi = float(fixed_xi)
        elif t == 1:
            xi = 1.0
        else:
            xi, _ = optimize_xi(c0, c1, c2, c3, C_max)
        scaled = np.append(scaled_prev, xi)
        p = -scaled * ws[t - np.arange(1, t + 1)]
        eps = -float(p.sum())
        if eps == 0.0 or not np.isfinite(eps):
            status = "degenerate"
            break
        weights_history.append(scaled.copy())
        eps_history.append(eps)
        vg_diag = (c1 * xi**2 - 2.0 * c2 * xi + c3) / eps**2
        if mc:
            # the correlated-noise sampler needs the full covariance row;
            # the deterministic path only consumes the diagonal
            row_gamma = gamma_covariance_row(
                weights_history, eps_history, V_phi[:t, :t], tables, sigma2
            )
            V_gamma[t - 1, :t] = row_gamma
            V_gamma[: t - 1, t - 1] = np.conj(row_gamma[: t - 1])
        V_gamma[t - 1, t - 1] = vg_diag
        if not np.isfinite(vg_diag) or vg_diag <= 0:
            status = "degenerate"
            break
        theta_arr[t - 1] = theta
        xi_arr[t - 1] = xi
        v_gamma_diag[t - 1] = vg_diag

        # denoiser side
        if mc:
            try:
                eta = sampler.sample(V_gamma[:t, :t], t)
            except NearSingularCovarianceError:
                status = "unstable_covariance"
                break
            out = bg_mmse(x + eta, vg_diag, prior)
            v_hat_arr[t - 1] = out.posterior_var
            if out.extrinsic_mean is None:
                status = "early_stop_nle"
                break
            e_new = out.extrinsic_mean - x
            row = (err_hist.conj().T @ e_new).conj() / n_mc
            diag = float(np.mean(np.abs(e_new) ** 2))
        else:
            m_hat = scalar_mmse(vg_diag, prior)
            v_hat_arr[t - 1] = m_hat
            if m_hat >= vg_diag:
                status = "early_stop_nle"
                break
            m = 1.0 / (1.0 / m_hat - 1.0 / vg_diag)
            row = np.full(t, m, dtype=complex)
            diag = m
        diag = max(diag, v_floor)

        cand = damping_window(effective, t + 1, L)
        l = len(cand)
        Vc = np.empty((l, l), dtype=complex)
        for a_idx, a in enumerate(cand):
            for b_idx, b in enumerate(cand):
                if a <= t and b <= t:
                    Vc[a_idx, b_idx] = V_phi[a - 1, b - 1]
                elif a == b:
                    Vc[a_idx, b_idx] = diag
                elif a > t:
                    Vc[a_idx, b_idx] = row[b - 1]
                else:
                    Vc[a_idx, b_idx] = np.conj(row[a - 1])
        sol = optimal_damping(Vc, L)
        if sol.singular:
            V_phi[t, : t + 1] = V_phi[t - 1, : t + 1]
            V_phi[t, t] = V_phi[t - 1, t - 1]
            V_phi[: t + 1, t] = np.conj(V_phi[t, : t + 1])
            if mc:
                err_hist = np.column_stack([err_hist, err_hist[:, -1]])
        else:
            new_row = np.zeros(t, dtype=complex)
            if mc:
                e_damped = np.zeros(n_mc, dtype=complex)
            for k, idx in enumerate(cand):
                zk = sol.zeta[k]
                if idx <= t:
                    new_row += np.conj(zk) * V_phi[idx - 1, :t]
                    if mc:
                        e_damped += zk * err_hist[:, idx - 1]
                else:
                    new_row += np.conj(zk) * row
                    if mc:
                        e_damped += zk * e_new
            V_phi[t, :t] = new_row
            V_phi[t, t] = sol.variance
            V_phi[:t, t] = np.conj(new_row)
            effective.append(t + 1)
            if mc:
                err_hist = np.column_stack([err_hist, e_damped])
        v_phi_diag[t - 1] = V_phi[t, t].real
        zeta_list.append(sol.zeta.copy())

    return SETrajectory(
        T, v_gamma_diag, v_phi_diag, v_hat_arr, theta_arr, xi_arr, zeta_list,
        V_phi, V_gamma, status, nle_mode,
    )


def _phi_se(v_gamma: float, prior: PriorParams) -> tuple[float, float]:
    """(posterior mmse, extrinsic variance) of the scalar denoiser map."""
    m_hat = scalar_mmse(v_gamma, prior)
    if m_hat >= v_gamma:
        raise NonImprovingNLEError(f"mmse {m_hat:.3e} >= {v_gamma:.3e}")
    return m_hat, 1.0 / (1.0 / m_hat - 1.0 / v_gamma)


def lmmse_gamma_se(v_phi: float, d: np.ndarray, N: int, sigma2: float) -> float:
    """Eigenvalue-exact LMMSE transfer v_gamma = v_phi (1/eps - 1)."""
    rho = sigma2 / v_phi
    d_sq = np.asarray(d, dtype=float) ** 2
    eps = float(np.sum(d_sq / (rho + d_sq))) / N
    return v_phi * (1.0 / eps - 1.0)


def run_bo_oamp_se(
    d: np.ndarray, N: int, prior: PriorParams, sigma2: float, T: int
) -> SETrajectory:
    """Scalar evolution of LMMSE OAMP/VAMP from unit signal variance."""
    v_phi = 1.0
    v_gamma_diag = np.full(T, np.nan)
    v_phi_diag = np.full(T, np.nan)
    v_hat = np.full(T, np.nan)
    status = "ok"
    for t in range(1, T + 1):
        v_gamma = lmmse_gamma_se(v_phi, d, N, sigma2)
        v_gamma_diag[t - 1] = v_gamma
        try:
            m_hat, v_phi = _phi_se(v_gamma, prior)
        except NonImprovingNLEError:
            status = "early_stop_nle"
            break
        v_hat[t - 1] = m_hat
        v_phi_diag[t - 1] = v_phi
    return SETrajectory(
        T, v_gamma_diag, v_phi_diag, v_hat, np.full(T, np.nan), np.full(T, np.nan),
        [], np.zeros((0, 0)), np.zeros((0, 0)), status, "scalar",
    )


def run_mf_oamp_se(
    lambda1: float, lambda2: float, prior: PriorParams, sigma2: float, T: int
) -> SETrajectory:
    """Scalar evolution of matched-filter OAMP via first/second spectral moments."""
    v_phi = 1.0
    v_gamma_diag = np.full(T, np.nan)
    v_phi_diag = np.full(T, np.nan)
    v_hat = np.full(T, np.nan)
    status = "ok"
    for t in range(1, T + 1):
        v_gamma = (sigma2 * lambda1 + v_phi * (lambda2 - lambda1**2)) / lambda1**2
        v_gamma_diag[t - 1] = v_gamma
        try:
            m_hat, v_phi = _phi_se(v_gamma, prior)
        except NonImprovingNLEError:
            status = "early_stop_nle"
            break
        v_hat[t - 1] = m_hat
        v_phi_diag[t - 1] = v_phi
    return SETrajectory(
        T, v_gamma_diag, v_phi_diag, v_hat, np.full(T, np.nan), np.full(T, np.nan),
        [], np.zeros((0, 0)), np.zeros((0, 0)), status, "scalar",
    )


def series_gamma_se(
    v_phi: float,
    tables: MomentTables,
    sigma2: float,
    series_tol: float = 1e-12,
    max_terms: int = 1 << 20,
) -> tuple[float, float]:
    """Matched-filter limit transfer via the geometric operator series.

    Evaluates eps* = theta sum_i (theta ld)^i w'_i and the double series for
    the output variance, grouped by total lag (the couplings split into a
    lag-only part and a separable product).  Terms are added until the bound
    theta^2 x^s (s+1) (sigma^2 |w'_s| + v_phi |wbar'|) drops below series_tol;
    the tables are extended on demand, which requires eigenvalue-built tables.
    """
    ld = tables.lambda_dagger
    rho = sigma2 / v_phi
    theta = optimize_theta(ld, rho)
    x = theta * ld
    # |w'_s| <= w0 * (rho_B / ld)^s, so terms contract at the relaxed spectral
    # radius x * rho_B / ld < 1
    w0 = tables.w0
    contraction = x * tables.rho_B / ld
    coeff = theta**2 * (sigma2 * w0 + v_phi * (2 * ld * w0 + w0**2))

    def _tail_bound(s_idx: int) -> float:
        return coeff * (s_idx + 1) * contraction**s_idx

    n_terms = 8
    while _tail_bound(n_terms - 1) >= series_tol and n_terms < max_terms:
        n_terms *= 2
    w = tables.w_scaled_extended(n_terms)
    s = np.arange(n_terms)
    xs = x**s
    eps_star = theta * float(xs @ w[:n_terms])
    sig_part = sigma2 * float(((s + 1) * xs) @ w[:n_terms])
    wbar_part = v_phi * ld * float(((s + 1) * xs) @ (w[:n_terms] - w[1 : n_terms + 1]))
    v_gamma = theta**2 * (sig_part + wbar_part) / eps_star**2 - v_phi
    return float(v_gamma), float(eps_star)


def oamp_fixed_point(
    tables: MomentTables,
    prior: PriorParams,
    sigma2: float,
    series_tol: float = 1e-12,
    tol: float = 1e-10,
    max_sweeps: int = 10_000,
    relax: float = 0.5,
) -> tuple[float, float]:
    """Shared fixed point (v_gamma*, v_phi*) of the LMMSE and long-memory maps.

    Damped scalar iteration of v -> phi_se(gamma_series(v)) from v = 1.
    """
    v = 1.0
    for _ in range(max_sweeps):
        v_gamma, _ = series_gamma_se(v, tables, sigma2, series_tol)
        _, v_new = _phi_se(v_gamma, prior)
        if abs(v_new - v) / v < tol:
            v = v + relax * (v_new - v)
            break
        v = v + relax * (v_new - v)
    v_gamma, _ = series_gamma_se(v, tables, sigma2, series_tol)
    return float(v_gamma), float(v)


def bo_oamp_fixed_point_exact(
    d: np.ndarray,
    N: int,
    prior: PriorParams,
    sigma2: float,
    tol: float = 1e-12,
    max_sweeps: int = 10_000,
    relax: float = 0.5,
) -> tuple[float, float]:
    """Fixed point of the eigenvalue-exact LMMSE evolution (oracle route)."""
    v = 1.0
    for _ in range(max_sweeps):
        v_gamma = lmmse_gamma_se(v, d, N, sigma2)
        _, v_new = _phi_se(v_gamma, prior)
        if abs(v_new - v) / v < tol:
            v = v + relax * (v_new - v)
            break
        v = v + relax * (v_new - v)
    return float(lmmse_gamma_se(v, d, N, sigma2)), float(v)
