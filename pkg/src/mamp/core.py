"""Long-memory matched-filter recursion with orthogonalization and damping.

One iteration runs: relaxation choice -> memory-weight update -> weight-of-new-
residual optimization -> matched-filter linear step -> extrinsic denoising ->
residual-based error-covariance estimation -> minimum-variance damping over the
retained estimates.  Covariances of the damped estimates are tracked in a
ledger whose diagonal is provably nonincreasing under optimal damping.

All filter weights are stored scaled by lambda_dagger**lag (tables are scaled
the complementary way), so ill-conditioned long runs never touch overflowing
trace powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .denoisers import PriorParams, bg_mmse
from .operators import SystemInstance, TransformOperator
from .spectral import MomentTables


class DegenerateNormalizationError(RuntimeError):
    """The orthogonalization normalizer vanished; the iteration cannot proceed."""


class InvalidLedgerError(ValueError):
    """A damping matrix was non-Hermitian or contained non-finite entries."""


def optimize_theta(lambda_dagger: float, rho_t: float) -> float:
    """Relaxation 1/(lambda_dagger + rho) minimizing the shifted-matrix spectral radius."""
    return 1.0 / (lambda_dagger + rho_t)


def spectral_radius_after_relaxation(
    lambda_min: float, lambda_max: float, rho_t: float
) -> float:
    """(lambda_max - lambda_min) / (lambda_max + lambda_min + 2 rho): always < 1."""
    return (lambda_max - lambda_min) / (lambda_max + lambda_min + 2.0 * rho_t)


def xi_cost_coefficients(
    scaled_prev: np.ndarray,
    V_phi: np.ndarray,
    tables: MomentTables,
    sigma2: float,
) -> tuple[float, float, float, float]:
    """Coefficients (c0, c1, c2, c3) of the rational per-iteration error cost.

    The matched-filter output variance as a function of the new-residual
    weight xi is (c1 xi^2 - 2 c2 xi + c3) / (w0 (xi + c0))^2.

    scaled_prev holds the memory weights vartheta_{t,i} * ld**(t-i) for
    i = 1..t-1; V_phi is the t x t estimate-error covariance block (its row t
    is consumed for the cross terms).
    """
    w = tables.w_scaled
    wb = tables.wbar_scaled
    w0 = tables.w0
    t = len(scaled_prev) + 1
    c1 = sigma2 * w0 + V_phi[t - 1, t - 1].real * wb[0, 0]
    if t == 1:
        return 0.0, float(c1), 0.0, 0.0
    a = np.asarray(scaled_prev, dtype=float)
    lags = np.arange(t - 1, 0, -1)  # t - i for i = 1..t-1
    c0 = float(a @ w[lags]) / w0
    cross = sigma2 * w[lags] + (V_phi[t - 1, : t - 1] * wb[0, lags]).real
    c2 = -float(a @ cross)
    quad = sigma2 * w[lags[:, None] + lags[None, :]] + (
        V_phi[: t - 1, : t - 1] * wb[np.ix_(lags, lags)]
    ).real
    c3 = float(a @ quad @ a)
    return c0, float(c1), c2, c3


def optimize_xi(
    c0: float, c1: float, c2: float, c3: float, C_max: float
) -> tuple[float, bool]:
    """Minimizer of the rational cost; saturates at C_max when unbounded.

    Returns (xi, degenerate) with degenerate=True only in the all-zero case
    where the cost is xi-independent and xi = 1 is returned.
    """
    denom = c1 * c0 + c2
    if denom != 0.0:
        xi = (c2 * c0 + c3) / denom
        if abs(xi) > C_max:
            xi = math.copysign(C_max, xi)
        return float(xi), False
    if c0 == 0.0 and c1 == 0.0 and c2 == 0.0 and c3 == 0.0:
        return 1.0, True
    return float(C_max), False


def memory_le_step(
    r_hat: np.ndarray,
    z_bar_t: np.ndarray,
    X: np.ndarray,
    p: np.ndarray,
    xi: float,
    theta: float,
    eps_gamma: float,
    operator: TransformOperator,
    lambda_dagger: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One matched-filter step: accumulator update plus orthogonalized output.

    r_hat <- xi z_bar + theta (ld r_hat - A A^H r_hat); the output is
    (A^H r_hat - sum_i p_i x_i) / eps_gamma over the full estimate history X.
    """
    if eps_gamma == 0.0 or not np.isfinite(eps_gamma):
        raise DegenerateNormalizationError(f"normalizer eps_gamma={eps_gamma}")
    r_hat = xi * z_bar_t + theta * (lambda_dagger * r_hat - operator.apply_gram(r_hat))
    correction = p.astype(complex) @ X
    r = (operator.apply_adjoint(r_hat) - correction) / eps_gamma
    return r_hat, r


def estimate_phi_covariance(
    z_new: np.ndarray,
    Z_damped: np.ndarray,
    N: int,
    sigma2: float,
    delta: float,
    w0: float,
) -> tuple[np.ndarray, float]:
    """Residual-product estimate of the new estimate's error covariances.

    Returns (row, diag): row[t'-1] ~= cov(new error, damped error t') from
    z_new^H z_bar_{t'} / N - delta sigma^2, all divided by w0; diag from
    ||z_new||^2.  Clamping of a non-positive diag is left to the caller.
    """
    row = (Z_damped.conj() @ z_new) / N - delta * sigma2
    diag = float(np.vdot(z_new, z_new).real / N - delta * sigma2)
    return row.conj() / w0, diag / w0


def gamma_covariance_row(
    weights_history: list[np.ndarray],
    eps_history: list[float],
    V_phi: np.ndarray,
    tables: MomentTables,
    sigma2: float,
) -> np.ndarray:
    """Analytic matched-filter output covariances v^gamma_{t,t'} for t' = 1..t.

    Double sum over both memories of noise and estimate-error couplings; the
    scaled weights and scaled tables cancel each other's lambda_dagger powers
    term by term.
    """
    t = len(weights_history)
    w = tables.w_scaled
    wb = tables.wbar_scaled
    a_t = weights_history[t - 1]
    lag_t = t - np.arange(1, t + 1)
    row = np.empty(t, dtype=complex)
    for tp in range(1, t + 1):
        a_p = weights_history[tp - 1]
        lag_p = tp - np.arange(1, tp + 1)
        noise_part = sigma2 * w[lag_t[:, None] + lag_p[None, :]]
        error_part = V_phi[:t, :tp] * wb[np.ix_(lag_t, lag_p)]
        val = a_t.astype(complex) @ (noise_part + error_part) @ a_p
        row[tp - 1] = val / (eps_history[t - 1] * eps_history[tp - 1])
    return row


@dataclass
class DampingSolution:
    zeta: np.ndarray
    variance: float
    singular: bool


def optimal_damping(V: np.ndarray, L: int | None = None) -> DampingSolution:
    """Minimum-variance convex combination weights over the candidate block.

    Solves min zeta^H V zeta subject to sum(zeta) = 1.  When V is (numerically)
    singular, or the solution fails the guaranteed-improvement property of a
    positive-definite block, falls back to keeping the previous estimate
    (weight on the second-to-last candidate) and reports singular=True.
    """
    V = np.asarray(V, dtype=complex)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise InvalidLedgerError(f"damping block must be square, got {V.shape}")
    if not np.all(np.isfinite(V)):
        raise InvalidLedgerError("damping block contains non-finite entries")
    scale = float(np.max(np.abs(V))) or 1.0
    if not np.allclose(V, V.conj().T, rtol=1e-8, atol=1e-12 * scale):
        raise InvalidLedgerError("damping block is not Hermitian")
    l = V.shape[0]
    if L is not None and l > L:
        raise ValueError(f"candidate block of size {l} exceeds damping length {L}")
    if l == 1:
        return DampingSolution(np.ones(1, dtype=complex), float(V[0, 0].real), False)
    diag = V.diagonal().real
    try:
        sol = np.linalg.solve(V, np.ones(l, dtype=complex))
    except np.linalg.LinAlgError:
        sol = None
    if sol is not None:
        denom = float(np.real(np.sum(sol)))
        if denom > 0.0 and np.all(np.isfinite(sol)):
            variance = 1.0 / denom
            if variance <= diag.min() * (1.0 + 1e-9):
                zeta = sol * variance
                return DampingSolution(zeta, variance, False)
    zeta = np.zeros(l, dtype=complex)
    zeta[l - 2] = 1.0
    return DampingSolution(zeta, float(diag[l - 2]), True)


def damping_window(effective: list[int], t_new: int, L: int) -> list[int]:
    """Last min(L, ...) retained estimate indices plus the new candidate t_new."""
    n_prev = min(L - 1, len(effective)) if L > 1 else 0
    return (effective[-n_prev:] if n_prev else []) + [t_new]


@dataclass
class IterationRecord:
    t: int
    v_gamma: float
    v_phi_bar: float
    v_hat: float
    mse: float
    theta: float
    xi: float
    zeta: np.ndarray
    trivial: bool


@dataclass
class AlgorithmResult:
    name: str
    T: int
    records: list[IterationRecord]
    x_hat: np.ndarray | None
    v_hat: float
    status: str  # ok | diverged | early_stop_nle | degenerate
    debug: dict = field(default_factory=dict)

    def trajectory(self, attr: str) -> np.ndarray:
        out = np.full(self.T, np.nan)
        for rec in self.records:
            out[rec.t - 1] = getattr(rec, attr)
        return out

    @property
    def mse(self) -> np.ndarray:
        return self.trajectory("mse")

    @property
    def diverged(self) -> bool:
        """True when the run failed outright or the error grew 10x above its best."""
        if self.status == "diverged":
            return True
        v = self.trajectory("v_hat")
        v = v[np.isfinite(v)]
        if len(v) < 2:
            return False
        running_min = np.minimum.accumulate(v)
        return bool(np.any(v > 10.0 * running_min))


@dataclass
class MampConfig:
    tables: MomentTables
    T: int
    L: int = 3
    C_max: float = 1e6
    eps_floor: float = 1e-12
    collect_debug: bool = False


def run_bo_mamp(
    instance: SystemInstance, prior: PriorParams, config: MampConfig
) -> AlgorithmResult:
    """Full damped long-memory matched-filter recovery on one instance.

    Per-iteration diagnostics report the matched-filter output variance, the
    post-damping ledger diagonal, the posterior variance, and the true MSE of
    the posterior estimate when the instance carries its ground truth.
    """
    op = instance.operator
    y = instance.y
    N, M = op.N, op.M
    delta = op.delta
    sigma2 = instance.noise_var
    tab = config.tables
    T, L = config.T, config.L
    if tab.T < T:
        raise ValueError(f"moment tables sized for T={tab.T}, need {T}")
    ld = tab.lambda_dagger
    w0 = tab.w0
    ws = tab.w_scaled

    V = np.zeros((T + 1, T + 1), dtype=complex)
    X = np.zeros((T + 1, N), dtype=complex)  # damped estimates, x_1 = 0
    Z = np.zeros((T + 1, M), dtype=complex)  # damped residuals, z_1 = y
    Z[0] = y
    v_init = (float(np.vdot(y, y).real) / N - delta * sigma2) / w0
    v_floor = config.eps_floor * max(v_init, np.finfo(float).tiny)
    V[0, 0] = max(v_init, v_floor)

    r_hat = np.zeros(M, dtype=complex)
    scaled = np.array([1.0])  # memory weights of the current iteration
    effective = [1]
    records: list[IterationRecord] = []
    status = "ok"
    x_hat, v_hat = None, np.inf
    best = (np.inf, None, np.inf)
    floor_hit = False
    r_history = [] if config.collect_debug else None

    for t in range(1, T + 1):
        v_diag = V[t - 1, t - 1].real
        rho = sigma2 / v_diag
        theta = optimize_theta(ld, rho)
        scaled_prev = scaled[: t - 1] * (theta * ld)
        c0, c1, c2, c3 = xi_cost_coefficients(scaled_prev, V[:t, :t], tab, sigma2)
        if t == 1:
            xi = 1.0
        else:
            xi, _ = optimize_xi(c0, c1, c2, c3, config.C_max)
        scaled = np.append(scaled_prev, xi)
        p = -scaled * ws[t - np.arange(1, t + 1)]
        eps = -float(p.sum())
        v_gamma = (c1 * xi**2 - 2.0 * c2 * xi + c3) / eps**2 if eps != 0 else np.nan
        if not np.isfinite(v_gamma) or v_gamma <= 0:
            status = "degenerate"
            break
        try:
            r_hat, r = memory_le_step(r_hat, Z[t - 1], X[:t], p, xi, theta, eps, op, ld)
        except DegenerateNormalizationError:
            status = "degenerate"
            break
        if r_history is not None:
            r_history.append(r)

        out = bg_mmse(r, v_gamma, prior)
        mse = (
            float(np.mean(np.abs(out.posterior_mean - instance.x_true) ** 2))
            if instance.x_true is not None
            else np.nan
        )
        if out.posterior_var < best[0]:
            best = (out.posterior_var, out.posterior_mean, out.posterior_var)
        x_hat, v_hat = out.posterior_mean, out.posterior_var
        if out.extrinsic_mean is None:
            records.append(
                IterationRecord(
                    t, v_gamma, v_diag, out.posterior_var, mse, theta, xi,
                    np.zeros(0), False,
                )
            )
            status = "early_stop_nle"
            break
        x_new = out.extrinsic_mean
        z_new = y - op.apply(x_new)
        row, diag = estimate_phi_covariance(z_new, Z[:t], N, sigma2, delta, w0)
        if diag <= v_floor:
            # residual energy at the noise floor: clamp and flag convergence
            diag = v_floor
            floor_hit = True

        cand = damping_window(effective, t + 1, L)
        l = len(cand)
        Vc = np.empty((l, l), dtype=complex)
        for a_idx, a in enumerate(cand):
            for b_idx, b in enumerate(cand):
                if a <= t and b <= t:
                    Vc[a_idx, b_idx] = V[a - 1, b - 1]
                elif a == b:
                    Vc[a_idx, b_idx] = diag
                elif a > t:
                    Vc[a_idx, b_idx] = row[b - 1]
                else:
                    Vc[a_idx, b_idx] = np.conj(row[a - 1])
        sol = optimal_damping(Vc, L)
        if sol.singular:
            X[t] = X[t - 1]
            Z[t] = Z[t - 1]
            V[t, : t + 1] = V[t - 1, : t + 1]
            V[t, t] = V[t - 1, t - 1]
            V[: t + 1, t] = np.conj(V[t, : t + 1])
            trivial = True
        else:
            x_damped = np.zeros(N, dtype=complex)
            z_damped = np.zeros(M, dtype=complex)
            new_row = np.zeros(t, dtype=complex)
            for k, idx in enumerate(cand):
                zk = sol.zeta[k]
                if idx <= t:
                    x_damped += zk * X[idx - 1]
                    z_damped += zk * Z[idx - 1]
                    new_row += np.conj(zk) * V[idx - 1, :t]
                else:
                    x_damped += zk * x_new
                    z_damped += zk * z_new
                    new_row += np.conj(zk) * row
            X[t] = x_damped
            Z[t] = z_damped
            V[t, :t] = new_row
            V[t, t] = sol.variance
            V[:t, t] = np.conj(new_row)
            effective.append(t + 1)
            trivial = False
        records.append(
            IterationRecord(
                t, v_gamma, V[t, t].real, out.posterior_var, mse, theta, xi,
                sol.zeta.copy(), trivial,
            )
        )

    if status != "ok" and best[1] is not None and best[0] < v_hat:
        x_hat, v_hat = best[1], best[2]
    debug: dict = {
        "ledger": V,
        "effective": effective,
        "v_init": V[0, 0].real,
        "noise_floor_reached": floor_hit,
    }
    if config.collect_debug:
        debug.update(
            {
                "X": X,
                "Z": Z,
                "r_history": r_history,
            }
        )
    return AlgorithmResult("bo_mamp", T, records, x_hat, float(v_hat), status, debug)
