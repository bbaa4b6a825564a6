"""Experiment orchestration: config files, seeded multi-run sweeps, CSV/JSON/plots.

A config fully determines the experiment; runs are reproducible bit-for-bit on
one platform from (config, base_seed).  All algorithms within a seed consume
the same operator and instance, and the matrix seed can be pinned separately
for same-matrix/new-noise studies.
"""

from __future__ import annotations

import configparser
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import __version__
from .baselines import run_amp, run_bo_oamp, run_mf_oamp
from .core import AlgorithmResult, MampConfig, run_bo_mamp
from .denoisers import PriorParams, scalar_mmse
from .evolution import (
    bo_oamp_fixed_point_exact,
    oamp_fixed_point,
    run_bo_mamp_se,
    run_bo_oamp_se,
    run_mf_oamp_se,
)
from .operators import (
    build_iid_gaussian_operator,
    build_structured_operator,
    make_geometric_singular_values,
    sample_instance,
)
from .spectral import (
    SpectralProfile,
    bound_extremal_eigenvalues,
    build_moment_tables,
    estimate_moments_power_recursion,
    exact_moments_from_singular_values,
    tables_from_singular_values,
)

KNOWN_ALGORITHMS = (
    "bo_mamp",
    "bo_oamp",
    "mf_oamp",
    "amp",
    "se_mamp",
    "se_oamp",
    "se_mf_oamp",
    "fixed_point",
)
_SIM_ALGOS = ("bo_mamp", "bo_oamp", "mf_oamp", "amp")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    algorithms: tuple = ("bo_mamp", "bo_oamp", "se_mamp", "fixed_point")
    N: int = 8192
    M: int | None = None
    delta: float | None = 0.5
    kappa: float = 10.0
    mu: float = 0.1
    snr_db: float = 30.0
    T: int = 30
    L: int = 3
    n_seeds: int = 1
    base_seed: int = 0
    matrix_seed: int | None = None
    matrix_model: str = "structured"  # structured | iid
    moment_mode: str = "exact"  # exact | estimated | bounded
    n_mc: int = 100_000
    se_nle_mode: str = "mc"  # mc | deterministic
    C_max: float = 1e6
    eps_floor: float = 1e-12
    threads: int = 1
    out_dir: str = "."
    label: str = "experiment"
    compare_se_tol_db: float = 0.5
    compare_fp_rtol: float = 1e-4
    compare_fp_cross_rtol: float = 1e-8

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        for a in self.algorithms:
            if a not in KNOWN_ALGORITHMS:
                raise ConfigError(f"algorithms: unknown algorithm {a!r}")
        if self.N < 2:
            raise ConfigError(f"N: must be >= 2, got {self.N}")
        if self.M is None and self.delta is None:
            raise ConfigError("M/delta: provide one of M or delta")
        if self.M is None:
            self.M = int(round(self.delta * self.N))
        implied = self.M / self.N
        if self.delta is None:
            self.delta = implied
        elif abs(implied - self.delta) > 1e-9:
            raise ConfigError(
                f"delta: inconsistent with M/N ({self.delta} vs {implied})"
            )
        if self.kappa < 1:
            raise ConfigError(f"kappa: must be >= 1, got {self.kappa}")
        if not 0 < self.mu <= 1:
            raise ConfigError(f"mu: must be in (0, 1], got {self.mu}")
        if self.T < 1:
            raise ConfigError(f"T: must be >= 1, got {self.T}")
        if self.L < 1:
            raise ConfigError(f"L: must be >= 1, got {self.L}")
        if self.n_seeds < 0:
            raise ConfigError(f"n_seeds: must be >= 0, got {self.n_seeds}")
        if self.matrix_model not in ("structured", "iid"):
            raise ConfigError(f"matrix_model: unknown model {self.matrix_model!r}")
        if self.moment_mode not in ("exact", "estimated", "bounded"):
            raise ConfigError(f"moment_mode: unknown mode {self.moment_mode!r}")
        if self.se_nle_mode not in ("mc", "deterministic"):
            raise ConfigError(f"se_nle_mode: unknown mode {self.se_nle_mode!r}")
        if self.threads < 1:
            raise ConfigError(f"threads: must be >= 1, got {self.threads}")

    @property
    def sigma2(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case-sensitive (N, M, T, L, C_max)
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found or unreadable: {path}")
        kwargs: dict = {}
        sections = [s for s in ("experiment", "output", "compare") if parser.has_section(s)]
        if not sections:
            raise ConfigError("config needs an [experiment] section")
        ints = {"N", "M", "T", "L", "n_seeds", "base_seed", "matrix_seed", "n_mc", "threads"}
        floats = {"delta", "kappa", "mu", "snr_db", "C_max", "eps_floor",
                  "compare_se_tol_db", "compare_fp_rtol", "compare_fp_cross_rtol"}
        for section in sections:
            for key, raw in parser.items(section):
                if key == "algorithms":
                    kwargs[key] = tuple(a.strip() for a in raw.split(",") if a.strip())
                elif key in ints:
                    kwargs[key] = int(raw)
                elif key in floats:
                    kwargs[key] = float(raw)
                elif key in ("matrix_model", "moment_mode", "se_nle_mode", "out_dir", "label"):
                    kwargs[key] = raw.strip()
                else:
                    raise ConfigError(f"{key}: unknown config key")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _build_operator(config: ExperimentConfig, seed_index: int):
    if config.matrix_seed is not None:
        op_entropy = [config.matrix_seed]
    else:
        op_entropy = [config.base_seed + seed_index, 0x0FEA]
    op_seed = np.random.SeedSequence(op_entropy)
    if config.matrix_model == "structured":
        energy = float(config.N) if config.M <= config.N else float(config.M)
        d = make_geometric_singular_values(min(config.M, config.N), config.kappa, energy)
        return build_structured_operator(
            config.M, config.N, d, np.random.default_rng(op_seed)
        )
    return build_iid_gaussian_operator(
        config.M, config.N, np.random.default_rng(op_seed)
    )


def _spectral_inputs(config: ExperimentConfig, operator):
    """(profile, tables) for the configured moment mode."""
    N, M, T = config.N, config.M, config.T
    if config.moment_mode == "estimated":
        profile = estimate_moments_power_recursion(
            operator, T, rng_seed=config.base_seed + 0x5EED
        )
        tables = build_moment_tables(profile, T)
        return profile, tables
    eigs = operator.gram_eigenvalues()
    d = np.sqrt(np.clip(eigs, 0.0, None))
    d = np.sort(d)[::-1]
    d = d[: min(M, N)]
    profile = exact_moments_from_singular_values(d, N, T, M=M)
    if config.moment_mode == "bounded":
        _, lam_up = bound_extremal_eigenvalues(
            float(profile.moments[2 * T]), 2 * T, N
        )
        tables = tables_from_singular_values(d, N, T, M=M, lambda_extremes=(0.0, lam_up))
        profile = SpectralProfile(profile.moments, 0.0, lam_up, "bounded")
    else:
        tables = tables_from_singular_values(d, N, T, M=M)
    return profile, tables


def _run_seed(config: ExperimentConfig, seed_index: int, shared_op, tables, profile):
    op = shared_op if config.matrix_seed is not None else _build_operator(config, seed_index)
    if config.matrix_model == "iid" and config.matrix_seed is None and seed_index > 0:
        # IID draws have per-realization spectra; structured operators share
        # the deterministic singular values, so only the first seed's tables
        # can be reused there.
        needs_spectrum = {"bo_mamp", "mf_oamp"} & set(config.algorithms)
        if needs_spectrum:
            profile, tables = _spectral_inputs(config, op)
    prior = PriorParams(mu=config.mu)
    inst_seed = np.random.SeedSequence([config.base_seed + seed_index, 0x1A57])
    inst = sample_instance(op, prior, config.snr_db, np.random.default_rng(inst_seed))
    results: dict[str, AlgorithmResult] = {}
    for algo in config.algorithms:
        if algo == "bo_mamp":
            results[algo] = run_bo_mamp(
                inst,
                prior,
                MampConfig(
                    tables=tables, T=config.T, L=config.L,
                    C_max=config.C_max, eps_floor=config.eps_floor,
                ),
            )
        elif algo == "bo_oamp":
            results[algo] = run_bo_oamp(inst, prior, config.T)
        elif algo == "mf_oamp":
            results[algo] = run_mf_oamp(inst, prior, config.T, profile)
        elif algo == "amp":
            results[algo] = run_amp(inst, prior, config.T)
    return results


@dataclass
class RunReport:
    config: dict
    algorithms: tuple
    T: int
    n_seeds: int
    mse_db_mean: dict
    mse_db_std: dict
    se_mse_db: dict
    theta: dict
    xi: dict
    zeta: dict
    statuses: dict
    fixed_point: dict | None
    spectral: dict
    wall_clock_s: float
    version: str = __version__

    def to_json(self) -> str:
        def _clean(obj):
            if isinstance(obj, np.ndarray):
                return [_clean(v) for v in obj.tolist()]
            if isinstance(obj, dict):
                return {k: _clean(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [_clean(v) for v in obj]
            if isinstance(obj, complex):
                return [obj.real, obj.imag]
            if isinstance(obj, float) and not np.isfinite(obj):
                return None
            if isinstance(obj, (np.floating, np.integer)):
                return _clean(obj.item())
            return obj

        return json.dumps(_clean(asdict(self)), indent=1, sort_keys=True)


def _to_db(values: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(values)


def _fixed_point_entry(config: ExperimentConfig, tables, prior, ref_op) -> dict:
    vg, vp = oamp_fixed_point(tables, prior, config.sigma2)
    # mse_db reports the posterior error at the fixed point, comparable with
    # the simulated curves; v_phi is the extrinsic variance matching the
    # ledger diagonal.
    mmse_fp = scalar_mmse(vg, prior)
    entry = {
        "v_gamma": vg,
        "v_phi": vp,
        "mmse": mmse_fp,
        "mse_db": float(_to_db(np.array([mmse_fp]))[0]),
    }
    if ref_op.singular_values is not None:
        vg_x, vp_x = bo_oamp_fixed_point_exact(
            ref_op.singular_values, config.N, prior, config.sigma2
        )
        entry["v_phi_eig"] = vp_x
        entry["v_gamma_eig"] = vg_x
    return entry


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Execute the configured sweep and aggregate per-iteration MSE curves.

    mse_db_mean is 10 log10 of the seed-averaged MSE; mse_db_std is the
    standard deviation over seeds of the per-seed dB values.  Evolution
    predictions are computed once (they are size-free) and reported both as
    their own algorithm rows and as the se_mse_db column of the matching
    simulated algorithm.
    """
    t_start = time.time()
    ref_op = _build_operator(config, 0)
    profile, tables = _spectral_inputs(config, ref_op)
    prior = PriorParams(mu=config.mu)

    se_curves: dict[str, np.ndarray] = {}
    theta: dict[str, np.ndarray] = {}
    xi: dict[str, np.ndarray] = {}
    zeta: dict[str, list] = {}
    statuses: dict[str, object] = {}
    if "se_mamp" in config.algorithms:
        se = run_bo_mamp_se(
            tables, prior, config.sigma2, config.T, L=config.L,
            nle_mode=config.se_nle_mode, n_mc=config.n_mc,
            rng_seed=config.base_seed + 0x5E, C_max=config.C_max,
            eps_floor=config.eps_floor,
        )
        se_curves["se_mamp"] = se.v_hat
        theta["se_mamp"] = se.theta
        xi["se_mamp"] = se.xi
        zeta["se_mamp"] = [z.tolist() for z in se.zeta]
        statuses["se_mamp"] = se.status
    if "se_oamp" in config.algorithms:
        d_ref = np.sqrt(np.clip(ref_op.gram_eigenvalues(), 0.0, None))
        se_curves["se_oamp"] = run_bo_oamp_se(
            d_ref, config.N, prior, config.sigma2, config.T
        ).v_hat
        statuses["se_oamp"] = "ok"
    if "se_mf_oamp" in config.algorithms:
        se_curves["se_mf_oamp"] = run_mf_oamp_se(
            float(profile.moments[1]), float(profile.moments[2]),
            prior, config.sigma2, config.T,
        ).v_hat
        statuses["se_mf_oamp"] = "ok"

    fixed_point = None
    if "fixed_point" in config.algorithms:
        try:
            fixed_point = _fixed_point_entry(config, tables, prior, ref_op)
        except ValueError as exc:
            # estimate-built tables cannot feed the geometric series; record
            # the failure instead of aborting the whole experiment
            fixed_point = {"error": str(exc)}

    sim_algos = [a for a in config.algorithms if a in _SIM_ALGOS]
    sim_algos = [a for a in config.algorithms if a in _SIM_ALGOS]
    per_seed: list[dict[str, AlgorithmResult]] = []
    if sim_algos and config.n_seeds > 0:
        sim_cfg = replace(config, algorithms=tuple(sim_algos))
        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                per_seed = list(
                    pool.map(
                        lambda k: _run_seed(sim_cfg, k, ref_op, tables, profile),
                        range(config.n_seeds),
                    )
                )
        else:
            per_seed = [
                _run_seed(sim_cfg, k, ref_op, tables, profile)
                for k in range(config.n_seeds)
            ]

    mse_db_mean: dict[str, np.ndarray] = {}
    mse_db_std: dict[str, np.ndarray] = {}
    se_col: dict[str, np.ndarray] = {}
    nan_row = np.full(config.T, np.nan)
    for algo in config.algorithms:
        if algo in _SIM_ALGOS and per_seed:
            stack = np.stack([res[algo].mse for res in per_seed])
            mse_db_mean[algo] = _to_db(np.nanmean(stack, axis=0))
            per_seed_db = _to_db(stack)
            mse_db_std[algo] = (
                np.nanstd(per_seed_db, axis=0) if config.n_seeds > 1 else np.zeros(config.T)
            )
            first = per_seed[0][algo]
            theta.setdefault(algo, first.trajectory("theta"))
            xi.setdefault(algo, first.trajectory("xi"))
            zeta.setdefault(algo, [r.zeta.tolist() for r in first.records])
            statuses[algo] = [res[algo].status for res in per_seed]
            twin = {"bo_mamp": "se_mamp", "bo_oamp": "se_oamp", "mf_oamp": "se_mf_oamp"}.get(algo)
            se_col[algo] = _to_db(se_curves[twin]) if twin in se_curves else nan_row
        elif algo in se_curves:
            mse_db_mean[algo] = _to_db(se_curves[algo])
            mse_db_std[algo] = np.zeros(config.T)
            se_col[algo] = _to_db(se_curves[algo])
        elif algo == "fixed_point":
            continue
    report = RunReport(
        config=asdict(config),
        algorithms=tuple(a for a in config.algorithms if a in mse_db_mean),
        T=config.T,
        n_seeds=config.n_seeds,
        mse_db_mean=mse_db_mean,
        mse_db_std=mse_db_std,
        se_mse_db=se_col,
        theta={k: np.asarray(v) for k, v in theta.items()},
        xi={k: np.asarray(v) for k, v in xi.items()},
        zeta=zeta,
        statuses=statuses,
        fixed_point=fixed_point,
        spectral=profile.to_dict(),
        wall_clock_s=time.time() - t_start,
    )
    return report


CSV_HEADER = "algo,iter,mse_db_mean,mse_db_std,se_mse_db,theta,xi,n_seeds"


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "nan"
    return format(float(x), ".12g")


def emit_csv(report: RunReport, path: str) -> None:
    """One row per (algorithm, iteration); deterministic order and formatting."""
    lines = [CSV_HEADER]
    for algo in report.algorithms:
        mean = report.mse_db_mean[algo]
        std = report.mse_db_std[algo]
        se = report.se_mse_db.get(algo, np.full(report.T, np.nan))
        th = report.theta.get(algo, np.full(report.T, np.nan))
        xi = report.xi.get(algo, np.full(report.T, np.nan))
        for t in range(report.T):
            lines.append(
                ",".join(
                    [
                        algo,
                        str(t + 1),
                        _fmt(mean[t]),
                        _fmt(std[t]),
                        _fmt(se[t]),
                        _fmt(th[t]),
                        _fmt(xi[t]),
                        str(report.n_seeds),
                    ]
                )
            )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


_PLOT_TEMPLATE = '''#!/usr/bin/env python3
"""MSE-versus-iteration plot for {label}; reads {csv_name} next to this script."""

import csv
import os
from collections import defaultdict

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
curves = defaultdict(lambda: ([], []))
se_curves = defaultdict(lambda: ([], []))
with open(os.path.join(here, "{csv_name}"), newline="") as fh:
    for row in csv.DictReader(fh):
        it = int(row["iter"])
        mse = float(row["mse_db_mean"])
        se = float(row["se_mse_db"])
        if mse == mse:
            curves[row["algo"]][0].append(it)
            curves[row["algo"]][1].append(mse)
        if se == se and not row["algo"].startswith("se_"):
            se_curves[row["algo"]][0].append(it)
            se_curves[row["algo"]][1].append(se)

fig, ax = plt.subplots(figsize=(7, 5))
for algo in {algos}:
    if algo in curves:
        style = "--" if algo.startswith("se_") else "-"
        ax.plot(*curves[algo], style, marker="o", ms=3, label=algo)
    if algo in se_curves:
        ax.plot(*se_curves[algo], "k--", lw=1, label=algo + " (evolution)")
ax.set_xlabel("iteration")
ax.set_ylabel("MSE (dB)")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "{label}.png"), dpi=150)
print("wrote {label}.png")
'''


def emit_plot_script(report: RunReport, path: str, csv_name: str | None = None) -> None:
    """Standalone matplotlib script rendering the CSV; no plotting import here."""
    if not report.algorithms:
        raise ValueError("report contains no algorithm curves to plot")
    label = report.config.get("label", "experiment")
    csv_name = csv_name or f"{label}.csv"
    script = _PLOT_TEMPLATE.format(
        label=label, csv_name=csv_name, algos=sorted(report.algorithms)
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(script)
