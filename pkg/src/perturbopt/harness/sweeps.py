"""Experiment sweeps writing stable, versioned CSV artifacts."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..ksos import (
    KsosConfig,
    certificate,
    gram_matrix,
    ksos_minimize,
    lambda_phi_schedule,
)
from ..model import ParamSpace, model_for_instances
from ..perturb import PerturbationSpec
from ..problems import generate_instances
from ..rngs import spawn_seed, substream
from ..theory import check_bias_bound, check_empirical_process
from .config import ExperimentConfig

CSV_SCHEMA_VERSION = 1


def write_csv(path: str, columns: list[str], rows: list[dict]) -> str:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["schema_version"] + columns)
        for row in rows:
            writer.writerow([CSV_SCHEMA_VERSION] + [row.get(c, "") for c in columns])
    return path


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Bias sweep


def run_bias_sweep(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> str:
    sweep = cfg.sweeps.get("bias", {})
    lambda_grid = sweep.get("lambda_grid", [0.01, 0.03, 0.1, 0.3, 1.0])
    n_pairs = int(sweep.get("n_pairs", 100))
    n_instances = int(sweep.get("n_instances", 60))
    eps0 = cfg.epsilon0
    n_w = max(1, n_pairs // len(lambda_grid))

    domain = cfg.domain_name if cfg.domain_name == "contextual" else "contextual"
    instances = generate_instances(
        domain, n_instances, spawn_seed(cfg.master_seed, "sweep/bias/instances"),
        **({"d_context": cfg.model_d} if domain == "contextual" else {}),
    )
    model = model_for_instances(instances, d=cfg.model_d)
    space = ParamSpace.symmetric(cfg.model_d)
    spec = PerturbationSpec(
        lam=max(lambda_grid), epsilon0=eps0, mc_samples=cfg.mc_samples,
        master_seed=cfg.master_seed,
    )

    def one_w(i):
        w = space.sample(substream(cfg.master_seed, f"sweep/bias/w/{i}"), 1)[0]
        checks, fit = check_bias_bound(
            w, instances, lambda_grid, eps0, model, space, spec
        )
        return w, checks, fit

    rows = []
    slopes = []
    for i, (w, checks, fit) in enumerate(_parallel_map(one_w, range(n_w), threads)):
        by_lambda: dict[float, dict] = {}
        for c in checks:
            lam = c.metadata.get("lambda")
            entry = by_lambda.setdefault(lam, {})
            if c.name == "bias_vs_unperturbed":
                entry.update(lhs=c.lhs, rhs2osc=c.rhs, ok2=c.passed, V=c.metadata["V"])
            elif c.name == "bias_vs_base_smoothed":
                entry.update(lhs_eps=c.lhs, rhs4osc=c.rhs, ok4=c.passed)
            elif c.name == "tail_mass_monotone":
                entry.update(v_monotone=c.passed)
        for lam, entry in sorted(by_lambda.items()):
            rows.append(
                {
                    "w_index": i,
                    "lambda": lam,
                    "lhs": entry["lhs"],
                    "rhs2osc": entry["rhs2osc"],
                    "lhs_eps": entry["lhs_eps"],
                    "rhs4osc": entry["rhs4osc"],
                    "tail_mass": entry["V"],
                    "v_monotone": int(entry["v_monotone"]),
                    "passed": int(entry["ok2"] and entry["ok4"] and entry["v_monotone"]),
                }
            )
        if math.isfinite(fit.fitted_slope):
            slopes.append(fit.fitted_slope)
    path = write_csv(
        os.path.join(out_dir, "sweep_bias.csv"),
        [
            "w_index", "lambda", "lhs", "rhs2osc", "lhs_eps", "rhs4osc",
            "tail_mass", "v_monotone", "passed",
        ],
        rows,
    )
    summary = [
        {
            "n_w": n_w,
            "n_rows": len(rows),
            "fitted_slope_median": float(np.median(slopes)) if slopes else float("nan"),
            "all_passed": int(all(r["passed"] for r in rows)),
        }
    ]
    write_csv(
        os.path.join(out_dir, "sweep_bias_summary.csv"),
        ["n_w", "n_rows", "fitted_slope_median", "all_passed"],
        summary,
    )
    return path


# ---------------------------------------------------------------------------
# Empirical process sweep


def run_nprocess_sweep(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> str:
    sweep = cfg.sweeps.get("nprocess", {})
    n_grid = sweep.get("n_grid", [64, 128, 256, 512, 1024, 2048, 4096])
    seeds = int(sweep.get("seeds", 20))
    lam = float(sweep.get("lambda", 0.5))
    d_context = int(sweep.get("d_context", 2))
    result = check_empirical_process(
        n_grid=n_grid,
        lam=lam,
        n_seeds=seeds,
        master_seed=cfg.master_seed,
        space=ParamSpace.symmetric(d_context),
        d_context=d_context,
        w_grid_size=int(sweep.get("w_grid", 128)),
        pool_size=int(sweep.get("pool", 100_000)),
        delta=float(sweep.get("delta", 0.1)),
        dudley_constant=float(sweep.get("dudley_constant", 24.0)),
    )
    rows = [
        {
            "n": c.metadata["n"],
            "seed": c.metadata["seed"],
            "deviation": c.lhs,
            "rhs": c.rhs,
            "se": c.se_lhs,
            "passed": int(c.passed),
        }
        for c in result.checks
    ]
    path = write_csv(
        os.path.join(out_dir, "sweep_nprocess.csv"),
        ["n", "seed", "deviation", "rhs", "se", "passed"],
        rows,
    )
    lo, hi = result.fit.slope_ci
    write_csv(
        os.path.join(out_dir, "sweep_nprocess_summary.csv"),
        ["fitted_slope", "slope_ci_lo", "slope_ci_hi", "fraction_bounded", "lambda"],
        [
            {
                "fitted_slope": result.fit.fitted_slope,
                "slope_ci_lo": lo,
                "slope_ci_hi": hi,
                "fraction_bounded": result.fraction_bounded,
                "lambda": lam,
            }
        ],
    )
    return path


# ---------------------------------------------------------------------------
# kSoS sweep: error vs M on planted quadratics, with certificates


def quadratic_certificate_bounds(
    space: ParamSpace, target: np.ndarray, s: float, length_scale: float
) -> tuple[float, float]:
    """Certificate inputs for a planted quadratic |w - target|^2.

    The Sobolev seminorm at the certificate's derivative order is exactly 2
    (second derivatives are constant).  The minimal SoS trace is bounded by
    sum_j |w_j - target_j|^2_H, estimated by the kernel-interpolant norm on
    a dense grid (increasing in refinement) with a factor-2 margin.
    """
    d = space.d
    rng = substream(9, "certificate/grid")
    grid = space.sample(rng, 400)
    K = gram_matrix(grid, s, length_scale)
    K += 1e-9 * float(np.trace(K)) / len(grid) * np.eye(len(grid))
    trace_bound = 0.0
    for j in range(d):
        g = grid[:, j] - target[j]
        trace_bound += float(g @ np.linalg.solve(K, g))
    return 2.0 * trace_bound, 2.0


def run_ksos_sweep(cfg: ExperimentConfig, out_dir: str, threads: int = 1) -> str:
    sweep = cfg.sweeps.get("ksos", {})
    m_grid = [int(m) for m in sweep.get("m_grid", [32, 64, 128, 256])]
    seeds = int(sweep.get("seeds", 10))
    d = int(sweep.get("d", 1))
    s = float(sweep.get("s", cfg.optimizer.get("s", 2.0 if d == 1 else 2.5)))
    cbar = float(cfg.optimizer.get("cbar", 1.0))
    delta = float(cfg.optimizer.get("delta", 0.1))
    space = ParamSpace.symmetric(d)
    ell = cfg.optimizer.get("length_scale") or space.diameter() / 4.0

    grid_oracle = space.sample(substream(cfg.master_seed, "sweep/ksos/oracle"), 10_000)

    def one_cell(cell):
        m, seed_idx = cell
        seed = spawn_seed(cfg.master_seed, f"sweep/ksos/{m}/{seed_idx}")
        target = space.sample(substream(seed, "target"), 1)[0] * 0.6
        surface = lambda w: float(np.sum((np.asarray(w) - target) ** 2))
        lam_phi = lambda_phi_schedule(m, s, d, delta=delta, cbar=cbar)
        result = ksos_minimize(
            surface, space, KsosConfig(M=m, s=s, lambda_phi=lam_phi, length_scale=ell, seed=seed)
        )
        oracle_min = float(np.min(np.sum((grid_oracle - target) ** 2, axis=1)))
        true_err = abs(surface(result.w_hat) - oracle_min)
        trace_bound, norm_bound = quadratic_certificate_bounds(space, target, s, ell)
        certified = certificate(
            result.aposteriori_gap, trace_bound, norm_bound, lam_phi
        )
        return {
            "M": m,
            "seed": seed_idx,
            "arg_error": float(np.linalg.norm(result.w_hat - target)),
            "value_error": true_err,
            "c_hat": result.c_hat,
            "gap": result.aposteriori_gap,
            "lambda_phi": lam_phi,
            "certified_bound": certified,
            "certificate_covers": int(certified >= true_err),
            "converged": int(result.converged),
        }

    cells = [(m, s_idx) for m in m_grid for s_idx in range(seeds)]
    rows = _parallel_map(one_cell, cells, threads)
    path = write_csv(
        os.path.join(out_dir, "sweep_ksos.csv"),
        [
            "M", "seed", "arg_error", "value_error", "c_hat", "gap",
            "lambda_phi", "certified_bound", "certificate_covers", "converged",
        ],
        rows,
    )
    med_rows = []
    for m in m_grid:
        errs = [r["arg_error"] for r in rows if r["M"] == m]
        med_rows.append({"M": m, "median_arg_error": float(np.median(errs))})
    write_csv(
        os.path.join(out_dir, "sweep_ksos_summary.csv"),
        ["M", "median_arg_error"],
        med_rows,
    )
    return path
