"""Command-line interface.

Subcommands: generate, train, sweep (bias|nprocess|ksos), check.
Exit codes: 0 ok, 1 check/assert failure, 2 config error, 3 solver
failure.  The default output root comes from $PERTURBOPT_OUT.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..ksos import GramSingular, KsosConfig, certificate, glm_smoothness_estimates, ksos_minimize, lambda_phi_schedule, baseline_minimize
from ..model import ParamSpace, model_for_instances
from ..perturb import PerturbationSpec, crn_risk_surface, regularized_risk
from ..problems import default_cost_oracle, generate_instances, load_instances, save_instances
from ..rngs import spawn_seed, substream
from .checks import run_checks
from .config import ConfigError, ExperimentConfig, load_config
from .manifest import ManifestWriter
from .sweeps import run_bias_sweep, run_ksos_sweep, run_nprocess_sweep

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3

TRAIN_FILE = "instances_train.jsonl"
TEST_FILE = "instances_test.jsonl"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perturbopt",
        description="Perturbed combinatorial-policy experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "check"):
        p = sub.add_parser(name)
        _common_flags(p)
    p = sub.add_parser("sweep")
    p.add_argument("kind", choices=["bias", "nprocess", "ksos"])
    _common_flags(p)
    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML experiment config")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--verbose", action="store_true")


def _load(args) -> tuple[ExperimentConfig, str, int]:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg.master_seed = args.seed_override
    out_dir = cfg.resolve_output_dir(args.out)
    os.makedirs(out_dir, exist_ok=True)
    threads = args.threads if args.threads is not None else cfg.threads
    return cfg, out_dir, threads


def _write_json(path: str, doc: dict) -> str:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def cmd_generate(args) -> int:
    cfg, out_dir, _threads = _load(args)
    manifest = ManifestWriter(
        out_dir, cfg.to_doc(),
        seed_labels={"train": "dataset/train", "test": "dataset/test"},
    )
    with manifest.time("generate"):
        train = generate_instances(
            cfg.domain_name, cfg.n_train,
            spawn_seed(cfg.master_seed, "dataset/train"), **cfg.domain_params,
        )
        test = generate_instances(
            cfg.domain_name, cfg.n_test,
            spawn_seed(cfg.master_seed, "dataset/test"), **cfg.domain_params,
        )
        train_path = os.path.join(out_dir, TRAIN_FILE)
        test_path = os.path.join(out_dir, TEST_FILE)
        save_instances(train_path, train)
        save_instances(test_path, test)
    manifest.add_file(train_path)
    manifest.add_file(test_path)
    manifest.write()
    if args.verbose:
        print(f"wrote {len(train)} train / {len(test)} test instances to {out_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, out_dir, threads = _load(args)
    train_path = os.path.join(out_dir, TRAIN_FILE)
    if not os.path.exists(train_path):
        print(f"error: dataset {train_path} not found; run generate first", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    train = load_instances(train_path)
    test = load_instances(os.path.join(out_dir, TEST_FILE))

    model = model_for_instances(train, d=cfg.model_d)
    space = ParamSpace.symmetric(cfg.model_d)
    oracle = default_cost_oracle(cfg.domain_name)
    spec = PerturbationSpec(
        lam=cfg.lam, epsilon0=cfg.epsilon0, mc_samples=cfg.mc_samples,
        master_seed=cfg.master_seed,
    )
    surface = crn_risk_surface(train, oracle, model, space, spec)

    opt = cfg.optimizer
    kind = opt.get("kind", "ksos")
    manifest = ManifestWriter(out_dir, cfg.to_doc())
    status = EXIT_OK
    result_doc: dict = {"optimizer": kind}

    if kind == "ksos":
        m = int(opt.get("M", 96))
        s = float(opt.get("s", 2.5))
        lam_phi = opt.get("lambda_phi")
        if lam_phi is None:
            lam_phi = lambda_phi_schedule(
                m, s, cfg.model_d,
                delta=float(opt.get("delta", 0.1)),
                cbar=float(opt.get("cbar", 1.0)),
            )
        ks_cfg = KsosConfig(
            M=m, s=s, lambda_phi=float(lam_phi),
            length_scale=opt.get("length_scale"),
            seed=spawn_seed(cfg.master_seed, "train/ksos"),
        )
        mapper = map
        pool = None
        if threads > 1:
            pool = ThreadPoolExecutor(max_workers=threads)
            mapper = pool.map
        try:
            with manifest.time("ksos"):
                result = ksos_minimize(surface, space, ks_cfg, mapper=mapper)
        except GramSingular as exc:
            print(f"solver failure: {exc}", file=sys.stderr)
            _write_json(os.path.join(out_dir, "result.json"), {"error": str(exc)})
            return EXIT_SOLVER_FAILURE
        finally:
            if pool is not None:
                pool.shutdown()
        w_hat = result.w_hat
        result_doc.update(result.to_doc())
        if not result.converged:
            status = EXIT_SOLVER_FAILURE
        f0_inf = max(abs(b) for x in train for b in oracle.bounds(x))
        try:
            norm_bound, trace_bound = glm_smoothness_estimates(
                model, train, cfg.lam, s, cfg.model_d, f0_inf, space
            )
            result_doc["certificate_inputs"] = {
                "sobolev_norm_bound": norm_bound,
                "trace_bound": trace_bound,
                "lambda_phi": float(lam_phi),
            }
            result_doc["certified_optimality_bound"] = certificate(
                result.aposteriori_gap, trace_bound, norm_bound, float(lam_phi)
            )
        except ValueError as exc:
            result_doc["certificate_inputs"] = {"skipped": str(exc)}
    else:
        budget = int(opt.get("budget", 96))
        with manifest.time(kind):
            w_hat, value = baseline_minimize(
                surface, space, kind, budget,
                seed=spawn_seed(cfg.master_seed, "train/baseline"),
            )
        result_doc.update({"w_hat": w_hat.tolist(), "value": value})

    with manifest.time("evaluation"):
        train_report = regularized_risk(w_hat, train, oracle, model, space, spec)
        test_report = regularized_risk(w_hat, test, oracle, model, space, spec)
        rng = substream(cfg.master_seed, "train/random_policies")
        random_ws = space.sample(rng, 20)
        random_risks = [
            regularized_risk(w, test, oracle, model, space, spec).value
            for w in random_ws
        ]
        budget = int(opt.get("M", opt.get("budget", 96)))
        base_w, base_v = baseline_minimize(
            surface, space, "randomsearch", budget,
            seed=spawn_seed(cfg.master_seed, "train/baseline_matched"),
        )
        base_test = regularized_risk(base_w, test, oracle, model, space, spec)

    result_doc["comparison"] = {
        "random_policy_test_risks": random_risks,
        "random_policy_median": float(np.median(random_risks)),
        "budget_matched_random_search": {
            "w": base_w.tolist(),
            "train_value": base_v,
            "test_risk": base_test.value,
        },
    }
    files = [
        _write_json(os.path.join(out_dir, "result.json"), result_doc),
        _write_json(os.path.join(out_dir, "risk_train.json"), train_report.to_doc()),
        _write_json(os.path.join(out_dir, "risk_test.json"), test_report.to_doc()),
    ]
    for f in files:
        manifest.add_file(f)
    manifest.write()
    if args.verbose:
        print(
            f"learned w={np.round(w_hat, 4).tolist()} "
            f"test risk {test_report.value:.4f} "
            f"(random median {result_doc['comparison']['random_policy_median']:.4f})"
        )
    return status


def cmd_sweep(args) -> int:
    cfg, out_dir, threads = _load(args)
    manifest = ManifestWriter(out_dir, cfg.to_doc())
    runner = {
        "bias": run_bias_sweep,
        "nprocess": run_nprocess_sweep,
        "ksos": run_ksos_sweep,
    }[args.kind]
    with manifest.time(f"sweep/{args.kind}"):
        path = runner(cfg, out_dir, threads=threads)
    manifest.add_file(path)
    summary = path.replace(".csv", "_summary.csv")
    if os.path.exists(summary):
        manifest.add_file(summary)
    manifest.write()
    if args.verbose:
        print(f"sweep {args.kind}: wrote {path}")
    return EXIT_OK


def cmd_check(args) -> int:
    cfg, out_dir, _threads = _load(args)
    results = run_checks(cfg)
    report = [
        {"name": name, "passed": passed, "detail": detail}
        for name, passed, detail in results
    ]
    _write_json(os.path.join(out_dir, "check_report.json"), {"checks": report})
    if not results:
        print("warning: 0 checks configured")
        return EXIT_OK
    n_failed = 0
    for name, passed, detail in results:
        tag = "PASS" if passed else "FAIL"
        print(f"[{tag}] {name}: {detail}")
        n_failed += not passed
    return EXIT_CHECK_FAILED if n_failed else EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "check":
            return cmd_check(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG_ERROR
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
