"""Command-line front end.

Usage: python -m qrs VERB [options]. Run ``python -m qrs --help`` for the
verb list. Exit codes: 0 success, 1 a checked inequality or tolerance failed,
2 bad usage or configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import matcore as mc
from .errors import QRSError
from .experiments import (DEFAULT_OBSERVABLE, ExperimentConfig, beta_sweep, bound_trace, compare_estimators,
                          histogram, limit_coefficients, mu1_comparison, observable_space, run_paths,
                          write_manifest)
from .filter import RiskParams
from .model import DEFAULT_LAMBDA2, ModelConfig, build_interaction_coeffs, HAMILTONIAN_FACTORIES

VERBS = ("simulate", "fig1", "fig2a", "fig2b", "fig2c", "fig3", "dp-validate", "oracle-validate",
         "entropy-check", "obs-space")


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, (int, np.integer, str)) else _fmt(r) for r in row])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrs", description="Quantum filtering and risk-sensitive estimation experiments.")
    p.add_argument("--version", action="version", version=f"qrs {__version__}")
    p.add_argument("verb", choices=VERBS, help="experiment or validation suite to run")
    p.add_argument("--config", help="JSON experiment/model config")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    p.add_argument("--paths", type=int, help="number of sample paths")
    p.add_argument("--steps", "--N", dest="steps", type=int, help="number of time steps N")
    p.add_argument("--lambda2", type=float, help="slice duration lambda^2")
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--beta", type=float, action="append",
                   help="uncertainty magnitude for fig2a (repeatable; default 0, 0.1, ..., 1)")
    p.add_argument("--model", choices=("dispersive", "spontaneous"), help="preset model when no config is given")
    p.add_argument("--out", default="qrs_output", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default QRS_THREADS or cpu count)")
    return p


def _base_config(args, default_model: str, defaults: dict) -> ExperimentConfig:
    if args.config:
        try:
            with open(args.config) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        merged = dict(defaults)
        merged.update(doc)
        cfg = ExperimentConfig.from_dict(merged)
    else:
        model = args.model or default_model
        lambda2 = args.lambda2 if args.lambda2 is not None else DEFAULT_LAMBDA2
        d = dict(defaults)
        d["observable_name"] = d.pop("observable", DEFAULT_OBSERVABLE[model])
        cfg = ExperimentConfig(model=ModelConfig.preset(model, lambda2), **d)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.paths is not None:
        changes["paths"] = args.paths
    if args.steps is not None:
        changes["N"] = args.steps
    if args.mu1 is not None:
        changes["mu1"] = args.mu1
    if args.mu2 is not None:
        changes["mu2"] = args.mu2
    if args.lambda2 is not None and args.config:
        d = cfg.model.to_dict()
        d["lambda2"] = args.lambda2
        changes["model"] = ModelConfig.from_dict(d)
    return cfg.replace(**changes) if changes else cfg


FIG1 = dict(N=2000, paths=200, mu1=0.1, mu2=0.182, seed=1)
FIG3 = dict(N=5000, paths=200, mu1=0.15, mu2=0.25, seed=1)


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _comparison(args, cfg, name) -> int:
    out = _out(args)
    res = compare_estimators(cfg, workers=args.workers)
    _write_csv(os.path.join(out, f"{name}_paths.csv"), ["path_id", "delta_rn", "delta_rs"],
               [(i, a, b) for i, (a, b) in enumerate(zip(res.delta_rn, res.delta_rs))])
    top = max(res.delta_rn.max(), res.delta_rs.max())
    edges = np.linspace(0.0, top if top > 0 else 1.0, 21)
    h_rn, _ = np.histogram(res.delta_rn, bins=edges)
    h_rs, _ = np.histogram(res.delta_rs, bins=edges)
    _write_csv(os.path.join(out, f"{name}_histogram.csv"), ["bin_low", "bin_high", "count_rn", "count_rs"],
               [(edges[k], edges[k + 1], int(h_rn[k]), int(h_rs[k])) for k in range(20)])
    _dump_trajectory(out, name, cfg)
    write_manifest(os.path.join(out, f"{name}_manifest.json"), name, cfg.to_dict(),
                   {"mean_delta_rn": res.mean_rn, "mean_delta_rs": res.mean_rs, "p_value": res.p_value})
    ok = res.rs_better
    print(f"{name}: mean delta_rn={res.mean_rn:.6f} mean delta_rs={res.mean_rs:.6f} "
          f"paired p={res.p_value:.4g} rs better on {res.frac_rs_better:.0%} of paths -> "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _dump_trajectory(out, name, cfg):
    r = run_paths(cfg, path_ids=[0], want_traces=True, workers=1)
    t = r.traces
    rows = [(l + 1, t["dy"][0, l], t["p_plus"][0, l], t["estimate_true"][0, l], t["estimate_rn"][0, l],
             t["estimate_rs"][0, 0, l]) for l in range(cfg.N)]
    _write_csv(os.path.join(out, f"{name}_trajectory.csv"),
               ["step", "dy", "p_plus", "estimate_true", "estimate_nominal_rn", "estimate_nominal_rs"], rows)


def cmd_simulate(args) -> int:
    cfg = _base_config(args, "dispersive", FIG1)
    out = _out(args)
    r = run_paths(cfg, workers=args.workers)
    _write_csv(os.path.join(out, "simulate_paths.csv"), ["path_id", "delta_rn", "delta_rs"],
               [(int(i), a, b) for i, a, b in zip(r.path_ids, r.delta_rn, r.delta_rs[:, 0])])
    _dump_trajectory(out, "simulate", cfg)
    write_manifest(os.path.join(out, "simulate_manifest.json"), "simulate", cfg.to_dict())
    print(f"simulate: {cfg.paths} paths, N={cfg.N}: mean delta_rn={r.delta_rn.mean():.6f} "
          f"mean delta_rs={r.delta_rs[:, 0].mean():.6f}")
    return 0


def cmd_fig1(args) -> int:
    return _comparison(args, _base_config(args, "dispersive", FIG1), "fig1")


def cmd_fig3(args) -> int:
    return _comparison(args, _base_config(args, "spontaneous", FIG3), "fig3")


def cmd_fig2a(args) -> int:
    cfg = _base_config(args, "dispersive", dict(N=2000, paths=100, mu1=0.01, mu2=0.05, seed=1))
    betas = args.beta if args.beta else [round(0.1 * k, 10) for k in range(11)]
    if any(not 0 <= b <= 1 for b in betas):
        raise UsageError("beta must lie in [0, 1]")
    rows = beta_sweep(betas, paths=cfg.paths, mu=(cfg.mu1, cfg.mu2), N=cfg.N, seed=cfg.seed,
                      lambda2=cfg.model.lambda2, workers=args.workers)
    out = _out(args)
    _write_csv(os.path.join(out, "fig2a_beta_sweep.csv"), ["beta", "mean_rn", "mean_rs"], rows)
    write_manifest(os.path.join(out, "fig2a_manifest.json"), "fig2a", cfg.to_dict(), {"betas": list(betas)})
    for b, rn, rs in rows:
        print(f"fig2a: beta={b:.2f} mean delta_rn={rn:.6f} mean delta_rs={rs:.6f}")
    at_one = [r for r in rows if r[0] == 1.0]
    ok = all(rs < rn for _, rn, rs in at_one)
    print(f"fig2a: rs below rn at beta=1 -> {'PASS' if ok else 'FAIL'}" if at_one else "fig2a: beta=1 not swept")
    return 0 if ok else 1


def cmd_fig2b(args) -> int:
    cfg = _base_config(args, "dispersive", dict(FIG1, paths=20))
    out = _out(args)
    tr = bound_trace(cfg, 0)
    _write_csv(os.path.join(out, "fig2b_trace.csv"),
               ["step", "eps", "eps_prime", "estimate_true", "estimate_rn", "estimate_rs"],
               [(l + 1, tr.eps[l], tr.eps_prime[l], tr.estimate_true[l], tr.estimate_rn[l], tr.estimate_rs[l])
                for l in range(cfg.N)])
    r = run_paths(cfg, want_bounds=True, workers=args.workers)
    eps, epsp = r.eps[:, 0], r.eps_prime[:, 0]
    frac = float(np.mean(eps <= epsp))
    ratio = float(np.mean(epsp) / np.mean(eps))
    write_manifest(os.path.join(out, "fig2b_manifest.json"), "fig2b", cfg.to_dict(),
                   {"fraction_bound_holds": frac, "mean_ratio": ratio})
    ok = frac == 1.0 and ratio > 1
    print(f"fig2b: eps <= eps' on {frac:.2%} of steps over {cfg.paths} paths, "
          f"mean(eps')/mean(eps)={ratio:.3f} -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_fig2c(args) -> int:
    cfg = _base_config(args, "dispersive", FIG1)
    a, b = mu1_comparison(cfg, paths=cfg.paths, workers=args.workers)
    out = _out(args)
    _write_csv(os.path.join(out, "fig2c_mean_eps.csv"), ["step", "mean_eps_mu1_0", "mean_eps_mu1_0.1"],
               [(l + 1, a[l], b[l]) for l in range(cfg.N)])
    write_manifest(os.path.join(out, "fig2c_manifest.json"), "fig2c", cfg.to_dict(),
                   {"pairs": [[0.0, 0.281], [0.1, 0.182]]})
    ok = b.mean() < a.mean()
    print(f"fig2c: time-averaged mean eps (0.0,0.281)={a.mean():.6f} (0.1,0.182)={b.mean():.6f} -> "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_obs_space(args) -> int:
    model = args.model or "dispersive"
    lambda2 = args.lambda2 if args.lambda2 is not None else DEFAULT_LAMBDA2
    lam = math.sqrt(lambda2)
    value = 0.55 if model == "dispersive" else 0.88
    disc, _ = observable_space(build_interaction_coeffs(HAMILTONIAN_FACTORIES[model](value, lam)))
    cont, _ = observable_space(limit_coefficients(model, value, lam), continuous=True)
    out = _out(args)
    write_manifest(os.path.join(out, "obs_space_manifest.json"), "obs-space",
                   {"model": model, "lambda2": lambda2, "parameter": value},
                   {"dimension_discrete": disc, "dimension_limit": cont})
    print(f"obs-space: model={model} dimension {disc} (limit lambda->0: {cont})")
    return 0


def cmd_oracle_validate(args) -> int:
    from .validation import oracle_suite

    n = args.steps if args.steps is not None else 6
    if not 1 <= n <= 6:
        raise UsageError("oracle-validate supports 1 <= N <= 6")
    return _report("oracle-validate", oracle_suite(n), args)


def cmd_dp_validate(args) -> int:
    from .validation import dp_suite

    n = args.steps if args.steps is not None else 6
    if not 1 <= n <= 6:
        raise UsageError("dp-validate supports 1 <= N <= 6")
    mu1 = 0.1 if args.mu1 is None else args.mu1
    mu2 = 0.182 if args.mu2 is None else args.mu2
    return _report("dp-validate", dp_suite(n, RiskParams(mu1, mu2)), args)


def cmd_entropy_check(args) -> int:
    from .validation import entropy_suite

    seed = 0 if args.seed is None else args.seed
    return _report("entropy-check", entropy_suite(seed), args)


def _report(name, checks, args) -> int:
    out = _out(args)
    ok = True
    for c in checks:
        ok &= c.passed
        print(f"{name}: {c.name}: {c.detail} -> {'PASS' if c.passed else 'FAIL'}")
    write_manifest(os.path.join(out, f"{name}_manifest.json"), name, {"argv": sys.argv[1:]},
                   {"checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks]})
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate, "fig1": cmd_fig1, "fig2a": cmd_fig2a, "fig2b": cmd_fig2b, "fig2c": cmd_fig2c,
    "fig3": cmd_fig3, "dp-validate": cmd_dp_validate, "oracle-validate": cmd_oracle_validate,
    "entropy-check": cmd_entropy_check, "obs-space": cmd_obs_space,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return COMMANDS[args.verb](args)
    except (UsageError, QRSError, ValueError) as exc:
        print(f"qrs {args.verb}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
