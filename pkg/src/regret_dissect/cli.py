"""Command-line front end: ``regret-dissect theory|simulate|bounds``.

Human-readable tables go to stdout; machine artifacts go to files only.
Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 experiment
quality failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    AsymptoticSummary,
    analyze,
    classify_regime,
    generalization_bound,
    lower_bound_D,
    upper_bound_D,
)
from .config import RunConfig, build_instance, config_hash, load_config
from .errors import ConfigError, ExperimentError, PreconditionError, RegionError, RegretDissectError
from .montecarlo import ExperimentConfig, run_experiment, write_curve_csv, write_curves_json, write_diff_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_QUALITY = 0, 2, 3, 4


class Manifest:
    """Run manifest, rewritten to disk after every phase."""

    def __init__(self, out: Path, cfg: RunConfig, command: str):
        self.path = out / "manifest.json"
        self.data = {
            "tool": "regret-dissect",
            "version": __version__,
            "command": command,
            "config_hash": config_hash(cfg),
            "config": cfg.model_dump(mode="json"),
            "timings": {},
            "outputs": [],
        }
        self.write()

    def phase(self, name: str, seconds: float) -> None:
        self.data["timings"][name] = round(seconds, 6)
        self.write()

    def output(self, path: Path) -> None:
        self.data["outputs"].append(str(path))

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=1))


def _fmt_list(xs) -> str:
    return "[" + ", ".join(f"{x:.6g}" for x in np.ravel(xs)) + "]"


def _print_summary(s: AsymptoticSummary) -> None:
    rows = [
        ("theta_KL", _fmt_list(s.theta_kl)),
        ("theta*", _fmt_list(s.theta_star)),
        ("kappa0_ETO", f"{s.kappa0_eto:.6g}"),
        ("kappa0_IEO", f"{s.kappa0_ieo:.6g}"),
        ("delta", f"{s.delta:.6g}"),
        ("B0", f"{s.b0:.6g}"),
        ("lambda_ETO", _fmt_list(s.lambda_eto)),
        ("lambda_IEO", _fmt_list(s.lambda_ieo)),
        ("tau1", f"{s.tau1:.6g}"),
        ("tau2", f"{s.tau2:.6g}"),
        ("tau3", f"{s.tau3:.6g}"),
        ("tau3 (P^KL Hessian)", f"{s.tau3_kl_hessian:.6g}"),
        ("tau6", f"{s.tau6:.6g}"),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{width}}  {v}")


def _summary_for(cfg: RunConfig, out: Path) -> AsymptoticSummary:
    path = out / "summary.json"
    if path.exists():
        data = json.loads(path.read_text())
        if data.get("extras", {}).get("config_hash") == config_hash(cfg):
            return AsymptoticSummary.from_dict(data)
    inst = build_instance(cfg)
    summary = analyze(inst.truth, inst.family, inst.model)
    summary.extras["config_hash"] = config_hash(cfg)
    return summary


def cmd_theory(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    manifest = Manifest(out, cfg, "theory")
    t0 = time.perf_counter()
    inst = build_instance(cfg)
    summary = analyze(inst.truth, inst.family, inst.model)
    summary.extras["config_hash"] = config_hash(cfg)
    manifest.phase("theory", time.perf_counter() - t0)
    path = out / "summary.json"
    path.write_text(summary.to_json(indent=1))
    manifest.output(path)
    manifest.write()
    _print_summary(summary)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    manifest = Manifest(out, cfg, "simulate")
    exp = cfg.experiment
    inst = build_instance(cfg)
    econf = ExperimentConfig(inst, tuple(exp.n_list), exp.replications, exp.base_seed,
                             tuple(exp.t_grid) if exp.t_grid else None, exp.t_points, exp.n_starts)
    t0 = time.perf_counter()
    result = run_experiment(econf, workers=args.threads)
    manifest.phase("simulate", time.perf_counter() - t0)
    manifest.data["experiment"] = result.metadata
    manifest.data["exclusions"] = {str(r.n): r.failures for r in result.per_n}
    print(f"{'n':>6}  {'failures':>8}  {'max D':>8}  {'min D':>8}")
    for r in result.per_n:
        tail, diff, curves = out / f"tail_{r.n}.csv", out / f"diff_{r.n}.csv", out / f"curves_{r.n}.json"
        write_curve_csv(tail, r.eto, r.ieo)
        write_diff_csv(diff, r.diff)
        write_curves_json(curves, r, raw=args.raw)
        for path in (tail, diff, curves):
            manifest.output(path)
        d = r.diff.d
        print(f"{r.n:>6}  {r.failures:>8}  {d.max():>8.4f}  {d.min():>8.4f}")
    manifest.write()
    return EXIT_OK


def cmd_bounds(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    manifest = Manifest(out, cfg, "bounds")
    t0 = time.perf_counter()
    summary = _summary_for(cfg, out)
    b = cfg.bounds
    n = args.n or cfg.experiment.n_list[-1]
    if args.t is not None:
        t = args.t
    elif summary.delta > b.zero_tol:
        t = 0.5 * (summary.kappa0_ieo + summary.kappa0_eto)
    else:
        t = summary.kappa0_ieo + 1.0 / n
    budget = args.budget if args.budget is not None else b.error_budget
    eps = args.epsilon if args.epsilon is not None else b.epsilon
    report = {"n": n, "t": t, "budget": budget, "epsilon": eps}

    low = lower_bound_D(summary, n, t, budget)
    report["lower"] = {"value": low.value, "case": low.case}
    print(f"n = {n}, t = {t:.6g}, budget = {budget:g}")
    print(f"lower bound on D   {low.value:+.6f}   [{low.case}]")
    try:
        up = upper_bound_D(summary, n, t, eps, budget)
        report["upper"] = {"value": up.value, "case": up.case}
        print(f"upper bound on D   {up.value:+.6f}   [{up.case}]")
    except (RegionError, PreconditionError) as exc:
        report["upper"] = {"value": None, "case": f"unavailable: {exc}"}
        print(f"upper bound on D   unavailable   [{exc}]")
    if b.generalization is not None:
        g = b.generalization
        val = generalization_bound(g.L_c, g.rho_c, g.B_c, g.D_theta, g.E_theta, g.C_abs,
                                   len(summary.theta_kl), n, g.confidence)
        report["generalization_slack"] = val
        print(f"IEO generalization slack  {val:.6f}")
    regime = classify_regime(summary, n, b.delta_factor, b.zero_tol)
    report["regime"] = regime
    print(f"regime: {regime['regime']}  (delta threshold {regime['delta_threshold']:.4g}, "
          f"zero tolerance {regime['zero_tol']:g})")
    manifest.phase("bounds", time.perf_counter() - t0)
    path = out / "bounds.json"
    path.write_text(json.dumps(report, indent=1))
    manifest.output(path)
    manifest.write()
    return EXIT_OK


COMMANDS = {"theory": cmd_theory, "simulate": cmd_simulate, "bounds": cmd_bounds}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regret-dissect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON run configuration")
        sp.add_argument("--out", default="out", help="output directory (created if missing)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for simulate")
        sp.add_argument("--raw", action="store_true", help="include raw regrets in JSON output")
        if name == "bounds":
            sp.add_argument("--n", type=int, help="sample size (default: largest in the config)")
            sp.add_argument("--t", type=float, help="regret threshold")
            sp.add_argument("--epsilon", type=float, help="slack for the misspecified upper bound")
            sp.add_argument("--budget", type=float, help="declared statistical error budget")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"experiment failed quality checks: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except RegretDissectError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NotImplementedError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
