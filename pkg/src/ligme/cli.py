"""Command-line entry point: ``ligme <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .fused import build_D, build_synthesis, reconstruct, solve_fused
from .gme import DesignError, design_gme_bivariate
from .linops import Identity

logger = logging.getLogger("ligme")


def _config(args) -> bench.ExperimentConfig:
    cfg = bench.load_config(args.config) if args.config else bench.ExperimentConfig(
        models=bench.default_models())
    if getattr(args, "workers", None):
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "max_iter", None):
        cfg = replace(cfg, solver=replace(cfg.solver, max_iter=args.max_iter))
    return cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out) if args.out else cfg.resolved_output_dir()


def _grid(cfg, name):
    if name is None:
        return cfg.models[0]
    for g in cfg.models:
        if g.name == name:
            return g
    raise SystemExit(f"no model named {name!r} in the config "
                     f"(have {[g.name for g in cfg.models]})")


def cmd_solve(args) -> int:
    cfg = _config(args)
    grid = _grid(cfg, args.model)
    mu1 = grid.mu1[0] if args.mu1 is None else args.mu1
    mu2 = grid.mu2[0] if args.mu2 is None else args.mu2
    seed = cfg.seeds[0] if args.seed is None else args.seed
    x_true, ys = bench._observations(replace(cfg, seeds=(seed,)))
    spec = bench.make_problem(cfg, grid, mu1, mu2, ys[seed])
    res = solve_fused(spec, stop=bench._stopping(cfg, grid, args.reference_iters),
                      kappa=cfg.solver.kappa)
    N = cfg.N
    x_hat = reconstruct(res.x[:N], res.x[N:], N, spec.resolved().L)
    se = float(np.sum((x_true - x_hat) ** 2))
    rec = bench.ResultRecord(
        grid.name, grid.variant, seed, float(mu1), float(mu2), se, res.n_iter, res.residual,
        max(res.trace.early_violation), res.trace.max_asym_residual[-1],
        "ok" if res.converged else "max-iter", res.wall_time,
    )
    out = _out_dir(args, cfg)
    paths = bench.emit_results([rec], out, x_true, {f"seed{seed}": ys[seed]}, {grid.name: x_hat})
    res.trace.to_csv(out / "trace.csv")
    print(f"{grid.name} seed={seed} mu=({mu1:g}, {mu2:g}) SE={se:.6g} "
          f"iters={res.n_iter} residual={res.residual:.3e}")
    print(f"wrote {paths['results']} and {out / 'trace.csv'}")
    return 0


def cmd_design(args) -> int:
    N, L = args.N, args.L
    try:
        design = design_gme_bivariate(
            Identity(N), build_D(N), build_synthesis(N, L), args.mu, args.mu1, args.mu2,
            theta=args.theta, omega1=args.omega[0], omega2=args.omega[1], factor=args.factor,
        )
    except DesignError as exc:
        print(f"design failed: {exc}", file=sys.stderr)
        return 1
    text = design.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
        print(f"certificate {design.certificate:.3e} scale {design.scale:g}; wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    result = bench.run_experiment(cfg, out, reference_iters=args.reference_iters)
    for name, s in result["summary"].items():
        print(f"{name:22s} best mu=({s['mu1']:g}, {s['mu2']:g}) median SE={s['median_se']:.4g} "
              f"median per-seed best SE={s['median_best_se_per_seed']:.4g}")
    failed = [r for r in result["records"] if r.status.startswith("error")]
    if failed:
        print(f"{len(failed)} cells failed; see the status column", file=sys.stderr)
    print(f"wrote {result['paths']['results']}")
    return 0


def cmd_baseline_shift(args) -> int:
    cfg = _config(args)
    report = bench.baseline_shift_test(cfg, args.model, args.shift, args.mu1, args.mu2)
    text = json.dumps(report, indent=2, sort_keys=True)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "baseline_shift.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_default_config(args) -> int:
    text = bench.dump_config(bench.ExperimentConfig(models=bench.default_models()))
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ligme", description="Constrained LiGME solver and "
                                "fused-lasso denoising benchmark.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML experiment config (defaults if omitted)")
        sp.add_argument("--out", help=f"output directory (else ${bench.OUTPUT_DIR_ENV} "
                        "or the config's output_dir)")
        sp.add_argument("--max-iter", type=int, help="override solver.max_iter")

    sp = sub.add_parser("solve", help="solve one model cell from a config")
    common(sp)
    sp.add_argument("--model", help="model name in the config (default: first)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--mu1", type=float)
    sp.add_argument("--mu2", type=float)
    sp.add_argument("--paper-iters", dest="reference_iters", action="store_true",
                    help="reference iteration counts (600k, 1400k for bivariate-ii)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("design-gme", help="emit a certified bivariate GME design as JSON")
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--mu1", type=float, required=True)
    sp.add_argument("--mu2", type=float, required=True)
    sp.add_argument("--theta", type=float, default=0.99)
    sp.add_argument("--omega", type=float, nargs=2, default=(0.5, 0.5))
    sp.add_argument("--factor", choices=("sqrt", "direct"), default="sqrt")
    sp.add_argument("--out", help="write JSON here instead of stdout")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("experiment", help="full grid experiment over seeds")
    common(sp)
    sp.add_argument("--workers", type=int, help="process pool width")
    sp.add_argument("--paper-iters", dest="reference_iters", action="store_true",
                    help="600k iterations (1400k for bivariate-ii) instead of max_iter")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("baseline-shift", help="robustness to a constant shift of y")
    common(sp)
    sp.add_argument("--model", help="model name in the config (default: first)")
    sp.add_argument("--shift", type=float, default=1.0)
    sp.add_argument("--mu1", type=float)
    sp.add_argument("--mu2", type=float)
    sp.set_defaults(func=cmd_baseline_shift)

    sp = sub.add_parser("default-config", help="print the default experiment config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_default_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
