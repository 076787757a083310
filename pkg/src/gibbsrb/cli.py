"""Command-line front end.

Subcommands: run-smc, run-mcmc, select-weight, oracle, compare.  Every run
is reproducible from (config file, master seed); artifacts land in the
--out directory with a JSON manifest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, build_model, build_observations, resolve_total_weight
from .diagnostics import bound_suite, h_proxy, ks_distance
from .mcmc import run_rwmh
from .oracle import grid_posterior
from .particles import ParticleSet
from .runio import (weighted_cdf_curve, write_atoms_csv, write_cdfs_csv,
                    write_history_csv, write_losses_csv, write_manifest)
from .smc import SmcConfig, run_smc
from .weights import evaluate_grid_via_smc


def _prepare(args):
    config = RunConfig.from_yaml(args.config)
    if args.seed is not None:
        config.smc = SmcConfig(**{**config.smc.__dict__, "seed": int(args.seed)})
    if getattr(args, "threads", None):
        config.smc = SmcConfig(**{**config.smc.__dict__, "threads": int(args.threads)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)
    observations = build_observations(config, model, config.smc.seed)
    return config, model, observations, out


def cmd_run_smc(args) -> int:
    config, model, observations, out = _prepare(args)
    w_total = resolve_total_weight(config, observations)
    smc_cfg = SmcConfig(**{**config.smc.__dict__, "total_weight": w_total})
    t0 = time.perf_counter()
    result = run_smc(model, observations, smc_cfg)
    wall = time.perf_counter() - t0

    result.particles.to_csv(out / "particles.csv")
    for k, snap in enumerate(result.snapshots):
        snap.to_csv(out / f"particles_iter_{k:03d}.csv")
    write_history_csv(out / "history.csv", result.history)
    write_losses_csv(out / "iteration_losses.csv", result.history)
    write_atoms_csv(out / "atoms.csv", result.surrogate)
    observations.to_csv(out / "observations.csv")
    curves = [(j, *weighted_cdf_curve(result.particles.points[:, j],
                                      result.particles.weights))
              for j in range(model.dim)]
    write_cdfs_csv(out / "marginal_cdfs.csv", curves)

    verified = None
    if args.verify:
        report = bound_suite(result, model, observations, seed=smc_cfg.seed)
        report.to_json(out / "bound_report.json")
        verified = report.passed

    write_manifest(out / "manifest.json", config=config, seed=smc_cfg.seed, extra={
        "command": "run-smc",
        "final_weight": result.final_weight,
        "iterations": result.iterations,
        "wall_time_s": wall,
        "solve_counts": result.solve_counts,
        "reduced_solves": result.surrogate.reduced_solves if result.surrogate else 0,
        "atoms": result.surrogate.n_atoms if result.surrogate else 0,
        "bound_suite_passed": verified,
        "iteration_table": [
            {"t": r.t, "w": r.w_after, "delta_w": r.delta_w, "ess": r.ess,
             "atoms_added": r.atoms_added, "acceptance_rate": r.acceptance_rate,
             "full_solves": r.full_solves} for r in result.history],
    })
    print(f"run-smc: W={result.final_weight:g} in {result.iterations} iterations, "
          f"{result.solve_counts['full']} full solves, wall {wall:.2f}s")
    if verified is False:
        print("bound suite FAILED", file=sys.stderr)
        return 1
    return 0


def cmd_run_mcmc(args) -> int:
    config, model, observations, out = _prepare(args)
    w_total = resolve_total_weight(config, observations)
    t0 = time.perf_counter()
    chain = run_rwmh(model, observations, w_total,
                     n_samples=config.mcmc.samples, burn_in=config.mcmc.burn_in,
                     step_scale=config.mcmc.step_scale, seed=config.smc.seed)
    wall = time.perf_counter() - t0
    chain.to_csv(out / "chain.csv")
    m = chain.samples.shape[0]
    curves = [(j, *weighted_cdf_curve(chain.samples[:, j], np.full(m, 1.0 / m)))
              for j in range(model.dim)]
    write_cdfs_csv(out / "marginal_cdfs.csv", curves)
    observations.to_csv(out / "observations.csv")
    write_manifest(out / "manifest.json", config=config, seed=config.smc.seed, extra={
        "command": "run-mcmc",
        "weight": w_total,
        "acceptance_rate": chain.acceptance_rate,
        "full_solves": chain.full_solves,
        "wall_time_s": wall,
    })
    print(f"run-mcmc: {m} samples, acceptance {chain.acceptance_rate:.3f}, "
          f"{chain.full_solves} full solves, wall {wall:.2f}s")
    return 0


def cmd_select_weight(args) -> int:
    config, model, observations, out = _prepare(args)
    t0 = time.perf_counter()
    sel = evaluate_grid_via_smc(model, observations, config.weight_selection, config.smc)
    wall = time.perf_counter() - t0
    with (out / "weight_table.csv").open("w") as fh:
        fh.write("weight,objective\n")
        for wv, ov in zip(sel.grid, sel.objectives):
            fh.write(f"{wv!r},{ov!r}\n")
    write_manifest(out / "manifest.json", config=config, seed=config.smc.seed, extra={
        "command": "select-weight",
        "w_final": sel.w_final, "w_opt": sel.w_opt, "w_ref": sel.w_ref,
        "n_effective": sel.n_effective, "eps_std": observations.eps_std,
        "wall_time_s": wall,
    })
    print(f"select-weight: W_final={sel.w_final:g} (W_opt={sel.w_opt:g}, "
          f"W_ref={sel.w_ref:g}), wall {wall:.2f}s")
    return 0


def cmd_oracle(args) -> int:
    config, model, observations, out = _prepare(args)
    w_total = resolve_total_weight(config, observations)
    grid = args.grid or str(config.oracle_grid)
    shape = tuple(int(g) for g in grid.lower().split("x"))
    t0 = time.perf_counter()
    post = grid_posterior(model, model.domain, w_total, shape, observations)
    wall = time.perf_counter() - t0
    post.export_marginal_cdfs(out / "marginal_cdfs.csv")
    np.save(out / "density.npy", post.density)
    with (out / "density.csv").open("w") as fh:
        fh.write(",".join(f"xi_{j + 1}" for j in range(post.dim)) + ",density\n")
        mesh = np.meshgrid(*post.axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        for row, d in zip(pts, post.density.ravel()):
            fh.write(",".join(repr(float(v)) for v in row) + f",{float(d)!r}\n")
    write_manifest(out / "manifest.json", config=config, seed=config.smc.seed, extra={
        "command": "oracle", "weight": w_total, "grid": list(shape),
        "posterior_mean": [float(v) for v in post.mean()],
        "posterior_std": [float(v) for v in post.marginal_std()],
        "wall_time_s": wall,
    })
    print(f"oracle: grid {shape}, wall {wall:.2f}s")
    return 0


def _load_run_particles(run_dir: Path) -> ParticleSet:
    return ParticleSet.from_csv(run_dir / "particles.csv")


def _load_ref(ref_dir: Path):
    manifest = json.loads((ref_dir / "manifest.json").read_text())
    if manifest.get("command") == "oracle":
        rows = (ref_dir / "marginal_cdfs.csv").read_text().strip().splitlines()[1:]
        curves: dict[int, list] = {}
        for line in rows:
            j, x, c = line.split(",")
            curves.setdefault(int(j) - 1, []).append((float(x), float(c)))
        return {"kind": "cdf_curves",
                "curves": {j: np.array(v).T for j, v in curves.items()}}
    if manifest.get("command") == "run-mcmc":
        rows = (ref_dir / "chain.csv").read_text().strip().splitlines()[1:]
        return {"kind": "samples",
                "samples": np.array([[float(v) for v in r.split(",")] for r in rows])}
    return {"kind": "particles", "particles": _load_run_particles(ref_dir)}


def cmd_compare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = [_load_run_particles(Path(r)) for r in args.run]
    ref = _load_ref(Path(args.ref))
    dim = runs[0].dim

    from .domain import ParameterDomain
    lo = np.min([r.points.min(axis=0) for r in runs], axis=0)
    hi = np.max([r.points.max(axis=0) for r in runs], axis=0)
    pad = 1e-9 + 1e-9 * (hi - lo)
    domain = ParameterDomain(lo - pad - 1e-6, hi + pad + 1e-6)

    ks = {}
    for j in range(dim):
        if ref["kind"] == "cdf_curves":
            gx, gc = ref["curves"][j]
            reference = lambda x, gx=gx, gc=gc: np.interp(x, gx, gc, left=0.0, right=1.0)
        elif ref["kind"] == "samples":
            reference = ref["samples"]
        else:
            reference = ref["particles"]
        ks[f"xi_{j + 1}"] = [ks_distance(r, reference, j) for r in runs]

    report = {"ks_per_run": ks,
              "ks_median": {k: float(np.median(v)) for k, v in ks.items()}}
    if len(runs) >= 2 and ref["kind"] == "particles":
        report["h_proxy"] = h_proxy(runs, ref["particles"], domain)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report["ks_median"], indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsrb",
                                description="Gibbs-posterior inference for PDE "
                                            "inverse problems")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", required=True, help="YAML run config")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int,
                        default=max(1, os.cpu_count() or 1),
                        help="mutation thread count (results independent of it)")

    sp = sub.add_parser("run-smc", help="adaptive SMC pipeline")
    common(sp)
    sp.add_argument("--verify", action="store_true",
                    help="audit the run with the bound suite (extra full solves)")
    sp.set_defaults(fn=cmd_run_smc)

    sp = sub.add_parser("run-mcmc", help="random-walk MH reference chain")
    common(sp)
    sp.set_defaults(fn=cmd_run_mcmc)

    sp = sub.add_parser("select-weight", help="loss-weight calibration pipeline")
    common(sp)
    sp.set_defaults(fn=cmd_select_weight)

    sp = sub.add_parser("oracle", help="tensor-grid posterior (M <= 3)")
    common(sp)
    sp.add_argument("--grid", default=None, help="e.g. 60x60")
    sp.set_defaults(fn=cmd_oracle)

    sp = sub.add_parser("compare", help="KS / h-proxy report between runs")
    sp.add_argument("--run", action="append", required=True,
                    help="run directory (repeatable)")
    sp.add_argument("--ref", required=True, help="reference run/oracle directory")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    try:
        # small dense kernels dominate; BLAS threading only adds overhead
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=1, user_api="blas")
    except ImportError:
        pass
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
