#!/usr/bin/env python3
"""2D advection-diffusion experiment: weight selection, SMC at the fixed
calibrated weight, and an RWMH reference using the tempered target."""

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from gibbsrb.cli import main as cli  # noqa: E402


def run(seed: int, out: Path, select: bool) -> None:
    cfg = str(ROOT / "configs" / "adv2d.yaml")
    if select:
        cli(["select-weight", "--config", cfg, "--seed", str(seed),
             "--out", str(out / "weight_selection")])
    cli(["run-smc", "--config", cfg, "--seed", str(seed),
         "--out", str(out / "smc"), "--verify"])
    cli(["run-mcmc", "--config", cfg, "--seed", str(seed),
         "--out", str(out / "mcmc")])
    cli(["compare", "--run", str(out / "smc"), "--ref", str(out / "mcmc"),
         "--out", str(out / "smc_vs_mcmc")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/adv2d")
    ap.add_argument("--skip-selection", action="store_true",
                    help="run only at the configured fixed weight")
    args = ap.parse_args()
    run(args.seed, Path(args.out), not args.skip_selection)
