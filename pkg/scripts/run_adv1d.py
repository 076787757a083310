#!/usr/bin/env python3
"""1D advection-diffusion experiment: SMC vs grid oracle vs RWMH.

Writes the run artifacts plus a comparison report into --out.
"""

import argparse
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from gibbsrb.cli import main as cli  # noqa: E402


def run(seed: int, out: Path) -> None:
    cfg = str(ROOT / "configs" / "adv1d.yaml")
    cli(["run-smc", "--config", cfg, "--seed", str(seed),
         "--out", str(out / "smc"), "--verify"])
    cli(["oracle", "--config", cfg, "--seed", str(seed),
         "--grid", "60x60", "--out", str(out / "oracle")])
    cli(["run-mcmc", "--config", cfg, "--seed", str(seed),
         "--out", str(out / "mcmc")])
    cli(["compare", "--run", str(out / "smc"), "--ref", str(out / "oracle"),
         "--out", str(out / "smc_vs_oracle")])
    cli(["compare", "--run", str(out / "smc"), "--ref", str(out / "mcmc"),
         "--out", str(out / "smc_vs_mcmc")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/adv1d")
    args = ap.parse_args()
    run(args.seed, Path(args.out))
