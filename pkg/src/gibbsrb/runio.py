"""Run artifacts: CSV schemas and the JSON manifest.

All floats are written with repr (shortest round-trip form, '.' decimal),
so identical runs produce byte-identical files regardless of locale or
thread count.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

PACKAGE_VERSION = "0.1.0"


def _fmt(x) -> str:
    return repr(float(x))


def write_history_csv(path, history) -> None:
    cols = ["t", "w_before", "w_after", "delta_w", "ess", "atoms_added",
            "acceptance_rate", "e_thre", "e_max", "replay_ess",
            "full_solves", "reduced_solves", "degenerate"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in history:
            w.writerow([rec.t, _fmt(rec.w_before), _fmt(rec.w_after),
                        _fmt(rec.delta_w), _fmt(rec.ess), rec.atoms_added,
                        _fmt(rec.acceptance_rate), _fmt(rec.e_thre),
                        _fmt(rec.e_max), _fmt(rec.replay_ess),
                        rec.full_solves, rec.reduced_solves, int(rec.degenerate)])


def write_atoms_csv(path, surrogate) -> None:
    if surrogate is None:
        return
    dim = surrogate.model.dim
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["atom", *[f"xi_{j + 1}" for j in range(dim)], "full_solves"])
        for rec in surrogate.atom_records():
            w.writerow([rec["index"], *[_fmt(v) for v in rec["location"]],
                        rec["full_solves"]])


def write_losses_csv(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "particle", "surrogate_loss"])
        for rec in history:
            for i, v in enumerate(rec.losses):
                w.writerow([rec.t, i, _fmt(v)])


def write_cdfs_csv(path, curves) -> None:
    """curves: iterable of (dimension_index, x array, cdf array)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dimension", "x", "cdf"])
        for j, x, c in curves:
            for xv, cv in zip(x, c):
                w.writerow([j + 1, _fmt(xv), _fmt(cv)])


def weighted_cdf_curve(points: np.ndarray, weights: np.ndarray):
    order = np.argsort(points, kind="stable")
    x = points[order]
    c = np.cumsum(weights[order])
    return x, c / c[-1]


def write_manifest(path, *, config, seed: int, extra: dict | None = None) -> None:
    manifest = {
        "package_version": PACKAGE_VERSION,
        "created_unix": int(time.time()),
        "seed": int(seed),
        "config_digest": config.digest(),
        "config": config.to_dict(),
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text())
