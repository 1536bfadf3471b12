"""Desk-scale trend experiments: channel-error training, residual vs direct coding, low-data retraining.

Usage:
    python3 scripts/make_desk_data.py /tmp/desk
    python3 scripts/desk_experiments.py /tmp/desk --out runs/desk [--seeds 0 1 2] [--skip-lowdata]

Checkpoints land in OUT/seed<k>/ and a summary in OUT/summary.json. Models
already present in OUT are reused, so an interrupted run resumes.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from reslink.nn import load_params, save_params
from reslink.pipeline.desk import CLEAN, DIRECT, ROBUST, DeskProtocol, lowdata_suite, robustness_gap, score, train_suite

LOWDATA_SIZES = (16, 64, None)


def _log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def _cached(path: Path, make):
    if path.is_file():
        return load_params(path)
    params = make()
    save_params(params, path)
    return params


def models_for_seed(train, protocol: DeskProtocol, seed: int, out: Path) -> dict:
    folder = out / f"seed{seed}"
    folder.mkdir(parents=True, exist_ok=True)
    names = ("base", CLEAN, ROBUST, DIRECT)
    if all((folder / f"{n}.ckpt").is_file() for n in names):
        return {n: load_params(folder / f"{n}.ckpt") for n in names}
    models = train_suite(train, protocol, seed, log=_log)
    for n, params in models.items():
        save_params(params, folder / f"{n}.ckpt")
    return models


def run(data_dir: Path, out: Path, seeds, lowdata: bool = True, protocol: DeskProtocol = DeskProtocol()) -> dict:
    train, test = protocol.datasets(data_dir)
    _log(f"{len(train)} training crops, {len(test)} test crops")
    per_seed = {}
    for seed in seeds:
        m = models_for_seed(train, protocol, seed, out)
        cells = {kind: {pe: score(test, None if kind == DIRECT else m["base"], m[kind], protocol, pe, seed)
                        for pe in protocol.pe_test} for kind in (CLEAN, ROBUST, DIRECT)}
        clean0 = cells[CLEAN][min(protocol.pe_test)]
        per_seed[seed] = {
            "delta_clean": robustness_gap(cells[CLEAN]),
            "delta_robust": robustness_gap(cells[ROBUST]),
            "psnr_mean": {k: {f"{pe:g}": c.mean for pe, c in v.items()} for k, v in cells.items()},
            "layers": {"x_hat": clean0.median, "naive_sum": float(np.median(clean0.naive)),
                       "x_prime": float(np.median(clean0.base)),
                       "sumnet_gain": float(np.median(clean0.psnr - clean0.naive)),
                       "residual_gain": float(np.median(clean0.naive - clean0.base))},
        }
        _log(f"seed {seed}: {json.dumps(per_seed[seed])}")

    summary = {"seeds": list(seeds), "per_seed": per_seed}
    if lowdata:
        seed = seeds[0]
        base = load_params(out / f"seed{seed}" / "base.ckpt")
        folder = out / f"seed{seed}"
        medians = {}
        for size in LOWDATA_SIZES:
            tag = "full" if size is None else str(size)
            enh = _cached(folder / f"lowdata_{tag}.ckpt",
                          lambda: lowdata_suite(train, base, protocol, seed, [size], _log)[size])
            cell = score(test, base, enh, protocol, 0.0, seed)
            medians[tag] = {"x_hat": cell.median, "x_prime": float(np.median(cell.base))}
        summary["lowdata"] = medians
        _log(f"low-data: {json.dumps(medians)}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data", type=Path, help="directory of PPM tiles")
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--skip-lowdata", action="store_true")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    s = run(args.data, args.out, args.seeds, not args.skip_lowdata)
    d_clean = float(np.median([v["delta_clean"] for v in s["per_seed"].values()]))
    d_robust = float(np.median([v["delta_robust"] for v in s["per_seed"].values()]))
    print(f"median delta: pe_train=0 {d_clean:.3f} dB, pe_train=8 {d_robust:.3f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
