"""Evaluation sweeps over (BPP config, pe_train, pe_test, seed) grids."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from ..link import ChannelConfig
from ..metrics import psnr_from_mse
from ..nn import ModelParams
from ..seeding import derive_seed
from .data import Dataset
from .transmit import interleaver_for, transmit_image

CSV_COLUMNS = (
    "image_id", "dataset", "bpp_r", "bpp_c", "bpp_s", "bpp_total", "pe_train", "pe_test", "seed",
    "psnr_db", "ssim", "ms_ssim", "ms_ssim_db", "psnr_base_db", "ones_density_pre", "ones_density_post",
    "density_correlation", "blocks_hit", "ones_flipped",
)
MEAN_ID = "__mean__"
ABSENT_ID = "__absent__"
_NUMERIC = CSV_COLUMNS[2:]

ModelKey = tuple[str, float, int]  # (bpp label, pe_train, seed)


class IncompleteModelMap(KeyError):
    pass


@dataclass(frozen=True)
class SweepGrid:
    bpps: tuple[str, ...]
    pe_train: tuple[float, ...]
    pe_test: tuple[float, ...]
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        for name in ("bpps", "pe_train", "pe_test", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"sweep grid axis {name!r} is empty")

    def model_keys(self) -> list[ModelKey]:
        return [(b, float(p), int(s)) for b in self.bpps for p in self.pe_train for s in self.seeds]


@dataclass
class SweepReport:
    rows: list[dict]
    table: list[dict] = field(default_factory=list)
    missing: list[ModelKey] = field(default_factory=list)

    def csv_text(self) -> str:
        return _to_csv(CSV_COLUMNS, self.rows)

    def table_text(self) -> str:
        cols = list(self.table[0]) if self.table else ["bpp", "pe_train"]
        return _to_csv(cols, self.table)

    def write(self, path) -> tuple[Path, Path]:
        path = Path(path)
        table_path = path.with_name(path.stem + "_table.csv")
        path.write_text(self.csv_text())
        table_path.write_text(self.table_text())
        return path, table_path


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def _to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def delta(psnr_clean: float, psnr_noisy: float) -> float:
    """Robustness gap: PSNR at the cleanest pe_test minus PSNR at the noisiest."""
    return float(psnr_clean) - float(psnr_noisy)


def channel_seed(root: int, image_id: str) -> int:
    return derive_seed(root, "channel", image_id)


def record_row(rec, bpp_label: str) -> dict:
    st = rec.latent_stats
    return {
        "image_id": rec.image_id, "dataset": rec.dataset, "bpp_r": rec.bpp.bpp_r, "bpp_c": rec.bpp.bpp_c,
        "bpp_s": rec.bpp.bpp_s, "bpp_total": rec.bpp.bpp_total, "pe_train": float(rec.pe_train),
        "pe_test": float(rec.pe_test), "seed": rec.seed, "psnr_db": rec.psnr_db, "ssim": rec.ssim,
        "ms_ssim": rec.ms_ssim, "ms_ssim_db": rec.ms_ssim_db, "psnr_base_db": rec.psnr_base_db,
        "ones_density_pre": st.ones_density_pre, "ones_density_post": st.ones_density_post,
        "density_correlation": st.local_density_correlation, "blocks_hit": rec.blocks_hit,
        "ones_flipped": rec.ones_flipped, "_bpp": bpp_label,
    }


def evaluate(dataset: Dataset, base: ModelParams | None, enh: ModelParams, channel: ChannelConfig,
             seed: int = 0, jobs: int = 1, interleaver_scheme: str | None = None):
    """transmit_image over every image of ``dataset``; results in dataset order."""
    spec = interleaver_for(enh, channel, interleaver_scheme, derive_seed(seed, "interleaver"))

    def one(i: int):
        s = None if dataset.labels is None else dataset.labels[i]
        ch = channel.with_seed(channel_seed(seed, dataset.ids[i]))
        return transmit_image(dataset.images[i], s, base, enh, ch, spec, dataset.ids[i], dataset.name, seed)

    if jobs <= 1:
        return [one(i) for i in range(len(dataset))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(dataset))))


def _aggregate(rows: list[dict]) -> dict:
    out = {c: None for c in CSV_COLUMNS}
    first = rows[0]
    out.update(image_id=MEAN_ID, dataset=first["dataset"], pe_train=first["pe_train"],
               pe_test=first["pe_test"], seed=len({r["seed"] for r in rows}))
    for c in _NUMERIC:
        if c in ("pe_train", "pe_test", "seed"):
            continue
        out[c] = float(np.mean([float(r[c]) for r in rows]))
    out["_bpp"] = first["_bpp"]
    out["_psnr_of_mean_mse"] = psnr_from_mse(float(np.mean([255.0 ** 2 / 10 ** (r["psnr_db"] / 10) for r in rows])))
    return out


def sweep(dataset: Dataset, grid: SweepGrid, models: Mapping[ModelKey, tuple[ModelParams | None, ModelParams]],
          channel: ChannelConfig = ChannelConfig(block_bytes=1), jobs: int = 1) -> SweepReport:
    """Per-image rows for every grid cell, a mean row per (bpp, pe_train, pe_test), and a summary table.

    The aggregate ``seed`` column holds the number of seeds averaged. Missing
    models produce one ``__absent__`` row per cell and are listed in
    ``report.missing``.
    """
    rows: list[dict] = []
    means: dict[tuple, dict] = {}
    missing: list[ModelKey] = []
    for b in grid.bpps:
        for pt in grid.pe_train:
            for pz in grid.pe_test:
                cell: list[dict] = []
                for sd in grid.seeds:
                    key = (b, float(pt), int(sd))
                    if key not in models:
                        if key not in missing:
                            missing.append(key)
                        rows.append({"image_id": ABSENT_ID, "dataset": dataset.name, "pe_train": float(pt),
                                     "pe_test": float(pz), "seed": int(sd), "_bpp": b})
                        continue
                    base, enh = models[key]
                    results = evaluate(dataset, base, enh, replace(channel, pe=float(pz)), sd, jobs)
                    cell += [record_row(r.record, b) for r in results]
                rows += cell
                if cell:
                    agg = _aggregate(cell)
                    rows.append(agg)
                    means[(b, float(pt), float(pz))] = agg
    return SweepReport(rows, _table(grid, means), missing)


def _table(grid: SweepGrid, means: dict) -> list[dict]:
    """One line per (bpp, pe_train): PSNR per pe_test, the Delta gap and PSNR(x, x')."""
    lo, hi = min(grid.pe_test), max(grid.pe_test)
    table = []
    for b in grid.bpps:
        for pt in grid.pe_train:
            cells = {pz: means.get((b, float(pt), float(pz))) for pz in grid.pe_test}
            if any(v is None for v in cells.values()):
                continue
            line = {"bpp": b, "bpp_total": cells[lo]["bpp_total"], "pe_train": float(pt)}
            for pz, agg in cells.items():
                line[f"psnr_pe{_fmt(float(pz))}"] = agg["psnr_db"]
            line["delta"] = delta(cells[lo]["psnr_db"], cells[hi]["psnr_db"])
            line["psnr_base_db"] = cells[lo]["psnr_base_db"]
            for pz, agg in cells.items():
                line[f"psnr_of_mean_mse_pe{_fmt(float(pz))}"] = agg["_psnr_of_mean_mse"]
            table.append(line)
    return table
