"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error,
4 checkpoint/frame mismatch, 5 incomplete model map under --strict.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .link import FrameCRCError, FrameError, FrameVersionError, frame_decode
from .metrics import latent_mosaic, psnr, to_uint8
from .nn import BASE, ENHANCEMENT, CheckpointError, ModelParams, VersionError, load_params, save_params
from .pipeline import data as D
from .pipeline import evaluation as S
from .pipeline import train as T
from .pipeline.model import synthesize_from_payload
from .pipeline.transmit import interleaver_for, receive, residual_image, transmit_image
from .seeding import derive_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MISMATCH, EXIT_INCOMPLETE = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------------


def _require_file(value: str, key: str) -> Path:
    if not value:
        raise C.ConfigError("required path is not set", key)
    p = Path(value)
    if not p.is_file():
        raise C.ConfigError(f"file {value} does not exist", key)
    return p


def _require_dir(value: str, key: str) -> Path:
    if not value:
        raise C.ConfigError("required path is not set", key)
    p = Path(value)
    if not p.is_dir():
        raise C.ConfigError(f"directory {value} does not exist", key)
    return p


def _load_model(path: Path, kind: str, key: str) -> ModelParams:
    try:
        params = load_params(path)
    except VersionError as exc:
        raise CliError(f"{key}: {exc}", EXIT_MISMATCH) from None
    except CheckpointError as exc:
        raise CliError(f"{key}: {exc}", EXIT_MISMATCH) from None
    if params.meta.get("kind") != kind:
        raise CliError(f"{key}: expected a {kind} checkpoint, found {params.meta.get('kind')!r}", EXIT_MISMATCH)
    return params


def _check_pair(base: ModelParams | None, enh: ModelParams, key: str) -> None:
    want = enh.meta.get("base_digest", "")
    if enh.meta.get("direct"):
        return
    if base is None:
        raise C.ConfigError("residual model needs paths.base_checkpoint", "paths.base_checkpoint")
    if want and want != base.digest().hex():
        raise CliError(f"{key}: enhancement model was trained on a different base model", EXIT_MISMATCH)


def _load_pair(cfg: C.RunConfig) -> tuple[ModelParams | None, ModelParams]:
    enh = _load_model(_require_file(cfg.paths.enh_checkpoint, "paths.enh_checkpoint"), ENHANCEMENT,
                      "paths.enh_checkpoint")
    base = None
    if not enh.meta.get("direct"):
        base = _load_model(_require_file(cfg.paths.base_checkpoint, "paths.base_checkpoint"), BASE,
                           "paths.base_checkpoint")
    _check_pair(base, enh, "paths.enh_checkpoint")
    return base, enh


def _datasets(cfg: C.RunConfig, split: str) -> D.Dataset:
    _require_dir(cfg.data.dir, "data.dir")
    try:
        return D.load_dataset(cfg.data.dir, cfg.data.crop, cfg.run.seed, split, cfg.data.test_count,
                              cfg.data.crops_per_image)
    except D.DatasetError as exc:
        raise C.ConfigError(str(exc), "data.dir") from None


def _out_dir(cfg: C.RunConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


class _LossLog:
    """Tab-separated, one line per epoch; the timestamp lives only in the header line."""

    def __init__(self, path: Path, command: str):
        self.path = path
        self.lines = [f"# reslink {command} {_dt.datetime.now().isoformat(timespec='seconds')}"]
        self.columns: list[str] | None = None

    def __call__(self, row: dict) -> None:
        if self.columns is None:
            self.columns = list(row)
            self.lines.append("\t".join(self.columns))
        self.lines.append("\t".join(f"{row[c]:.6g}" if isinstance(row[c], float) else str(row[c])
                                    for c in self.columns))
        self.path.write_text("\n".join(self.lines) + "\n")


# -- commands -----------------------------------------------------------------------


def cmd_train(cfg: C.RunConfig, command: str) -> int:
    out = _out_dir(cfg)
    base = None
    if command in ("train-residual", "retrain") and not cfg.train.direct:
        base = _load_model(_require_file(cfg.paths.base_checkpoint, "paths.base_checkpoint"), BASE,
                           "paths.base_checkpoint")
    train = _datasets(cfg, D.TRAIN)
    log = _LossLog(out / f"{command}.log", command)
    try:
        if command == "train-base":
            params = T.train_base(train, cfg.train_config(T.BASE_STAGE), cfg.base_config(), log)
            save_params(params, out / "base.ckpt")
        elif command == "train-residual" and cfg.train.stage == T.JOINT_STAGE:
            b, e = T.train_joint(train, cfg.train_config(), cfg.base_config(), cfg.codec_config(), log)
            save_params(b, out / "base.ckpt")
            save_params(e, out / "enh.ckpt")
        elif command == "train-residual":
            params = T.train_residual(train, base, cfg.train_config(T.RESIDUAL_STAGE), cfg.codec_config(), log)
            save_params(params, out / "enh.ckpt")
        else:
            size = cfg.train.subset_size or None
            params = T.retrain_lowdata(train, base, cfg.train_config(T.RESIDUAL_STAGE), size,
                                       cfg.codec_config(), log)
            save_params(params, out / "enh.ckpt")
    except T.TrainingDivergedError as exc:
        save_params(exc.last_good, out / "last_good.ckpt")
        raise CliError(f"pipeline.train: {exc}; last good parameters saved to last_good.ckpt", EXIT_RUNTIME) from None
    except T.ConfigError as exc:
        raise C.ConfigError(str(exc), "train") from None
    return EXIT_OK


def _metrics_files(out: Path, rec, stem: str = "metrics") -> None:
    row = S.record_row(rec, "")
    with open(out / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(S.CSV_COLUMNS)
        w.writerow([S._fmt(row[c]) for c in S.CSV_COLUMNS])


def cmd_transmit(cfg: C.RunConfig) -> int:
    base, enh = _load_pair(cfg)
    img_path = _require_file(cfg.paths.image, "paths.image")
    label = None
    if cfg.paths.label:
        label = D.to_unit(D.read_image(_require_file(cfg.paths.label, "paths.label"), 1))
    x = D.to_unit(D.read_image(img_path))
    if tuple(x.shape) != tuple(enh.meta["input_shape"]):
        raise C.ConfigError(f"image shape {x.shape} does not match model input {enh.meta['input_shape']}",
                            "paths.image")
    out = _out_dir(cfg)
    channel = cfg.channel_config().with_seed(S.channel_seed(cfg.run.seed, img_path.stem))
    spec = interleaver_for(enh, channel, None, derive_seed(cfg.run.seed, "interleaver"))
    res = transmit_image(x, label, base, enh, channel, spec, img_path.stem, Path(img_path).parent.name,
                         cfg.run.seed)
    D.write_image(out / "x_hat.ppm", to_uint8(res.x_hat))
    D.write_image(out / "x_prime.ppm", to_uint8(res.x_prime))
    D.write_image(out / "r.ppm", residual_image(res.r))
    D.write_image(out / "r_hat.ppm", residual_image(res.r_hat))
    D.write_image(out / "r_i.pgm", latent_mosaic(res.r_i))
    D.write_image(out / "r_i_post.pgm", latent_mosaic(res.r_i_post))
    if res.c_payload is not None:
        D.write_image(out / "coarse.ppm", res.c_payload)
    (out / "frame.bin").write_bytes(res.frame)
    _metrics_files(out, res.record)
    return EXIT_OK


def cmd_decode(cfg: C.RunConfig) -> int:
    base, enh = _load_pair(cfg)
    frame = _require_file(cfg.paths.frame, "paths.frame").read_bytes()
    try:
        bits, _, _ = frame_decode(frame)
    except FrameCRCError as exc:
        raise CliError(f"link.frame: {exc}", EXIT_RUNTIME) from None
    except (FrameVersionError, FrameError) as exc:
        raise CliError(f"link.frame: {exc}", EXIT_MISMATCH) from None
    if list(bits.shape) != list(enh.meta["latent_shape"]):
        raise CliError(f"frame latent {bits.shape} does not match model {enh.meta['latent_shape']}", EXIT_MISMATCH)
    if base is None:
        x_prime = np.zeros(enh.meta["input_shape"], dtype=np.float32)
    else:
        c = D.read_image(_require_file(cfg.paths.coarse, "paths.coarse"))
        s = None
        if cfg.paths.label:
            s = D.to_unit(D.read_image(_require_file(cfg.paths.label, "paths.label"), 1))[None]
        x_prime = synthesize_from_payload(base, c[None], s)[0]
    x_hat, r_hat, _ = receive(frame, x_prime, enh)
    out = _out_dir(cfg)
    D.write_image(out / "decoded.ppm", to_uint8(x_hat))
    D.write_image(out / "decoded_r_hat.ppm", residual_image(r_hat))
    return EXIT_OK


def _sweep_models(cfg: C.RunConfig):
    models, missing_files = {}, []
    cache: dict[str, ModelParams] = {}

    def get(path: str, kind: str, key: str):
        if path not in cache:
            cache[path] = _load_model(Path(path), kind, key)
        return cache[path]

    for key, (bpath, epath) in cfg.model_map().items():
        name = f"models.{key[0]}/{key[1]:g}/{key[2]}"
        if not Path(epath).is_file() or (bpath and not Path(bpath).is_file()):
            missing_files.append(name)
            continue
        enh = get(epath, ENHANCEMENT, name)
        base = get(bpath, BASE, name) if bpath else None
        _check_pair(base, enh, name)
        if abs(float(enh.meta.get("pe_train", 0.0)) - key[1]) > 1e-9:
            raise CliError(f"{name}: checkpoint was trained at pe_train={enh.meta.get('pe_train')}", EXIT_MISMATCH)
        models[key] = (base, enh)
    return models, missing_files


def cmd_sweep(cfg: C.RunConfig) -> int:
    grid = cfg.sweep_grid()
    models, missing_files = _sweep_models(cfg)
    test = _datasets(cfg, D.TEST)
    report = S.sweep(test, grid, models, cfg.channel_config(), cfg.run.jobs)
    path, _ = report.write(_out_dir(cfg) / cfg.sweep.output)
    if report.missing or missing_files:
        names = [f"{b}/{p:g}/{s}" for b, p, s in report.missing]
        msg = f"model map incomplete: {', '.join(names + missing_files)}"
        if cfg.run.strict:
            raise CliError(msg, EXIT_INCOMPLETE)
        print(f"warning: {msg}", file=sys.stderr)
    print(f"wrote {path}")
    return EXIT_OK


def _stats_for(test: D.Dataset, base, enh, cfg: C.RunConfig) -> dict:
    results = S.evaluate(test, base, enh, cfg.channel_config(), cfg.run.seed, cfg.run.jobs)
    stats = [r.record.latent_stats for r in results]
    ones_pre = sum(int((r.r_i == 255).sum()) for r in results)
    ones_post = sum(int((r.r_i_post == 255).sum()) for r in results)
    defined = [s.local_density_correlation for s in stats if s.correlation_defined]
    return {
        "images": len(results),
        "ones_density_pre": float(np.mean([s.ones_density_pre for s in stats])),
        "ones_density_post": float(np.mean([s.ones_density_post for s in stats])),
        "ones_density_ratio": ones_post / ones_pre if ones_pre else float("nan"),
        "density_correlation": float(np.mean(defined)) if defined else float("nan"),
        "correlation_defined_images": len(defined),
        "mean_run_length_zero_pre": float(np.mean([s.mean_run_length_zero for s in stats])),
        "mean_run_length_zero_post": float(np.mean([s.mean_run_length_zero_post for s in stats])),
        "psnr_db": float(np.mean([r.record.psnr_db for r in results])),
        "psnr_clean_reference_db": float(np.mean([psnr(r.x_prime, r.x_hat) for r in results])),
    }


def cmd_stats(cfg: C.RunConfig) -> int:
    base, enh = _load_pair(cfg)
    test = _datasets(cfg, D.TEST)
    report = {"pe_test": cfg.channel.pe, "residual": _stats_for(test, base, enh, cfg)}
    if cfg.paths.direct_checkpoint:
        direct = _load_model(_require_file(cfg.paths.direct_checkpoint, "paths.direct_checkpoint"), ENHANCEMENT,
                             "paths.direct_checkpoint")
        if not direct.meta.get("direct"):
            raise CliError("paths.direct_checkpoint: not a direct-coding model", EXIT_MISMATCH)
        report["direct"] = _stats_for(test, None, direct, cfg)
    out = _out_dir(cfg)
    (out / "stats.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = [f"pe_test = {cfg.channel.pe:g}"]
    for name in ("residual", "direct"):
        if name in report:
            r = report[name]
            lines.append(f"{name}: ones density {r['ones_density_pre']:.4f} -> {r['ones_density_post']:.4f} "
                         f"(ratio {r['ones_density_ratio']:.2f}), density correlation {r['density_correlation']:.3f}, "
                         f"zero runs {r['mean_run_length_zero_pre']:.2f} -> {r['mean_run_length_zero_post']:.2f}, "
                         f"PSNR {r['psnr_db']:.2f} dB")
    text = "\n".join(lines) + "\n"
    (out / "stats.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

COMMANDS = {
    "train-base": "train the base layer (CompNet, FineNet steps, discriminators)",
    "train-residual": "train the residual codec and SumNet on a frozen base layer",
    "retrain": "residual training on a low-data subset (train.subset_size)",
    "transmit": "send one image through the full chain and write all artifacts",
    "decode": "reconstruct an image from a frame file and the coarse payload",
    "sweep": "evaluate a grid of models and write the CSV report",
    "stats": "latent structure statistics before/after the channel",
}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value configuration file with sections")
    common.add_argument("--seed", type=int, help="root seed (run.seed)")
    common.add_argument("--jobs", type=int, help="evaluation workers (run.jobs)")
    common.add_argument("--out-dir", help="output directory (run.out_dir)")
    common.add_argument("--strict", action="store_true", help="exit 5 on incomplete model map")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any configuration key (repeatable)")
    parser = argparse.ArgumentParser(prog="reslink", description="Layered image transmission experiments.",
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        sub.add_parser(name, help=text, description=text, parents=[common], epilog=C.key_reference(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def resolve_config(args) -> C.RunConfig:
    path = getattr(args, "config", None)
    cfg = C.load(path) if path else C.RunConfig()
    overrides = {}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise C.ConfigError(f"expected SECTION.KEY=VALUE, got {item!r}", "--set")
        overrides[key.strip()] = value
    for flag, key in (("seed", "run.seed"), ("jobs", "run.jobs"), ("out_dir", "run.out_dir"), ("strict", "run.strict")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value)
    return C.apply_overrides(cfg, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command.startswith("train") or args.command == "retrain":
            return cmd_train(cfg, args.command)
        return {"transmit": cmd_transmit, "decode": cmd_decode, "sweep": cmd_sweep,
                "stats": cmd_stats}[args.command](cfg)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FloatingPointError, ValueError) as exc:
        print(f"error: {type(exc).__module__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
