"""Sectioned ``key = value`` run configuration.

Each section is a dataclass; keys are its field names. ``[models]`` is the
one free-form section: ``<bpp>/<pe_train>/<seed> = <base ckpt>, <enh ckpt>``
(leave the base path empty for direct-coding models).
"""
from __future__ import annotations

import configparser
import io
import typing
from dataclasses import MISSING, dataclass, field, fields, replace

from .link import BBEC, ChannelConfig
from .nn import BaseConfig, CodecConfig
from .pipeline.losses import LossWeights
from .pipeline.evaluation import SweepGrid
from .pipeline.train import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, message: str, key: str = ""):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    jobs: int = 1
    out_dir: str = "out"
    strict: bool = False


@dataclass(frozen=True)
class DataSection:
    dir: str = ""
    crop: int = 32
    test_count: int = 50
    crops_per_image: int = 1


@dataclass(frozen=True)
class TrainSection:
    stage: str = "residual"
    flat_epochs: int = 10
    decay_epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 16
    pe_train: float = 0.0
    pe_jitter: bool = False
    channel_enabled: bool = True
    interleaver: str = "stride"
    rgan_steps: int = 2
    disc_scales: int = 3
    w_l1: float = 1.0
    w_ssim: float = 1.0
    w_feat: float = 1.0
    w_adv: float = 0.01
    direct: bool = False
    subset_size: int = 0  # retrain only; 0 means the whole training split


@dataclass(frozen=True)
class ChannelSection:
    model: str = BBEC
    pe: float = 0.0  # pe_test for transmit / stats
    block_bytes: int = 1


@dataclass(frozen=True)
class BaseSection:
    factor: int = 4
    compnet: str = "learned"
    comp_width: int = 16
    fine_width: int = 16
    disc_widths: tuple[int, ...] = (16, 32, 32)
    semantic: bool = False


@dataclass(frozen=True)
class CodecSection:
    widths: tuple[int, ...] = (32, 64)
    latent_channels: int = 4
    sumnet_width: int = 16
    sumnet_blocks: int = 3


@dataclass(frozen=True)
class SweepSection:
    bpps: tuple[str, ...] = ("C4",)
    pe_train: tuple[float, ...] = (0.0,)
    pe_test: tuple[float, ...] = (0.0,)
    seeds: tuple[int, ...] = (0,)
    output: str = "sweep.csv"


@dataclass(frozen=True)
class PathsSection:
    base_checkpoint: str = ""
    enh_checkpoint: str = ""
    direct_checkpoint: str = ""
    image: str = ""
    label: str = ""
    frame: str = ""
    coarse: str = ""


SECTIONS = {
    "run": RunSection, "data": DataSection, "train": TrainSection, "channel": ChannelSection,
    "base": BaseSection, "codec": CodecSection, "sweep": SweepSection, "paths": PathsSection,
}

HELP = {
    "run.seed": "root seed; every random stream is derived from it",
    "run.jobs": "worker cap for evaluation",
    "run.out_dir": "directory for all outputs",
    "run.strict": "treat an incomplete model map as an error (exit 5)",
    "data.dir": "directory of P5/P6 (or PNG) images; *_label files are semantic maps",
    "data.crop": "crop size in pixels (multiple of 8)",
    "data.test_count": "images held out for testing",
    "data.crops_per_image": "random training crops per image",
    "train.stage": "base | residual | joint",
    "train.flat_epochs": "epochs at the initial learning rate",
    "train.decay_epochs": "epochs of linear learning-rate decay",
    "train.learning_rate": "Adam step size",
    "train.batch_size": "images per step",
    "train.pe_train": "percent of ones erased per image during training",
    "train.pe_jitter": "draw pe per batch uniformly from [0, 2 pe_train]",
    "train.channel_enabled": "run the channel in the training loop",
    "train.interleaver": "stride | permutation",
    "train.rgan_steps": "number of refinement steps J",
    "train.disc_scales": "discriminator scales I",
    "train.w_l1": "weight of the L1 term",
    "train.w_ssim": "weight of the 1 - SSIM term",
    "train.w_feat": "weight of the random-feature distance",
    "train.w_adv": "weight of the adversarial generator term",
    "train.direct": "code the image itself instead of the residual",
    "train.subset_size": "retrain: training subset size (0 = all)",
    "channel.model": "BBEC | BBSC",
    "channel.pe": "percent of ones corrupted at test time",
    "channel.block_bytes": "channel block length in bytes of packed latent",
    "base.factor": "coarse image downsampling factor",
    "base.compnet": "fixed | learned",
    "base.comp_width": "CompNet hidden channels",
    "base.fine_width": "FineNet hidden channels",
    "base.disc_widths": "discriminator channel widths (three values)",
    "base.semantic": "condition on a semantic label map",
    "codec.widths": "encoder/decoder widths (two values)",
    "codec.latent_channels": "binary latent channels (rate knob)",
    "codec.sumnet_width": "SumNet hidden channels",
    "codec.sumnet_blocks": "SumNet residual blocks",
    "sweep.bpps": "labels of the BPP configurations (match [models] keys)",
    "sweep.pe_train": "pe_train axis",
    "sweep.pe_test": "pe_test axis",
    "sweep.seeds": "seed axis",
    "sweep.output": "CSV file name inside out_dir",
    "paths.base_checkpoint": "base-layer checkpoint",
    "paths.enh_checkpoint": "enhancement-layer checkpoint",
    "paths.direct_checkpoint": "direct-coding checkpoint (stats comparison)",
    "paths.image": "input image for transmit",
    "paths.label": "optional semantic map for transmit",
    "paths.frame": "latent frame file for decode",
    "paths.coarse": "coarse-image payload for decode",
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = RunSection()
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    channel: ChannelSection = ChannelSection()
    base: BaseSection = BaseSection()
    codec: CodecSection = CodecSection()
    sweep: SweepSection = SweepSection()
    paths: PathsSection = PathsSection()
    models: dict = field(default_factory=dict)  # "bpp/pe_train/seed" -> "base, enh"

    # -- views used by the pipeline ---------------------------------------

    def train_config(self, stage: str | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            stage=stage or t.stage, flat_epochs=t.flat_epochs, decay_epochs=t.decay_epochs,
            learning_rate=t.learning_rate, batch_size=t.batch_size, pe_train=t.pe_train,
            channel=ChannelConfig(self.channel.model, 0.0, self.channel.block_bytes, 0),
            channel_enabled=t.channel_enabled, interleaver=t.interleaver, pe_jitter=t.pe_jitter,
            rgan_steps=t.rgan_steps, disc_scales=t.disc_scales,
            weights=LossWeights(t.w_l1, t.w_ssim, t.w_feat, t.w_adv), seed=self.run.seed, direct=t.direct,
        )

    def channel_config(self, pe: float | None = None) -> ChannelConfig:
        c = self.channel
        return ChannelConfig(c.model, c.pe if pe is None else pe, c.block_bytes, self.run.seed)

    def base_config(self) -> BaseConfig:
        b = self.base
        return BaseConfig(3, b.factor, b.compnet, b.comp_width, b.fine_width, self.train.rgan_steps,
                          self.train.disc_scales, tuple(b.disc_widths), b.semantic)

    def codec_config(self) -> CodecConfig:
        c = self.codec
        return CodecConfig(3, tuple(c.widths), c.latent_channels, c.sumnet_width, c.sumnet_blocks)

    def sweep_grid(self) -> SweepGrid:
        s = self.sweep
        return SweepGrid(tuple(s.bpps), tuple(s.pe_train), tuple(s.pe_test), tuple(s.seeds))

    def model_map(self) -> dict[tuple[str, float, int], tuple[str, str]]:
        out = {}
        for key, value in self.models.items():
            parts = key.split("/")
            if len(parts) != 3:
                raise ConfigError("model keys look like <bpp>/<pe_train>/<seed>", f"models.{key}")
            paths = [p.strip() for p in value.split(",")]
            if len(paths) != 2:
                raise ConfigError("value must be '<base ckpt>, <enh ckpt>'", f"models.{key}")
            try:
                out[(parts[0], float(parts[1]), int(parts[2]))] = (paths[0], paths[1])
            except ValueError as exc:
                raise ConfigError(str(exc), f"models.{key}") from None
        return out


# -- (de)serialization ---------------------------------------------------------------


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_value(text: str, tp, key: str):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if tp in (int, float, str):
            return tp(text)
        if typing.get_origin(tp) is tuple:
            inner = typing.get_args(tp)[0]
            items = [t.strip() for t in text.split(",") if t.strip()]
            return tuple(inner(t) for t in items)
    except ValueError as exc:
        raise ConfigError(str(exc), key) from None
    raise ConfigError(f"unsupported type {tp}", key)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    return cp


def parse_text(text: str) -> RunConfig:
    cp = _new_parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for section in cp.sections():
        if section == "models":
            cfg = replace(cfg, models=dict(cp.items("models")))
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section)
        cfg = apply_overrides(cfg, {f"{section}.{k}": v for k, v in cp.items(section)})
    return cfg


def apply_overrides(cfg: RunConfig, values: dict[str, str]) -> RunConfig:
    """Set ``section.key`` string values, validating names and types."""
    updates: dict[str, dict] = {}
    for dotted, text in values.items():
        section, _, key = dotted.partition(".")
        if section == "models" and key:
            cfg = replace(cfg, models={**cfg.models, key: text})
            continue
        cls = SECTIONS.get(section)
        if cls is None:
            raise ConfigError("unknown section", dotted)
        hints = _hints(cls)
        if key not in hints:
            raise ConfigError("unknown key", dotted)
        updates.setdefault(section, {})[key] = _parse_value(text, hints[key], dotted)
    for section, vals in updates.items():
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **vals)})
    return cfg


def emit(cfg: RunConfig) -> str:
    cp = _new_parser()
    for name in SECTIONS:
        sec = getattr(cfg, name)
        cp[name] = {f.name: _format_value(getattr(sec, f.name)) for f in fields(sec)}
    if cfg.models:
        cp["models"] = dict(sorted(cfg.models.items()))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc.strerror}", "--config") from None


def key_reference() -> str:
    """Every key with its default and meaning, for --help."""
    lines = ["configuration keys (section.key = default):"]
    for name, cls in SECTIONS.items():
        for f in fields(cls):
            default = f.default if f.default is not MISSING else f.default_factory()
            dotted = f"{name}.{f.name}"
            lines.append(f"  {dotted} = {_format_value(default)}\n      {HELP.get(dotted, '')}")
    lines.append("  models.<bpp>/<pe_train>/<seed> = <base ckpt>, <enh ckpt>\n      sweep model map")
    return "\n".join(lines)
