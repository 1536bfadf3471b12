from . import plan
from .blocks import (
    BASE,
    ENHANCEMENT,
    BaseConfig,
    CodecConfig,
    ModelParams,
    base_config,
    bresnet_decode,
    bresnet_encode,
    codec_config,
    compnet_coarse,
    discnet_scores,
    finenet_step,
    init_base,
    init_enhancement,
    sumnet,
    synthesize,
    upsample_coarse,
)
from .checkpoint import CheckpointError, ChecksumError, VersionError, load_params, save_params

__all__ = [
    "BASE",
    "ENHANCEMENT",
    "BaseConfig",
    "CheckpointError",
    "ChecksumError",
    "CodecConfig",
    "ModelParams",
    "VersionError",
    "base_config",
    "bresnet_decode",
    "bresnet_encode",
    "codec_config",
    "compnet_coarse",
    "discnet_scores",
    "finenet_step",
    "init_base",
    "init_enhancement",
    "load_params",
    "plan",
    "save_params",
    "sumnet",
    "synthesize",
    "upsample_coarse",
]
