"""Spatial-signal-guided prompting and adapter-conditioned diffusion
transformer, at desk scale.

Two halves, connected by plain data:

* the prompting pipeline turns encoder patch features plus a text embedding
  into a [0, 1] guidance mask and composites a visual prompt image
  (foreground preserved, background blurred);
* a toy diffusion transformer whose blocks carry a dual-branch attention
  adapter - frozen self-attention plus trainable cross-attention over the
  fused text/visual condition, sharing the self branch's queries - trained
  with a two-phase frozen-backbone protocol.

Feature bundles travel as SSGF files, model checkpoints as SSGM files; both
formats are bit-exact and little-endian.
"""

from .bundle import FeatureBundle, load_bundle, read_bundle, save_bundle, synth_bundle, write_bundle
from .checkpoint import load_model, read_model, save_model, write_model
from .data import SyntheticSample, anchor_position, decode_centroid, gen_dataset
from .diffusion import NoiseSchedule, forward_noise, linear_schedule, sample, sample_batch
from .errors import (
    ConfigurationError,
    DegenerateInputError,
    DivergenceError,
    FormatError,
    SsgError,
    ValidationError,
)
from .estimators import SpatialPrompter, SsgDitGenerator
from .image import Image, alpha_blend, gaussian_blur, load_png, resize_bilinear, save_png
from .masks import (
    GuidanceMask,
    ScoreMask,
    avg_pool_3x3,
    bicubic_upsample,
    enhance,
    fuse_guidance,
    inverse_normalize,
    l2_normalize,
    minmax_normalize,
    prob_or,
    response_masks,
    to_guidance,
)
from .model import (
    ModelConfig,
    SsgDitModel,
    backbone_checksum,
    build_condition,
    cross_attention,
    dit_forward,
    embed_input,
    encode_text,
    encode_visual,
    freeze_backbone,
    fuse_conditions,
    init_model,
    patchify,
    self_attention,
    unpatchify,
)
from .prompt import PromptParams, PromptResult, make_prompt
from .rng import SplitMix64
from .training import (
    TrainConfig,
    TrainReport,
    controllability,
    eval_loss,
    gradcheck,
    make_val_set,
    run_ablation,
    run_protocol,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "FeatureBundle",
    "read_bundle",
    "write_bundle",
    "load_bundle",
    "save_bundle",
    "synth_bundle",
    "ScoreMask",
    "GuidanceMask",
    "Image",
    "PromptParams",
    "PromptResult",
    "l2_normalize",
    "response_masks",
    "minmax_normalize",
    "enhance",
    "inverse_normalize",
    "avg_pool_3x3",
    "prob_or",
    "fuse_guidance",
    "bicubic_upsample",
    "to_guidance",
    "gaussian_blur",
    "alpha_blend",
    "resize_bilinear",
    "load_png",
    "save_png",
    "make_prompt",
    "ModelConfig",
    "SsgDitModel",
    "init_model",
    "freeze_backbone",
    "backbone_checksum",
    "patchify",
    "unpatchify",
    "embed_input",
    "self_attention",
    "cross_attention",
    "encode_text",
    "encode_visual",
    "fuse_conditions",
    "build_condition",
    "dit_forward",
    "NoiseSchedule",
    "linear_schedule",
    "forward_noise",
    "sample",
    "sample_batch",
    "read_model",
    "write_model",
    "load_model",
    "save_model",
    "SyntheticSample",
    "gen_dataset",
    "anchor_position",
    "decode_centroid",
    "TrainConfig",
    "TrainReport",
    "train",
    "eval_loss",
    "make_val_set",
    "gradcheck",
    "controllability",
    "run_protocol",
    "run_ablation",
    "SpatialPrompter",
    "SsgDitGenerator",
    "SsgError",
    "ValidationError",
    "DegenerateInputError",
    "FormatError",
    "ConfigurationError",
    "DivergenceError",
    "SplitMix64",
]
