"""Synthetic training data: latent clips with a drifting Gaussian blob plus
the rendered first frame and its visual prompt.

Each sample picks one of nine anchor positions (a 3x3 grid over the latent
plane).  The caption id encodes the anchor bijectively; the latent clip is a
deterministic function of the anchor (a blob drifting linearly from it); the
first frame is rendered at image resolution with a fixed high-frequency
texture so that blurred and preserved regions of the prompt are visually
distinct; the prompt itself comes out of the full spatial-prompting
pipeline over a per-sample synthetic feature bundle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import synth_bundle
from .errors import ValidationError
from .image import Image
from .model import visual_patches
from .prompt import PromptParams, make_prompt
from .rng import SplitMix64

ANCHOR_COORDS = (0.25, 0.5, 0.75)
N_ANCHORS = 9

# Latent blob geometry.  The blob is deliberately small: its matched-filter
# SNR under forward noising drops below 1 by mid-schedule, so for most of
# the timestep range the caption (not the noised latent) is the only way to
# know where the blob is.  That is what forces the adapter to learn
# condition-driven prediction instead of free-riding on evidence that a
# sampling trajectory will not contain.
BLOB_SIGMA = 1.2
BLOB_AMPS = (0.8, -0.8, 0.8, -0.8)
DRIFT = (0.25, 0.15)  # cells per frame, (x, y)

# First-frame rendering: a bright blob (the subject) with a fainter ring
# around it (context structure), over a fixed high-frequency texture.  The
# ring sits at the radius that the MLP branch's contextual annulus
# preserves, so the fused mask keeps both cues sharp, the attention-only
# mask keeps just the blob, and the MLP-only mask keeps just the ring.
IMAGE_SIZE = 64
TEXTURE_PERIOD = 8
TEXTURE_AMP = 0.08
RENDER_BG = 0.4
RENDER_BLOB_AMP = 0.3
RENDER_BLOB_SIGMA = 5.0
RING_RADIUS_FRAC = 0.42  # of image size
RING_WIDTH = 4.0
RING_AMP = 0.18
# Each rendered cue is drawn at the anchor plus an independent uniform
# offset: the visual prompt is an imperfect spatial hint, and no single cue
# can localize the anchor below its jitter floor.  Fusing both cues averages
# two independent errors, which is what gives the fused mask its measurable
# controllability edge over either branch alone.
CUE_JITTER_PX = 12.0

# Dataset prompts use a heavy blur so masked-out regions genuinely lose
# their structure: at sigma 18 a blurred-out blob spreads to near-invisible
# amplitude, so only mask-preserved regions carry usable position signal.
# (The PromptParams default floor of 3 px is meant for large photographs,
# not 64 px renders.)
DATASET_BLUR_SIGMA = 18.0
FEATURE_GRID = 24
FEATURE_DIM = 16


@dataclass(frozen=True)
class SyntheticSample:
    """One training example: clean latent clip + conditioning inputs."""

    clip: np.ndarray  # (L, H, W, C), values in [-1, 1]
    caption_id: int
    blob_center: tuple[float, float]  # normalized (x, y)
    prompt_image: Image
    vis_patches: np.ndarray  # precomputed (n_visual_tokens, 64) patch matrix


def anchor_position(caption_id: int) -> tuple[float, float]:
    """caption id -> normalized (x, y); inverse of :func:`anchor_id`."""
    if not 0 <= caption_id < N_ANCHORS:
        raise ValidationError(f"caption_id must be in [0, {N_ANCHORS}), got {caption_id}")
    return ANCHOR_COORDS[caption_id % 3], ANCHOR_COORDS[caption_id // 3]


def anchor_id(x: float, y: float) -> int:
    return ANCHOR_COORDS.index(y) * 3 + ANCHOR_COORDS.index(x)


def render_clip(
    blob_center: tuple[float, float],
    frames: int = 4,
    height: int = 8,
    width: int = 8,
    channels: int = 4,
) -> np.ndarray:
    """Latent clip with a Gaussian blob drifting linearly from ``blob_center``."""
    cx, cy = blob_center
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    clip = np.zeros((frames, height, width, channels), dtype=np.float64)
    amps = [BLOB_AMPS[ch % len(BLOB_AMPS)] for ch in range(channels)]
    for f in range(frames):
        fy = cy * height - 0.5 + f * DRIFT[1]
        fx = cx * width - 0.5 + f * DRIFT[0]
        g = np.exp(
            -((rows[:, None] - fy) ** 2 + (cols[None, :] - fx) ** 2) / (2.0 * BLOB_SIGMA**2)
        )
        for ch in range(channels):
            clip[f, :, :, ch] = amps[ch] * g
    return np.clip(clip, -1.0, 1.0)


def decode_centroid(frame: np.ndarray) -> tuple[float, float]:
    """Matched-filter centroid of the blob in one latent frame.

    Returns normalized (x, y).  Falls back to the frame center when the
    matched energy is non-positive everywhere (e.g. pure noise).
    """
    height, width, channels = frame.shape
    amps = np.array([BLOB_AMPS[ch % len(BLOB_AMPS)] for ch in range(channels)])
    energy = (frame * amps).sum(axis=-1) / np.abs(amps).sum()
    weights = np.clip(energy, 0.0, None)
    total = weights.sum()
    if total <= 0.0:
        return 0.5, 0.5
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    cy = float((weights.sum(axis=1) * rows).sum() / total)
    cx = float((weights.sum(axis=0) * cols).sum() / total)
    return (cx + 0.5) / width, (cy + 0.5) / height


def render_frame_image(
    blob_center: tuple[float, float],
    size: int = IMAGE_SIZE,
    blob_offset: tuple[float, float] = (0.0, 0.0),
    ring_offset: tuple[float, float] = (0.0, 0.0),
) -> Image:
    """First video frame at pixel resolution: textured background, bright
    blob, and a fainter context ring around the blob.

    The offsets (pixels) displace each cue from the anchor independently;
    see ``CUE_JITTER_PX``.
    """
    cx, cy = blob_center
    rows = np.arange(size, dtype=np.float64)
    cols = np.arange(size, dtype=np.float64)
    checker = ((rows[:, None] // (TEXTURE_PERIOD // 2)) + (cols[None, :] // (TEXTURE_PERIOD // 2))) % 2
    texture = TEXTURE_AMP * (2.0 * checker - 1.0)

    def dist(off):
        return np.sqrt(
            (rows[:, None] - (cy * size - 0.5) - off[1]) ** 2
            + (cols[None, :] - (cx * size - 0.5) - off[0]) ** 2
        )
    blob = RENDER_BLOB_AMP * np.exp(-(dist(blob_offset) ** 2) / (2.0 * RENDER_BLOB_SIGMA**2))
    ring = RING_AMP * np.exp(
        -((dist(ring_offset) - RING_RADIUS_FRAC * size) ** 2) / (2.0 * RING_WIDTH**2)
    )
    return Image(np.clip(RENDER_BG + texture + blob + ring, 0.0, 1.0)[:, :, None])


def dataset_prompt_params(branches: str = "both") -> PromptParams:
    return PromptParams(blur_sigma=DATASET_BLUR_SIGMA, branches=branches)


def positional_text_table(n_captions: int, n_text_tokens: int, d_cond: int,
                          seed: int = 12345) -> np.ndarray:
    """Synthetic caption-embedding table whose rows encode the anchor position.

    The captions of this dataset name positions ("blob at upper left"), so
    their embeddings are built from sinusoidal and linear features of the
    anchor coordinates plus per-token jitter.  A position-coded table lets
    the adapter's shared key projection align caption space with the
    backbone's positional queries instead of memorizing arbitrary vectors.
    Frozen after construction, like any caption table.
    """
    rng = np.random.default_rng(seed)
    table = np.zeros((n_captions, n_text_tokens, d_cond))
    for cid in range(n_captions):
        x, y = anchor_position(cid % N_ANCHORS)
        feats = [
            np.sin(2 * np.pi * x), np.cos(2 * np.pi * x),
            np.sin(2 * np.pi * y), np.cos(2 * np.pi * y),
            np.sin(4 * np.pi * x), np.cos(4 * np.pi * x),
            np.sin(4 * np.pi * y), np.cos(4 * np.pi * y),
            2.0 * x - 1.0, 2.0 * y - 1.0,
        ]
        base = np.array([feats[i % len(feats)] for i in range(d_cond)])
        table[cid] = base[None, :] + 0.25 * rng.standard_normal((n_text_tokens, d_cond))
    return table.astype(np.float32).astype(np.float64)


def make_sample(caption_id: int, bundle_seed: int, branches: str = "both",
                frames: int = 4, height: int = 8, width: int = 8, channels: int = 4) -> SyntheticSample:
    center = anchor_position(caption_id)
    clip = render_clip(center, frames, height, width, channels)
    jitter = SplitMix64(bundle_seed ^ 0xA5A5A5A5A5A5A5A5)
    blob_offset = (CUE_JITTER_PX * jitter.next_symmetric(), CUE_JITTER_PX * jitter.next_symmetric())
    ring_offset = (CUE_JITTER_PX * jitter.next_symmetric(), CUE_JITTER_PX * jitter.next_symmetric())
    frame = render_frame_image(center, blob_offset=blob_offset, ring_offset=ring_offset)
    bundle = synth_bundle(
        seed=bundle_seed,
        grid_h=FEATURE_GRID,
        grid_w=FEATURE_GRID,
        d_e=FEATURE_DIM,
        image_h=frame.h,
        image_w=frame.w,
        blob_center=center,
    )
    prompt = make_prompt(frame, bundle, dataset_prompt_params(branches)).prompt
    return SyntheticSample(
        clip=clip,
        caption_id=caption_id,
        blob_center=center,
        prompt_image=prompt,
        vis_patches=visual_patches(prompt),
    )


def gen_dataset(seed: int, n: int, branches: str = "both") -> list[SyntheticSample]:
    """Deterministic dataset of ``n`` samples (SplitMix64-driven).

    Anchors are drawn uniformly from the 3x3 grid; each sample gets its own
    feature-bundle seed so prompts vary around the anchor's canonical
    pattern.
    """
    if n < 1:
        raise ValidationError(f"gen_dataset: n must be >= 1, got {n}")
    stream = SplitMix64(seed)
    samples = []
    for _ in range(n):
        caption_id = stream.next_index(N_ANCHORS)
        bundle_seed = stream.next_u64()
        samples.append(make_sample(caption_id, bundle_seed, branches=branches))
    return samples
