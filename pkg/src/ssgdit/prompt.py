"""End-to-end visual-prompt synthesis.

Composes the mask pipeline with the pixel kernels: response masks from the
feature bundle, differentiated preprocessing and probabilistic-OR fusion,
bicubic upsampling to image resolution, linear normalization into an alpha
channel, and foreground/background compositing of the image over its own
Gaussian-blurred copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bundle import FeatureBundle
from .errors import ValidationError
from .image import Image, alpha_blend, gaussian_blur
from .masks import (
    GuidanceMask,
    ScoreMask,
    bicubic_upsample,
    fuse_guidance,
    response_masks,
    to_guidance,
)
from .validation import check_positive


@dataclass(frozen=True)
class PromptParams:
    """Knobs for prompt synthesis.

    ``blur_sigma`` of ``None`` resolves to 0.02 * min(h, w) with a floor of
    3 px, so background suppression scales with resolution.
    """

    gamma: float = 2.0
    pool: bool = True
    blur_sigma: float | None = None
    eps: float = 1e-12
    branches: str = "both"

    def __post_init__(self):
        check_positive(self.gamma, "PromptParams.gamma")
        check_positive(self.eps, "PromptParams.eps")
        if self.blur_sigma is not None:
            check_positive(self.blur_sigma, "PromptParams.blur_sigma")
        if self.branches not in ("both", "attn", "mlp"):
            raise ValidationError(f"PromptParams.branches: unknown mode {self.branches!r}")

    def resolve_blur_sigma(self, h: int, w: int) -> float:
        if self.blur_sigma is not None:
            return self.blur_sigma
        return max(3.0, 0.02 * min(h, w))


@dataclass(frozen=True)
class PromptResult:
    """Prompt image plus every intermediate, for inspection and dumping."""

    prompt: Image
    mask: GuidanceMask
    m_attn: ScoreMask = field(repr=False, default=None)
    m_mlp: ScoreMask = field(repr=False, default=None)
    fused: ScoreMask = field(repr=False, default=None)
    upsampled: ScoreMask = field(repr=False, default=None)
    background: Image = field(repr=False, default=None)


def make_prompt(
    img: Image,
    bundle: FeatureBundle,
    params: PromptParams = PromptParams(),
    forced_mask: GuidanceMask | None = None,
) -> PromptResult:
    """Build the spatially aware visual prompt for ``img``.

    ``forced_mask`` bypasses mask computation entirely (the blend still
    runs); it exists so tests can pin the alpha channel to 0 or 1 and check
    the compositing laws in isolation.
    """
    if (bundle.image_h, bundle.image_w) != (img.h, img.w):
        raise ValidationError(
            f"bundle geometry {(bundle.image_h, bundle.image_w)} does not match "
            f"image size {(img.h, img.w)}"
        )

    m_attn = m_mlp = fused = upsampled = None
    if forced_mask is None:
        m_attn, m_mlp = response_masks(bundle)
        fused = fuse_guidance(
            m_attn,
            m_mlp,
            gamma=params.gamma,
            pool=params.pool,
            eps=params.eps,
            branches=params.branches,
        )
        upsampled = bicubic_upsample(fused, img.h, img.w)
        mask = to_guidance(upsampled, params.eps)
    else:
        if (forced_mask.h, forced_mask.w) != (img.h, img.w):
            raise ValidationError(
                f"forced mask {(forced_mask.h, forced_mask.w)} does not match image "
                f"{(img.h, img.w)}"
            )
        mask = forced_mask

    background = gaussian_blur(img, params.resolve_blur_sigma(img.h, img.w))
    prompt = alpha_blend(img, background, mask)
    return PromptResult(
        prompt=prompt,
        mask=mask,
        m_attn=m_attn,
        m_mlp=m_mlp,
        fused=fused,
        upsampled=upsampled,
        background=background,
    )
