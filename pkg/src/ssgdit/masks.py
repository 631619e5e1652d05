"""Score-mask operations: response masks, differentiated preprocessing,
probabilistic-OR fusion, and bicubic upsampling.

A :class:`ScoreMask` is any finite 2D float grid (raw response scores or an
intermediate); a :class:`GuidanceMask` is a pixel-space mask whose values are
guaranteed to lie in [0, 1].  Range bounds are postconditions of individual
operations, not of the score-mask type itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import FeatureBundle
from .errors import DegenerateInputError, ValidationError
from .validation import as_float_array, check_finite, check_range


@dataclass(frozen=True)
class ScoreMask:
    """2D float grid, row-major. Finite values; arbitrary range."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "ScoreMask.values")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"ScoreMask: expected a non-empty 2D grid, got shape {arr.shape}")
        check_finite(arr, "ScoreMask.values")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GuidanceMask:
    """Pixel-space alpha mask; every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "GuidanceMask.values")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"GuidanceMask: expected a non-empty 2D grid, got shape {arr.shape}")
        check_range(arr, "GuidanceMask.values")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


def l2_normalize(vec, eps: float = 1e-12) -> np.ndarray:
    """Scale ``vec`` to unit L2 norm; rejects near-zero vectors."""
    arr = as_float_array(vec, "l2_normalize input")
    check_finite(arr, "l2_normalize input")
    norm = float(np.linalg.norm(arr))
    if norm <= eps:
        raise DegenerateInputError(f"cannot normalize a vector with norm {norm}")
    return arr / norm


def response_masks(bundle: FeatureBundle) -> tuple[ScoreMask, ScoreMask]:
    """Dot each patch feature with the text embedding and reshape to the grid.

    Returns ``(m_attn, m_mlp)`` of shape (grid_h, grid_w).
    """
    bundle.validate()
    shape = (bundle.grid_h, bundle.grid_w)
    m_attn = (bundle.attn_feats @ bundle.text_embed).reshape(shape)
    m_mlp = (bundle.mlp_feats @ bundle.text_embed).reshape(shape)
    return ScoreMask(m_attn), ScoreMask(m_mlp)


def minmax_normalize(m: ScoreMask, eps: float = 1e-12) -> ScoreMask:
    """Map to [0, 1] via (x - min) / (max - min).

    A flat mask (max - min < eps) maps to 0.5 everywhere: neutral guidance
    rather than an error, so constant features still yield a defined prompt.
    """
    v = m.values
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < eps:
        return ScoreMask(np.full_like(v, 0.5))
    return ScoreMask((v - lo) / (hi - lo))


def enhance(m: ScoreMask, gamma: float = 2.0) -> ScoreMask:
    """Contrast enhancement ``x -> x**gamma`` on a [0, 1] mask.

    Monotone for gamma > 0, fixes both endpoints, sharpens the focal region
    for gamma > 1.
    """
    if not gamma > 0:
        raise ValidationError(f"enhance: gamma must be positive, got {gamma}")
    check_range(m.values, "enhance input")
    return ScoreMask(np.power(m.values, gamma))


def inverse_normalize(m: ScoreMask, eps: float = 1e-12) -> ScoreMask:
    """``1 - minmax_normalize(m)``: highlights what the mask scores low."""
    return ScoreMask(1.0 - minmax_normalize(m, eps).values)


def avg_pool_3x3(m: ScoreMask) -> ScoreMask:
    """Same-size 3x3 mean pooling with edge-replicate padding.

    The result is clamped into [min(m), max(m)] so pooling can never expand
    the input range (and constants are exact fixed points despite float
    rounding in the 9-term sums).
    """
    v = m.values
    padded = np.pad(v, 1, mode="edge")
    acc = np.zeros_like(v)
    for di in range(3):
        for dj in range(3):
            acc += padded[di : di + v.shape[0], dj : dj + v.shape[1]]
    out = acc / 9.0
    return ScoreMask(np.clip(out, v.min(), v.max()))


def prob_or(a: ScoreMask, b: ScoreMask) -> ScoreMask:
    """Probabilistic OR ``a + b - a*b`` of two [0, 1] masks.

    Commutative, 0 is the identity, 1 absorbs, and the result never drops
    below either input (enforced exactly against float rounding).
    """
    if a.values.shape != b.values.shape:
        raise ValidationError(
            f"prob_or: shape mismatch {a.values.shape} vs {b.values.shape}"
        )
    check_range(a.values, "prob_or first argument")
    check_range(b.values, "prob_or second argument")
    out = a.values + b.values - a.values * b.values
    out = np.maximum(out, np.maximum(a.values, b.values))
    return ScoreMask(np.minimum(out, 1.0))


def fuse_guidance(
    m_attn: ScoreMask,
    m_mlp: ScoreMask,
    gamma: float = 2.0,
    pool: bool = True,
    eps: float = 1e-12,
    branches: str = "both",
) -> ScoreMask:
    """Fuse the two response masks into a single [0, 1] guidance grid.

    The attention mask is normalized and contrast-enhanced; the MLP mask is
    inverse-normalized to surface the context it scores low; both are then
    noise-suppressed with 3x3 mean pooling (when ``pool``) and combined with
    probabilistic OR.

    ``branches`` selects "both" (default), "attn", or "mlp" - the single-
    branch modes feed one preprocessed mask straight through and exist for
    ablation experiments.
    """
    if m_attn.values.shape != m_mlp.values.shape:
        raise ValidationError(
            f"fuse_guidance: shape mismatch {m_attn.values.shape} vs {m_mlp.values.shape}"
        )
    if branches not in ("both", "attn", "mlp"):
        raise ValidationError(f"fuse_guidance: unknown branches mode {branches!r}")

    attn_branch = enhance(minmax_normalize(m_attn, eps), gamma)
    mlp_branch = inverse_normalize(m_mlp, eps)
    if pool:
        attn_branch = avg_pool_3x3(attn_branch)
        mlp_branch = avg_pool_3x3(mlp_branch)
    if branches == "attn":
        return attn_branch
    if branches == "mlp":
        return mlp_branch
    return prob_or(attn_branch, mlp_branch)


def _cubic_weights(frac: np.ndarray) -> np.ndarray:
    """Cubic-convolution weights (a = -0.5) for the four taps around each
    sample position; ``frac`` is the fractional offset in [0, 1).

    Returns shape (len(frac), 4) for taps at offsets (-1, 0, 1, 2).
    """
    a = -0.5

    def kernel(d):
        d = np.abs(d)
        out = np.zeros_like(d)
        near = d <= 1.0
        far = (d > 1.0) & (d < 2.0)
        out[near] = (a + 2.0) * d[near] ** 3 - (a + 3.0) * d[near] ** 2 + 1.0
        out[far] = a * (d[far] ** 3 - 5.0 * d[far] ** 2 + 8.0 * d[far] - 4.0)
        return out

    offsets = np.array([-1.0, 0.0, 1.0, 2.0])
    return kernel(frac[:, None] - offsets[None, :])


def _resample_axis(values: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    """1D cubic resampling along ``axis`` with edge-clamped taps."""
    in_size = values.shape[axis]
    if out_size == in_size:
        return values
    scale = in_size / out_size
    # Half-pixel alignment: destination pixel centers map to
    # (dst + 0.5) * scale - 0.5 in source coordinates.
    src = (np.arange(out_size) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    weights = _cubic_weights(frac)  # (out, 4)
    moved = np.moveaxis(values, axis, 0)  # (in, ...)
    out = np.zeros((out_size,) + moved.shape[1:], dtype=values.dtype)
    for k, off in enumerate((-1, 0, 1, 2)):
        idx = np.clip(base + off, 0, in_size - 1)
        w = weights[:, k].reshape((out_size,) + (1,) * (moved.ndim - 1))
        out += w * moved[idx]
    return np.moveaxis(out, 0, axis)


def bicubic_upsample(m: ScoreMask, out_h: int, out_w: int) -> ScoreMask:
    """Resample to (out_h, out_w) with separable cubic convolution (a = -0.5).

    Half-pixel center alignment, edge-clamped taps.  Equal sizes return the
    input bit-for-bit; constants are reproduced exactly up to the kernel's
    partition-of-unity rounding.  Output may overshoot [0, 1]; downstream
    normalization handles that.
    """
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"bicubic_upsample: target size must be >= 1, got {(out_h, out_w)}")
    out = _resample_axis(m.values, out_h, axis=0)
    out = _resample_axis(out, out_w, axis=1)
    return ScoreMask(out)


def to_guidance(m: ScoreMask, eps: float = 1e-12) -> GuidanceMask:
    """Min-max normalize into [0, 1] and type the result as guidance."""
    return GuidanceMask(minmax_normalize(m, eps).values)
