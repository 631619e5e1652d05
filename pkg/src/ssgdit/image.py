"""Float images in [0, 1] plus the pixel-space kernels the prompt pipeline
needs: separable Gaussian blur, alpha blending, bilinear resize, and 8-bit
PNG I/O at the file boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import ValidationError
from .masks import GuidanceMask
from .validation import as_float_array, check_range


@dataclass(frozen=True)
class Image:
    """(h, w, channels) float array with values in [0, 1]; 1 or 3 channels."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "Image.values")
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValidationError(f"Image: expected (h, w, 1|3), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"Image: empty image {arr.shape}")
        check_range(arr, "Image.values")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample.

    Works for any offset magnitude, including kernels wider than the image;
    degenerates to index 0 when n == 1.
    """
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _convolve_axis(values: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    n = values.shape[axis]
    radius = len(kernel) // 2
    moved = np.moveaxis(values, axis, 0)
    out = np.zeros_like(moved)
    for k, off in enumerate(range(-radius, radius + 1)):
        idx = _reflect_indices(np.arange(n) + off, n)
        out += kernel[k] * moved[idx]
    return np.moveaxis(out, 0, axis)


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur with reflect padding, kernel radius ceil(3*sigma).

    Per channel; constants are fixed points, and the output never leaves the
    input's value range (the kernel is a convex combination).
    """
    if not sigma > 0:
        raise ValidationError(f"gaussian_blur: sigma must be positive, got {sigma}")
    kernel = _gaussian_kernel(sigma)
    out = _convolve_axis(img.values, kernel, axis=0)
    out = _convolve_axis(out, kernel, axis=1)
    return Image(np.clip(out, img.values.min(), img.values.max()))


def alpha_blend(img: Image, bg: Image, mask: GuidanceMask) -> Image:
    """Per-pixel ``img * m + bg * (1 - m)``; mask 1 keeps the foreground."""
    if (img.h, img.w) != (bg.h, bg.w) or img.channels != bg.channels:
        raise ValidationError(
            f"alpha_blend: image {img.values.shape} and background {bg.values.shape} must match"
        )
    if (mask.h, mask.w) != (img.h, img.w):
        raise ValidationError(
            f"alpha_blend: mask {(mask.h, mask.w)} does not match image {(img.h, img.w)}"
        )
    m = mask.values[:, :, None]
    out = img.values * m + bg.values * (1.0 - m)
    return Image(np.clip(out, 0.0, 1.0))


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resize with half-pixel centers and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"resize_bilinear: target size must be >= 1, got {(out_h, out_w)}")

    def axis_resize(values: np.ndarray, out_size: int, axis: int) -> np.ndarray:
        in_size = values.shape[axis]
        if out_size == in_size:
            return values
        src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
        base = np.floor(src).astype(int)
        frac = src - base
        lo = np.clip(base, 0, in_size - 1)
        hi = np.clip(base + 1, 0, in_size - 1)
        moved = np.moveaxis(values, axis, 0)
        shape = (out_size,) + (1,) * (moved.ndim - 1)
        out = (1.0 - frac.reshape(shape)) * moved[lo] + frac.reshape(shape) * moved[hi]
        return np.moveaxis(out, 0, axis)

    out = axis_resize(img.values, out_h, axis=0)
    out = axis_resize(out, out_w, axis=1)
    return Image(np.clip(out, 0.0, 1.0))


def to_gray(img: Image) -> Image:
    """Channel-average to a single-channel image."""
    if img.channels == 1:
        return img
    return Image(img.values.mean(axis=2, keepdims=True))


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 0-255 with round-half-up."""
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_png(img: Image, path) -> None:
    arr = to_uint8(img.values)
    if arr.shape[2] == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def load_png(path) -> Image:
    with PILImage.open(path) as pil:
        if pil.mode not in ("L", "RGB"):
            pil = pil.convert("RGB" if pil.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image(arr)


def save_heatmap_png(values: np.ndarray, path) -> None:
    """Write a 2D float grid as a grayscale heatmap (min-max scaled)."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.full_like(v, 0.5) if hi - lo < 1e-12 else (v - lo) / (hi - lo)
    save_png(Image(scaled[:, :, None]), path)


def save_f32_sidecar(values: np.ndarray, path) -> None:
    """Raw little-endian f32 dump alongside a quantized heatmap."""
    np.ascontiguousarray(values, dtype="<f4").tofile(path)
