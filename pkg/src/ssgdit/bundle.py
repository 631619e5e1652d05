"""Encoder-feature interchange: the SSGF v1 binary format and synthetic bundles.

An SSGF file carries everything the prompting pipeline needs from an image
encoder: patch-level attention features, patch-level MLP features, the
normalized text embedding, and the source-image geometry.  The layout is a
fixed little-endian sequence so independently written files are comparable
byte for byte:

    magic "SSGF" | version u32=1 | grid_h u32 | grid_w u32 | d_e u32
    | image_h u32 | image_w u32
    | attn_feats  f32 x (grid_h*grid_w*d_e)
    | mlp_feats   f32 x (grid_h*grid_w*d_e)
    | text_embed  f32 x d_e
    | text_len u32 | text bytes (UTF-8)

:func:`synth_bundle` produces deterministic test bundles from a SplitMix64
stream so nothing in the primary component depends on a pretrained encoder.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .rng import SplitMix64
from .validation import check_finite, check_unit_norm

MAGIC = b"SSGF"
VERSION = 1

# Response scales used by synth_bundle, in units of min(grid_h, grid_w).
# The attention response is a tight positive bump around the requested
# center.  The MLP response is an independent, broader "core plus moat"
# pattern: high on the subject, dipping in an annulus around it, and
# recovering toward the far field.  Inverse normalization downstream then
# highlights exactly that contextual annulus (dark core, bright ring, dim
# far field), which complements the attention branch's core instead of
# duplicating or subsuming it.
ATTN_SCALE = 0.25
MLP_CORE_SCALE = 0.25
MLP_MOAT_SCALE = 0.3
_NOISE_SCALE = 0.25


@dataclass(frozen=True)
class FeatureBundle:
    """Patch features plus text embedding for one image/caption pair.

    ``attn_feats`` and ``mlp_feats`` have shape (grid_h*grid_w, d_e) in
    row-major patch order; ``text_embed`` has shape (d_e,) and unit L2 norm.
    """

    grid_h: int
    grid_w: int
    d_e: int
    image_h: int
    image_w: int
    attn_feats: np.ndarray
    mlp_feats: np.ndarray
    text_embed: np.ndarray
    text: str

    def validate(self) -> "FeatureBundle":
        for name in ("grid_h", "grid_w", "d_e", "image_h", "image_w"):
            if getattr(self, name) < 1:
                raise ValidationError(f"FeatureBundle.{name} must be >= 1")
        n = self.grid_h * self.grid_w
        for name in ("attn_feats", "mlp_feats"):
            arr = getattr(self, name)
            if arr.shape != (n, self.d_e):
                raise ValidationError(
                    f"FeatureBundle.{name}: expected shape {(n, self.d_e)}, got {arr.shape}"
                )
            check_finite(arr, f"FeatureBundle.{name}")
        if self.text_embed.shape != (self.d_e,):
            raise ValidationError(
                f"FeatureBundle.text_embed: expected shape {(self.d_e,)}, got {self.text_embed.shape}"
            )
        check_finite(self.text_embed, "FeatureBundle.text_embed")
        check_unit_norm(self.text_embed, "FeatureBundle.text_embed", tol=1e-5)
        return self


def _f32(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype="<f4")


def write_bundle(bundle: FeatureBundle, sink) -> int:
    """Serialize ``bundle`` to ``sink`` (a binary file-like); returns bytes written.

    Validates first, so a bad bundle never produces a partial file.
    """
    bundle.validate()
    text_bytes = bundle.text.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(
        struct.pack(
            "<6I",
            VERSION,
            bundle.grid_h,
            bundle.grid_w,
            bundle.d_e,
            bundle.image_h,
            bundle.image_w,
        )
    )
    buf.write(_f32(bundle.attn_feats).tobytes())
    buf.write(_f32(bundle.mlp_feats).tobytes())
    buf.write(_f32(bundle.text_embed).tobytes())
    buf.write(struct.pack("<I", len(text_bytes)))
    buf.write(text_bytes)
    data = buf.getvalue()
    sink.write(data)
    return len(data)


def _read_exact(source, count: int, what: str) -> bytes:
    data = source.read(count)
    if data is None or len(data) != count:
        raise FormatError(f"truncated SSGF stream while reading {what}")
    return data


def read_bundle(source) -> FeatureBundle:
    """Parse an SSGF v1 stream and return a validated bundle."""
    magic = _read_exact(source, 4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, grid_h, grid_w, d_e, image_h, image_w = struct.unpack(
        "<6I", _read_exact(source, 24, "header")
    )
    if version != VERSION:
        raise FormatError(f"unsupported SSGF version {version}")
    if min(grid_h, grid_w, d_e, image_h, image_w) < 1:
        raise FormatError("SSGF header contains a zero dimension")
    n = grid_h * grid_w * d_e
    attn = np.frombuffer(_read_exact(source, 4 * n, "attn_feats"), dtype="<f4")
    mlp = np.frombuffer(_read_exact(source, 4 * n, "mlp_feats"), dtype="<f4")
    embed = np.frombuffer(_read_exact(source, 4 * d_e, "text_embed"), dtype="<f4")
    (text_len,) = struct.unpack("<I", _read_exact(source, 4, "text_len"))
    text = _read_exact(source, text_len, "text").decode("utf-8")
    bundle = FeatureBundle(
        grid_h=grid_h,
        grid_w=grid_w,
        d_e=d_e,
        image_h=image_h,
        image_w=image_w,
        attn_feats=attn.astype(np.float64).reshape(grid_h * grid_w, d_e),
        mlp_feats=mlp.astype(np.float64).reshape(grid_h * grid_w, d_e),
        text_embed=embed.astype(np.float64),
        text=text,
    )
    return bundle.validate()


def load_bundle(path) -> FeatureBundle:
    with open(path, "rb") as fh:
        return read_bundle(fh)


def save_bundle(bundle: FeatureBundle, path) -> int:
    with open(path, "wb") as fh:
        return write_bundle(bundle, fh)


def synth_bundle(
    seed: int,
    grid_h: int,
    grid_w: int,
    d_e: int,
    image_h: int,
    image_w: int,
    blob_center: tuple[float, float],
) -> FeatureBundle:
    """Deterministic synthetic bundle with a controllable response pattern.

    The SplitMix64 stream seeded with ``seed`` is consumed in a fixed order:
    attention-feature noise (row-major, d_e values per patch), then MLP
    feature noise, then the raw text embedding.  The noise of each patch row
    is projected orthogonal to the text embedding and a response along the
    embedding direction is added, so the dot product of row (i, j) with the
    text embedding is an exact function of the cell's distance to
    ``blob_center``: ``exp(-d^2 / (2 sigma^2))`` with
    ``sigma = 0.25 * min(grid_h, grid_w)`` for the attention features
    (higher near the center, monotone in distance), and an independent,
    broader core-plus-moat pattern (narrow Gaussian plus one minus a wider
    Gaussian) for the MLP features.  Stored as f32, like any SSGF payload.

    ``blob_center`` is normalized ``(x, y)`` with x along grid columns.
    """
    if min(grid_h, grid_w, d_e, image_h, image_w) < 1:
        raise ValidationError("synth_bundle: all dimensions must be >= 1")
    cx, cy = blob_center
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise ValidationError(f"synth_bundle: blob_center must lie in [0,1]^2, got {blob_center}")

    stream = SplitMix64(seed)
    n = grid_h * grid_w
    attn_noise = np.array(stream.symmetric(n * d_e), dtype=np.float64).reshape(n, d_e)
    mlp_noise = np.array(stream.symmetric(n * d_e), dtype=np.float64).reshape(n, d_e)
    raw_embed = np.array(stream.symmetric(d_e), dtype=np.float64)

    norm = np.linalg.norm(raw_embed)
    if norm == 0.0:  # 2**-64 odds; regenerate deterministically
        raw_embed = np.array(stream.symmetric(d_e), dtype=np.float64)
        norm = np.linalg.norm(raw_embed)
    embed = raw_embed / norm

    rows = np.arange(grid_h, dtype=np.float64)
    cols = np.arange(grid_w, dtype=np.float64)
    # Cell (i, j) sits at continuous coordinates (j, i); the center in those
    # units is (cx*grid_w - 0.5, cy*grid_h - 0.5) so normalized 0.5 lands in
    # the middle of the grid.
    dy = rows - (cy * grid_h - 0.5)
    dx = cols - (cx * grid_w - 0.5)
    d2 = (dy[:, None] ** 2 + dx[None, :] ** 2).reshape(n)
    scale = min(grid_h, grid_w)
    attn_resp = np.exp(-d2 / (2.0 * (ATTN_SCALE * scale) ** 2))
    mlp_resp = np.exp(-d2 / (2.0 * (MLP_CORE_SCALE * scale) ** 2)) + (
        1.0 - np.exp(-d2 / (2.0 * (MLP_MOAT_SCALE * scale) ** 2))
    )

    def compose(noise: np.ndarray, response: np.ndarray) -> np.ndarray:
        ortho = noise - np.outer(noise @ embed, embed)
        return _NOISE_SCALE * ortho + response[:, None] * embed[None, :]

    # Round-trip through f32 so in-memory bundles match their serialized form
    # bit for bit.
    bundle = FeatureBundle(
        grid_h=grid_h,
        grid_w=grid_w,
        d_e=d_e,
        image_h=image_h,
        image_w=image_w,
        attn_feats=_f32(compose(attn_noise, attn_resp)).astype(np.float64),
        mlp_feats=_f32(compose(mlp_noise, mlp_resp)).astype(np.float64),
        text_embed=_f32(embed).astype(np.float64),
        text=f"synthetic blob at ({cx:g},{cy:g})",
    )
    return bundle.validate()
