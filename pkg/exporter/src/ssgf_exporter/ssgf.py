"""Self-contained SSGF v1 writer.

The SSGF file layout is the only contract between this exporter and the
consumer side, so the writer is implemented here independently rather than
imported; the test suite cross-validates the bytes against the consumer's
reader.

Layout, little-endian:

    magic "SSGF" | version u32=1 | grid_h u32 | grid_w u32 | d_e u32
    | image_h u32 | image_w u32
    | attn_feats f32 x (grid_h*grid_w*d_e)
    | mlp_feats  f32 x (same)
    | text_embed f32 x d_e
    | text_len u32 | text UTF-8
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SSGF"
VERSION = 1


class SsgfError(ValueError):
    """Invalid payload handed to the writer."""


def pack_bundle(
    grid_h: int,
    grid_w: int,
    attn_feats: np.ndarray,
    mlp_feats: np.ndarray,
    text_embed: np.ndarray,
    text: str,
    image_h: int,
    image_w: int,
) -> bytes:
    """Serialize one feature bundle; validates shape, finiteness, and the
    unit-norm contract of the text embedding before writing."""
    attn = np.ascontiguousarray(attn_feats, dtype="<f4")
    mlp = np.ascontiguousarray(mlp_feats, dtype="<f4")
    embed = np.ascontiguousarray(text_embed, dtype="<f4")
    if min(grid_h, grid_w, image_h, image_w) < 1:
        raise SsgfError("all dimensions must be >= 1")
    n = grid_h * grid_w
    d_e = embed.shape[-1]
    if attn.shape != (n, d_e) or mlp.shape != (n, d_e):
        raise SsgfError(
            f"patch features must be ({n}, {d_e}); got {attn.shape} and {mlp.shape}"
        )
    for name, arr in (("attn_feats", attn), ("mlp_feats", mlp), ("text_embed", embed)):
        if not np.all(np.isfinite(arr)):
            raise SsgfError(f"{name} contains non-finite values")
    norm = float(np.linalg.norm(embed.astype(np.float64)))
    if abs(norm - 1.0) > 1e-5:
        raise SsgfError(f"text_embed must have unit L2 norm within 1e-5, got {norm}")

    text_bytes = text.encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<6I", VERSION, grid_h, grid_w, d_e, image_h, image_w),
        attn.tobytes(),
        mlp.tobytes(),
        embed.tobytes(),
        struct.pack("<I", len(text_bytes)),
        text_bytes,
    ]
    return b"".join(parts)


def write_bundle_file(path, **kwargs) -> int:
    data = pack_bundle(**kwargs)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)
