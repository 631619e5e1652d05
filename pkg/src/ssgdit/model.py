"""Toy diffusion transformer with a dual-branch attention adapter.

The backbone is a standard pre-norm DiT: latent clips are cut into
non-overlapping spatio-temporal patches, linearly embedded, given learnable
additive positional encodings and a (sinusoidal -> MLP) timestep embedding,
then run through transformer blocks and an unpatch projection back to latent
shape.  Each block carries the adapter: a cross-attention branch over the
fused condition sequence that *shares the per-head queries* of the frozen
self-attention branch and has its own key/value projections plus a
zero-initialized output projection, so at initialization the conditioned
model reproduces the backbone bit for bit.

Everything is plain numpy with hand-derived reverse-mode gradients (linear,
softmax, layer norm, tanh); the model is small enough that a framework would
only get in the way of finite-difference verification.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .image import Image, resize_bilinear, to_gray
from .validation import check_finite

LN_EPS = 1e-6

# Geometry of the visual condition encoder: prompts are averaged to one
# channel, resized to 32x32 and cut into 8x8-pixel patches (16 tokens of 64
# raw values each).
VIS_INPUT = 32
VIS_PATCH = 8
VIS_TOKENS = (VIS_INPUT // VIS_PATCH) ** 2
VIS_RAW = VIS_PATCH * VIS_PATCH


@dataclass(frozen=True)
class ModelConfig:
    """Shapes of the latent space, the backbone, and the condition pathway."""

    frames: int = 4
    height: int = 8
    width: int = 8
    channels: int = 4
    patch: tuple[int, int, int] = (1, 2, 2)
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    ffn_mult: int = 4
    d_cond: int = 64
    n_text_tokens: int = 8
    n_visual_tokens: int = VIS_TOKENS
    n_captions: int = 9
    timesteps: int = 100

    def __post_init__(self):
        for name in (
            "frames",
            "height",
            "width",
            "channels",
            "d_model",
            "heads",
            "blocks",
            "ffn_mult",
            "d_cond",
            "n_text_tokens",
            "n_visual_tokens",
            "n_captions",
            "timesteps",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"ModelConfig.{name} must be positive")
        pt, ph, pw = self.patch
        if self.frames % pt or self.height % ph or self.width % pw:
            raise ValidationError(
                f"latent dims {(self.frames, self.height, self.width)} not divisible "
                f"by patch {self.patch}"
            )
        if self.d_model % self.heads:
            raise ValidationError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ValidationError("d_model must be even (sinusoidal timestep embedding)")
        if self.n_visual_tokens != VIS_TOKENS:
            raise ValidationError(f"n_visual_tokens is fixed at {VIS_TOKENS} by the encoder geometry")

    @property
    def n_tokens(self) -> int:
        pt, ph, pw = self.patch
        return (self.frames // pt) * (self.height // ph) * (self.width // pw)

    @property
    def d_raw(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * self.channels

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "patch": list(self.patch),
            "d_model": self.d_model,
            "heads": self.heads,
            "blocks": self.blocks,
            "ffn_mult": self.ffn_mult,
            "d_cond": self.d_cond,
            "n_text_tokens": self.n_text_tokens,
            "n_visual_tokens": self.n_visual_tokens,
            "n_captions": self.n_captions,
            "timesteps": self.timesteps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["patch"] = tuple(data["patch"])
        return cls(**data)


def is_adapter_param(name: str) -> bool:
    """Adapter tensors: cross-attention K'/V'/O' plus the visual encoder."""
    return ".cross." in name or name.startswith("visual.")


@dataclass
class SsgDitModel:
    """Named parameter tensors with an explicit frozen/trainable partition."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(default_factory=dict)

    def trainable_names(self) -> list[str]:
        return [n for n in self.params if not self.frozen.get(n, False)]

    def backbone_names(self) -> list[str]:
        return [n for n in self.params if not is_adapter_param(n)]

    def adapter_names(self) -> list[str]:
        return [n for n in self.params if is_adapter_param(n)]

    def copy(self) -> "SsgDitModel":
        return SsgDitModel(
            config=self.config,
            params={k: v.copy() for k, v in self.params.items()},
            frozen=dict(self.frozen),
        )


def sinusoidal_position_table(config: ModelConfig) -> np.ndarray:
    """(n_tokens, d_model) sin/cos features of each token's (frame, row, col).

    Used as the initialization of the learnable positional table.  The
    positional signal must survive at O(1) scale against the token content:
    the adapter's cross-attention shares the backbone's queries, and it can
    only address latent positions (and hence place content spatially) if
    those queries carry position at every noise level.
    """
    c = config
    pt, ph, pw = c.patch
    nl, nh, nw = c.frames // pt, c.height // ph, c.width // pw
    coords = np.zeros((c.n_tokens, 3))
    idx = 0
    for f in range(nl):
        for r in range(nh):
            for col in range(nw):
                coords[idx] = ((f + 0.5) / nl, (r + 0.5) / nh, (col + 0.5) / nw)
                idx += 1
    table = np.zeros((c.n_tokens, c.d_model))
    for j in range(c.d_model):
        axis = j % 3
        k = j // 6 + 1  # frequencies 1, 1, ..., 2, 2, ...
        u = 2.0 * np.pi * k * coords[:, axis]
        table[:, j] = np.sin(u) if (j // 3) % 2 == 0 else np.cos(u)
    return table


def init_model(config: ModelConfig, seed: int = 0) -> SsgDitModel:
    """Seeded initialization.

    Weights are drawn at 1/sqrt(fan_in) scale and rounded to the f32 grid so
    a freshly initialized model survives the f32 checkpoint format without
    loss.  The cross-attention output projections start at exactly zero; the
    positional table starts from an O(1) sinusoidal layout plus jitter.
    """
    rng = np.random.default_rng(seed)
    c = config

    def draw(shape, scale):
        return (rng.standard_normal(shape) * scale).astype(np.float32).astype(np.float64)

    def zeros(shape):
        return np.zeros(shape, dtype=np.float64)

    def ones(shape):
        return np.ones(shape, dtype=np.float64)

    d, dc, hidden = c.d_model, c.d_cond, c.ffn_mult * c.d_model
    pos_init = sinusoidal_position_table(c) + rng.standard_normal((c.n_tokens, d)) * 0.02
    params: dict[str, np.ndarray] = {
        "embed.w": draw((c.d_raw, d), c.d_raw**-0.5),
        "pos": pos_init.astype(np.float32).astype(np.float64),
        "time.w1": draw((d, d), d**-0.5),
        "time.b1": zeros(d),
        "time.w2": draw((d, d), d**-0.5),
        "time.b2": zeros(d),
    }
    for i in range(c.blocks):
        p = f"block{i}"
        params[f"{p}.ln1.g"] = ones(d)
        params[f"{p}.ln1.b"] = zeros(d)
        for w in ("wq", "wk", "wv", "wo"):
            params[f"{p}.self.{w}"] = draw((d, d), d**-0.5)
        params[f"{p}.cross.wk"] = draw((dc, d), dc**-0.5)
        params[f"{p}.cross.wv"] = draw((dc, d), dc**-0.5)
        params[f"{p}.cross.wo"] = zeros((d, d))
        params[f"{p}.ln2.g"] = ones(d)
        params[f"{p}.ln2.b"] = zeros(d)
        params[f"{p}.ffn.w1"] = draw((d, hidden), d**-0.5)
        params[f"{p}.ffn.b1"] = zeros(hidden)
        params[f"{p}.ffn.w2"] = draw((hidden, d), hidden**-0.5)
        params[f"{p}.ffn.b2"] = zeros(d)
    params["final_ln.g"] = ones(d)
    params["final_ln.b"] = zeros(d)
    params["unpatch.w"] = draw((d, c.d_raw), d**-0.5)
    params["text.table"] = draw((c.n_captions, c.n_text_tokens, dc), 1.0)
    params["visual.patch_w"] = draw((VIS_RAW, dc), VIS_RAW**-0.5)
    params["visual.w1"] = draw((dc, dc), dc**-0.5)
    params["visual.b1"] = zeros(dc)
    params["visual.w2"] = draw((dc, dc), dc**-0.5)
    params["visual.b2"] = zeros(dc)
    # Without a positional channel the visual tokens of a mostly-blurred
    # prompt are nearly indistinguishable and cross-attention cannot address
    # them spatially; a per-token table fixes that.  Trainable, adapter-tagged.
    params["visual.pos"] = draw((VIS_TOKENS, dc), 0.5)

    return SsgDitModel(config=c, params=params, frozen={n: False for n in params})


def freeze_backbone(model: SsgDitModel) -> SsgDitModel:
    """Exclude every backbone tensor from gradient updates; adapter stays live."""
    for name in model.params:
        model.frozen[name] = not is_adapter_param(name)
    return model


def backbone_checksum(model: SsgDitModel) -> str:
    """SHA-256 over the backbone tensors, stable across runs."""
    digest = hashlib.sha256()
    for name in sorted(model.backbone_names()):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(model.params[name]).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# patchify / unpatchify


def _patchify(z: np.ndarray, patch: tuple[int, int, int]) -> np.ndarray:
    """(B, L, H, W, C) -> (B, n_tokens, d_raw), frame-major then row-major."""
    b, length, h, w, c = z.shape
    pt, ph, pw = patch
    if length % pt or h % ph or w % pw:
        raise ValidationError(f"latent dims {(length, h, w)} not divisible by patch {patch}")
    nl, nh, nw = length // pt, h // ph, w // pw
    out = z.reshape(b, nl, pt, nh, ph, nw, pw, c)
    out = out.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return out.reshape(b, nl * nh * nw, pt * ph * pw * c)


def _unpatchify(tokens: np.ndarray, dims: tuple[int, int, int, int], patch) -> np.ndarray:
    b = tokens.shape[0]
    length, h, w, c = dims
    pt, ph, pw = patch
    nl, nh, nw = length // pt, h // ph, w // pw
    out = tokens.reshape(b, nl, nh, nw, pt, ph, pw, c)
    out = out.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return out.reshape(b, length, h, w, c)


def patchify(z: np.ndarray, patch: tuple[int, int, int]) -> np.ndarray:
    """Single-clip patchify: (L, H, W, C) -> (n_tokens, d_raw)."""
    return _patchify(z[None], patch)[0]


def unpatchify(tokens: np.ndarray, dims: tuple[int, int, int, int], patch) -> np.ndarray:
    """Exact inverse of :func:`patchify`."""
    return _unpatchify(tokens[None], dims, patch)[0]


# ---------------------------------------------------------------------------
# primitive layers (forward + backward)


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layer_norm_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    reduce_axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=reduce_axes)
    db = dy.sum(axis=reduce_axes)
    return dx, dg, db


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(da: np.ndarray, a: np.ndarray) -> np.ndarray:
    return a * (da - (da * a).sum(axis=-1, keepdims=True))


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


# ---------------------------------------------------------------------------
# attention branches


def _self_attention_forward(h: np.ndarray, wq, wk, wv, wo, heads: int):
    q, k, v = h @ wq, h @ wk, h @ wv
    qh, kh, vh = (_split_heads(a, heads) for a in (q, k, v))
    inv = (qh.shape[-1]) ** -0.5
    attn = softmax(qh @ kh.swapaxes(-1, -2) * inv)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out = merged @ wo
    cache = {"h": h, "qh": qh, "kh": kh, "vh": vh, "attn": attn, "merged": merged, "inv": inv}
    return out, cache


def _cross_attention_forward(qh: np.ndarray, cond: np.ndarray, wk, wv, wo, heads: int):
    k, v = cond @ wk, cond @ wv
    kh, vh = _split_heads(k, heads), _split_heads(v, heads)
    inv = (qh.shape[-1]) ** -0.5
    attn = softmax(qh @ kh.swapaxes(-1, -2) * inv)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out = merged @ wo
    cache = {"cond": cond, "qh": qh, "kh": kh, "vh": vh, "attn": attn, "merged": merged, "inv": inv}
    return out, cache


def self_attention(x: np.ndarray, wq, wk, wv, wo, heads: int):
    """Multi-head self-attention on a single (T, D) sequence.

    Returns ``(output, per_head_queries)``; the queries are what the cross
    branch shares.
    """
    check_finite(np.asarray(x), "self_attention input")
    out, cache = _self_attention_forward(np.asarray(x, dtype=np.float64)[None], wq, wk, wv, wo, heads)
    return out[0], cache["qh"][0]


def cross_attention(q_heads: np.ndarray, cond: np.ndarray, wk, wv, wo, heads: int):
    """Cross-attention over ``cond`` using shared per-head queries (heads, T, dk)."""
    q = np.asarray(q_heads, dtype=np.float64)[None]
    c = np.asarray(cond, dtype=np.float64)[None]
    if c.shape[-1] != wk.shape[0]:
        raise ValidationError(
            f"cross_attention: condition dim {c.shape[-1]} does not match W_K' rows {wk.shape[0]}"
        )
    out, _ = _cross_attention_forward(q, c, wk, wv, wo, heads)
    return out[0]


# ---------------------------------------------------------------------------
# transformer block


def _block_forward(x: np.ndarray, cond, params: dict, prefix: str, heads: int, trace=None):
    p = params
    h1, ln1_cache = layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    o_self, self_cache = _self_attention_forward(
        h1, p[f"{prefix}.self.wq"], p[f"{prefix}.self.wk"], p[f"{prefix}.self.wv"],
        p[f"{prefix}.self.wo"], heads,
    )
    x1 = x + o_self
    cross_cache = None
    if cond is not None:
        # Shared-query contract: the cross branch consumes the self branch's
        # per-head Q tensors from this same invocation.
        o_cross, cross_cache = _cross_attention_forward(
            self_cache["qh"], cond, p[f"{prefix}.cross.wk"], p[f"{prefix}.cross.wv"],
            p[f"{prefix}.cross.wo"], heads,
        )
        x1 = x1 + o_cross
    h2, ln2_cache = layer_norm(x1, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    u = h2 @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"]
    act = np.tanh(u)
    f = act @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]
    out = x1 + f
    if trace is not None:
        trace.append(
            {
                "q_self": self_cache["qh"],
                "q_cross": None if cross_cache is None else cross_cache["qh"],
                "attn_self": self_cache["attn"],
                "attn_cross": None if cross_cache is None else cross_cache["attn"],
            }
        )
    cache = {
        "x": x,
        "ln1": ln1_cache,
        "self": self_cache,
        "cross": cross_cache,
        "x1": x1,
        "ln2": ln2_cache,
        "h2": h2,
        "act": act,
    }
    return out, cache


def _block_backward(dout: np.ndarray, cache: dict, params: dict, prefix: str, heads: int, grads: dict):
    p = params

    def acc(name, value):
        grads[name] = grads.get(name, 0.0) + value

    # FFN residual
    dx1 = dout.copy()
    df = dout
    act, h2 = cache["act"], cache["h2"]
    acc(f"{prefix}.ffn.w2", np.einsum("bti,btj->ij", act, df))
    acc(f"{prefix}.ffn.b2", df.sum(axis=(0, 1)))
    da = df @ p[f"{prefix}.ffn.w2"].T
    du = da * (1.0 - act * act)
    acc(f"{prefix}.ffn.w1", np.einsum("bti,btj->ij", h2, du))
    acc(f"{prefix}.ffn.b1", du.sum(axis=(0, 1)))
    dh2 = du @ p[f"{prefix}.ffn.w1"].T
    dx1_ln, dg2, db2 = layer_norm_backward(dh2, cache["ln2"])
    dx1 += dx1_ln
    acc(f"{prefix}.ln2.g", dg2)
    acc(f"{prefix}.ln2.b", db2)

    dx = dx1.copy()
    dcond = None

    # cross branch (contributes gradient to the shared queries)
    sc = cache["self"]
    dqh_total = np.zeros_like(sc["qh"])
    if cache["cross"] is not None:
        cc = cache["cross"]
        do_cross = dx1
        acc(f"{prefix}.cross.wo", np.einsum("bti,btj->ij", cc["merged"], do_cross))
        dctx = _split_heads(do_cross @ p[f"{prefix}.cross.wo"].T, heads)
        da2 = dctx @ cc["vh"].swapaxes(-1, -2)
        dvh = cc["attn"].swapaxes(-1, -2) @ dctx
        ds2 = softmax_backward(da2, cc["attn"]) * cc["inv"]
        dqh_total += ds2 @ cc["kh"]
        dkh = ds2.swapaxes(-1, -2) @ cc["qh"]
        dk = _merge_heads(dkh)
        dv = _merge_heads(dvh)
        acc(f"{prefix}.cross.wk", np.einsum("bti,btj->ij", cc["cond"], dk))
        acc(f"{prefix}.cross.wv", np.einsum("bti,btj->ij", cc["cond"], dv))
        dcond = dk @ p[f"{prefix}.cross.wk"].T + dv @ p[f"{prefix}.cross.wv"].T

    # self branch
    do_self = dx1
    acc(f"{prefix}.self.wo", np.einsum("bti,btj->ij", sc["merged"], do_self))
    dctx = _split_heads(do_self @ p[f"{prefix}.self.wo"].T, heads)
    da = dctx @ sc["vh"].swapaxes(-1, -2)
    dvh = sc["attn"].swapaxes(-1, -2) @ dctx
    ds = softmax_backward(da, sc["attn"]) * sc["inv"]
    dqh_total += ds @ sc["kh"]
    dkh = ds.swapaxes(-1, -2) @ sc["qh"]
    dq = _merge_heads(dqh_total)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    h1 = sc["h"]
    acc(f"{prefix}.self.wq", np.einsum("bti,btj->ij", h1, dq))
    acc(f"{prefix}.self.wk", np.einsum("bti,btj->ij", h1, dk))
    acc(f"{prefix}.self.wv", np.einsum("bti,btj->ij", h1, dv))
    dh1 = (
        dq @ p[f"{prefix}.self.wq"].T
        + dk @ p[f"{prefix}.self.wk"].T
        + dv @ p[f"{prefix}.self.wv"].T
    )
    dx_ln, dg1, db1 = layer_norm_backward(dh1, cache["ln1"])
    dx += dx_ln
    acc(f"{prefix}.ln1.g", dg1)
    acc(f"{prefix}.ln1.b", db1)
    return dx, dcond


# ---------------------------------------------------------------------------
# condition encoders


def visual_patches(prompt: Image) -> np.ndarray:
    """Prompt image -> (VIS_TOKENS, VIS_RAW) raw patch matrix.

    Channel-averaged, resized to 32x32 (bilinear, half-pixel centers), then
    cut into 8x8 patches row-major.  This is the fixed, parameter-free part
    of the visual encoder, so datasets can precompute it.
    """
    gray = to_gray(prompt)
    small = resize_bilinear(gray, VIS_INPUT, VIS_INPUT).values[:, :, 0]
    n = VIS_INPUT // VIS_PATCH
    patches = small.reshape(n, VIS_PATCH, n, VIS_PATCH).transpose(0, 2, 1, 3)
    return patches.reshape(VIS_TOKENS, VIS_RAW)


def _visual_forward(patches: np.ndarray, params: dict):
    """(B, VIS_TOKENS, VIS_RAW) -> (B, VIS_TOKENS, d_cond) with cache."""
    p0 = patches @ params["visual.patch_w"]
    u = p0 @ params["visual.w1"] + params["visual.b1"]
    act = np.tanh(u)
    out = act @ params["visual.w2"] + params["visual.b2"] + params["visual.pos"]
    return out, {"patches": patches, "p0": p0, "act": act}


def _visual_backward(dout: np.ndarray, cache: dict, params: dict, grads: dict):
    def acc(name, value):
        grads[name] = grads.get(name, 0.0) + value

    act, p0, patches = cache["act"], cache["p0"], cache["patches"]
    acc("visual.pos", dout.sum(axis=0))
    acc("visual.w2", np.einsum("bti,btj->ij", act, dout))
    acc("visual.b2", dout.sum(axis=(0, 1)))
    da = dout @ params["visual.w2"].T
    du = da * (1.0 - act * act)
    acc("visual.w1", np.einsum("bti,btj->ij", p0, du))
    acc("visual.b1", du.sum(axis=(0, 1)))
    dp0 = du @ params["visual.w1"].T
    acc("visual.patch_w", np.einsum("bti,btj->ij", patches, dp0))


def encode_visual(model: SsgDitModel, prompt: Image) -> np.ndarray:
    """Prompt image -> (n_visual_tokens, d_cond) condition tokens."""
    patches = visual_patches(prompt)
    out, _ = _visual_forward(patches[None], model.params)
    return out[0]


def visual_tokens_linear(model: SsgDitModel, patches: np.ndarray) -> np.ndarray:
    """The patch-linear stage alone: (n_tokens, VIS_RAW) -> (n_tokens, d_cond).

    Exposed so the token-locality of the linear stage can be tested before
    the per-token perceptron mixes dimensions."""
    return patches @ model.params["visual.patch_w"]


def encode_text(model: SsgDitModel, caption_id: int) -> np.ndarray:
    """Caption id -> (n_text_tokens, d_cond) rows of the fixed token table."""
    table = model.params["text.table"]
    if not 0 <= caption_id < table.shape[0]:
        raise ValidationError(f"caption_id {caption_id} out of range [0, {table.shape[0]})")
    return table[caption_id]


def fuse_conditions(c_text: np.ndarray, c_visual: np.ndarray) -> np.ndarray:
    """Concatenate along the sequence dimension, text tokens first."""
    c_text = np.asarray(c_text, dtype=np.float64)
    c_visual = np.asarray(c_visual, dtype=np.float64)
    if c_visual.size == 0:
        return c_text.copy()
    if c_text.shape[-1] != c_visual.shape[-1]:
        raise ValidationError(
            f"fuse_conditions: dim mismatch {c_text.shape[-1]} vs {c_visual.shape[-1]}"
        )
    return np.concatenate([c_text, c_visual], axis=-2)


def build_condition(model: SsgDitModel, caption_id: int, prompt: Image) -> np.ndarray:
    """Text table row + encoded visual prompt, fused."""
    return fuse_conditions(encode_text(model, caption_id), encode_visual(model, prompt))


# ---------------------------------------------------------------------------
# full forward / backward


def embed_input(model: SsgDitModel, tokens_raw: np.ndarray) -> np.ndarray:
    """Project raw patch tokens to model width and add positional encodings."""
    tokens_raw = np.asarray(tokens_raw, dtype=np.float64)
    pos = model.params["pos"]
    if tokens_raw.shape[-2] != pos.shape[0]:
        raise ValidationError(
            f"embed_input: {tokens_raw.shape[-2]} tokens but positional table has {pos.shape[0]} rows"
        )
    return tokens_raw @ model.params["embed.w"] + pos


def _forward_batch(model: SsgDitModel, z, t, cond, need_cache: bool = False, trace=None):
    """Batched forward pass.

    ``z``: (B, L, H, W, C); ``t``: (B,) ints; ``cond``: (B, n_c, d_cond) or
    None to disable the condition path entirely.
    """
    c = model.config
    p = model.params
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= c.timesteps):
        raise ValidationError(f"timestep out of range [0, {c.timesteps})")
    check_finite(z, "latent input")

    raw = _patchify(np.asarray(z, dtype=np.float64), c.patch)
    x0 = raw @ p["embed.w"] + p["pos"]
    sin_emb = timestep_embedding(t, c.d_model)
    ut = sin_emb @ p["time.w1"] + p["time.b1"]
    at = np.tanh(ut)
    temb = at @ p["time.w2"] + p["time.b2"]
    x = x0 + temb[:, None, :]

    block_trace = [] if trace is not None else None
    block_caches = []
    for i in range(c.blocks):
        x, cache = _block_forward(x, cond, p, f"block{i}", c.heads, trace=block_trace)
        if need_cache:
            block_caches.append(cache)
    y, final_cache = layer_norm(x, p["final_ln.g"], p["final_ln.b"])
    eps_raw = y @ p["unpatch.w"]
    eps_hat = _unpatchify(eps_raw, (c.frames, c.height, c.width, c.channels), c.patch)

    if trace is not None:
        trace["blocks"] = block_trace
    if not need_cache:
        return eps_hat, None
    cache = {
        "raw": raw,
        "sin_emb": sin_emb,
        "at": at,
        "blocks": block_caches,
        "final": final_cache,
        "y": y,
        "cond": cond,
    }
    return eps_hat, cache


def dit_forward(model: SsgDitModel, z: np.ndarray, t: int, cond: np.ndarray | None = None,
                trace: dict | None = None) -> np.ndarray:
    """Predict the noise in a single latent clip at step ``t``.

    ``cond`` is a (n_cond_tokens, d_cond) fused condition sequence, or None
    to run the bare backbone (the condition path is skipped entirely).
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != model.config.latent_shape:
        raise ValidationError(
            f"latent shape {z.shape} does not match config {model.config.latent_shape}"
        )
    cond_b = None if cond is None else np.asarray(cond, dtype=np.float64)[None]
    eps_hat, _ = _forward_batch(model, z[None], np.array([t]), cond_b, trace=trace)
    return eps_hat[0]


def loss_and_grads(model: SsgDitModel, z, t, eps_target, cond, sample_weights=None):
    """Weighted mean-squared epsilon-prediction loss and gradients for every
    tensor.

    ``sample_weights`` (one scalar per batch row, default 1) rescales each
    sample's squared error; the harness passes the signal-to-noise weight
    ``(1 - abar_t) / abar_t``, which turns the epsilon objective into an
    exact clean-clip (x0) reconstruction objective.  Gradients are computed
    for the full parameter set; the optimizer decides which ones to apply.
    ``cond`` of None disables the condition path (no adapter gradients are
    produced in that case).
    """
    c = model.config
    p = model.params
    eps_hat, cache = _forward_batch(model, z, t, cond, need_cache=True)
    eps_target = np.asarray(eps_target, dtype=np.float64)
    diff = eps_hat - eps_target
    if sample_weights is None:
        w = np.ones(diff.shape[0], dtype=np.float64)
    else:
        w = np.asarray(sample_weights, dtype=np.float64)
    w_b = w.reshape((-1,) + (1,) * (diff.ndim - 1))
    loss = float(np.sum(w_b * diff * diff) / diff.size)

    grads: dict[str, np.ndarray] = {}
    d_eps_hat = (2.0 / diff.size) * w_b * diff
    d_eps_raw = _patchify(d_eps_hat, c.patch)
    grads["unpatch.w"] = np.einsum("bti,btj->ij", cache["y"], d_eps_raw)
    dy = d_eps_raw @ p["unpatch.w"].T
    dx, dgF, dbF = layer_norm_backward(dy, cache["final"])
    grads["final_ln.g"] = dgF
    grads["final_ln.b"] = dbF

    dcond_total = None
    for i in reversed(range(c.blocks)):
        dx, dcond = _block_backward(dx, cache["blocks"][i], p, f"block{i}", c.heads, grads)
        if dcond is not None:
            dcond_total = dcond if dcond_total is None else dcond_total + dcond

    # timestep pathway
    dtemb = dx.sum(axis=1)
    at, sin_emb = cache["at"], cache["sin_emb"]
    grads["time.w2"] = at.T @ dtemb
    grads["time.b2"] = dtemb.sum(axis=0)
    dat = dtemb @ p["time.w2"].T
    dut = dat * (1.0 - at * at)
    grads["time.w1"] = sin_emb.T @ dut
    grads["time.b1"] = dut.sum(axis=0)

    # embedding pathway
    grads["pos"] = dx.sum(axis=0)
    grads["embed.w"] = np.einsum("bti,btj->ij", cache["raw"], dx)

    return loss, grads, dcond_total


def condition_backward(model: SsgDitModel, dcond: np.ndarray, caption_ids, vis_cache, grads: dict):
    """Route condition-sequence gradients into the text table and visual encoder."""
    c = model.config
    d_text = dcond[:, : c.n_text_tokens, :]
    d_vis = dcond[:, c.n_text_tokens :, :]
    table_grad = grads.get("text.table")
    if table_grad is None:
        table_grad = np.zeros_like(model.params["text.table"])
    for b, cid in enumerate(np.asarray(caption_ids)):
        table_grad[int(cid)] += d_text[b]
    grads["text.table"] = table_grad
    _visual_backward(d_vis, vis_cache, model.params, grads)


def batch_loss_and_grads(model: SsgDitModel, z, t, eps_target, caption_ids=None,
                         vis_patches=None, sample_weights=None):
    """Full training-step gradient: condition built from caption ids and
    precomputed visual patch matrices, condition gradients routed back.

    Returns (loss, grads).  With ``caption_ids`` None the condition path is
    disabled (backbone pretraining mode).
    """
    if caption_ids is None:
        loss, grads, _ = loss_and_grads(model, z, t, eps_target, None, sample_weights)
        return loss, grads
    c_text = model.params["text.table"][np.asarray(caption_ids, dtype=int)]
    c_vis, vis_cache = _visual_forward(np.asarray(vis_patches, dtype=np.float64), model.params)
    cond = np.concatenate([c_text, c_vis], axis=1)
    loss, grads, dcond = loss_and_grads(model, z, t, eps_target, cond, sample_weights)
    if dcond is not None:
        condition_backward(model, dcond, caption_ids, vis_cache, grads)
    return loss, grads
