"""Patch-feature extraction from a pretrained CLIP-class model.

From the penultimate visual transformer block, two token sets are captured
with forward hooks: the output of the multi-head self-attention sublayer
(global spatial layout) and the output of the MLP sublayer (localized
semantics).  The class token is dropped and both sets are mapped through
the model's final visual layer norm and visual projection so they inhabit
the same joint space as the text embedding - patch tokens and text
embeddings have different native widths, and projecting the patches is the
minimal reconciliation that keeps the consumer dimension-agnostic.  The
caption goes through the text tower and is L2-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from transformers import CLIPImageProcessor, CLIPModel, CLIPTokenizer

from .ssgf import write_bundle_file

DEFAULT_MODEL = "openai/clip-vit-large-patch14-336"
EXPECTED_GRID = 24


class ConfigurationError(RuntimeError):
    """Model/request combination cannot produce the required geometry."""


@dataclass(frozen=True)
class ExportRequest:
    image_path: str
    text: str
    output_path: str
    model_id: str = DEFAULT_MODEL
    revision: str | None = None
    device: str = "cpu"
    expected_grid: int = EXPECTED_GRID

    def validate(self) -> "ExportRequest":
        if not self.text.strip():
            raise ConfigurationError("caption must be non-empty")
        return self


def load_model(model_id: str, revision: str | None = None, device: str = "cpu"):
    """Model + preprocessors, pinned to ``revision`` when given."""
    kwargs = {} if revision is None else {"revision": revision}
    model = CLIPModel.from_pretrained(model_id, **kwargs).to(device).eval()
    processor = CLIPImageProcessor.from_pretrained(model_id, **kwargs)
    tokenizer = CLIPTokenizer.from_pretrained(model_id, **kwargs)
    return model, processor, tokenizer


def _grid_size(model) -> int:
    vision_cfg = model.config.vision_config
    if vision_cfg.image_size % vision_cfg.patch_size:
        raise ConfigurationError(
            f"image size {vision_cfg.image_size} is not divisible by patch "
            f"size {vision_cfg.patch_size}"
        )
    return vision_cfg.image_size // vision_cfg.patch_size


def extract_features(model, processor, tokenizer, image: Image.Image, text: str):
    """Returns (attn_feats, mlp_feats, text_embed) as float32 arrays in the
    joint space: patch features (n_patches, d) and a unit-norm text vector."""
    device = next(model.parameters()).device
    pixel_values = processor(images=image, return_tensors="pt").pixel_values.to(device)

    captured: dict[str, torch.Tensor] = {}

    def capture(name):
        def hook(_module, _inputs, output):
            captured[name] = output[0] if isinstance(output, tuple) else output
        return hook

    penultimate = model.vision_model.encoder.layers[-2]
    handles = [
        penultimate.self_attn.register_forward_hook(capture("attn")),
        penultimate.mlp.register_forward_hook(capture("mlp")),
    ]
    try:
        with torch.no_grad():
            model.vision_model(pixel_values=pixel_values)
    finally:
        for handle in handles:
            handle.remove()
    if "attn" not in captured or "mlp" not in captured:
        raise ConfigurationError("hooks captured nothing; unexpected model structure")

    post_ln = model.vision_model.post_layernorm
    proj = model.visual_projection
    with torch.no_grad():
        attn_joint = proj(post_ln(captured["attn"]))[0, 1:, :]  # drop class token
        mlp_joint = proj(post_ln(captured["mlp"]))[0, 1:, :]

        encoded = tokenizer([text], padding=True, truncation=True, return_tensors="pt")
        encoded = {k: v.to(device) for k, v in encoded.items()}
        text_out = model.text_model(
            input_ids=encoded["input_ids"], attention_mask=encoded.get("attention_mask")
        )
        text_embed = model.text_projection(text_out.pooler_output)[0]
        text_embed = text_embed / text_embed.norm()

    return (
        attn_joint.cpu().numpy().astype(np.float32),
        mlp_joint.cpu().numpy().astype(np.float32),
        text_embed.cpu().numpy().astype(np.float32),
    )


def export_features(request: ExportRequest, model_bundle=None) -> int:
    """Run the full export; returns bytes written.

    ``model_bundle`` (model, processor, tokenizer) can be passed to reuse a
    loaded model across exports; otherwise the request's model id is loaded.
    """
    request.validate()
    if model_bundle is None:
        model_bundle = load_model(request.model_id, request.revision, request.device)
    model, processor, tokenizer = model_bundle

    grid = _grid_size(model)
    if grid != request.expected_grid:
        raise ConfigurationError(
            f"model yields a {grid}x{grid} patch grid, expected "
            f"{request.expected_grid}x{request.expected_grid}; use the 336 px "
            f"variant of the encoder (14 px patches) or override --grid"
        )

    with Image.open(request.image_path) as img:
        image = img.convert("RGB")
        image_w, image_h = image.size
        attn, mlp, text_embed = extract_features(model, processor, tokenizer, image, request.text)

    return write_bundle_file(
        request.output_path,
        grid_h=grid,
        grid_w=grid,
        attn_feats=attn,
        mlp_feats=mlp,
        text_embed=text_embed,
        text=request.text,
        image_h=image_h,
        image_w=image_w,
    )
