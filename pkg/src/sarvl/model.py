"""Dual-tower encoders, cross-attention fusion, and the matching/vocabulary heads.

Everything here is a pure function of (ParamSet, inputs): no dropout, no hidden
state, float64 throughout. The batched `*_batch` functions carry the actual
math; the single-sample wrappers are the stable public surface. Padded key
positions are masked with -inf before the softmax, so appending padding can
never leak into valid positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ShapeError, UsageError, VocabularyError
from .params import DTYPE, ParamSet

LN_EPS = 1e-5


@dataclass
class VisualEmbedding:
    """Unit-norm global image vector plus per-patch features kept for fusion."""

    global_vec: torch.Tensor  # (d,)
    patches: torch.Tensor     # (P, d)


@dataclass
class TextEmbedding:
    global_vec: torch.Tensor  # (d,)
    tokens: torch.Tensor      # (T, d)
    attn_mask: torch.Tensor   # (T,) bool, False at padding


@dataclass
class FusedFeatures:
    token_states: torch.Tensor  # (T, d)
    summary: torch.Tensor       # (d,), state at the classification position


def _ln(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + LN_EPS) * gain + bias


def _attention(p: ParamSet, prefix: str, q_in: torch.Tensor, kv_in: torch.Tensor,
               key_mask: Optional[torch.Tensor]) -> torch.Tensor:
    """Multi-head attention; key_mask is (B, Tk) bool, False keys are excluded."""
    cfg = p.config
    b, tq, d = q_in.shape
    tk = kv_in.shape[1]
    h = cfg.num_heads
    dh = d // h

    def heads(x, t):
        return x.reshape(b, t, h, dh).transpose(1, 2)  # (B, h, T, dh)

    q = heads(q_in @ p[f"{prefix}.wq"] + p[f"{prefix}.qb"], tq)
    k = heads(kv_in @ p[f"{prefix}.wk"] + p[f"{prefix}.kb"], tk)
    v = heads(kv_in @ p[f"{prefix}.wv"] + p[f"{prefix}.vb"], tk)
    scores = q @ k.transpose(-2, -1) / dh ** 0.5  # (B, h, Tq, Tk)
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ v).transpose(1, 2).reshape(b, tq, d)
    return out @ p[f"{prefix}.wo"] + p[f"{prefix}.ob"]


def _ffn(p: ParamSet, prefix: str, x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.gelu(x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]) @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"]


def _self_block(p: ParamSet, prefix: str, x: torch.Tensor,
                key_mask: Optional[torch.Tensor]) -> torch.Tensor:
    normed = _ln(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = x + _attention(p, f"{prefix}.attn", normed, normed, key_mask)
    x = x + _ffn(p, f"{prefix}.ffn", _ln(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"]))
    return x


def _cross_block(p: ParamSet, prefix: str, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
    normed = _ln(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    x = x + _attention(p, f"{prefix}.attn", normed, memory, key_mask=None)
    x = x + _ffn(p, f"{prefix}.ffn", _ln(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"]))
    return x


def _normalize(x: torch.Tensor) -> torch.Tensor:
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True)


def patchify(tiles: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, H, W) -> (B, P, patch_size**2), row-major patch order."""
    b, h, w = tiles.shape
    ph, pw = h // patch_size, w // patch_size
    x = tiles.reshape(b, ph, patch_size, pw, patch_size)
    return x.permute(0, 1, 3, 2, 4).reshape(b, ph * pw, patch_size * patch_size)


def encode_image_batch(p: ParamSet, tiles: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (global (B, d), patches (B, P, d))."""
    cfg = p.config
    if tiles.ndim != 3:
        raise ShapeError(f"expected (B, H, W) tiles, got shape {tuple(tiles.shape)}")
    b, h, w = tiles.shape
    if h % cfg.patch_size != 0 or w % cfg.patch_size != 0:
        raise ShapeError(f"tile {h}x{w} not a multiple of patch_size {cfg.patch_size}")
    n_patches = (h // cfg.patch_size) * (w // cfg.patch_size)
    if n_patches > cfg.max_patches:
        raise ShapeError(f"{n_patches} patches exceed max_patches {cfg.max_patches}")
    x = patchify(tiles.to(DTYPE), cfg.patch_size)
    x = x @ p["vis.patch_embed.w"] + p["vis.patch_embed.b"]
    x = x + p["vis.pos"][:n_patches]
    for layer in range(cfg.num_layers):
        x = _self_block(p, f"vis.blk{layer}", x, key_mask=None)
    x = _ln(x, p["vis.ln_out.g"], p["vis.ln_out.b"])
    pooled = x.mean(dim=1)
    global_vec = _normalize(pooled @ p["vis.proj.w"] + p["vis.proj.b"])
    return global_vec, x


def encode_text_batch(p: ParamSet, ids: torch.Tensor,
                      mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Returns (global (B, d), token states (B, T, d)); mask is False at padding."""
    cfg = p.config
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ShapeError(f"expected matching (B, T) ids and mask, got {tuple(ids.shape)}")
    if ids.shape[1] > cfg.max_text_len:
        raise ShapeError(f"sequence length {ids.shape[1]} above max_text_len {cfg.max_text_len}")
    if bool((ids < 0).any()) or bool((ids >= cfg.vocab_size).any()):
        bad = int(ids[(ids < 0) | (ids >= cfg.vocab_size)][0])
        raise VocabularyError(f"token id {bad} outside vocab of {cfg.vocab_size}")
    x = p["txt.tok"][ids] + p["txt.pos"][: ids.shape[1]]
    for layer in range(cfg.num_layers):
        x = _self_block(p, f"txt.blk{layer}", x, key_mask=mask)
    x = _ln(x, p["txt.ln_out.g"], p["txt.ln_out.b"])
    global_vec = _normalize(x[:, 0] @ p["txt.proj.w"] + p["txt.proj.b"])
    return global_vec, x


def fuse_batch(p: ParamSet, patches: torch.Tensor, token_states: torch.Tensor) -> torch.Tensor:
    """Each text position attends over the patch features; returns (B, T, d)."""
    if patches.shape[-1] != token_states.shape[-1]:
        raise ShapeError(
            f"patch dim {patches.shape[-1]} does not match token dim {token_states.shape[-1]}")
    x = token_states
    for layer in range(p.config.num_layers):
        x = _cross_block(p, f"fus.blk{layer}", x, patches)
    return _ln(x, p["fus.ln_out.g"], p["fus.ln_out.b"])


def itm_logit_batch(p: ParamSet, summary: torch.Tensor) -> torch.Tensor:
    return summary @ p["itm.w"] + p["itm.b"][0]


def mlm_logits_batch(p: ParamSet, fused_states: torch.Tensor) -> torch.Tensor:
    return fused_states @ p["mlm.w"] + p["mlm.b"]


# --- single-sample public surface -------------------------------------------------


def _as_tile(tile) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(tile), dtype=DTYPE)
    if t.ndim != 2:
        raise ShapeError(f"expected a 2-d pixel grid, got shape {tuple(t.shape)}")
    return t


def encode_image(params: ParamSet, tile) -> VisualEmbedding:
    """Patch-embed, encode, and pool one tile of reals in [0, 1]."""
    global_vec, patches = encode_image_batch(params, _as_tile(tile).unsqueeze(0))
    return VisualEmbedding(global_vec=global_vec[0], patches=patches[0])


def text_attn_mask(params: ParamSet, ids: torch.Tensor) -> torch.Tensor:
    return ids != params.config.pad_token_id


def encode_text(params: ParamSet, token_ids: Sequence[int]) -> TextEmbedding:
    """Encode one id sequence; position 0 must be the classification token."""
    ids = torch.as_tensor(list(token_ids), dtype=torch.long).unsqueeze(0)
    if ids.shape[1] == 0:
        raise UsageError("cannot encode an empty token sequence")
    if int(ids[0, 0]) != params.config.cls_token_id:
        raise UsageError(f"position 0 must be the cls token {params.config.cls_token_id}")
    mask = text_attn_mask(params, ids)
    global_vec, tokens = encode_text_batch(params, ids, mask)
    return TextEmbedding(global_vec=global_vec[0], tokens=tokens[0], attn_mask=mask[0])


def fuse(params: ParamSet, visual: VisualEmbedding, text: TextEmbedding) -> FusedFeatures:
    """Cross-attention of text token states over patch features."""
    d = params.config.embed_dim
    if visual.patches.shape[-1] != d or text.tokens.shape[-1] != d:
        raise ShapeError("visual/text features do not match this ParamSet's embed_dim")
    states = fuse_batch(params, visual.patches.unsqueeze(0), text.tokens.unsqueeze(0))[0]
    return FusedFeatures(token_states=states, summary=states[0])


def itm_probability(params: ParamSet, fused: FusedFeatures) -> torch.Tensor:
    """Match probability in (0, 1) from the fused summary state."""
    return torch.sigmoid(itm_logit_batch(params, fused.summary.unsqueeze(0))[0])


def mlm_logits(params: ParamSet, masked_ids: Sequence[int], visual: VisualEmbedding) -> torch.Tensor:
    """Per-position vocabulary logits for a (possibly masked) sequence, image-conditioned."""
    text = encode_text(params, masked_ids)
    fused = fuse(params, visual, text)
    return mlm_logits_batch(params, fused.token_states.unsqueeze(0))[0]
