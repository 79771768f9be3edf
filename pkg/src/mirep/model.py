"""Transformer encoder, lightweight decoder, mask embedding, losses, heads.

The encoder is a standard pre-norm stack: learned positional embeddings are
added to the tokens, each layer applies multi-head self-attention and a GELU
feed-forward block with residual connections, and a final layer norm closes
the stack.  The decoder reuses the same block at a smaller depth and ends in
a linear projection back to token space.  Losses follow the pretraining
objective exactly: mean squared reconstruction error over the masked set,
cross-entropy over pooled tokens, and their unweighted sum.

Everything here is expressed in autograd Tensors with a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, dropout, gelu, layer_norm, parameter, softmax
from .tokenizer import TokenizerConfig, tokenize

__all__ = [
    "EncoderConfig", "ModelState", "init_model", "swap_head",
    "mask_apply", "encode", "decode", "pool_tokens", "head_logits",
    "rec_loss", "ce_loss", "joint_loss",
]


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 6
    D: int = 256
    heads: int = 8
    ff_mult: int = 4
    dropout: float = 0.5
    decoder_layers: int = 2
    max_tokens: int = 64

    def __post_init__(self) -> None:
        if self.D % self.heads != 0:
            raise ValueError(f"D={self.D} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.layers, self.decoder_layers, self.max_tokens) < 1:
            raise ValueError("layers, decoder_layers and max_tokens must be >= 1")


@dataclass
class ModelState:
    """All learnable parameters plus the shape configuration that owns them."""

    tok_cfg: TokenizerConfig
    enc_cfg: EncoderConfig
    n_channels: int
    n_classes: int
    params: dict[str, Tensor] = field(default_factory=dict)
    dtype: np.dtype = np.float32


def _linear_init(rng, fan_in: int, shape, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)


def _block_params(rng, prefix: str, d: int, ff: int, dtype) -> dict[str, Tensor]:
    p = {}
    for nm in ("q", "k", "v", "o"):
        p[f"{prefix}.w{nm}"] = parameter(_linear_init(rng, d, (d, d), dtype), f"{prefix}.w{nm}")
        p[f"{prefix}.b{nm}"] = parameter(np.zeros(d, dtype), f"{prefix}.b{nm}")
    p[f"{prefix}.ln1_g"] = parameter(np.ones(d, dtype), f"{prefix}.ln1_g")
    p[f"{prefix}.ln1_b"] = parameter(np.zeros(d, dtype), f"{prefix}.ln1_b")
    p[f"{prefix}.ln2_g"] = parameter(np.ones(d, dtype), f"{prefix}.ln2_g")
    p[f"{prefix}.ln2_b"] = parameter(np.zeros(d, dtype), f"{prefix}.ln2_b")
    p[f"{prefix}.ff1_w"] = parameter(_linear_init(rng, d, (d, ff), dtype), f"{prefix}.ff1_w")
    p[f"{prefix}.ff1_b"] = parameter(np.zeros(ff, dtype), f"{prefix}.ff1_b")
    p[f"{prefix}.ff2_w"] = parameter(_linear_init(rng, ff, (ff, d), dtype), f"{prefix}.ff2_w")
    p[f"{prefix}.ff2_b"] = parameter(np.zeros(d, dtype), f"{prefix}.ff2_b")
    return p


def init_model(tok_cfg: TokenizerConfig, enc_cfg: EncoderConfig, n_channels: int,
               n_classes: int, seed: int, dtype=np.float32) -> ModelState:
    """Deterministic parameter initialization from (seed)."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D0DE1]))
    d, ff = enc_cfg.D, enc_cfg.ff_mult * enc_cfg.D
    p: dict[str, Tensor] = {}
    p["tok.temporal_w"] = parameter(
        _linear_init(rng, tok_cfg.k_t, (tok_cfg.F, tok_cfg.k_t), dtype), "tok.temporal_w")
    p["tok.temporal_b"] = parameter(np.zeros(tok_cfg.F, dtype), "tok.temporal_b")
    p["tok.spatial_w"] = parameter(
        _linear_init(rng, n_channels, (n_channels, tok_cfg.F), dtype), "tok.spatial_w")
    p["tok.spatial_b"] = parameter(np.zeros(tok_cfg.F, dtype), "tok.spatial_b")
    p["tok.proj_w"] = parameter(_linear_init(rng, tok_cfg.F, (tok_cfg.F, d), dtype), "tok.proj_w")
    p["tok.proj_b"] = parameter(np.zeros(d, dtype), "tok.proj_b")
    # positions and the [MASK] token live in content space, and content here
    # is Euclidean-aligned EEG whose tokens start tiny; a content-scale init
    # keeps early attention driven by the signal rather than by position
    p["pos"] = parameter((0.002 * rng.standard_normal((enc_cfg.max_tokens, d))).astype(dtype), "pos")
    p["mask_embedding"] = parameter((0.002 * rng.standard_normal(d)).astype(dtype), "mask_embedding")
    for i in range(enc_cfg.layers):
        p.update(_block_params(rng, f"enc{i}", d, ff, dtype))
    p["enc.final_ln_g"] = parameter(np.ones(d, dtype), "enc.final_ln_g")
    p["enc.final_ln_b"] = parameter(np.zeros(d, dtype), "enc.final_ln_b")
    for i in range(enc_cfg.decoder_layers):
        p.update(_block_params(rng, f"dec{i}", d, ff, dtype))
    p["dec.final_ln_g"] = parameter(np.ones(d, dtype), "dec.final_ln_g")
    p["dec.final_ln_b"] = parameter(np.zeros(d, dtype), "dec.final_ln_b")
    # zero-init output projection: reconstruction starts at 0 regardless of the
    # token scale, so the joint loss cannot be swamped by L_rec at step one
    p["dec.out_w"] = parameter(np.zeros((d, d), dtype), "dec.out_w")
    p["dec.out_b"] = parameter(np.zeros(d, dtype), "dec.out_b")
    p["head.w"] = parameter((0.02 * rng.standard_normal((d, n_classes))).astype(dtype), "head.w")
    p["head.b"] = parameter(np.zeros(n_classes, dtype), "head.b")
    return ModelState(tok_cfg=tok_cfg, enc_cfg=enc_cfg, n_channels=n_channels,
                      n_classes=n_classes, params=p, dtype=np.dtype(dtype))


def swap_head(state: ModelState, n_classes: int, seed: int) -> ModelState:
    """Fresh classification head for a new label set; body weights carried over."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4EAD]))
    d = state.enc_cfg.D
    params = dict(state.params)
    params["head.w"] = parameter(
        (0.02 * rng.standard_normal((d, n_classes))).astype(state.dtype), "head.w")
    params["head.b"] = parameter(np.zeros(n_classes, state.dtype), "head.b")
    return ModelState(tok_cfg=state.tok_cfg, enc_cfg=state.enc_cfg,
                      n_channels=state.n_channels, n_classes=n_classes,
                      params=params, dtype=state.dtype)


# -- forward pieces -----------------------------------------------------------


def mask_apply(tokens: Tensor, mask_bool: np.ndarray, mask_embedding: Tensor) -> Tensor:
    """Replace masked positions with the shared learnable embedding.

    mask_bool: (B, H') boolean. Original tokens stay available to the caller
    as reconstruction targets.
    """
    b, h, _ = tokens.data.shape
    if mask_bool.shape != (b, h):
        raise ValueError(f"mask shape {mask_bool.shape} does not match tokens ({b}, {h})")
    keep = Tensor((~mask_bool)[..., None].astype(tokens.data.dtype))
    fill = Tensor(mask_bool[..., None].astype(tokens.data.dtype))
    return tokens * keep + mask_embedding * fill


def _attention(x: Tensor, p: dict[str, Tensor], prefix: str, cfg: EncoderConfig,
               train: bool, rng, attn_sink: list | None) -> Tensor:
    b, h, d = x.data.shape
    nh, dh = cfg.heads, d // cfg.heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(b, h, nh, dh).transpose(0, 2, 1, 3)

    q = split(x @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"])
    k = split(x @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"])
    v = split(x @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"])
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(attn.data.copy())
    attn = dropout(attn, cfg.dropout, rng, train)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, h, d)
    return ctx @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]


def _block(x: Tensor, p: dict[str, Tensor], prefix: str, cfg: EncoderConfig,
           train: bool, rng, attn_sink: list | None) -> Tensor:
    hn = layer_norm(x, p[f"{prefix}.ln1_g"], p[f"{prefix}.ln1_b"])
    x = x + dropout(_attention(hn, p, prefix, cfg, train, rng, attn_sink),
                    cfg.dropout, rng, train)
    hn = layer_norm(x, p[f"{prefix}.ln2_g"], p[f"{prefix}.ln2_b"])
    ff = gelu(hn @ p[f"{prefix}.ff1_w"] + p[f"{prefix}.ff1_b"])
    ff = ff @ p[f"{prefix}.ff2_w"] + p[f"{prefix}.ff2_b"]
    return x + dropout(ff, cfg.dropout, rng, train)


def encode(state: ModelState, tokens: Tensor, train: bool = False, rng=None,
           attn_sink: list | None = None) -> Tensor:
    """(B, H', D) tokens -> contextual embeddings of the same shape."""
    p, cfg = state.params, state.enc_cfg
    h = tokens.data.shape[1]
    if h > cfg.max_tokens:
        raise ValueError(f"sequence of {h} tokens exceeds positional capacity "
                         f"{cfg.max_tokens}")
    x = tokens + p["pos"][:h]
    x = dropout(x, cfg.dropout, rng, train)
    for i in range(cfg.layers):
        x = _block(x, p, f"enc{i}", cfg, train, rng, attn_sink)
    return layer_norm(x, p["enc.final_ln_g"], p["enc.final_ln_b"])


def decode(state: ModelState, contextual: Tensor, train: bool = False, rng=None) -> Tensor:
    """Contextual embeddings -> reconstructed tokens, one per position."""
    p, cfg = state.params, state.enc_cfg
    x = contextual
    for i in range(cfg.decoder_layers):
        x = _block(x, p, f"dec{i}", cfg, train, rng, None)
    x = layer_norm(x, p["dec.final_ln_g"], p["dec.final_ln_b"])
    return x @ p["dec.out_w"] + p["dec.out_b"]


def pool_tokens(contextual: Tensor) -> Tensor:
    """Mean over the token axis: (B, H', D) -> (B, D)."""
    if contextual.data.shape[1] < 1:
        raise ValueError("cannot pool an empty token sequence")
    return contextual.mean(axis=1)


def head_logits(state: ModelState, pooled: Tensor) -> Tensor:
    return pooled @ state.params["head.w"] + state.params["head.b"]


# -- losses -------------------------------------------------------------------


def rec_loss(z_hat: Tensor, z: Tensor, mask_bool: np.ndarray) -> Tensor:
    """Masked reconstruction error, Eq.-style: per trial the mean squared L2
    norm over masked positions, averaged over the batch; 0 for empty masks."""
    if z_hat.data.shape != z.data.shape:
        raise ValueError("prediction/target shape mismatch")
    m = Tensor(mask_bool[..., None].astype(z_hat.data.dtype))
    diff = (z_hat - z) * m
    per_pos = (diff * diff).sum(axis=2)            # (B, H')
    counts = mask_bool.sum(axis=1).astype(z_hat.data.dtype)  # (B,)
    denom = Tensor(np.maximum(counts, 1.0))        # empty mask contributes 0 anyway
    return (per_pos.sum(axis=1) / denom).mean()


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Cross entropy with max subtraction, averaged over the batch."""
    b, n = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= n:
        raise ValueError("label id outside the class range")
    shift = logits - Tensor(np.max(logits.data, axis=1, keepdims=True))
    lse = shift.exp().sum(axis=1).log()            # (B,)
    onehot = np.zeros((b, n), dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    picked = (shift * Tensor(onehot)).sum(axis=1)
    return (lse - picked).mean()


def joint_loss(rec: Tensor, cls: Tensor) -> Tensor:
    """The pretraining objective: unweighted sum."""
    return rec + cls


def tokenize_batch(state: ModelState, x: np.ndarray) -> Tensor:
    """Convenience wrapper casting a raw (B, C, T) batch to the model dtype."""
    if x.ndim != 3 or x.shape[1] != state.n_channels:
        raise ValueError(f"expected (B, {state.n_channels}, T) input, got {x.shape}")
    return tokenize(Tensor(np.ascontiguousarray(x, dtype=state.dtype)),
                    state.params, state.tok_cfg)
