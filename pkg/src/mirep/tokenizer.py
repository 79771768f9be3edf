"""Temporal-spatial convolutional tokenizer.

A harmonized trial (C x T) becomes H' tokens of dimension D in four steps:
per-channel temporal convolution with F shared kernels ("same" zero padding,
stride s_t, so W = ceil(T / s_t)), rearrangement to put channels next to
feature maps, a full-height spatial convolution that collapses the channel
axis (stride 1, W' = W), then non-overlapping temporal average pooling
(H' = floor(W' / p)) and a 1x1 projection from F to D features.

All functions take and return Tensors with a leading batch axis and are
differentiable; the temporal convolution is the one custom gradient in the
package (strided windows + einsum forward, scatter-add backward).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor

__all__ = ["TokenizerConfig", "token_count", "temporal_embed", "spatial_compress",
           "pool_project", "tokenize"]


@dataclass(frozen=True)
class TokenizerConfig:
    k_t: int = 25        # temporal kernel length, ~100 ms at 250 Hz
    s_t: int = 5         # temporal stride
    F: int = 8           # temporal feature maps per channel
    pool_len: int = 8    # average-pool window along time
    D: int = 256         # token dimension

    def __post_init__(self) -> None:
        for name in ("k_t", "s_t", "F", "pool_len", "D"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def token_count(n_samples: int, cfg: TokenizerConfig) -> int:
    """H' = floor(ceil(T / s_t) / p); raises when pooling has nothing to pool."""
    w = -(-n_samples // cfg.s_t)
    if w < cfg.pool_len:
        raise ValueError(f"W={w} positions but pool window is {cfg.pool_len}")
    return w // cfg.pool_len


def _conv_same_strided(x: Tensor, weight: Tensor, stride: int) -> Tensor:
    """Grouped temporal convolution, shared kernels across channels.

    x: (B, C, T), weight: (F, k). Output (B, C, F, W) with W = ceil(T/stride).
    Zero padding is split evenly so the kernel center tracks the input grid.
    """
    b, c, t = x.data.shape
    f, k = weight.data.shape
    if t < k:
        raise ValueError(f"T={t} shorter than kernel k_t={k}")
    w = -(-t // stride)
    pad_total = max(0, (w - 1) * stride + k - t)
    lo = pad_total // 2
    hi = pad_total - lo
    xp = np.pad(x.data, ((0, 0), (0, 0), (lo, hi)))
    s0, s1, s2 = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, w, k), strides=(s0, s1, s2 * stride, s2), writeable=False)
    out = Tensor(np.einsum("bcwk,fk->bcfw", win, weight.data, optimize=True))
    if x.requires_grad or weight.requires_grad:
        out.requires_grad = True
        out._parents = (x, weight)

        def bw(g, x=x, weight=weight, win=win, stride=stride,
               lo=lo, t=t, w=w, k=k, pad_shape=xp.shape):
            if weight.requires_grad:
                weight.accumulate(np.einsum("bcwk,bcfw->fk", win, g, optimize=True))
            if x.requires_grad:
                dxp = np.zeros(pad_shape, dtype=g.dtype)
                span = (w - 1) * stride + 1
                for j in range(k):
                    dxp[:, :, j:j + span:stride] += np.einsum(
                        "bcfw,f->bcw", g, weight.data[:, j], optimize=True)
                x.accumulate(dxp[:, :, lo:lo + t])

        out._backward = bw
    return out


def temporal_embed(x: Tensor, weight: Tensor, bias: Tensor, cfg: TokenizerConfig) -> Tensor:
    """(B, C, T) -> (B, C, F, W)."""
    u = _conv_same_strided(x, weight, cfg.s_t)
    return u + bias.reshape(1, 1, cfg.F, 1)


def spatial_compress(u_rearranged: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """(B, W, C, F) -> (B, W, F): full-height spatial filter per feature map."""
    if u_rearranged.data.ndim != 4:
        raise ValueError("expected a (B, W, C, F) input")
    if u_rearranged.data.shape[2:] != weight.data.shape:
        raise ValueError(
            f"spatial kernel {weight.data.shape} does not span input "
            f"{u_rearranged.data.shape[2:]}")
    return (u_rearranged * weight).sum(axis=2) + bias


def pool_project(s: Tensor, proj_w: Tensor, proj_b: Tensor,
                 cfg: TokenizerConfig) -> Tensor:
    """(B, W, F) -> (B, H', D): average pool then 1x1 projection."""
    b, w, f = s.data.shape
    if w < cfg.pool_len:
        raise ValueError(f"W'={w} positions but pool window is {cfg.pool_len}")
    h = w // cfg.pool_len
    pooled = s[:, :h * cfg.pool_len, :].reshape(b, h, cfg.pool_len, f).mean(axis=2)
    return pooled @ proj_w + proj_b


def tokenize(x: Tensor, params: dict[str, Tensor], cfg: TokenizerConfig) -> Tensor:
    """(B, C, T) -> (B, H', D), the full embedding chain."""
    u = temporal_embed(x, params["tok.temporal_w"], params["tok.temporal_b"], cfg)
    u_r = u.transpose(0, 3, 1, 2)  # (B, C, F, W) -> (B, W, C, F)
    s = spatial_compress(u_r, params["tok.spatial_w"], params["tok.spatial_b"])
    return pool_project(s, params["tok.proj_w"], params["tok.proj_b"], cfg)
