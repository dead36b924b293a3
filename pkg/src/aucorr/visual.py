"""Convolutional spatial transformer (per frame) and temporal transformer (per clip)."""
from dataclasses import dataclass

from aucorr import functional as F
from aucorr.nn import (
    Linear,
    Module,
    PositionalEmbedding,
    ResBasicBlock,
    TransformerEncoderLayer,
)
from aucorr.tensor import DimensionError, Tensor


class CSFormer(Module):
    """Five residual blocks, one token per spatial cell, two spatial encoders, token mean."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        c_in = 3
        for i, (c_out, stride) in enumerate(zip(cfg.channels, cfg.strides)):
            setattr(self, f"block{i}", ResBasicBlock(c_in, c_out, stride, rng))
            c_in = c_out
        self.token_proj = Linear(c_in, cfg.dim, rng)
        self.pos = (PositionalEmbedding(cfg.grid * cfg.grid, cfg.dim, rng)
                    if cfg.spatial_pos else None)
        self.enc0 = TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ffn_dim, rng)
        self.enc1 = TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ffn_dim, rng)

    def tokens(self, frames):
        """Conv features as a token sequence, shape (N, cells, channels)."""
        x = frames
        for i in range(len(self.cfg.channels)):
            x = getattr(self, f"block{i}")(x)
        n, c, h, w = x.shape
        return F.swapaxes(x.reshape(n, c, h * w), 1, 2)

    def forward(self, frames):
        """(3, H, W) -> (D,) or (N, 3, H, W) -> (N, D)."""
        single = frames.ndim == 3
        size = self.cfg.input_size
        if frames.shape[-3:] != (3, size, size):
            raise DimensionError(f"CS-Former expects frames of shape (3, {size}, {size}), "
                                 f"got {frames.shape}")
        if single:
            frames = frames.reshape(1, *frames.shape)
        x = self.token_proj(self.tokens(frames))
        if self.pos is not None:
            x = self.pos(x)
        x = self.enc1(self.enc0(x))
        feat = x.mean(axis=1)
        return feat[0] if single else feat


@dataclass
class ClipFeature:
    per_frame: Tensor
    pooled: Tensor


class TFormer(Module):
    """Positional embedding, three temporal encoders, last-frame pooling."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.pos = (PositionalEmbedding(cfg.clip_length, cfg.dim, rng, kind=cfg.temporal_pos)
                    if cfg.temporal_pos != "none" else None)
        self.enc0 = TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ffn_dim, rng)
        self.enc1 = TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ffn_dim, rng)
        self.enc2 = TransformerEncoderLayer(cfg.dim, cfg.heads, cfg.ffn_dim, rng)

    def forward(self, seq):
        """(l, D) or (N, l, D) per-frame features -> :class:`ClipFeature`."""
        if seq.shape[-2] != self.cfg.clip_length or seq.shape[-1] != self.cfg.dim:
            raise DimensionError(f"T-Former expects (..., {self.cfg.clip_length}, {self.cfg.dim}), "
                                 f"got {seq.shape}")
        x = self.pos(seq) if self.pos is not None else seq
        x = self.enc2(self.enc1(self.enc0(x)))
        return ClipFeature(per_frame=x, pooled=x[..., -1, :])

