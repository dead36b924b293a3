"""Audio-visual fusion, per-AU branches, correlation encoder and per-AU classifiers."""
from dataclasses import dataclass

import numpy as np

from aucorr import functional as F
from aucorr.nn import ConfigError, Linear, Module, TransformerEncoderLayer, kaiming_uniform
from aucorr.tensor import ContractError, DimensionError, Tensor


@dataclass
class AULogits:
    values: Tensor

    @property
    def probabilities(self):
        return F.sigmoid(self.values)


class AUHead(Module):
    def __init__(self, cfg, visual_dim, audio_dim, rng):
        super().__init__()
        self.cfg = cfg
        self.visual_dim = visual_dim
        self.audio_dim = audio_dim
        k, db = cfg.num_aus, cfg.branch_dim
        # stand-ins for an absent modality
        self.visual_placeholder = self.param(np.zeros(visual_dim))
        self.audio_placeholder = self.param(np.zeros(audio_dim))
        if cfg.mode == "concat":
            self.fuse_proj = Linear(visual_dim + audio_dim, cfg.fused_dim, rng)
            fused = cfg.fused_dim
        else:
            if visual_dim != audio_dim:
                raise ConfigError("sum fusion needs equal visual and audio dims")
            self.fuse_proj = None
            fused = visual_dim
        self.fused_dim = fused
        self.branch_w = self.param(kaiming_uniform(rng, (k, fused, db), fused))
        self.branch_b = self.param(np.zeros((k, db)))
        for i in range(cfg.corr_layers):
            layer = TransformerEncoderLayer(db, cfg.corr_heads, cfg.corr_ffn, rng)
            if cfg.corr_zero_init:
                layer.attn.w_o.data[...] = 0.0
                layer.ff2.weight.data[...] = 0.0
            setattr(self, f"corr{i}", layer)
        self.pred_w = self.param(kaiming_uniform(rng, (k, db), db))
        self.pred_b = self.param(np.zeros(k))

    def fuse(self, visual=None, audio=None):
        """(N, D_v) and/or (N, D_a) -> (N, D_f); 1-D inputs give a 1-D result."""
        if visual is None and audio is None:
            raise ContractError("fuse() needs at least one modality")
        ref = visual if visual is not None else audio
        single = ref.ndim == 1
        lead = () if single else (ref.shape[0],)
        if visual is None:
            visual = self.visual_placeholder if single else F.mul(
                self.visual_placeholder, np.ones(lead + (self.visual_dim,)))
        if audio is None:
            audio = self.audio_placeholder if single else F.mul(
                self.audio_placeholder, np.ones(lead + (self.audio_dim,)))
        if visual.shape[-1] != self.visual_dim or audio.shape[-1] != self.audio_dim:
            raise DimensionError(f"fuse: got visual {visual.shape}, audio {audio.shape}; "
                                 f"want dims {self.visual_dim}/{self.audio_dim}")
        if self.fuse_proj is None:
            return visual + audio
        return self.fuse_proj(F.concat([visual, audio], axis=-1))

    def branch_features(self, fused):
        """(..., D_f) -> (..., K, D_b); branch k only touches branch_w[k], branch_b[k]."""
        lead = fused.shape[:-1]
        x = fused.reshape(*lead, 1, 1, self.fused_dim)
        out = F.matmul(x, self.branch_w).reshape(*lead, self.cfg.num_aus, self.cfg.branch_dim)
        return F.relu(out + self.branch_b)

    def correlate(self, branches, use_correlation=None):
        if use_correlation is None:
            use_correlation = self.cfg.use_correlation
        if not use_correlation:
            return branches
        x = branches
        for i in range(self.cfg.corr_layers):
            x = getattr(self, f"corr{i}")(x)
        return x

    def predict(self, refined):
        """(..., K, D_b) -> logits (..., K)."""
        return AULogits(F.sum(refined * self.pred_w, axis=-1) + self.pred_b)

    def forward(self, visual=None, audio=None, use_correlation=None):
        fused = self.fuse(visual, audio)
        return self.predict(self.correlate(self.branch_features(fused), use_correlation))
