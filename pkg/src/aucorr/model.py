"""The full aural-visual AU detector and its stage-specific forward paths."""
import numpy as np

from aucorr.audio import ResNet18
from aucorr.head import AUHead
from aucorr.nn import Module
from aucorr.tensor import as_tensor
from aucorr.visual import CSFormer, TFormer

# parameter-name prefixes owned by each training stage
STAGE_MODULES = {
    "spatial": ("spatial", "head"),
    "temporal": ("temporal", "head"),
    "audio": ("audio", "audio_head"),
    "joint": ("spatial", "temporal", "audio", "head"),
}


class AUDetector(Module):
    """CS-Former + T-Former visual path, ResNet-18 audio path, AU correlation head.

    ``audio_head`` only exists to supervise the audio stage on its own and
    is not part of the joint model.
    """

    def __init__(self, cfg, seed=0):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.spatial = CSFormer(cfg.visual, rng)
        self.temporal = TFormer(cfg.visual, rng)
        self.audio = ResNet18(cfg.audio, rng)
        self.head = AUHead(cfg.head, cfg.visual.dim, cfg.audio.dim, rng)
        self.audio_head = AUHead(cfg.head, cfg.visual.dim, cfg.audio.dim, rng)

    def frame_logits(self, frames, use_correlation=None):
        """Spatial-only path: (N, 3, H, W) -> (N, K)."""
        return self.head(visual=self.spatial(as_tensor(frames)),
                         use_correlation=use_correlation).values

    def frame_features(self, clips):
        """(N, l, 3, H, W) -> (N, l, D_v) via per-frame CS-Former."""
        clips = as_tensor(clips)
        n, length = clips.shape[:2]
        feats = self.spatial(clips.reshape(n * length, *clips.shape[2:]))
        return feats.reshape(n, length, feats.shape[-1])

    def clip_logits(self, clips=None, spec=None, use_correlation=None, features=None):
        """Temporal / joint path. ``spec`` (N, 1, n_mels, W_s) adds the audio branch.

        ``features`` may be passed instead of ``clips`` when the CS-Former
        output was computed elsewhere (e.g. frozen, without a graph).
        """
        if features is None:
            features = self.frame_features(clips)
        visual = self.temporal(as_tensor(features)).pooled
        audio = self.audio(as_tensor(spec)) if spec is not None else None
        return self.head(visual=visual, audio=audio, use_correlation=use_correlation).values

    def audio_logits(self, spec, use_correlation=None):
        return self.audio_head(audio=self.audio(as_tensor(spec)),
                               use_correlation=use_correlation).values

    def stage_parameters(self, stage):
        prefixes = tuple(p + "." for p in STAGE_MODULES[stage])
        return {n: p for n, p in self.named_parameters() if n.startswith(prefixes)}

    def group_state(self, prefixes):
        prefixes = tuple(p + "." for p in prefixes)
        return {n: a for n, a in self.state_dict().items() if n.startswith(prefixes)}


def init_params(cfg, seed):
    """Freshly initialised detector; identical ``seed`` gives identical parameters."""
    return AUDetector(cfg, seed)
