"""Configuration for every hyperparameter the models, training and generator need.

Configs are plain dataclasses. On disk they live in one INI file with a
section per dataclass (``[visual]``, ``[audio]``, ``[head]``, ``[train]``,
``[synth]``); unknown sections or keys are rejected.
"""
import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from aucorr.nn import ConfigError

ABAW_AUS = ("AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26")


@dataclass
class VisualConfig:
    input_size: int = 32
    channels: tuple = (16, 32, 64, 64, 128)
    strides: tuple = (1, 2, 2, 2, 1)
    dim: int = 32
    heads: int = 2
    ffn_dim: int = 64
    spatial_layers: int = 2
    temporal_layers: int = 3
    clip_length: int = 16
    dilation: int = 3
    spatial_pos: bool = False
    temporal_pos: str = "learned"

    def validate(self):
        if len(self.channels) != 5 or len(self.strides) != 5:
            raise ConfigError("visual.channels/strides: CS-Former has exactly 5 residual blocks")
        if self.spatial_layers != 2:
            raise ConfigError("visual.spatial_layers: CS-Former has exactly 2 spatial encoders")
        if self.temporal_layers != 3:
            raise ConfigError("visual.temporal_layers: T-Former has exactly 3 temporal encoders")
        if self.dim % self.heads:
            raise ConfigError("visual.heads: must divide visual.dim")
        if self.clip_length < 1 or self.dilation < 1:
            raise ConfigError("visual.clip_length/dilation: must be >= 1")
        if self.temporal_pos not in ("learned", "sinusoidal", "none"):
            raise ConfigError("visual.temporal_pos: one of learned, sinusoidal, none")

    @property
    def grid(self):
        size = self.input_size
        for s in self.strides:
            size = (size - 1) // s + 1
        return size


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    n_mels: int = 64
    window: int = 1024
    hop: int = 256
    sub_width: int = 64
    base_channels: int = 8
    stages: tuple = (2, 2, 2, 2)
    full_stem: bool = False
    dim: int = 32

    def validate(self):
        if self.sub_width % 2:
            raise ConfigError("audio.sub_width: must be even")
        if tuple(self.stages) != (2, 2, 2, 2):
            raise ConfigError("audio.stages: ResNet-18 uses exactly [2, 2, 2, 2] basic blocks")
        if self.n_mels >= self.window // 2 + 1:
            raise ConfigError("audio.n_mels: must be smaller than the number of STFT bins")


@dataclass
class HeadConfig:
    mode: str = "concat"
    fused_dim: int = 32
    num_aus: int = 12
    branch_dim: int = 16
    corr_layers: int = 1
    corr_heads: int = 2
    corr_ffn: int = 32
    use_correlation: bool = True
    # start the correlation encoder as an exact identity (zeroed residual outputs)
    corr_zero_init: bool = True
    au_names: tuple = ABAW_AUS

    def validate(self):
        if self.num_aus < 1:
            raise ConfigError("head.num_aus: must be >= 1")
        if self.mode not in ("concat", "sum"):
            raise ConfigError("head.mode: one of concat, sum")
        if self.branch_dim % self.corr_heads:
            raise ConfigError("head.corr_heads: must divide head.branch_dim")
        if len(self.au_names) != self.num_aus:
            raise ConfigError("head.au_names: need one name per AU")


@dataclass
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 64
    steps_spatial: int = 200
    steps_temporal: int = 200
    steps_audio: int = 200
    steps_joint: int = 100
    threshold: float = 0.5
    brightness: float = 0.2
    pos_weight_cap: float = 100.0
    use_pos_weights: bool = True
    log_every: int = 1

    def validate(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("train.lr/batch_size: must be positive")
        if not 0.0 <= self.brightness < 1.0:
            raise ConfigError("train.brightness: must lie in [0, 1)")


@dataclass
class SynthConfig:
    num_aus: int = 12
    videos: int = 4
    val_videos: int = 1
    frames: int = 2000
    fps: float = 30.0
    size: int = 32
    sample_rate: int = 16000
    rates: tuple = (0.2, 0.3, 0.2, 0.25, 0.35, 0.2, 0.25, 0.2, 0.25, 0.25, 0.35, 0.2)
    # "a>b:rho" means an active AU a switches b on with probability rho per episode
    implications: tuple = ("0>1:0.9", "3>4:0.9", "6>10:0.9")
    visual_strength: tuple = (1.0, 0.25, 1.0, 1.0, 0.25, 1.0, 1.0, 1.0, 0.0, 0.0, 0.25, 1.0)
    audio_aus: tuple = (8, 9)
    mean_duration: float = 24.0
    ramp: int = 6
    noise: float = 0.15
    jitter: float = 0.5

    def validate(self):
        k = self.num_aus
        if len(self.rates) != k or len(self.visual_strength) != k:
            raise ConfigError(f"synth.rates/visual_strength: need {k} entries")
        if any(not 0.0 < r < 1.0 for r in self.rates):
            raise ConfigError("synth.rates: each rate must lie in (0, 1)")
        if any(not 0 <= a < k for a in self.audio_aus):
            raise ConfigError("synth.audio_aus: AU index out of range")
        if self.videos < 1 or self.frames < self.videos:
            raise ConfigError("synth.frames: need at least one frame per video")
        if not 0 <= self.val_videos < self.videos:
            raise ConfigError("synth.val_videos: need at least one training video")
        if self.mean_duration < 1:
            raise ConfigError("synth.mean_duration: must be >= 1")
        parse_implications(self.implications, k)


def parse_implications(items, num_aus):
    rules = []
    for item in items:
        try:
            pair, rho = item.split(":")
            a, b = (int(v) for v in pair.split(">"))
            rho = float(rho)
        except ValueError:
            raise ConfigError(f"synth.implications: cannot parse {item!r} (want 'a>b:rho')") from None
        if not (0 <= a < num_aus and 0 <= b < num_aus) or a == b:
            raise ConfigError(f"synth.implications: bad AU pair in {item!r}")
        if not 0.0 <= rho <= 1.0:
            raise ConfigError(f"synth.implications: rho out of [0, 1] in {item!r}")
        rules.append((a, b, rho))
    targets = [b for _, b, _ in rules]
    if len(set(targets)) != len(targets):
        raise ConfigError("synth.implications: each AU may be implied by at most one rule")
    if set(targets) & {a for a, _, _ in rules}:
        raise ConfigError("synth.implications: chained implications are not supported")
    return rules


@dataclass
class Config:
    visual: VisualConfig = field(default_factory=VisualConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self):
        for section in self.sections():
            getattr(self, section).validate()
        if self.head.mode == "sum" and self.visual.dim != self.audio.dim:
            raise ConfigError("head.mode: sum fusion needs visual.dim == audio.dim")
        return self

    @staticmethod
    def sections():
        return [f.name for f in dataclasses.fields(Config)]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        for section, values in data.items():
            apply_overrides(cfg, section, values)
        return cfg


def _coerce(raw, default, where):
    if isinstance(raw, str):
        text = raw.strip()
    else:
        text = raw
    try:
        if isinstance(default, bool):
            if isinstance(text, bool):
                return text
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = text if isinstance(text, (list, tuple)) else [
                t for t in (s.strip() for s in text.split(",")) if t]
            proto = default[0] if default else ""
            return tuple(_coerce(t, proto, where) for t in items)
        return str(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def apply_overrides(cfg, section, values):
    if section not in Config.sections():
        raise ConfigError(f"unknown config section [{section}]")
    target = getattr(cfg, section)
    known = {f.name for f in dataclasses.fields(target)}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        setattr(target, key, _coerce(raw, getattr(target, key), f"{section}.{key}"))


def load_config(path=None):
    cfg = Config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            apply_overrides(cfg, section, dict(parser[section]))
    return cfg


def dump_config(cfg, path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in cfg.to_dict().items():
        parser[section] = {k: ", ".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
                           for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def toy_config():
    """Small profile used for fast training checks: l=4, 32x32 frames, 64x64 sub-spectrograms."""
    cfg = Config()
    cfg.visual = VisualConfig(input_size=32, channels=(4, 8, 8, 16, 16), clip_length=4,
                              dim=32, heads=2, ffn_dim=64)
    cfg.audio = AudioConfig(base_channels=4, dim=32)
    cfg.head = HeadConfig(fused_dim=32, branch_dim=16, corr_ffn=32)
    return cfg
