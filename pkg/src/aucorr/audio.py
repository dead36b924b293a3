"""Log-mel spectrograms, frame-aligned sub-spectrograms and a ResNet-18 audio encoder."""
import wave
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from aucorr import functional as F
from aucorr.nn import BatchNorm2d, Conv2d, Linear, Module, ResBasicBlock
from aucorr.tensor import DimensionError

LOG_FLOOR = 1e-6


class AudioInputError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioInputError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioInputError("waveform contains non-finite samples")


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames), log scale
    hop: int
    window: int
    sample_rate: int

    @property
    def n_frames(self):
        return self.values.shape[1]


def hann(n):
    # periodic Hann, so hop = n/4 overlaps sum to a constant
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(w, window, hop):
    """Hann-windowed DFT magnitudes, shape (window // 2 + 1, n_frames), no centering."""
    x = w.samples
    if len(x) < window:
        raise AudioInputError(f"waveform has {len(x)} samples, shorter than window {window}")
    frames = sliding_window_view(x, window)[::hop]
    spec = np.fft.rfft(frames * hann(window), axis=1)
    return np.abs(spec).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels, sample_rate):
    """Center frequency (Hz) of each triangular filter."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(bins, n_mels, sample_rate):
    """Triangular filters equally spaced in mel over 0..sr/2, shape (n_mels, bins)."""
    if n_mels >= bins:
        raise ValueError(f"n_mels ({n_mels}) must be smaller than bins ({bins})")
    n_fft = 2 * (bins - 1)
    freqs = np.arange(bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no STFT bin; "
                         f"use fewer mels or a longer window")
    return fb


def mel_spectrogram(w, cfg):
    mag = stft_magnitude(w, cfg.window, cfg.hop)
    fb = mel_filterbank(mag.shape[0], cfg.n_mels, w.sample_rate)
    values = np.log(fb @ (mag * mag) + LOG_FLOOR)
    return MelSpectrogram(values=values, hop=cfg.hop, window=cfg.window,
                          sample_rate=w.sample_rate)


def center_column(t, fps, sample_rate, hop):
    """Spectrogram column aligned with video frame ``t`` (halves round up)."""
    return int(np.floor(t / fps * sample_rate / hop + 0.5))


def crop_subspectrogram(spec, t, fps, width):
    """Columns [c - width/2, c + width/2) around frame ``t``, edges repeated."""
    if spec.n_frames == 0 or spec.values.size == 0:
        raise AudioInputError("empty spectrogram")
    if t < 0:
        raise AudioInputError(f"frame index must be >= 0, got {t}")
    c = center_column(t, fps, spec.sample_rate, spec.hop)
    cols = np.clip(np.arange(c - width // 2, c + width // 2), 0, spec.n_frames - 1)
    return spec.values[:, cols]


class ResNet18(Module):
    """Stem, four stages of two basic blocks, global average pool, linear."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        if cfg.full_stem:
            self.stem = Conv2d(1, c, 7, rng, stride=2, pad=3)
        else:
            self.stem = Conv2d(1, c, 3, rng, stride=1, pad=1)
        self.stem_bn = BatchNorm2d(c)
        c_in = c
        for s, n_blocks in enumerate(cfg.stages):
            c_out = c * 2 ** s
            for b in range(n_blocks):
                stride = 2 if (s > 0 and b == 0) else 1
                setattr(self, f"layer{s}_{b}", ResBasicBlock(c_in, c_out, stride, rng))
                c_in = c_out
        self.fc = Linear(c_in, cfg.dim, rng)

    def forward(self, x):
        """(1, n_mels, W_s) -> (D_a,) or (N, 1, n_mels, W_s) -> (N, D_a)."""
        single = x.ndim == 3
        expected = (1, self.cfg.n_mels, self.cfg.sub_width)
        if x.shape[-3:] != expected:
            raise DimensionError(f"ResNet-18 expects input {expected}, got {x.shape}")
        if single:
            x = x.reshape(1, *x.shape)
        x = F.relu(self.stem_bn(self.stem(x)))
        if self.cfg.full_stem:
            x = F.max_pool2d(x, 3, 2, pad=1)
        for s, n_blocks in enumerate(self.cfg.stages):
            for b in range(n_blocks):
                x = getattr(self, f"layer{s}_{b}")(x)
        out = self.fc(x.mean(axis=(2, 3)))
        return out[0] if single else out


def read_wav(path):
    """Mono PCM-16 WAV -> :class:`Waveform` with samples in [-1, 1]."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise AudioInputError(f"{path}: expected mono 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w):
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(w.sample_rate))
        fh.writeframes(pcm.tobytes())
