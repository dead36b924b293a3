"""Deterministic synthetic audio-visual AU dataset with controllable label structure.

Labels come from per-AU two-state Markov chains (episodes with geometric
durations). An implication rule ``a>b:rho`` switches AU ``b`` on for a whole
episode of ``a`` with probability ``rho``; ``b``'s own chain rate is solved
so its marginal still matches the configured rate.

Each AU owns a blob at a fixed cell of the frame. Its amplitude follows an
onset ramp and carries per-frame jitter that is shared across the blob, so a
single frame is a noisy reading and a clip is a better one. AUs listed in
``audio_aus`` have no visual blob; they switch a pure tone on in the
waveform instead.
"""
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from aucorr import aut1
from aucorr.audio import Waveform, write_wav
from aucorr.config import parse_implications
from aucorr.data import DatasetManifest, VideoEntry, write_labels
from aucorr.nn import ConfigError

log = logging.getLogger(__name__)

TONE_FREQS = (700.0, 1900.0, 3300.0, 4700.0)
HUM_FREQ = 220.0


def own_rates(cfg):
    """Rate of each AU's own chain once implication coupling is accounted for."""
    rates = np.array(cfg.rates, dtype=np.float64)
    own = rates.copy()
    for a, b, rho in parse_implications(cfg.implications, cfg.num_aus):
        forced = rho * rates[a]
        q = (rates[b] - forced) / (1.0 - forced)
        if q <= 0.0:
            raise ConfigError(f"synth.rates: AU {b} rate {rates[b]} is below the "
                              f"{forced:.3f} already implied by AU {a}")
        own[b] = q
    return own


def markov_chain(n, rate, mean_on, rng):
    """Binary sequence with stationary rate ``rate`` and mean on-run ``mean_on``."""
    mean_off = mean_on * (1.0 - rate) / rate
    if mean_off < 1.0:
        mean_on = rate / (1.0 - rate)
        mean_off = 1.0
    p_leave_on = 1.0 / max(mean_on, 1.0)
    p_leave_off = 1.0 / mean_off
    u = rng.random(n)
    out = np.empty(n, dtype=int)
    state = int(rng.random() < rate)
    for i in range(n):
        out[i] = state
        if state:
            state = int(u[i] >= p_leave_on)
        else:
            state = int(u[i] < p_leave_off)
    return out


def runs(seq):
    """(start, stop) of every run of ones."""
    padded = np.concatenate([[0], seq, [0]])
    diff = np.diff(padded)
    return list(zip(np.flatnonzero(diff == 1), np.flatnonzero(diff == -1)))


def gen_labels(cfg, n_frames, rng):
    k = cfg.num_aus
    own = own_rates(cfg)
    labels = np.stack([markov_chain(n_frames, own[j], cfg.mean_duration, rng) for j in range(k)],
                      axis=1)
    for a, b, rho in parse_implications(cfg.implications, k):
        for start, stop in runs(labels[:, a]):
            if rng.random() < rho:
                labels[start:stop, b] = 1
    return labels


def onset_ramp(labels, ramp):
    """Intensity in [0, 1]: rises linearly over ``ramp`` frames from each onset."""
    out = np.zeros(labels.shape)
    for j in range(labels.shape[1]):
        for start, stop in runs(labels[:, j]):
            steps = np.arange(stop - start) + 1
            out[start:stop, j] = np.minimum(1.0, steps / max(ramp, 1))
    return out


def blob_layout(num_aus, size):
    """Per-AU Gaussian blob mask and colour channel on a 4x4 cell grid."""
    if num_aus > 16:
        raise ConfigError("synth.num_aus: at most 16 AUs fit the blob grid")
    cell = size / 4.0
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    order = [5, 6, 9, 10, 1, 2, 4, 7, 8, 11, 13, 14, 0, 3, 12, 15]
    masks, channels = [], []
    for j in range(num_aus):
        r, c = divmod(order[j], 4)
        cy, cx = (r + 0.5) * cell, (c + 0.5) * cell
        masks.append(np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * (cell / 4.0) ** 2)))
        channels.append(j % 3)
    return np.stack(masks), channels


def render_frames(labels, intensity, cfg, rng):
    n, k = labels.shape
    size = cfg.size
    masks, channels = blob_layout(k, size)
    strength = np.asarray(cfg.visual_strength, dtype=np.float64)
    base = 0.35 + 0.03 * rng.standard_normal((3, 1, 1))
    frames = np.empty((n, 3, size, size))
    for t in range(n):
        img = np.broadcast_to(base, (3, size, size)).copy()
        amp = 0.4 * (strength * intensity[t] + cfg.jitter * rng.standard_normal(k))
        for j in range(k):
            if strength[j] > 0:
                img[channels[j]] += amp[j] * masks[j]
        img += cfg.noise * rng.standard_normal(img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)
    return frames


def render_audio(intensity, cfg, rng):
    n_frames = intensity.shape[0]
    n = int(round(n_frames / cfg.fps * cfg.sample_rate))
    time = np.arange(n) / cfg.sample_rate
    frame_of = np.minimum((time * cfg.fps).astype(int), n_frames - 1)
    wav = 0.08 * np.sin(2 * np.pi * HUM_FREQ * time) + 0.03 * rng.standard_normal(n)
    for slot, j in enumerate(cfg.audio_aus):
        freq = TONE_FREQS[slot % len(TONE_FREQS)]
        wav += 0.2 * intensity[frame_of, j] * np.sin(2 * np.pi * freq * time)
    return np.clip(wav, -1.0, 1.0)


def gen_synthetic_dataset(cfg, out_dir, seed):
    """Write frames, WAVs, label CSVs and ``manifest.json`` under ``out_dir``."""
    cfg.validate()
    own_rates(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    per_video = cfg.frames // cfg.videos
    videos = []
    for v in range(cfg.videos):
        name = f"video_{v:03d}"
        vdir = out_dir / name
        fdir = vdir / "frames"
        fdir.mkdir(parents=True, exist_ok=True)
        n = per_video + (1 if v < cfg.frames % cfg.videos else 0)
        labels = gen_labels(cfg, n, rng)
        intensity = onset_ramp(labels, cfg.ramp)
        frames = render_frames(labels, intensity, cfg, rng)
        for t in range(n):
            aut1.save(fdir / f"frame_{t:06d}.aut", frames[t])
        write_labels(vdir / "labels.csv", labels)
        write_wav(vdir / "audio.wav", Waveform(render_audio(intensity, cfg, rng), cfg.sample_rate))
        videos.append(VideoEntry(
            name=name, frames=n, fps=cfg.fps, labels=f"{name}/labels.csv",
            frames_dir=f"{name}/frames", split="val" if v >= cfg.videos - cfg.val_videos else "train",
            audio=f"{name}/audio.wav", sample_rate=cfg.sample_rate))
        log.info("wrote %s (%d frames)", name, n)
    manifest = DatasetManifest(root=out_dir, num_aus=cfg.num_aus, videos=videos,
                               meta={"generator": "aucorr.synth", "seed": seed,
                                     "synth": asdict(cfg)})
    manifest.save()
    return manifest
