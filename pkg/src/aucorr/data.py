"""Clip sampling, face alignment, augmentation, label files and the clip dataset."""
import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aucorr import aut1
from aucorr.audio import Waveform, crop_subspectrogram, mel_spectrogram, read_wav

log = logging.getLogger(__name__)


class DataInputError(ValueError):
    pass


class LabelParseError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


# ---------------------------------------------------------------- clip sampling

def sample_clip_indices(t, n_frames, length=16, dilation=3):
    """Causal clip ending at ``t``: [t - d(l-1), ..., t - d, t], clamped at 0."""
    if not 0 <= t < n_frames:
        raise DataInputError(f"frame index {t} outside [0, {n_frames})")
    idx = t - dilation * np.arange(length - 1, -1, -1)
    return np.clip(idx, 0, n_frames - 1).tolist()


# ---------------------------------------------------------------- alignment

def default_template(size=112):
    """Symmetric 5-point layout: eye centres, nose tip, outer mouth corners."""
    frac = np.array([[0.34, 0.40], [0.66, 0.40], [0.50, 0.58], [0.38, 0.75], [0.62, 0.75]])
    return frac * size


def umeyama(src, dst):
    """Least-squares similarity ``dst ~ s * R @ src + t`` for (n, 2) point sets.

    Returns ``(s, R, t)``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n, dim = src.shape
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    sc, dc = src - mu_s, dst - mu_d
    var_s = (sc * sc).sum() / n
    if var_s < 1e-12:
        raise AlignmentError("landmarks are degenerate (all points coincide)")
    cov = dc.T @ sc / n
    U, S, Vt = np.linalg.svd(cov)
    d = np.ones(dim)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[-1] = -1.0
    R = U @ np.diag(d) @ Vt
    s = (S * d).sum() / var_s
    t = mu_d - s * R @ mu_s
    return s, R, t


def warp_affine(image, matrix, out_size):
    """Bilinear warp of (C, H, W) ``image``; ``matrix`` maps source xy to output xy.

    Samples falling outside the source are black.
    """
    c, h, w = image.shape
    A, b = matrix[:, :2], matrix[:, 2]
    ys, xs = np.mgrid[0:out_size, 0:out_size].astype(np.float64)
    dst = np.stack([xs.ravel(), ys.ravel()])
    src = np.linalg.solve(A, dst - b[:, None])
    sx, sy = src
    x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    out = np.zeros((c, out_size * out_size))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros((c, xi.size))
            vals[:, ok] = image[:, yi[ok], xi[ok]]
            out += vals * (wx * wy)
    return out.reshape(c, out_size, out_size)


def similarity_align(landmarks, template, out_size, image=None):
    """Fit the similarity mapping ``landmarks`` onto ``template``.

    Returns the 2x3 matrix and, when ``image`` is given, the aligned crop.
    """
    s, R, t = umeyama(landmarks, template)
    matrix = np.hstack([s * R, t[:, None]])
    warped = warp_affine(image, matrix, out_size) if image is not None else None
    return matrix, warped


# ---------------------------------------------------------------- augmentation

def random_brightness(frames, strength, rng):
    """Scale a whole clip by one factor drawn from U(1 - strength, 1 + strength)."""
    if strength == 0:
        return frames
    factor = rng.uniform(1.0 - strength, 1.0 + strength)
    return np.clip(frames * factor, 0.0, 1.0)


# ---------------------------------------------------------------- labels

def compute_pos_weights(labels, cap=100.0):
    """Per-AU ``(annotated - positives) / positives``; unannotated (-1) rows are ignored."""
    labels = np.asarray(labels)
    annotated = (labels != -1).sum(axis=0).astype(np.float64)
    positives = (labels == 1).sum(axis=0).astype(np.float64)
    weights = np.full(labels.shape[1], float(cap))
    has_pos = positives > 0
    weights[has_pos] = (annotated[has_pos] - positives[has_pos]) / positives[has_pos]
    for k in np.flatnonzero(~has_pos):
        log.warning("AU column %d has no positive frames; pos weight capped at %g", k, cap)
    return weights


def write_labels(path, labels):
    labels = np.asarray(labels, dtype=int)
    k = labels.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame"] + [f"au{i + 1}" for i in range(k)])
        for i, row in enumerate(labels):
            writer.writerow([i] + row.tolist())


def load_labels(path, num_aus):
    """Parse a ``frame,au1..auK`` CSV into an (n_frames, K) int array."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LabelParseError(f"{path}: empty label file")
    header = rows[0]
    if len(header) != num_aus + 1 or header[0] != "frame":
        raise LabelParseError(f"{path}:1: expected header frame,au1..au{num_aus}")
    out = np.empty((len(rows) - 1, num_aus), dtype=int)
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            values = [int(v) for v in row]
        except ValueError:
            raise LabelParseError(f"{path}:{lineno}: non-integer field in {row}") from None
        if len(values) != num_aus + 1 or values[0] != lineno - 2:
            raise LabelParseError(f"{path}:{lineno}: expected frame {lineno - 2} and {num_aus} labels")
        if any(v not in (0, 1, -1) for v in values[1:]):
            raise LabelParseError(f"{path}:{lineno}: labels must be 0, 1 or -1")
        out[lineno - 2] = values[1:]
    return out


# ---------------------------------------------------------------- manifest

@dataclass
class VideoEntry:
    name: str
    frames: int
    fps: float
    labels: str
    frames_dir: str
    split: str = "train"
    audio: str = None
    sample_rate: int = None


@dataclass
class DatasetManifest:
    root: Path
    num_aus: int
    videos: list
    meta: dict

    def save(self, path=None):
        path = Path(path or self.root / "manifest.json")
        body = {
            "num_aus": self.num_aus,
            "videos": [vars(v) for v in self.videos],
            "meta": self.meta,
        }
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"dataset manifest not found: {path}")
        body = json.loads(path.read_text(encoding="utf-8"))
        videos = [VideoEntry(**v) for v in body["videos"]]
        return cls(root=path.parent, num_aus=body["num_aus"], videos=videos,
                   meta=body.get("meta", {}))

    def split(self, name):
        return [v for v in self.videos if v.split == name]


@dataclass
class ClipSample:
    frames: np.ndarray          # (l, 3, H, W)
    spectrogram: np.ndarray     # (1, n_mels, W_s) or None
    labels: np.ndarray          # (K,)
    t: int


class ClipDataset:
    """In-memory view over a manifest: frames, labels and log-mel spectrograms per video."""

    def __init__(self, manifest, visual_cfg, audio_cfg, split=None):
        self.manifest = manifest
        self.visual_cfg = visual_cfg
        self.audio_cfg = audio_cfg
        self.videos = manifest.videos if split is None else manifest.split(split)
        if not self.videos:
            raise DataInputError(f"no videos in split {split!r}")
        self.frames = []
        self.labels = []
        self.specs = []
        for v in self.videos:
            labels = load_labels(manifest.root / v.labels, manifest.num_aus)
            if len(labels) != v.frames:
                raise DataInputError(f"{v.name}: {len(labels)} label rows for {v.frames} frames")
            fdir = manifest.root / v.frames_dir
            frames = np.stack([aut1.load(fdir / f"frame_{i:06d}.aut") for i in range(v.frames)])
            self.frames.append(frames)
            self.labels.append(labels)
            if v.audio is not None:
                wav = read_wav(manifest.root / v.audio)
                if v.sample_rate is not None and wav.sample_rate != v.sample_rate:
                    raise DataInputError(f"{v.name}: wav rate {wav.sample_rate} != {v.sample_rate}")
                self.specs.append(mel_spectrogram(Waveform(wav.samples, wav.sample_rate), audio_cfg))
            else:
                self.specs.append(None)
        # (video, t) for every frame with at least one annotated AU
        self.items = [(vi, t) for vi, lab in enumerate(self.labels)
                      for t in range(len(lab)) if np.any(lab[t] != -1)]

    @property
    def has_audio(self):
        return all(s is not None for s in self.specs)

    def all_labels(self):
        return np.concatenate(self.labels)

    def clip(self, vi, t, with_audio=True):
        cfg = self.visual_cfg
        idx = sample_clip_indices(t, len(self.frames[vi]), cfg.clip_length, cfg.dilation)
        spec = None
        if with_audio and self.specs[vi] is not None:
            sub = crop_subspectrogram(self.specs[vi], t, self.videos[vi].fps, self.audio_cfg.sub_width)
            spec = sub[None]
        return ClipSample(frames=self.frames[vi][idx], spectrogram=spec,
                          labels=self.labels[vi][t], t=t)

    def batch(self, items, kind, rng=None, brightness=0.0):
        """Stack inputs for ``items``; ``kind`` is frame, clip, audio or joint."""
        labels = np.stack([self.labels[vi][t] for vi, t in items])
        frames = spec = None
        if kind == "frame":
            frames = np.stack([self.frames[vi][t] for vi, t in items])
            if brightness:
                frames = np.stack([random_brightness(f, brightness, rng) for f in frames])
        if kind in ("clip", "joint"):
            frames = np.stack([self.clip(vi, t, with_audio=False).frames for vi, t in items])
            if brightness:
                frames = np.stack([random_brightness(f, brightness, rng) for f in frames])
        if kind in ("audio", "joint"):
            spec = np.stack([self.clip(vi, t).spectrogram for vi, t in items])
        return frames, spec, labels
