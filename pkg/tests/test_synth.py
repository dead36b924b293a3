import hashlib

import numpy as np
import pytest

from aucorr.audio import read_wav, stft_magnitude
from aucorr.config import SynthConfig
from aucorr.data import load_labels
from aucorr.nn import ConfigError
from aucorr.synth import (
    TONE_FREQS,
    gen_labels,
    gen_synthetic_dataset,
    markov_chain,
    onset_ramp,
    own_rates,
    render_frames,
)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_markov_chain_rate(rng):
    seq = markov_chain(200_000, 0.25, 10, rng)
    assert abs(seq.mean() - 0.25) < 0.01
    runs_on = np.diff(np.flatnonzero(np.diff(np.concatenate([[0], seq, [0]]))))[::2]
    assert abs(runs_on.mean() - 10) < 0.5


def test_rho_one_implication_always_holds(rng):
    cfg = SynthConfig(implications=("0>1:1.0", "3>4:1.0"))
    labels = gen_labels(cfg, 5000, rng)
    for a, b in [(0, 1), (3, 4)]:
        assert np.all(labels[labels[:, a] == 1, b] == 1)


def test_marginal_rates_match_config():
    # short episodes keep neighbouring frames nearly independent, so a binomial bound applies
    cfg = SynthConfig(mean_duration=2, ramp=1)
    labels = gen_labels(cfg, 10_000, np.random.default_rng(11))
    np.testing.assert_allclose(labels.mean(axis=0), cfg.rates, atol=0.03)


def test_implied_rate_consistency():
    cfg = SynthConfig(rates=(0.5, 0.2) + (0.2,) * 10, implications=("0>1:0.9",))
    with pytest.raises(ConfigError, match="rates"):
        own_rates(cfg)


def test_onset_ramp():
    labels = np.array([[0], [1], [1], [1], [0], [1]])
    np.testing.assert_allclose(onset_ramp(labels, 2)[:, 0], [0, 0.5, 1, 1, 0, 0.5])


def test_audio_only_aus_leave_frames_untouched(rng):
    cfg = SynthConfig(noise=0.0, jitter=0.0)
    labels = np.zeros((2, 12), dtype=int)
    labels[1, 8] = 1
    frames = render_frames(labels, labels.astype(float), cfg, np.random.default_rng(1))
    assert np.array_equal(frames[0], frames[1])
    labels[1, 0] = 1
    frames = render_frames(labels, labels.astype(float), cfg, np.random.default_rng(1))
    assert not np.array_equal(frames[0], frames[1])


def test_dataset_is_deterministic_and_consistent(tmp_path):
    cfg = SynthConfig(frames=90, videos=2, val_videos=1)
    m1 = gen_synthetic_dataset(cfg, tmp_path / "a", seed=7)
    gen_synthetic_dataset(cfg, tmp_path / "b", seed=7)
    gen_synthetic_dataset(cfg, tmp_path / "c", seed=8)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")
    assert [v.split for v in m1.videos] == ["train", "val"]
    assert [v.frames for v in m1.videos] == [45, 45]
    labels = load_labels(tmp_path / "a" / m1.videos[0].labels, 12)
    assert labels.shape == (45, 12)


def test_audio_tone_follows_label(tmp_path):
    cfg = SynthConfig(frames=300, videos=1, val_videos=0, rates=(0.2,) * 8 + (0.5, 0.2, 0.2, 0.2),
                      implications=())
    m = gen_synthetic_dataset(cfg, tmp_path, seed=2)
    labels = load_labels(tmp_path / m.videos[0].labels, 12)
    wav = read_wav(tmp_path / m.videos[0].audio)
    mag = stft_magnitude(wav, 1024, 256)
    tone_bin = int(round(TONE_FREQS[0] * 1024 / cfg.sample_rate))
    # frame index at each STFT column centre
    frame = ((np.arange(mag.shape[1]) * 256 + 512) / cfg.sample_rate * cfg.fps).astype(int)
    on, off = labels[frame, 8] == 1, labels[frame, 8] == 0
    assert mag[tone_bin, on].mean() > 5 * mag[tone_bin, off].mean()
