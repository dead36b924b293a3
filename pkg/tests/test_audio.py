import numpy as np
import pytest

from aucorr.audio import (
    AudioInputError,
    MelSpectrogram,
    ResNet18,
    Waveform,
    center_column,
    crop_subspectrogram,
    hann,
    hz_to_mel,
    mel_centers,
    mel_filterbank,
    mel_spectrogram,
    read_wav,
    stft_magnitude,
    write_wav,
)
from aucorr.config import AudioConfig
from aucorr.gradcheck import check, projected
from aucorr.tensor import Tensor

SR = 16000


def test_silence_gives_zero_magnitudes():
    mag = stft_magnitude(Waveform(np.zeros(4096), SR), 1024, 256)
    assert mag.shape == (513, 13) and not mag.any()


@pytest.mark.parametrize("k", [3, 40, 257, 500])
def test_sine_at_bin_peaks_at_that_bin(k):
    n = np.arange(8192)
    mag = stft_magnitude(Waveform(np.sin(2 * np.pi * k * n / 1024), SR), 1024, 256)
    assert np.all(mag.argmax(axis=0) == k)


def test_parseval(rng):
    window, hop = 1024, 256
    x = np.concatenate([np.zeros(window), rng.standard_normal(20 * window), np.zeros(window)])
    mag = stft_magnitude(Waveform(x, SR), window, hop)
    power = mag ** 2
    # full-spectrum energy from the one-sided bins
    spectral = (power[0] + 2 * power[1:-1].sum(axis=0) + power[-1]).sum() / window
    overlap = (hann(window) ** 2).sum() / hop  # = 1.5 for hop = window / 4
    assert overlap == pytest.approx(1.5)
    assert spectral / (overlap * (x ** 2).sum()) == pytest.approx(1.0, rel=0.01)


def test_short_waveform_rejected():
    with pytest.raises(AudioInputError, match="shorter"):
        stft_magnitude(Waveform(np.zeros(100), SR), 1024, 256)
    with pytest.raises(AudioInputError):
        Waveform(np.array([0.0, np.nan]), SR)


def test_mel_scale_fixed_point():
    assert hz_to_mel(1000.0) == pytest.approx(999.99, abs=0.01)


def test_filterbank_rows():
    fb = mel_filterbank(513, 64, SR)
    assert fb.shape == (64, 513)
    assert np.all(fb.sum(axis=1) > 0)
    assert np.all(np.diff(fb.argmax(axis=1)) >= 0)
    assert np.all(np.diff(mel_centers(64, SR)) > 0)
    with pytest.raises(ValueError, match="cover no STFT bin"):
        mel_filterbank(33, 30, SR)


def test_log_mel_of_silence_is_floor():
    spec = mel_spectrogram(Waveform(np.zeros(SR), SR), AudioConfig())
    assert spec.values.shape == (64, 59)
    np.testing.assert_array_equal(spec.values, np.log(1e-6))


def test_440hz_lands_in_nearest_band():
    t = np.arange(SR) / SR
    spec = mel_spectrogram(Waveform(np.sin(2 * np.pi * 440.0 * t), SR), AudioConfig())
    want = int(np.argmin(np.abs(mel_centers(64, SR) - 440.0)))
    assert np.all(spec.values.argmax(axis=0) == want)


def ramp_spec(n_frames=400, hop=256):
    values = np.tile(np.arange(n_frames, dtype=np.float64), (4, 1))
    return MelSpectrogram(values=values, hop=hop, window=1024, sample_rate=SR)


def test_center_column_example():
    assert center_column(30, 30, SR, 256) == 63
    assert center_column(0, 30, SR, 256) == 0


def test_crop_middle_is_exact():
    spec = ramp_spec()
    c = center_column(90, 30, SR, 256)
    np.testing.assert_array_equal(crop_subspectrogram(spec, 90, 30, 64)[0],
                                  np.arange(c - 32, c + 32))


def test_crop_start_clamps_left_half():
    sub = crop_subspectrogram(ramp_spec(), 0, 30, 64)
    assert sub.shape == (4, 64)
    assert np.all(sub[0, :33] == 0) and sub[0, 33] == 1


def test_crop_end_clamps_right_half():
    spec = ramp_spec(n_frames=100)
    sub = crop_subspectrogram(spec, 47, 30, 64)
    assert sub[0, -1] == 99


def test_crop_shift_covariance():
    # at 25 fps one frame is exactly 2.5 columns, so two frames shift by 5
    spec = ramp_spec()
    a = crop_subspectrogram(spec, 40, 25, 64)
    b = crop_subspectrogram(spec, 42, 25, 64)
    np.testing.assert_array_equal(b, a + 5)


def test_crop_rejects_bad_input():
    with pytest.raises(AudioInputError):
        crop_subspectrogram(ramp_spec(), -1, 30, 64)


def test_resnet18_shapes_and_determinism(rng):
    net = ResNet18(AudioConfig(base_channels=4, dim=32), rng)
    x = rng.standard_normal((2, 1, 64, 64))
    assert net(Tensor(x)).shape == (2, 32)
    net.eval()
    assert np.array_equal(net(Tensor(x)).data, net(Tensor(x)).data)
    full = ResNet18(AudioConfig(base_channels=4, dim=32, full_stem=True), rng)
    assert full(Tensor(x)).shape == (2, 32)


def test_resnet18_grad(rng):
    net = ResNet18(AudioConfig(n_mels=8, sub_width=8, base_channels=2, dim=8), rng)
    x = Tensor(rng.standard_normal((2, 1, 8, 8)), requires_grad=True)
    assert check(projected(lambda: net(x), (2, 8), rng), [x], max_coords=30, rng=rng) < 1e-4


def test_wav_round_trip(tmp_path, rng):
    x = np.clip(0.3 * rng.standard_normal(1000), -1, 1)
    write_wav(tmp_path / "a.wav", Waveform(x, SR))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    np.testing.assert_allclose(back.samples, x, atol=0.5 / 32768)
