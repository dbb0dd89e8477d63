import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soisep.audio import (
    WavError,
    hann,
    istft,
    num_frames,
    read_wav,
    standardize,
    stft,
    to_db,
    write_wav,
)


def test_hann_is_periodic_and_cola():
    w = hann(512)
    assert w[0] == 0.0
    np.testing.assert_allclose(w[1:], w[1:][::-1], atol=1e-15)
    np.testing.assert_allclose(w[:256] + w[256:], 1.0, atol=1e-12)


@pytest.mark.parametrize("n, expected", [(16384, 65), (8192, 33), (512, 3), (1000, 5)])
def test_frame_count(n, expected):
    spec = stft(np.random.default_rng(0).standard_normal(n))
    assert spec.shape == (expected, 257)
    assert num_frames(n, 256) == expected


def test_single_tone_lands_in_its_bin():
    sr, n = 16000, 16384
    k = 40
    t = np.arange(n) / sr
    x = np.sin(2 * np.pi * k * sr / 512 * t)
    mag = stft(x).magnitude[10]
    assert np.argmax(mag) == k


@settings(max_examples=40, deadline=None)
@given(n=st.integers(16, 5000), seed=st.integers(0, 2**31 - 1), frame=st.sampled_from([64, 256, 512]))
def test_round_trip(n, seed, frame):
    x = np.random.default_rng(seed).standard_normal(n)
    y = istft(stft(x, frame))
    assert y.shape == x.shape
    np.testing.assert_allclose(y, x, atol=1e-10)


def test_round_trip_after_identity_mask():
    x = np.random.default_rng(3).standard_normal(4000)
    spec = stft(x)
    y = istft(spec.with_bins(spec.bins * np.ones(spec.shape)))
    np.testing.assert_allclose(y, x, atol=1e-10)


def test_masks_partition_signal():
    x = np.random.default_rng(4).standard_normal(8192)
    spec = stft(x)
    mask = np.random.default_rng(5).random(spec.shape) > 0.5
    a = istft(spec.with_bins(spec.bins * mask))
    b = istft(spec.with_bins(spec.bins * ~mask))
    np.testing.assert_allclose(a + b, x, atol=1e-10)


@pytest.mark.parametrize("frame, hop", [(511, None), (0, None), (512, 128)])
def test_bad_framing_rejected(frame, hop):
    with pytest.raises(ValueError):
        stft(np.ones(1024), frame, hop)


def test_empty_signal_rejected():
    with pytest.raises(ValueError):
        stft(np.zeros(0))


def test_to_db_floor():
    db = to_db(np.array([0.0, 1.0, 10.0, -10.0]))
    np.testing.assert_allclose(db, [-180.0, 0.0, 20.0, 20.0])


def test_standardize_median_and_scale():
    x = np.random.default_rng(0).standard_normal((65, 514)) * 7 + 3
    z = standardize(x)
    assert abs(np.median(z)) < 1e-12
    assert np.isclose(z.std(), 1.0)


def test_standardize_constant_is_zero():
    assert not np.any(standardize(np.full((4, 5), 2.5)))


def test_standardize_rejects_nonfinite():
    with pytest.raises(ValueError):
        standardize(np.array([1.0, np.nan]))


def test_wav_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, 1000)
    write_wav(tmp_path / "a.wav", x)
    y, sr = read_wav(tmp_path / "a.wav", expected_rate=16000)
    assert sr == 16000
    np.testing.assert_allclose(y, x, atol=1.0 / 32768)


def test_wav_clips_out_of_range(tmp_path):
    write_wav(tmp_path / "a.wav", np.array([2.0, -2.0, 0.0]))
    y, _ = read_wav(tmp_path / "a.wav")
    assert y.max() <= 1.0 and y.min() >= -1.0


def test_wav_rate_mismatch(tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(10), sample_rate=8000)
    with pytest.raises(WavError):
        read_wav(tmp_path / "a.wav", expected_rate=16000)


def test_wav_garbage(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not a wav file")
    with pytest.raises(WavError):
        read_wav(tmp_path / "bad.wav")
