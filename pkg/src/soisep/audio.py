"""Signal containers, Hann STFT/ISTFT, dB conversion, standardization and WAV I/O.

Time signals are plain 1-D ``float64`` arrays; multichannel signals are
``(channels, samples)`` arrays.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
DB_FLOOR = 1e-9


def hann(n):
    """Periodic Hann window of length ``n`` (sums to 1 at 50 % overlap)."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True)
class Spectrogram:
    """One-sided STFT grid.

    ``bins`` has shape ``(T, F)`` with ``F = frame_len // 2 + 1``. ``length``
    is the number of samples of the analysed signal, used to trim the
    inverse transform.
    """

    bins: np.ndarray
    frame_len: int
    hop: int
    sample_rate: int = DEFAULT_SAMPLE_RATE
    length: int | None = None

    @property
    def shape(self):
        return self.bins.shape

    @property
    def magnitude(self):
        return np.abs(self.bins)

    def with_bins(self, bins):
        """Same framing, new values (e.g. after masking)."""
        bins = np.asarray(bins)
        if bins.shape != self.bins.shape:
            raise ValueError(f"bins shape {bins.shape} != {self.bins.shape}")
        return Spectrogram(bins, self.frame_len, self.hop, self.sample_rate, self.length)


def _check_framing(frame_len, hop):
    if frame_len <= 0 or frame_len % 2:
        raise ValueError(f"frame_len must be a positive even integer, got {frame_len}")
    if hop != frame_len // 2:
        raise ValueError(f"hop must be frame_len/2 = {frame_len // 2}, got {hop}")


def num_frames(length, hop):
    """Number of STFT frames for a signal of ``length`` samples."""
    padded = -(-length // hop) * hop
    return padded // hop + 1


def stft(signal, frame_len=512, hop=None, sample_rate=DEFAULT_SAMPLE_RATE):
    """Hann-windowed STFT with 50 % overlap and half-frame zero padding at both edges.

    A signal whose length is not a multiple of ``hop`` is zero padded at the
    end. The result has ``length // hop + 1`` frames and
    ``frame_len // 2 + 1`` bins.
    """
    hop = frame_len // 2 if hop is None else hop
    _check_framing(frame_len, hop)
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("signal must be a non-empty 1-D array")
    n = x.size
    padded_len = -(-n // hop) * hop
    half = frame_len // 2
    xp = np.zeros(padded_len + frame_len)
    xp[half:half + n] = x
    frames = np.lib.stride_tricks.sliding_window_view(xp, frame_len)[::hop]
    bins = np.fft.rfft(frames * hann(frame_len), axis=-1)
    return Spectrogram(bins, frame_len, hop, sample_rate, n)


def overlap_add(frames):
    """Overlap-add ``(K, 2*hop)`` frames at hop ``hop`` into ``(K + 1) * hop`` samples."""
    frames = np.asarray(frames)
    k, n = frames.shape
    hop = n // 2
    blocks = np.zeros((k + 1, hop), dtype=frames.dtype)
    blocks[:-1] += frames[:, :hop]
    blocks[1:] += frames[:, hop:]
    return blocks.reshape(-1)


def istft(spec: Spectrogram):
    """Overlap-add inverse of :func:`stft`.

    Frames are re-windowed and the sum is divided by the overlapped squared
    window, so ``istft(stft(x))`` returns ``x`` up to rounding.
    """
    frame_len, hop = spec.frame_len, spec.hop
    _check_framing(frame_len, hop)
    bins = np.asarray(spec.bins)
    if bins.ndim != 2 or bins.shape[1] != frame_len // 2 + 1:
        raise ValueError(f"bins shape {bins.shape} inconsistent with frame_len {frame_len}")
    n_frames = bins.shape[0]
    win = hann(frame_len)
    frames = np.fft.irfft(bins, n=frame_len, axis=-1) * win
    out = overlap_add(frames)
    wsum = overlap_add(np.broadcast_to(win * win, frames.shape))
    nz = wsum > 1e-12
    out[nz] /= wsum[nz]
    half = frame_len // 2
    length = spec.length if spec.length is not None else (n_frames - 1) * hop
    return out[half:half + length].copy()


def to_db(magnitude, floor=DB_FLOOR):
    """Amplitude in dB, ``20 log10(max(|x|, floor))``."""
    mag = np.abs(np.asarray(magnitude))
    return 20.0 * np.log10(np.maximum(mag, floor))


def standardize(features):
    """Shift to zero median and scale to unit standard deviation over the whole matrix.

    A constant matrix has no scale and maps to all zeros.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot standardize an empty matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    centred = x - np.median(x)
    sd = centred.std()
    if sd <= 1e-12 * max(1.0, np.abs(x).max()):
        return np.zeros_like(x)
    return centred / sd


# --- WAV I/O -------------------------------------------------------------

class WavError(ValueError):
    """Unreadable, compressed or otherwise unsupported WAV file."""


def read_wav(path, expected_rate=None):
    """Read a 16-bit PCM WAV file.

    Returns ``(samples, sample_rate)`` where samples are floats in [-1, 1);
    mono files give a 1-D array, multichannel files ``(channels, samples)``.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            if wf.getcomptype() != "NONE":
                raise WavError(f"{path}: compressed WAV ({wf.getcomptype()}) is not supported")
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise WavError(f"{path}: {exc}") from exc
    if width != 2:
        raise WavError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        data = data.reshape(-1, channels).T.copy()
    return data, rate


def write_wav(path, samples, sample_rate=DEFAULT_SAMPLE_RATE):
    """Write 16-bit little-endian PCM. Values are clipped to [-1, 1]."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(x.shape[0])
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(pcm.T.tobytes())
