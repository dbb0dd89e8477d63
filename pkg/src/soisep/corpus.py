"""Corpora: WAV manifests and a built-in synthetic speech-like generator."""

from __future__ import annotations

import numpy as np

from .array_sim import read_manifest
from .audio import DEFAULT_SAMPLE_RATE, read_wav


def load_corpus(manifest_path, sample_rate=DEFAULT_SAMPLE_RATE):
    """Read every mono WAV listed in a manifest."""
    paths = read_manifest(manifest_path)
    if not paths:
        raise ValueError("no sources available: manifest is empty")
    out = []
    for p in paths:
        data, _ = read_wav(p, expected_rate=sample_rate)
        if data.ndim != 1:
            data = data[0]
        out.append(data)
    return out


def _envelope(n, rng):
    attack = max(1, int(n * rng.uniform(0.1, 0.3)))
    release = max(1, int(n * rng.uniform(0.2, 0.4)))
    env = np.ones(n)
    env[:attack] = np.sin(0.5 * np.pi * np.arange(attack) / attack) ** 2
    env[n - release:] = np.cos(0.5 * np.pi * np.arange(release) / release) ** 2
    return env


def _voiced(n, sr, rng):
    t = np.arange(n) / sr
    f0 = rng.uniform(90.0, 280.0)
    glide = rng.uniform(-0.25, 0.25)
    inst_f0 = f0 * (1.0 + glide * t / max(t[-1], 1e-9))
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / sr
    n_harm = int(min(40, 4000.0 / f0))
    # two random resonances shape the harmonic amplitudes
    formants = rng.uniform([300.0, 900.0], [900.0, 2500.0])
    out = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        gain = sum(1.0 / (1.0 + ((fk - fm) / 150.0) ** 2) for fm in formants) + 0.05
        out += gain / k ** 0.5 * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    return out


def _unvoiced(n, sr, rng):
    lo = rng.uniform(1500.0, 4000.0)
    hi = min(sr / 2 - 100.0, lo + rng.uniform(1000.0, 3500.0))
    return bandlimited_noise(n, lo, hi, sr, rng)


def bandlimited_noise(n, lo, hi, sample_rate, rng):
    """White Gaussian noise restricted to ``[lo, hi]`` Hz by zeroing FFT bins."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < lo) | (f > hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def synthetic_signal(length, rng, sample_rate=DEFAULT_SAMPLE_RATE, rms=0.05):
    """Speech-like signal: voiced harmonic syllables, noise bursts and pauses."""
    out = np.zeros(length)
    pos = int(rng.integers(0, sample_rate // 10))
    while pos < length:
        kind = rng.choice(3, p=[0.65, 0.2, 0.15])
        seg = int(rng.uniform(0.08, 0.3 if kind < 2 else 0.15) * sample_rate)
        seg = min(seg, length - pos)
        if seg > 16 and kind < 2:
            src = _voiced(seg, sample_rate, rng) if kind == 0 else _unvoiced(seg, sample_rate, rng)
            src *= _envelope(seg, rng) * rng.uniform(0.3, 1.0) / (np.std(src) + 1e-12)
            out[pos:pos + seg] += src
        pos += seg
    level = np.sqrt(np.mean(out ** 2))
    return out * (rms / level) if level > 0 else out


def synthetic_corpus(num_signals, length, seed=0, sample_rate=DEFAULT_SAMPLE_RATE):
    """``num_signals`` independent speech-like signals of ``length`` samples."""
    rng = np.random.default_rng(seed)
    return [synthetic_signal(length, rng, sample_rate) for _ in range(num_signals)]
