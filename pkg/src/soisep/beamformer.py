"""Phase-based frequency-masking beamformer.

Each ``N``-sample frame of the array is phase-aligned toward the SOI
direction. Bins whose mean pairwise phase difference stays within
``phi_max`` are attributed to the SOI, the rest to the cumulative
interference, and both masks are applied to the reference microphone.
Masked frames are overlap-added into ``N_B``-sample buffers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_sim import ArrayGeometry
from .audio import DEFAULT_SAMPLE_RATE, hann

DEFAULT_FRAME = 1024
DEFAULT_PHI_MAX = np.pi / 3


@dataclass(frozen=True)
class MultichannelSpectra:
    """One-sided spectra of an ``n_fft``-sample frame, ``X`` shaped ``(..., M, n_fft//2 + 1)``."""

    X: np.ndarray
    n_fft: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def num_mics(self):
        return self.X.shape[-2]

    @property
    def freqs(self):
        return np.fft.rfftfreq(self.n_fft, 1.0 / self.sample_rate)


@dataclass(frozen=True)
class FrequencyMaskPair:
    soi: np.ndarray
    int: np.ndarray


@dataclass(frozen=True)
class BeamformerOutput:
    """One ``N_B``-sample buffer: SOI estimate, interference estimate, reference pass-through."""

    z_soi: np.ndarray
    z_int: np.ndarray
    ref: np.ndarray


def phase_align(spectra: MultichannelSpectra, doa, geometry: ArrayGeometry):
    """Rotate every channel by ``exp(i 2 pi f t_m)`` so a plane wave from ``doa`` is in phase."""
    if geometry.num_mics != spectra.num_mics:
        raise ValueError(f"geometry has {geometry.num_mics} mics, spectra have {spectra.num_mics}")
    tau = geometry.delays(doa)
    steer = np.exp(2j * np.pi * np.outer(tau, spectra.freqs))
    steer[0] = 1.0
    return MultichannelSpectra(spectra.X * steer, spectra.n_fft, spectra.sample_rate)


def mean_pairwise_phase_diff(spectra):
    """Mean over microphone pairs of ``|wrap(phase_i - phase_j)|`` per bin, in ``[0, pi]``.

    Accepts a :class:`MultichannelSpectra` or a raw ``(..., M, F)`` array.
    """
    X = spectra.X if isinstance(spectra, MultichannelSpectra) else np.asarray(spectra)
    m = X.shape[-2]
    if m < 2:
        raise ValueError("need at least two microphones")
    i, j = np.triu_indices(m, k=1)
    # angle of X_i conj(X_j) is the phase difference already wrapped to (-pi, pi]
    diffs = np.abs(np.angle(X[..., i, :] * np.conj(X[..., j, :])))
    return diffs.mean(axis=-2)


def make_masks(phase_diff, phi_max=DEFAULT_PHI_MAX, exclude_edges=False):
    """SOI mask where ``phase_diff <= phi_max``; interference mask is its complement.

    With ``exclude_edges`` the first (DC) and last (Nyquist) bins are forced to
    the interference mask, since their phase carries no direction.
    """
    if not 0 < phi_max <= np.pi:
        raise ValueError("phi_max must lie in (0, pi]")
    soi = np.asarray(phase_diff) <= phi_max
    if exclude_edges:
        soi = soi.copy()
        soi[..., 0] = False
        soi[..., -1] = False
    return FrequencyMaskPair(soi, ~soi)


def apply_masks(spectra, masks: FrequencyMaskPair):
    """Mask the reference channel: returns ``(Z_soi, Z_int)`` spectra."""
    X = spectra.X if isinstance(spectra, MultichannelSpectra) else np.asarray(spectra)
    ref = X[..., 0, :]
    if masks.soi.shape[-1] != ref.shape[-1]:
        raise ValueError(f"mask length {masks.soi.shape[-1]} != spectrum length {ref.shape[-1]}")
    return np.where(masks.soi, ref, 0), np.where(masks.int, ref, 0)


def beamform_frames(frames, doa, geometry, phi_max=DEFAULT_PHI_MAX, sample_rate=DEFAULT_SAMPLE_RATE):
    """Run the beamformer on windowed frames shaped ``(K, M, N)``.

    Returns time-domain ``(K, N)`` arrays for the SOI and interference
    estimates (still carrying the analysis window).
    """
    n = frames.shape[-1]
    spectra = MultichannelSpectra(np.fft.rfft(frames, axis=-1), n, sample_rate)
    aligned = phase_align(spectra, doa, geometry)
    masks = make_masks(mean_pairwise_phase_diff(aligned), phi_max, exclude_edges=True)
    z_soi, z_int = apply_masks(spectra, masks)
    return np.fft.irfft(z_soi, n=n, axis=-1), np.fft.irfft(z_int, n=n, axis=-1)


class StreamingBeamformer:
    """Stateful block processor.

    Feed ``(M, k)`` blocks of any size with :meth:`push`; complete
    ``N_B``-sample buffers are returned as they fill. Output lags the input
    by ``N/2`` samples internally, but buffers are aligned to input time:
    buffer ``b`` covers input samples ``[b*N_B, (b+1)*N_B)``.
    """

    def __init__(self, doa, geometry: ArrayGeometry, frame_len=DEFAULT_FRAME, buffer_len=16384,
                 phi_max=DEFAULT_PHI_MAX, sample_rate=DEFAULT_SAMPLE_RATE):
        if frame_len <= 0 or frame_len % 2:
            raise ValueError("frame_len must be a positive even integer")
        if buffer_len <= 0 or buffer_len % frame_len:
            raise ValueError(f"N_B={buffer_len} must be a positive multiple of N={frame_len}")
        if not -90.0 <= doa <= 90.0:
            raise ValueError(f"doa {doa} outside [-90, 90] degrees")
        self.doa = float(doa)
        self.geometry = geometry
        self.frame_len = frame_len
        self.hop = frame_len // 2
        self.buffer_len = buffer_len
        self.phi_max = phi_max
        self.sample_rate = sample_rate
        self._window = hann(frame_len)
        m = geometry.num_mics
        # previous half-frame of input, primed with zeros (leading edge padding)
        self._history = np.zeros((m, self.hop))
        self._pending = np.zeros((m, 0))
        self._tail = np.zeros((2, self.hop))
        self._started = False
        self._out = [np.zeros((0,)), np.zeros((0,)), np.zeros((0,))]
        self._ref_queue = np.zeros((0,))

    @property
    def num_mics(self):
        return self.geometry.num_mics

    def push(self, block):
        block = np.atleast_2d(np.asarray(block, dtype=np.float64))
        if block.shape[0] != self.num_mics:
            raise ValueError(f"expected {self.num_mics} channels, got {block.shape[0]}")
        self._pending = np.concatenate([self._pending, block], axis=1)
        n_hops = self._pending.shape[1] // self.hop
        if n_hops == 0:
            return []
        take = n_hops * self.hop
        new = self._pending[:, :take]
        self._pending = self._pending[:, take:]
        self._ref_queue = np.concatenate([self._ref_queue, new[0]])
        self._process(new)
        return self._drain()

    def flush(self):
        """Finish the samples still in flight; an incomplete final buffer is dropped."""
        m = self.num_mics
        pad = (-self._pending.shape[1]) % self.hop
        extra = np.zeros((m, pad + self.hop))
        real = self._pending.shape[1]
        self._pending = np.concatenate([self._pending, extra], axis=1)
        ref_pad = self._pending[0, :real + pad]
        self._ref_queue = np.concatenate([self._ref_queue, ref_pad])
        new, self._pending = self._pending, np.zeros((m, 0))
        self._process(new)
        return self._drain()

    def _process(self, new):
        hop = self.hop
        sig = np.concatenate([self._history, new], axis=1)
        self._history = sig[:, -hop:]
        n_frames = new.shape[1] // hop
        frames = np.lib.stride_tricks.sliding_window_view(sig, self.frame_len, axis=1)[:, ::hop]
        frames = frames[:, :n_frames].transpose(1, 0, 2) * self._window
        soi, intf = beamform_frames(frames, self.doa, self.geometry, self.phi_max, self.sample_rate)
        for k, fr in enumerate((soi, intf)):
            # frame j ends at the latest hop; its first half completes the pending tail
            blocks = np.zeros((n_frames + 1, hop))
            blocks[0] = self._tail[k]
            blocks[:-1] += fr[:, :hop]
            blocks[1:] += fr[:, hop:]
            done = blocks[:-1].reshape(-1)
            self._tail[k] = blocks[-1]
            if not self._started:
                # first completed half-frame precedes input sample 0
                done = done[hop:]
            self._out[k] = np.concatenate([self._out[k], done])
        self._started = True

    def _drain(self):
        out = []
        nb = self.buffer_len
        while min(self._out[0].size, self._ref_queue.size) >= nb:
            z_soi, self._out[0] = self._out[0][:nb], self._out[0][nb:]
            z_int, self._out[1] = self._out[1][:nb], self._out[1][nb:]
            ref, self._ref_queue = self._ref_queue[:nb], self._ref_queue[nb:]
            out.append(BeamformerOutput(z_soi, z_int, ref))
        return out


def process_stream(mic_signals, doa, geometry, frame_len=DEFAULT_FRAME, buffer_len=16384,
                   phi_max=DEFAULT_PHI_MAX, sample_rate=DEFAULT_SAMPLE_RATE):
    """Beamform whole recordings; returns one :class:`BeamformerOutput` per complete buffer."""
    mic_signals = np.atleast_2d(np.asarray(mic_signals, dtype=np.float64))
    bf = StreamingBeamformer(doa, geometry, frame_len, buffer_len, phi_max, sample_rate)
    return bf.push(mic_signals) + bf.flush()


def concat_outputs(outputs):
    """Join buffers back into three continuous signals ``(z_soi, z_int, ref)``."""
    if not outputs:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    return tuple(np.concatenate([getattr(o, k) for o in outputs]) for k in ("z_soi", "z_int", "ref"))
