"""End-to-end separator: streaming beamformer followed by the BLSTM mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_sim import ArrayGeometry
from .beamformer import BeamformerOutput, StreamingBeamformer
from .blstm.network import NetworkConfig, NetworkWeights, forward, preprocess, separate


@dataclass
class SeparationResult:
    y_soi: np.ndarray
    y_int: np.ndarray
    z_soi: np.ndarray
    z_int: np.ndarray
    ref: np.ndarray


class Separator:
    """Trained (or freshly initialized) network plus beamformer settings."""

    def __init__(self, weights: NetworkWeights, cfg: NetworkConfig, dtype=np.float64):
        if weights.n_freq != cfg.n_freq:
            raise ValueError("weights and config disagree on the number of frequency bins")
        self.cfg = cfg
        self.weights = weights.astype(dtype)

    def process_buffer(self, out: BeamformerOutput):
        """Mask one beamformer buffer: returns ``(y_soi, y_int)``."""
        feats = preprocess(out.z_soi, out.z_int, self.cfg)
        masks = forward(feats, self.weights)
        return separate(out.ref, masks, self.cfg)

    def stream(self, doa, geometry: ArrayGeometry):
        return StreamingBeamformer(doa, geometry, self.cfg.beam_frame, self.cfg.buffer_len,
                                   self.cfg.phi_max, self.cfg.sample_rate)

    def run(self, mic_signals, doa, geometry: ArrayGeometry):
        """Separate whole recordings; the result covers every complete ``N_B`` buffer."""
        bf = self.stream(doa, geometry)
        mic_signals = np.atleast_2d(np.asarray(mic_signals, dtype=np.float64))
        outs = bf.push(mic_signals) + bf.flush()
        parts = {k: [] for k in ("y_soi", "y_int", "z_soi", "z_int", "ref")}
        for out in outs:
            y_soi, y_int = self.process_buffer(out)
            parts["y_soi"].append(y_soi)
            parts["y_int"].append(y_int)
            parts["z_soi"].append(out.z_soi)
            parts["z_int"].append(out.z_int)
            parts["ref"].append(out.ref)
        joined = {k: (np.concatenate(v) if v else np.zeros(0)) for k, v in parts.items()}
        return SeparationResult(**joined)
