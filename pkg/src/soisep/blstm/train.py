"""Training: example construction, RMSProp with momentum, training loop, checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..array_sim import Scene, generate_scene, ideal_soi_mask
from ..audio import stft
from ..beamformer import process_stream
from .network import (
    NetworkConfig,
    param_shapes,
    NetworkWeights,
    backward,
    forward_with_cache,
    msa_loss_grad,
    predict_proba,
    preprocess,
    vad_mask,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "soisep-blstm"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Raised when a loss or gradient turns non-finite."""


@dataclass
class Batch:
    """Stacked training examples.

    ``features`` is ``(B, T, 2F)``; ``ideal_soi``, ``magnitude`` and ``vad``
    are ``(B, T, F)``.
    """

    features: np.ndarray
    ideal_soi: np.ndarray
    magnitude: np.ndarray
    vad: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    def take(self, idx):
        return Batch(self.features[idx], self.ideal_soi[idx], self.magnitude[idx], self.vad[idx])

    @classmethod
    def concat(cls, batches):
        return cls(*(np.concatenate([getattr(b, k) for b in batches]) for k in
                     ("features", "ideal_soi", "magnitude", "vad")))


def scene_examples(scene: Scene, cfg: NetworkConfig, beamformer_geometry=None):
    """Beamform a scene and turn every complete ``N_B`` buffer into a training example."""
    geometry = beamformer_geometry or scene.geometry
    outs = process_stream(scene.mic_signals, scene.soi_doa, geometry, cfg.beam_frame,
                          cfg.buffer_len, cfg.phi_max, cfg.sample_rate)
    soi, intf = scene.soi, scene.interference
    feats, ideal, mags, vads = [], [], [], []
    nb = cfg.buffer_len
    for b, out in enumerate(outs):
        seg = slice(b * nb, (b + 1) * nb)
        feats.append(preprocess(out.z_soi, out.z_int, cfg))
        ideal.append(ideal_soi_mask(soi[seg], intf[seg], cfg.fft_len, cfg.sample_rate))
        mag = np.abs(stft(out.ref, cfg.fft_len, sample_rate=cfg.sample_rate).bins)
        mags.append(mag)
        vads.append(vad_mask(mag, cfg.vad_db))
    return Batch(np.asarray(feats, np.float32), np.asarray(ideal, bool),
                 np.asarray(mags, np.float32), np.asarray(vads, bool))


def build_dataset(corpus, geometry, cfg: NetworkConfig, num_scenes, seed=0, min_sources=2,
                  max_sources=2, n_buffers=1):
    """Simulate ``num_scenes`` random scenes and stack their examples.

    The source count of each scene is drawn uniformly from
    ``[min_sources, max_sources]``; scene ``k`` uses seed ``seed + k``.
    """
    rng = np.random.default_rng(seed)
    counts = rng.integers(min_sources, max_sources + 1, size=num_scenes)
    parts = []
    for k, n_src in enumerate(counts):
        scene = generate_scene(corpus, int(n_src), geometry, seed + k, length=n_buffers * cfg.buffer_len,
                               frame_len=cfg.fft_len, sample_rate=cfg.sample_rate)
        parts.append(scene_examples(scene, cfg))
    return Batch.concat(parts)


# --- loss and gradients --------------------------------------------------

def batch_loss_and_grads(batch: Batch, weights: NetworkWeights):
    """Mean MSA loss over the batch and its gradient for every parameter."""
    prob, cache = forward_with_cache(batch.features, weights)
    loss, d_prob = msa_loss_grad(prob, batch.ideal_soi, batch.magnitude, batch.vad)
    n = len(batch)
    grads = backward(d_prob / n, cache, weights)
    return loss / n, grads


# --- optimizer -----------------------------------------------------------

@dataclass
class RMSPropState:
    """Running mean of squared gradients and momentum buffer per parameter."""

    mean_square: dict
    moment: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, weights: NetworkWeights):
        return cls({k: np.zeros_like(v) for k, v in weights.params.items()},
                   {k: np.zeros_like(v) for k, v in weights.params.items()}, 0)


def rmsprop_update(weights: NetworkWeights, grads, state: RMSPropState, lr, momentum=0.9,
                   decay=0.9, eps=1e-8):
    """RMSProp with heavy-ball momentum::

        ms  <- decay * ms + (1 - decay) * g^2
        mom <- momentum * mom + lr * g / sqrt(ms + eps)
        w   <- w - mom

    Returns new weights and state; the inputs are left untouched.
    """
    params, ms, mom = {}, {}, {}
    for k, w in weights.params.items():
        g = grads[k]
        ms[k] = decay * state.mean_square[k] + (1.0 - decay) * g * g
        mom[k] = momentum * state.moment[k] + lr * g / np.sqrt(ms[k] + eps)
        params[k] = w - mom[k]
    new = NetworkWeights(weights.layers, weights.hidden, weights.n_freq, params)
    return new, RMSPropState(ms, mom, state.step + 1)


def train_step(batch: Batch, weights: NetworkWeights, state: RMSPropState, cfg: NetworkConfig):
    """One optimizer step on ``batch``; returns ``(weights, state, loss)``.

    The loss reported is the one evaluated before the update.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    loss, grads = batch_loss_and_grads(batch, weights)
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if not np.isfinite(loss) or bad:
        raise TrainingDiverged(f"step {state.step}: loss={loss!r}, non-finite gradients in {bad[:5]}")
    weights, state = rmsprop_update(weights, grads, state, cfg.learning_rate, cfg.momentum, cfg.rms_decay)
    if not weights.all_finite():
        raise TrainingDiverged(f"step {state.step}: parameters became non-finite")
    return weights, state, loss


def evaluate_loss(batch: Batch, weights: NetworkWeights, chunk=32):
    """Mean MSA loss over ``batch`` without gradients."""
    total = 0.0
    for s in range(0, len(batch), chunk):
        part = batch.take(slice(s, s + chunk))
        prob = predict_proba(part.features, weights)
        total += msa_loss_grad(prob, part.ideal_soi, part.magnitude, part.vad)[0]
    return total / len(batch)


def train(data: Batch, cfg: NetworkConfig, steps, *, batch_size=16, weights=None, state=None,
          seed=0, log_path=None, checkpoint_path=None, checkpoint_every=0, on_step=None):
    """Minibatch training loop.

    Resumes from ``weights``/``state`` when given (step numbering continues).
    Appends ``step,loss,wall_time`` rows to ``log_path``. On divergence the
    last good checkpoint is kept and :class:`TrainingDiverged` propagates.
    """
    weights = weights if weights is not None else NetworkWeights.for_config(cfg, seed)
    state = state if state is not None else RMSPropState.zeros_like(weights)
    rng = np.random.default_rng(seed + state.step)
    n = len(data)
    log_file = None
    writer = None
    if log_path is not None:
        new_file = not Path(log_path).exists()
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if new_file:
            writer.writerow(["step", "loss", "wall_time"])
    t0 = time.perf_counter()
    order = rng.permutation(n)
    pos = 0
    history = []
    try:
        for _ in range(steps):
            if pos + batch_size > n:
                order = rng.permutation(n)
                pos = 0
            idx = np.sort(order[pos:pos + batch_size])
            pos += batch_size
            step = state.step
            weights, state, loss = train_step(data.take(idx), weights, state, cfg)
            history.append(loss)
            if writer is not None:
                writer.writerow([step, f"{loss:.9g}", f"{time.perf_counter() - t0:.4f}"])
            if on_step is not None:
                on_step(step, loss)
            if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, weights, cfg, state)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, weights, cfg, state)
    return weights, state, history


# --- checkpoints ---------------------------------------------------------

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr):
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"))),
                              allow_pickle=False)
    return buf.getvalue()


def _config_to_json(cfg: NetworkConfig):
    return {k: (float(v) if isinstance(v, np.floating) else v) for k, v in asdict(cfg).items()}


def save_checkpoint(path, weights: NetworkWeights, cfg: NetworkConfig, state: RMSPropState | None = None):
    """Write a zip container of little-endian ``.npy`` tensors plus a JSON header.

    Entry timestamps are fixed so identical contents give identical bytes.
    The file is written to a temporary name and renamed into place.
    """
    path = Path(path)
    order = list(param_shapes(weights.layers, weights.hidden, weights.n_freq))
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "byteorder": "little",
        "layers": weights.layers,
        "hidden": weights.hidden,
        "fft_len": cfg.fft_len,
        "n_freq": weights.n_freq,
        "step": state.step if state is not None else 0,
        "config": _config_to_json(cfg),
        "tensors": {k: list(weights.params[k].shape) for k in order},
    }
    entries = [("header.json", json.dumps(header, indent=2, sort_keys=True).encode())]
    entries += [(f"params/{k}.npy", _npy_bytes(weights.params[k])) for k in order]
    if state is not None:
        entries += [(f"rmsprop/ms/{k}.npy", _npy_bytes(state.mean_square[k])) for k in order]
        entries += [(f"rmsprop/mom/{k}.npy", _npy_bytes(state.moment[k])) for k in order]
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)
    tmp.replace(path)


def load_checkpoint(path):
    """Return ``(weights, cfg, state)``; ``state`` is ``None`` if none was stored."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise ValueError(f"{path}: not a checkpoint file ({exc})") from exc
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except KeyError:
            raise ValueError(f"{path}: checkpoint has no header") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if header.get("version", 0) > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")

        def read(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False).astype(np.float64)

        names = list(param_shapes(header["layers"], header["hidden"], header["n_freq"]))
        params = {k: read(f"params/{k}.npy") for k in names}
        cfg = NetworkConfig(**header["config"])
        weights = NetworkWeights(header["layers"], header["hidden"], header["n_freq"], params)
        state = None
        if f"rmsprop/ms/{names[0]}.npy" in zf.namelist():
            state = RMSPropState({k: read(f"rmsprop/ms/{k}.npy") for k in names},
                                 {k: read(f"rmsprop/mom/{k}.npy") for k in names},
                                 int(header["step"]))
    return weights, cfg, state
