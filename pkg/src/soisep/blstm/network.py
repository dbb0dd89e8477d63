"""Stacked BLSTM binary-masking network: features, forward/backward, loss, masks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..audio import DEFAULT_SAMPLE_RATE, istft, standardize, stft, to_db
from .kernels import lstm_backward, lstm_forward

BYTES_PER_PARAM = 4
DIRECTIONS = ("fw", "bw")


@dataclass(frozen=True)
class NetworkConfig:
    """Hyperparameters of the masking stage.

    ``layers``/``hidden`` size the BLSTM stack; ``buffer_len`` (N_B) is the
    number of samples per input window and ``fft_len`` (N_H) the STFT length.
    """

    layers: int = 3
    hidden: int = 200
    buffer_len: int = 16384
    fft_len: int = 512
    vad_db: float = 40.0
    learning_rate: float = 1e-5
    momentum: float = 0.9
    rms_decay: float = 0.9
    beam_frame: int = 1024
    phi_max: float = np.pi / 3
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")
        if self.fft_len <= 0 or self.fft_len % 2:
            raise ValueError("fft_len must be a positive even integer")
        if self.beam_frame <= 0 or self.buffer_len <= 0 or self.buffer_len % self.beam_frame:
            raise ValueError(f"buffer_len {self.buffer_len} must be a positive multiple of {self.beam_frame}")
        if self.buffer_len % (self.fft_len // 2):
            raise ValueError("buffer_len must be a multiple of fft_len/2")
        if self.vad_db <= 0:
            raise ValueError("vad_db must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.momentum < 1 and 0 <= self.rms_decay < 1):
            raise ValueError("momentum and rms_decay must lie in [0, 1)")

    @property
    def n_freq(self):
        return self.fft_len // 2 + 1

    @property
    def n_frames(self):
        return self.buffer_len // (self.fft_len // 2) + 1

    def replace(self, **kw):
        return replace(self, **kw)


def param_shapes(layers, hidden, n_freq):
    """Ordered ``name -> shape`` map of every trainable tensor."""
    shapes = {}
    d_in = 2 * n_freq
    for l in range(layers):
        for d in DIRECTIONS:
            shapes[f"l{l}.{d}.Wx"] = (d_in, 4 * hidden)
            shapes[f"l{l}.{d}.Wh"] = (hidden, 4 * hidden)
            shapes[f"l{l}.{d}.b"] = (4 * hidden,)
        d_in = 2 * hidden
    shapes["fc.W"] = (2 * hidden, 2 * n_freq)
    shapes["fc.b"] = (2 * n_freq,)
    return shapes


def parameter_count(layers, hidden, n_freq):
    """Closed form: ``2*4((2F+H)H+H) + (L-1)*2*4(3H*H+H) + (2H+1)2F``."""
    first = 4 * ((2 * n_freq + hidden) * hidden + hidden)
    deeper = 4 * ((2 * hidden + hidden) * hidden + hidden)
    fc = (2 * hidden + 1) * 2 * n_freq
    return 2 * first + 2 * (layers - 1) * deeper + fc


def estimate_memory(cfg: NetworkConfig):
    """Parameter memory in MB (10^6 bytes) at 4 bytes per parameter."""
    return parameter_count(cfg.layers, cfg.hidden, cfg.n_freq) * BYTES_PER_PARAM / 1e6


@dataclass
class NetworkWeights:
    layers: int
    hidden: int
    n_freq: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.layers, self.hidden, self.n_freq)
        if set(shapes) != set(self.params):
            missing = set(shapes) ^ set(self.params)
            raise ValueError(f"parameter set mismatch: {sorted(missing)}")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise ValueError(f"{k}: shape {self.params[k].shape}, expected {s}")

    @classmethod
    def zeros(cls, layers, hidden, n_freq, dtype=np.float64):
        shapes = param_shapes(layers, hidden, n_freq)
        return cls(layers, hidden, n_freq, {k: np.zeros(s, dtype) for k, s in shapes.items()})

    @classmethod
    def init(cls, layers, hidden, n_freq, seed=0):
        """Uniform in ``[-1/sqrt(H), 1/sqrt(H)]``, forget-gate biases at 1."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(hidden)
        params = {}
        for k, s in param_shapes(layers, hidden, n_freq).items():
            params[k] = rng.uniform(-bound, bound, size=s)
            if k.endswith(".b") and not k.startswith("fc"):
                params[k][hidden:2 * hidden] = 1.0
        return cls(layers, hidden, n_freq, params)

    @classmethod
    def for_config(cls, cfg: NetworkConfig, seed=0):
        return cls.init(cfg.layers, cfg.hidden, cfg.n_freq, seed)

    def count(self):
        return sum(p.size for p in self.params.values())

    def astype(self, dtype):
        return NetworkWeights(self.layers, self.hidden, self.n_freq,
                              {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self):
        return self.astype(next(iter(self.params.values())).dtype)

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.params.values())


@dataclass(frozen=True)
class MaskPair:
    """Binary SOI/interference masks and the SOI-class probabilities behind them."""

    soi: np.ndarray
    int: np.ndarray
    probabilities: np.ndarray


# --- features ------------------------------------------------------------

def vad_mask(magnitude, vad_db=40.0):
    """Bins whose dB level exceeds the window maximum minus ``vad_db``."""
    if vad_db <= 0:
        raise ValueError("vad_db must be positive")
    mag = magnitude.magnitude if hasattr(magnitude, "magnitude") else magnitude
    db = to_db(mag)
    return db > db.max() - vad_db


def preprocess(z_soi, z_int, cfg: NetworkConfig):
    """Standardized dB spectrograms of both beamformer outputs, side by side: ``(T, 2F)``."""
    halves = []
    for z in (z_soi, z_int):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (cfg.buffer_len,):
            raise ValueError(f"expected {cfg.buffer_len} samples, got shape {z.shape}")
        spec = stft(z, cfg.fft_len, sample_rate=cfg.sample_rate)
        halves.append(standardize(to_db(spec.bins)))
    return np.concatenate(halves, axis=1)


# --- forward / backward --------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _run(features, weights: NetworkWeights, keep_cache):
    x = np.asarray(features)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    dtype = next(iter(weights.params.values())).dtype
    if x.shape[-1] != 2 * weights.n_freq:
        raise ValueError(f"feature width {x.shape[-1]} != 2F = {2 * weights.n_freq}")
    x = np.ascontiguousarray(x.transpose(1, 0, 2), dtype=dtype)  # (T, B, D)
    T, B, _ = x.shape
    H = weights.hidden
    p = weights.params
    cache = []
    for l in range(weights.layers):
        outs = []
        layer_cache = {"x": x}
        for d in DIRECTIONS:
            xin = x if d == "fw" else x[::-1]
            gx = (xin.reshape(T * B, -1) @ p[f"l{l}.{d}.Wx"] + p[f"l{l}.{d}.b"]).reshape(T, B, 4 * H)
            hs, cs, acts = lstm_forward(gx, p[f"l{l}.{d}.Wh"])
            layer_cache[d] = (hs, cs, acts)
            outs.append(hs if d == "fw" else hs[::-1])
        x = np.ascontiguousarray(np.concatenate(outs, axis=2))
        if keep_cache:
            cache.append(layer_cache)
    F = weights.n_freq
    logits = (x.reshape(T * B, -1) @ p["fc.W"] + p["fc.b"]).reshape(T, B, 2 * F)
    prob = _sigmoid(logits[..., :F] - logits[..., F:]).transpose(1, 0, 2)
    if keep_cache:
        return prob, (cache, x, squeeze)
    return (prob[0] if squeeze else prob), None


def predict_proba(features, weights: NetworkWeights):
    """SOI-class probability per bin, ``(T, F)`` or ``(B, T, F)``."""
    return _run(features, weights, keep_cache=False)[0]


def forward(features, weights: NetworkWeights):
    """Softmax over the two classes per bin, binarized by argmax (ties go to the interference)."""
    prob = predict_proba(features, weights)
    soi = prob > 0.5
    return MaskPair(soi, ~soi, prob)


def backward(d_prob, cache, weights: NetworkWeights):
    """Gradients of a scalar w.r.t. all parameters given ``dL/dprob_soi`` shaped ``(B, T, F)``.

    ``cache`` comes from :func:`forward_with_cache`.
    """
    layer_caches, top, _ = cache
    p = weights.params
    H = weights.hidden
    F = weights.n_freq
    T, B, _ = top.shape
    grads = {}
    dp = np.ascontiguousarray(np.asarray(d_prob).transpose(1, 0, 2))
    # d prob / d(z_soi - z_int) = prob (1 - prob); prob recomputed from the top activations
    logits = (top.reshape(T * B, -1) @ p["fc.W"] + p["fc.b"]).reshape(T, B, 2 * F)
    prob = _sigmoid(logits[..., :F] - logits[..., F:])
    g = dp * prob * (1.0 - prob)
    dlogits = np.concatenate([g, -g], axis=2).reshape(T * B, 2 * F)
    grads["fc.W"] = top.reshape(T * B, -1).T @ dlogits
    grads["fc.b"] = dlogits.sum(axis=0)
    dx = (dlogits @ p["fc.W"].T).reshape(T, B, 2 * H)
    for l in range(weights.layers - 1, -1, -1):
        lc = layer_caches[l]
        x = lc["x"]
        dx_in = np.zeros_like(x)
        for k, d in enumerate(DIRECTIONS):
            hs, cs, acts = lc[d]
            dh = dx[..., k * H:(k + 1) * H]
            xin = x
            if d == "bw":
                dh = dh[::-1]
                xin = x[::-1]
            wh = p[f"l{l}.{d}.Wh"]
            dgx = lstm_backward(dh, cs, acts, wh)
            flat = dgx.reshape(T * B, 4 * H)
            grads[f"l{l}.{d}.Wx"] = xin.reshape(T * B, -1).T @ flat
            grads[f"l{l}.{d}.b"] = flat.sum(axis=0)
            grads[f"l{l}.{d}.Wh"] = hs[:-1].reshape((T - 1) * B, H).T @ dgx[1:].reshape((T - 1) * B, 4 * H)
            dxi = (flat @ p[f"l{l}.{d}.Wx"].T).reshape(T, B, -1)
            dx_in += dxi if d == "fw" else dxi[::-1]
        dx = dx_in
    return grads


def forward_with_cache(features, weights: NetworkWeights):
    """``(prob (B, T, F), cache)`` for a batch; used by training."""
    return _run(features, weights, keep_cache=True)


# --- loss ----------------------------------------------------------------

def msa_loss(prob_soi, prob_int, ideal_soi, ideal_int, magnitude, vad):
    """Magnitude-weighted squared mask error summed over both classes.

    The VAD gate multiplies the SOI probabilities before comparison.
    """
    arrays = [np.asarray(a) for a in (prob_soi, prob_int, ideal_soi, ideal_int, magnitude, vad)]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ValueError(f"shape mismatch: {[a.shape for a in arrays]}")
    ps, pi, os_, oi, s, psi = arrays
    s2 = s.astype(np.float64) ** 2
    r_soi = os_ - psi * ps
    r_int = oi - pi
    return float(np.sum(r_soi ** 2 * s2) + np.sum(r_int ** 2 * s2))


def msa_loss_grad(prob_soi, ideal_soi, magnitude, vad):
    """Loss and ``dL/dprob_soi`` with ``prob_int = 1 - prob_soi`` and ``O_int = 1 - O_soi``."""
    s2 = np.asarray(magnitude, dtype=np.float64) ** 2
    o = np.asarray(ideal_soi, dtype=np.float64)
    psi = np.asarray(vad, dtype=np.float64)
    r_soi = o - psi * prob_soi
    r_int = (1.0 - o) - (1.0 - prob_soi)
    loss = np.sum(r_soi ** 2 * s2) + np.sum(r_int ** 2 * s2)
    grad = -2.0 * s2 * r_soi * psi + 2.0 * s2 * r_int
    return loss, grad


# --- mask application ----------------------------------------------------

def separate(ref, masks: MaskPair, cfg: NetworkConfig):
    """Apply both binary masks to the reference microphone and invert: ``(y_soi, y_int)``."""
    ref = np.asarray(ref, dtype=np.float64)
    if ref.shape != (cfg.buffer_len,):
        raise ValueError(f"expected {cfg.buffer_len} samples, got shape {ref.shape}")
    spec = stft(ref, cfg.fft_len, sample_rate=cfg.sample_rate)
    if masks.soi.shape != spec.shape:
        raise ValueError(f"mask shape {masks.soi.shape} != spectrogram shape {spec.shape}")
    y_soi = istft(spec.with_bins(np.where(masks.soi, spec.bins, 0)))
    y_int = istft(spec.with_bins(np.where(masks.int, spec.bins, 0)))
    return y_soi, y_int
