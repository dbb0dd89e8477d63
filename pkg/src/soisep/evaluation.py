"""SIR measurement, memory/SIR architecture scoring, latency and evaluation sweeps."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .array_sim import generate_scene, linear_array, named_geometry
from .beamformer import process_stream

SIR_CAP = 100.0
DEFAULT_XMAX_MB = 512.0

RANK_HEADER = ["config", "label", "mem_mb", "sir_db", "score"]
SWEEP_HEADER = ["sweep", "param", "trial", "seed", "sir_db", "sir_beamformer_db"]


@dataclass(frozen=True)
class SirResult:
    sir_db: float
    target_energy: float
    interference_energy: float


def sir(estimate, target, interferers=(), cap=SIR_CAP):
    """Signal-to-interference ratio with gain-only (length-1) distortion filters.

    The estimate is projected onto the target (target part) and onto the span
    of all sources; the difference of the two projections is the
    interference part. Results are clipped to ``[-cap, cap]`` dB.
    """
    e = np.asarray(estimate, dtype=np.float64)
    s = np.asarray(target, dtype=np.float64)
    others = [np.asarray(i, dtype=np.float64) for i in interferers]
    if any(x.shape != s.shape for x in [e, *others]):
        raise ValueError("estimate, target and interferers must have equal lengths")
    ss = float(s @ s)
    if ss == 0.0:
        raise ValueError("target signal is identically zero")
    s_target = (e @ s) / ss * s
    if others:
        basis = np.stack([s, *others], axis=1)
        coef, *_ = np.linalg.lstsq(basis, e, rcond=None)
        e_interf = basis @ coef - s_target
    else:
        e_interf = np.zeros_like(e)
    te = float(s_target @ s_target)
    ie = float(e_interf @ e_interf)
    if ie == 0.0:
        db = cap
    elif te == 0.0:
        db = -cap
    else:
        db = float(np.clip(10.0 * np.log10(te / ie), -cap, cap))
    return SirResult(db, te, ie)


# --- architecture selection ----------------------------------------------

@dataclass(frozen=True)
class ArchCandidate:
    label: str
    mem_mb: float
    sir_db: float
    config: str = ""

    def score(self, x_max=DEFAULT_XMAX_MB):
        return arch_score(self.sir_db, self.mem_mb, x_max)


def arch_score(sir_db, mem_mb, x_max=DEFAULT_XMAX_MB):
    """Area on ``[0, x_max]`` under a ramp rising to ``sir_db`` at ``mem_mb`` then flat."""
    if not 0 < mem_mb < x_max:
        raise ValueError(f"memory {mem_mb} MB must lie in (0, x_max={x_max})")
    return sir_db * (x_max - mem_mb / 2.0)


def rank_architectures(candidates, x_max=DEFAULT_XMAX_MB):
    """Highest score first; equal scores put the smaller memory first."""
    return sorted(candidates, key=lambda c: (-c.score(x_max), c.mem_mb))


def load_candidates(path=None):
    """Read ``nb,hidden,layers,mem_mb,sir_db`` rows (the bundled reference table by default)."""
    if path is None:
        text = resources.files("soisep.data").joinpath("architectures.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = csv.DictReader(line for line in text.splitlines() if line and not line.startswith("#"))
    out = []
    for r in rows:
        label = f"NB={r['nb']},H={r['hidden']},L={r['layers']}"
        config = f"{r['nb']}/{r['hidden']}/{r['layers']}"
        out.append(ArchCandidate(label, float(r["mem_mb"]), float(r["sir_db"]), config))
    return out


def ranking_rows(candidates, x_max=DEFAULT_XMAX_MB):
    return [{"config": c.config, "label": c.label, "mem_mb": f"{c.mem_mb:g}", "sir_db": f"{c.sir_db:g}",
             "score": f"{c.score(x_max):.4f}"} for c in rank_architectures(candidates, x_max)]


# --- latency ---------------------------------------------------------------

def latency_check(separator, mic_signals, doa, geometry, repeats=3):
    """Wall time to push one ``N_B`` buffer through beamformer, network and masking.

    Returns ``(seconds_per_buffer, realtime_factor)``; a factor below one
    means the buffer is processed faster than it is recorded. The best of
    ``repeats`` runs is reported, after one warm-up run.
    """
    cfg = separator.cfg
    nb = cfg.buffer_len
    mic = np.atleast_2d(np.asarray(mic_signals, dtype=np.float64))[:, :nb]
    if mic.shape[1] < nb:
        raise ValueError(f"need at least {nb} samples")

    def once():
        out = process_stream(mic, doa, geometry, cfg.beam_frame, nb, cfg.phi_max, cfg.sample_rate)[0]
        separator.process_buffer(out)

    once()
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        once()
        best = min(best, time.perf_counter() - t0)
    return best, best / (nb / cfg.sample_rate)


# --- sweeps ---------------------------------------------------------------

def _scene_seed(seed, num_sources, trial):
    return int(seed) * 1_000_003 + num_sources * 10_007 + trial


def evaluate_scene(separator, scene):
    """Output and beamformer-only SIR of one scene, over the concatenated buffers."""
    res = separator.run(scene.mic_signals, scene.soi_doa, scene.geometry)
    n = res.y_soi.size
    target = scene.soi[:n]
    interf = [x[:n] for x in scene.interferers]
    return sir(res.y_soi, target, interf).sir_db, sir(res.z_soi, target, interf).sir_db


def _sweep(separator, corpus, sweep, param, geometry, num_sources, trials, seed, n_buffers, continuous):
    rows = []
    length = n_buffers * separator.cfg.buffer_len
    for trial in range(trials):
        sseed = _scene_seed(seed, num_sources, trial)
        scene = generate_scene(corpus, num_sources, geometry, sseed, length=length,
                               continuous_doa=continuous, frame_len=separator.cfg.fft_len)
        out, bf = evaluate_scene(separator, scene)
        rows.append({"sweep": sweep, "param": param, "trial": trial, "seed": sseed,
                     "sir_db": out, "sir_beamformer_db": bf})
    return rows


def sweep_sources(separator, geometry, corpus, source_counts, trials, seed, *, n_buffers=1,
                  continuous_doa=False):
    """SIR versus number of simultaneous sources (one row per count and trial)."""
    if not continuous_doa and max(source_counts) > 5:
        raise ValueError("more than 5 sources needs continuous DOA sampling")
    rows = []
    for k in source_counts:
        rows += _sweep(separator, corpus, "sources", k, geometry, k, trials, seed, n_buffers, continuous_doa)
    return rows


def sweep_mics(separator, corpus, mic_counts, num_sources, trials, seed, *, n_buffers=1):
    """SIR versus microphone count on a linear array; the same sources are reused for every count."""
    rows = []
    for m in mic_counts:
        rows += _sweep(separator, corpus, "mics", m, linear_array(m), num_sources, trials, seed,
                       n_buffers, False)
    return rows


def sweep_geometry(separator, corpus, names, num_sources, trials, seed, *, n_buffers=1):
    """SIR per array geometry family (``linear`` means a 2-mic linear array)."""
    rows = []
    for name in names:
        rows += _sweep(separator, corpus, "geometry", name, named_geometry(name), num_sources,
                       trials, seed, n_buffers, False)
    return rows


def sweep_mics_and_geometry(separator, corpus, mic_counts, geometries, num_sources, trials, seed, *,
                            n_buffers=1):
    return (sweep_mics(separator, corpus, mic_counts, num_sources, trials, seed, n_buffers=n_buffers)
            + sweep_geometry(separator, corpus, geometries, num_sources, trials, seed, n_buffers=n_buffers))


def mean_by_param(rows, key="sir_db"):
    """``{param: mean}`` over trials, in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault(r["param"], []).append(r[key])
    return {k: float(np.mean(v)) for k, v in groups.items()}


def write_csv(rows, path, header):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
