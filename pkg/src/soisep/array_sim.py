"""Far-field microphone array simulation and training-scene generation.

Microphones are indexed from 0; microphone 0 is the reference and sits at
the origin of the polar coordinate system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, stft

SPEED_OF_SOUND = 343.0
DOA_GRID = (-90.0, -45.0, 0.0, 45.0, 90.0)
DEFAULT_SPACING = 0.1


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in polar form ``(r [m], theta [deg])`` relative to mic 0."""

    radii: tuple
    angles: tuple
    c: float = SPEED_OF_SOUND
    name: str = "custom"

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        a = np.asarray(self.angles, dtype=float)
        if r.shape != a.shape or r.ndim != 1:
            raise ValueError("radii and angles must be 1-D and of equal length")
        if r.size < 2:
            raise ValueError("an array needs at least two microphones")
        if r[0] != 0.0:
            raise ValueError("microphone 0 is the reference and must have r = 0")
        if np.any(r < 0) or not np.all(np.isfinite(r)) or not np.all(np.isfinite(a)):
            raise ValueError("radii must be finite and non-negative")
        if self.c <= 0:
            raise ValueError("speed of sound must be positive")
        object.__setattr__(self, "radii", tuple(float(v) for v in r))
        object.__setattr__(self, "angles", tuple(float(v) for v in a))

    @property
    def num_mics(self):
        return len(self.radii)

    def cartesian(self):
        r = np.asarray(self.radii)
        a = np.deg2rad(self.angles)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)

    def delays(self, doa):
        """Far-field delays (seconds) of every microphone for a source at ``doa`` degrees."""
        r = np.asarray(self.radii)
        a = np.asarray(self.angles)
        return -(r / self.c) * np.cos(np.deg2rad(a - doa))

    def to_text(self):
        return "".join(f"{r:.9g} {a:.9g}\n" for r, a in zip(self.radii, self.angles))

    @classmethod
    def from_text(cls, text, c=SPEED_OF_SOUND, name="file"):
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"geometry line {lineno}: expected 'r theta', got {line!r}")
            rows.append((float(parts[0]), float(parts[1])))
        if not rows or rows[0] != (0.0, 0.0):
            raise ValueError("geometry: first line must be '0 0' (reference microphone)")
        r, a = zip(*rows)
        return cls(r, a, c=c, name=name)

    @classmethod
    def load(cls, path, c=SPEED_OF_SOUND):
        return cls.from_text(Path(path).read_text(), c=c, name=Path(path).stem)

    def save(self, path):
        Path(path).write_text(self.to_text())


def linear_array(num_mics=2, spacing=DEFAULT_SPACING, axis=90.0, c=SPEED_OF_SOUND):
    """Uniform linear array laid out along ``axis`` degrees.

    The default axis of 90 degrees makes the delay a monotone function of the
    DOA over [-90, 90], so every DOA on that range is spatially distinct.
    """
    if num_mics < 2:
        raise ValueError("num_mics must be >= 2")
    radii = [spacing * m for m in range(num_mics)]
    angles = [0.0] + [float(axis)] * (num_mics - 1)
    return ArrayGeometry(radii, angles, c=c, name=f"linear{num_mics}")


POLYGONS = {"triangle": 3, "square": 4, "pentagon": 5, "hexagon": 6}


def polygon_array(sides, circumradius=DEFAULT_SPACING, c=SPEED_OF_SOUND):
    """Regular polygon with a microphone on each vertex; vertex 0 is the reference."""
    if isinstance(sides, str):
        name = sides
        sides = POLYGONS[sides]
    else:
        name = {v: k for k, v in POLYGONS.items()}.get(sides, f"polygon{sides}")
    if sides < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    ang = 2.0 * np.pi * np.arange(sides) / sides
    verts = circumradius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    rel = verts - verts[0]
    radii = np.hypot(rel[:, 0], rel[:, 1])
    angles = np.rad2deg(np.arctan2(rel[:, 1], rel[:, 0]))
    radii[0], angles[0] = 0.0, 0.0
    return ArrayGeometry(tuple(radii), tuple(angles), c=c, name=name)


def named_geometry(name, num_mics=None):
    """``'linear'`` (with ``num_mics``, default 2) or one of :data:`POLYGONS`."""
    if name == "linear":
        return linear_array(num_mics or 2)
    if name in POLYGONS:
        return polygon_array(name)
    raise ValueError(f"unknown geometry {name!r}")


def farfield_delay(geometry: ArrayGeometry, mic_index, doa):
    """Delay in seconds of microphone ``mic_index`` for a plane wave from ``doa`` degrees."""
    if not 0 <= mic_index < geometry.num_mics:
        raise ValueError(f"mic_index {mic_index} out of range for {geometry.num_mics} microphones")
    r = geometry.radii[mic_index]
    return -(r / geometry.c) * np.cos(np.deg2rad(geometry.angles[mic_index] - doa))


def delay_signal(signal, delay, sample_rate=DEFAULT_SAMPLE_RATE):
    """Delay by ``delay`` seconds with a per-bin phase rotation (circular, fractional)."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.size
    if abs(delay) * sample_rate >= n:
        raise ValueError("delay must be shorter than the signal")
    if delay == 0:
        return x.copy()
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spec = np.fft.rfft(x) * np.exp(-2j * np.pi * freqs * delay)
    return np.fft.irfft(spec, n=n)


def simulate_mixture(sources, geometry: ArrayGeometry, sample_rate=DEFAULT_SAMPLE_RATE):
    """Anechoic far-field mixture.

    ``sources`` is a sequence of ``(signal, doa_degrees)``. Returns an
    ``(M, samples)`` array; row 0 is the plain sum of the sources.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("need at least one source")
    lengths = {np.asarray(s).size for s, _ in sources}
    if len(lengths) != 1:
        raise ValueError(f"sources have different lengths: {sorted(lengths)}")
    n = lengths.pop()
    out = np.zeros((geometry.num_mics, n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    for sig, doa in sources:
        spec = np.fft.rfft(np.asarray(sig, dtype=np.float64))
        out[0] += sig
        tau = geometry.delays(doa)
        for m in range(1, geometry.num_mics):
            if tau[m] == 0.0:
                out[m] += sig
            else:
                out[m] += np.fft.irfft(spec * np.exp(-2j * np.pi * freqs * tau[m]), n=n)
    return out


def ideal_soi_mask(soi, interference, frame_len=512, sample_rate=DEFAULT_SAMPLE_RATE):
    """Binary mask of the bins where the SOI magnitude strictly exceeds the interference.

    Ties, including bins where both are silent, go to the interference.
    """
    s = np.abs(stft(soi, frame_len, sample_rate=sample_rate).bins)
    i = np.abs(stft(interference, frame_len, sample_rate=sample_rate).bins)
    return s > i


@dataclass
class Scene:
    """A simulated mixture with its clean sources and ideal masks."""

    sources: list
    doas: list
    geometry: ArrayGeometry
    mic_signals: np.ndarray
    soi_index: int = 0
    ideal_soi: np.ndarray | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: int | None = None
    corpus_indices: list = field(default_factory=list)

    @property
    def soi(self):
        return self.sources[self.soi_index]

    @property
    def soi_doa(self):
        return self.doas[self.soi_index]

    @property
    def interferers(self):
        return [s for k, s in enumerate(self.sources) if k != self.soi_index]

    @property
    def interference(self):
        rest = self.interferers
        return np.sum(rest, axis=0) if rest else np.zeros_like(self.soi)

    @property
    def ideal_int(self):
        return ~self.ideal_soi

    def descriptor(self):
        """Key-value text recording everything needed to rebuild the scene."""
        lines = [
            "format=soisep-scene-1",
            f"seed={self.seed}",
            f"num_sources={len(self.sources)}",
            f"soi_index={self.soi_index}",
            "doas=" + ",".join(f"{d:.6g}" for d in self.doas),
            "corpus_indices=" + ",".join(str(i) for i in self.corpus_indices),
            f"sample_rate={self.sample_rate}",
            f"length={self.mic_signals.shape[1]}",
            f"geometry_name={self.geometry.name}",
            f"speed_of_sound={self.geometry.c:.6g}",
            "geometry=" + ";".join(f"{r:.9g} {a:.9g}" for r, a in zip(self.geometry.radii, self.geometry.angles)),
        ]
        return "\n".join(lines) + "\n"


def parse_descriptor(text):
    """Parse a scene descriptor into a dict of typed values."""
    kv = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    out = dict(kv)
    for k in ("num_sources", "soi_index", "sample_rate", "length"):
        if k in kv:
            out[k] = int(kv[k])
    out["doas"] = [float(d) for d in kv.get("doas", "").split(",") if d]
    if "geometry" in kv:
        geo_text = "\n".join(kv["geometry"].split(";"))
        out["geometry"] = ArrayGeometry.from_text(
            geo_text, c=float(kv.get("speed_of_sound", SPEED_OF_SOUND)), name=kv.get("geometry_name", "file"))
    return out


def _crop(signal, length, rng):
    x = np.asarray(signal, dtype=np.float64)
    if x.size >= length:
        # a few redraws avoid windows that fall entirely in a pause
        for _ in range(8):
            start = int(rng.integers(0, x.size - length + 1))
            seg = x[start:start + length]
            if np.any(seg != 0):
                break
        return seg.copy()
    out = np.zeros(length)
    out[:x.size] = x
    return out


def sample_doas(num_sources, rng, continuous=False):
    """Distinct DOAs from the 45-degree grid, or uniform on [-90, 90] when ``continuous``."""
    if continuous:
        while True:
            doas = rng.uniform(-90.0, 90.0, size=num_sources)
            if num_sources < 2 or np.min(np.diff(np.sort(doas))) > 1.0:
                return [float(d) for d in doas]
    if num_sources > len(DOA_GRID):
        raise ValueError(
            f"{num_sources} sources exceed the {len(DOA_GRID)} distinct grid DOAs; "
            "enable continuous DOA sampling")
    picks = rng.choice(len(DOA_GRID), size=num_sources, replace=False)
    return [DOA_GRID[i] for i in picks]


def generate_scene(corpus, num_sources, geometry: ArrayGeometry, rng_seed, *, length=None,
                   continuous_doa=False, frame_len=512, sample_rate=DEFAULT_SAMPLE_RATE):
    """Random mixture of ``num_sources`` distinct corpus signals at distinct DOAs.

    Source 0 is the SOI. With ``length`` set, each signal is cropped at a
    random offset (or zero padded) to that many samples; otherwise all corpus
    signals picked must already have equal length.
    """
    if num_sources < 1:
        raise ValueError("num_sources must be >= 1")
    if len(corpus) < num_sources:
        raise ValueError(f"corpus has {len(corpus)} signals, need {num_sources}")
    rng = np.random.default_rng(rng_seed)
    idx = [int(i) for i in rng.choice(len(corpus), size=num_sources, replace=False)]
    doas = sample_doas(num_sources, rng, continuous_doa)
    if length is None:
        sources = [np.asarray(corpus[i], dtype=np.float64).copy() for i in idx]
    else:
        sources = [_crop(corpus[i], length, rng) for i in idx]
    mics = simulate_mixture(list(zip(sources, doas)), geometry, sample_rate)
    scene = Scene(sources, doas, geometry, mics, 0, None, sample_rate, rng_seed, idx)
    scene.ideal_soi = ideal_soi_mask(scene.soi, scene.interference, frame_len, sample_rate)
    return scene


# --- corpus manifests ----------------------------------------------------

def read_manifest(path):
    """WAV paths listed one per line; blank lines and ``#`` comments are skipped."""
    base = Path(path).parent
    paths = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        paths.append(p if p.is_absolute() else base / p)
    return paths


def split_manifest(paths, train_fraction=0.8):
    """Deterministic speaker-level train/validation split.

    Files are grouped by parent directory (one directory per speaker, as in
    LibriSpeech); the first ``train_fraction`` of the sorted speakers go to
    training. With a single speaker the split falls back to file level.
    """
    paths = sorted(Path(p) for p in paths)
    speakers = sorted({p.parent for p in paths})
    if len(speakers) >= 2:
        n_train = min(len(speakers) - 1, max(1, int(round(train_fraction * len(speakers)))))
        train_spk = set(speakers[:n_train])
        return [p for p in paths if p.parent in train_spk], [p for p in paths if p.parent not in train_spk]
    n_train = int(round(train_fraction * len(paths)))
    return paths[:n_train], paths[n_train:]
