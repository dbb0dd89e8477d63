"""Command-line interface.

Every ``--flag`` can also be set through an environment variable named
``SOISEP_<FLAG>`` (dashes become underscores, e.g. ``SOISEP_XMAX_MB``);
explicit flags win. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .array_sim import (
    POLYGONS,
    ArrayGeometry,
    Scene,
    generate_scene,
    ideal_soi_mask,
    linear_array,
    parse_descriptor,
    polygon_array,
    read_manifest,
    split_manifest,
)
from .audio import WavError, read_wav, write_wav
from .beamformer import concat_outputs, process_stream
from .blstm import (
    Batch,
    NetworkConfig,
    NetworkWeights,
    TrainingDiverged,
    build_dataset,
    estimate_memory,
    load_checkpoint,
    scene_examples,
    train,
)
from .corpus import synthetic_corpus, synthetic_signal
from .evaluation import (
    DEFAULT_XMAX_MB,
    RANK_HEADER,
    SWEEP_HEADER,
    latency_check,
    load_candidates,
    mean_by_param,
    ranking_rows,
    sweep_geometry,
    sweep_mics,
    sweep_sources,
    write_csv,
)
from .pipeline import Separator

log = logging.getLogger("soisep")

ENV_PREFIX = "SOISEP_"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- argument helpers ------------------------------------------------------

def parse_range(text):
    """``"2..5"`` -> [2, 3, 4, 5]; ``"2,4,8"`` -> [2, 4, 8]."""
    text = str(text).strip()
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None


def resolve_geometry(name, num_mics=None):
    """A geometry file path, ``linear``/``linearN``, or a polygon name."""
    name = str(name)
    if Path(name).is_file():
        return ArrayGeometry.load(name)
    m = re.fullmatch(r"linear(\d*)", name)
    if m:
        return linear_array(int(m.group(1)) if m.group(1) else (num_mics or 2))
    if name in POLYGONS:
        return polygon_array(name)
    raise UsageError(f"geometry {name!r} is neither a file nor a known array "
                     f"(linear, linearN, {', '.join(POLYGONS)})")


def _apply_env_defaults(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env_defaults(sub)
            continue
        longs = [o for o in action.option_strings if o.startswith("--")]
        if not longs or action.dest in ("help", "version"):
            continue
        env = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
        if env not in os.environ:
            continue
        raw = os.environ[env]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            value = [action.type(v) if action.type else v for v in raw.split()]
        else:
            value = action.type(raw) if action.type else raw
        action.default = value
        action.required = False


def _network_args(p, defaults=NetworkConfig()):
    p.add_argument("--nb", type=int, default=defaults.buffer_len, help="input length N_B in samples")
    p.add_argument("--nh", type=int, default=defaults.fft_len, help="STFT window N_H in samples")
    p.add_argument("--layers", type=int, default=defaults.layers)
    p.add_argument("--hidden", type=int, default=defaults.hidden)
    p.add_argument("--vad-db", type=float, default=defaults.vad_db)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--phimax", type=float, default=60.0, help="phase threshold in degrees")
    p.add_argument("--frame", type=int, default=defaults.beam_frame, help="beamformer window N")


def _config_from_args(a):
    return NetworkConfig(layers=a.layers, hidden=a.hidden, buffer_len=a.nb, fft_len=a.nh, vad_db=a.vad_db,
                         learning_rate=a.lr, momentum=a.momentum, beam_frame=a.frame,
                         phi_max=float(np.deg2rad(a.phimax)))


def _snapshot(out_dir, args, extra=None):
    # the output directory is left out so identical runs give identical files
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()}
    cfg["soisep_version"] = __version__
    if extra:
        cfg.update(extra)
    Path(out_dir, "run_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _load_corpus(args, split=None):
    if getattr(args, "manifest", None):
        paths = read_manifest(args.manifest)
        if split in ("train", "val"):
            train_p, val_p = split_manifest(paths)
            paths = train_p if split == "train" else val_p
        if not paths:
            raise DataError("no sources available")
        corpus = []
        for p in paths:
            try:
                data, _ = read_wav(p, expected_rate=16000)
            except WavError as exc:
                raise DataError(str(exc)) from exc
            corpus.append(data if data.ndim == 1 else data[0])
        return corpus
    if getattr(args, "synthetic", None):
        return synthetic_corpus(args.synthetic, int(args.synthetic_seconds * 16000), seed=args.corpus_seed)
    raise UsageError("give --manifest or --synthetic")


def _read_mics(paths):
    chans = []
    rate = None
    for p in paths:
        try:
            data, rate = read_wav(p, expected_rate=16000)
        except WavError as exc:
            raise DataError(str(exc)) from exc
        chans.extend(np.atleast_2d(data))
    lengths = {c.size for c in chans}
    if len(lengths) != 1:
        raise DataError(f"microphone signals differ in length: {sorted(lengths)}")
    return np.stack(chans), rate


def _check_doa(doa):
    if not -90.0 <= doa <= 90.0:
        raise UsageError(f"--doa {doa} outside [-90, 90] degrees")


# --- commands ---------------------------------------------------------------

def cmd_synth_corpus(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = int(args.seconds * 16000)
    rng = np.random.default_rng(args.seed)
    lines = []
    for k in range(args.count):
        spk = out / f"spk{k % args.speakers:02d}"
        spk.mkdir(exist_ok=True)
        path = spk / f"utt{k:04d}.wav"
        write_wav(path, synthetic_signal(n, rng))
        lines.append(str(path.relative_to(out)))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(out / "manifest.txt")
    return EXIT_OK


def cmd_simulate(args):
    corpus = _load_corpus(args, split=args.split)
    geometry = resolve_geometry(args.geometry, args.mics)
    length = int(args.seconds * 16000) if args.seconds else min(c.size for c in corpus)
    try:
        scene = generate_scene(corpus, args.num_sources, geometry, args.seed, length=length,
                               continuous_doa=args.continuous_doa, frame_len=args.nh)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    peak = max(np.abs(scene.mic_signals).max(), max(np.abs(s).max() for s in scene.sources))
    scale = 0.99 / peak if peak > 0.99 else 1.0
    for m, sig in enumerate(scene.mic_signals):
        write_wav(out / f"mic_{m}.wav", sig * scale)
    for k, sig in enumerate(scene.sources):
        write_wav(out / f"source_{k}.wav", sig * scale)
    (out / "scene.txt").write_text(scene.descriptor() + f"scale={scale:.9g}\nsplit={args.split}\n")
    np.save(out / "ideal_mask_soi.npy", scene.ideal_soi)
    geometry.save(out / "geometry.txt")
    _snapshot(out, args)
    print(f"wrote {geometry.num_mics} mic and {len(scene.sources)} source WAVs to {out}")
    return EXIT_OK


def load_scene_dir(path, frame_len=512):
    """Rebuild a :class:`Scene` from a directory written by ``simulate``."""
    path = Path(path)
    desc = parse_descriptor((path / "scene.txt").read_text())
    geometry = desc["geometry"]
    mics, _ = _read_mics([path / f"mic_{m}.wav" for m in range(geometry.num_mics)])
    sources = [read_wav(path / f"source_{k}.wav")[0] for k in range(desc["num_sources"])]
    scene = Scene(sources, desc["doas"], geometry, mics, desc["soi_index"], None, desc["sample_rate"])
    scene.ideal_soi = ideal_soi_mask(scene.soi, scene.interference, frame_len)
    return scene


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    weights = state = None
    if args.resume:
        weights, cfg, state = load_checkpoint(args.resume)
        cfg = cfg.replace(learning_rate=args.lr, momentum=args.momentum)
    else:
        cfg = _config_from_args(args)
    if args.scenes:
        parts = [scene_examples(load_scene_dir(d, cfg.fft_len), cfg) for d in args.scenes]
        data = Batch.concat(parts)
    else:
        corpus = _load_corpus(args, split="train")
        geometry = resolve_geometry(args.geometry)
        data = build_dataset(corpus, geometry, cfg, args.num_scenes, seed=args.seed,
                             min_sources=args.min_sources, max_sources=args.max_sources)
    if len(data) == 0:
        raise DataError("training data produced no complete N_B buffers")
    log.info("training on %d examples, %d parameters (%.2f MB)", len(data),
             NetworkWeights.for_config(cfg).count(), estimate_memory(cfg))
    _snapshot(out, args, {"examples": len(data), "param_mb": estimate_memory(cfg)})
    try:
        weights, state, history = train(data, cfg, args.steps, batch_size=args.batch_size, weights=weights,
                                        state=state, seed=args.seed, log_path=out / "train_log.csv",
                                        checkpoint_path=ckpt, checkpoint_every=args.checkpoint_every)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; last good checkpoint kept at {ckpt}", file=sys.stderr)
        return EXIT_NUMERIC
    if history:
        print(f"step {state.step}: loss {history[-1]:.6g} (first {history[0]:.6g}); checkpoint {ckpt}")
    return EXIT_OK


def _pad_to(mics, nb):
    n = mics.shape[1]
    total = max(nb, -(-n // nb) * nb)
    return np.pad(mics, ((0, 0), (0, total - n))), n


def cmd_beamform(args):
    _check_doa(args.doa)
    mics, _ = _read_mics(args.mics)
    geometry = resolve_geometry(args.geometry, mics.shape[0])
    if geometry.num_mics != mics.shape[0]:
        raise UsageError(f"geometry has {geometry.num_mics} microphones, input has {mics.shape[0]}")
    padded, n = _pad_to(mics, args.nb)
    outs = process_stream(padded, args.doa, geometry, args.frame, args.nb, np.deg2rad(args.phimax))
    z_soi, z_int, _ = concat_outputs(outs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "z_soi.wav", z_soi[:n])
    write_wav(out / "z_int.wav", z_int[:n])
    _snapshot(out, args)
    return EXIT_OK


def cmd_separate(args):
    _check_doa(args.doa)
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    weights, cfg, _ = load_checkpoint(args.checkpoint)
    mics, _ = _read_mics(args.mics)
    geometry = resolve_geometry(args.geometry, mics.shape[0])
    if geometry.num_mics != mics.shape[0]:
        raise UsageError(f"geometry has {geometry.num_mics} microphones, input has {mics.shape[0]}")
    sep = Separator(weights, cfg)
    padded, n = _pad_to(mics, cfg.buffer_len)
    res = sep.run(padded, args.doa, geometry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "y_soi.wav", res.y_soi[:n])
    write_wav(out / "y_int.wav", res.y_int[:n])
    seconds, rtf = latency_check(sep, padded[:, :cfg.buffer_len], args.doa, geometry)
    (out / "timing.txt").write_text(
        f"# wall-clock measurements, not deterministic\nbuffer_samples={cfg.buffer_len}\n"
        f"buffer_seconds={cfg.buffer_len / cfg.sample_rate:.6f}\nseconds_per_buffer={seconds:.6f}\n"
        f"realtime_factor={rtf:.6f}\n")
    _snapshot(out, args)
    print(f"realtime factor {rtf:.3f} ({seconds * 1e3:.1f} ms per {cfg.buffer_len}-sample buffer)")
    return EXIT_OK


def cmd_evaluate(args):
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    weights, cfg, _ = load_checkpoint(args.checkpoint)
    sep = Separator(weights, cfg)
    corpus = _load_corpus(args, split="val")
    if args.sweep == "sources":
        try:
            rows = sweep_sources(sep, resolve_geometry(args.geometry), corpus, args.counts, args.trials,
                                 args.seed, n_buffers=args.buffers, continuous_doa=args.continuous_doa)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    elif args.sweep == "mics":
        rows = sweep_mics(sep, corpus, args.mic_counts, args.num_sources, args.trials, args.seed,
                          n_buffers=args.buffers)
    else:
        rows = sweep_geometry(sep, corpus, args.geometries, args.num_sources, args.trials, args.seed,
                              n_buffers=args.buffers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out, SWEEP_HEADER)
    _snapshot(out.parent, args)
    for param, mean in mean_by_param(rows).items():
        bf = mean_by_param([r for r in rows if r["param"] == param], "sir_beamformer_db")[param]
        print(f"{args.sweep}={param}: SIR {mean:.2f} dB (beamformer {bf:.2f} dB)")
    return EXIT_OK


def cmd_rank(args):
    cands = load_candidates(args.table)
    try:
        rows = ranking_rows(cands, args.xmax_mb)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.out:
        write_csv(rows, args.out, RANK_HEADER)
    w = csv.DictWriter(sys.stdout, fieldnames=RANK_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="soisep", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_args(sp):
        sp.add_argument("--manifest", type=Path, help="text file with one 16 kHz WAV path per line")
        sp.add_argument("--synthetic", type=int, help="use N built-in synthetic signals instead")
        sp.add_argument("--synthetic-seconds", type=float, default=4.0)
        sp.add_argument("--corpus-seed", type=int, default=0)

    s = sub.add_parser("synth-corpus", help="write a synthetic speech-like WAV corpus and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--speakers", type=int, default=10)
    s.add_argument("--seconds", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("simulate", help="simulate one array recording from a corpus")
    corpus_args(s)
    s.add_argument("--split", choices=("train", "val", "all"), default="train")
    s.add_argument("--geometry", default="linear")
    s.add_argument("--mics", type=int, default=None, help="microphone count for a linear array")
    s.add_argument("--num-sources", type=int, default=2)
    s.add_argument("--continuous-doa", action="store_true")
    s.add_argument("--seconds", type=float, default=None)
    s.add_argument("--nh", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train the masking network")
    corpus_args(s)
    s.add_argument("--scenes", nargs="+", help="scene directories written by 'simulate'")
    _network_args(s)
    s.add_argument("--geometry", default="linear")
    s.add_argument("--num-scenes", type=int, default=200)
    s.add_argument("--min-sources", type=int, default=2)
    s.add_argument("--max-sources", type=int, default=3)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--checkpoint-every", type=int, default=100)
    s.add_argument("--resume", type=Path, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("beamform", help="run only the beamformer, writing z_soi.wav and z_int.wav")
    s.add_argument("--mics", nargs="+", required=True, help="one multichannel WAV or one WAV per mic")
    s.add_argument("--doa", type=float, required=True)
    s.add_argument("--geometry", default="linear")
    s.add_argument("--nb", type=int, default=16384)
    s.add_argument("--frame", type=int, default=1024)
    s.add_argument("--phimax", type=float, default=60.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_beamform)

    s = sub.add_parser("separate", help="full pipeline on recorded microphones")
    s.add_argument("--mics", nargs="+", required=True)
    s.add_argument("--doa", type=float, required=True)
    s.add_argument("--geometry", default="linear")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("evaluate", help="SIR sweeps over sources, microphones or geometries")
    corpus_args(s)
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--sweep", choices=("sources", "mics", "geometry"), default="sources")
    s.add_argument("--counts", type=parse_range, default=[2, 3, 4, 5], help="source counts, e.g. 2..5")
    s.add_argument("--mic-counts", type=parse_range, default=[2, 4, 8])
    s.add_argument("--geometries", nargs="+", default=["linear", *POLYGONS])
    s.add_argument("--num-sources", type=int, default=2)
    s.add_argument("--continuous-doa", action="store_true")
    s.add_argument("--geometry", default="linear")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--buffers", type=int, default=1, help="N_B windows per evaluation segment")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("rank", help="rank architectures by memory/SIR area score")
    s.add_argument("--table", type=Path, default=None, help="CSV with nb,hidden,layers,mem_mb,sir_db")
    s.add_argument("--xmax-mb", type=float, default=DEFAULT_XMAX_MB)
    s.add_argument("--out", type=Path, default=None)
    s.set_defaults(func=cmd_rank)

    _apply_env_defaults(p)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"soisep {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WavError, FileNotFoundError) as exc:
        print(f"soisep {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"soisep {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
