"""Shared fixtures, including one desk-scale trained model reused by several tests."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from soisep.array_sim import linear_array
from soisep.blstm import NetworkConfig, build_dataset, load_checkpoint, save_checkpoint, train
from soisep.corpus import synthetic_corpus
from soisep.pipeline import Separator

# Reduced model trained on synthetic two-source scenes. The learning rate is
# larger than the full-scale default so a short desk run converges.
DESK = dict(
    layers=2, hidden=64, buffer_len=16384, learning_rate=1e-3,
    train_signals=400, train_seconds=2.0, train_seed=11,
    heldout_signals=120, heldout_seed=9001,
    num_scenes=2000, steps=1500, batch_size=16, seed=0,
)


def _cache_dir():
    root = os.environ.get("SOISEP_TEST_CACHE") or Path.home() / ".cache" / "soisep-tests"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class DeskModel:
    separator: Separator
    cfg: NetworkConfig
    heldout: list
    train_seconds: float
    from_cache: bool


def _train_desk(ckpt):
    cfg = NetworkConfig(layers=DESK["layers"], hidden=DESK["hidden"], buffer_len=DESK["buffer_len"],
                        learning_rate=DESK["learning_rate"])
    length = int(DESK["train_seconds"] * cfg.sample_rate)
    corpus = synthetic_corpus(DESK["train_signals"], length, seed=DESK["train_seed"])
    data = build_dataset(corpus, linear_array(2), cfg, DESK["num_scenes"], seed=DESK["seed"],
                         min_sources=2, max_sources=2)
    weights, state, _ = train(data, cfg, DESK["steps"], batch_size=DESK["batch_size"], seed=DESK["seed"])
    save_checkpoint(ckpt, weights, cfg, state)


@pytest.fixture(scope="session")
def desk_model():
    """Train (or load from the on-disk cache) the reduced desk-scale model."""
    key = hashlib.sha256(json.dumps(DESK, sort_keys=True).encode()).hexdigest()[:12]
    ckpt = _cache_dir() / f"desk_{key}.ckpt"
    cached = ckpt.exists()
    t0 = time.perf_counter()
    if not cached:
        _train_desk(ckpt)
    weights, cfg, _ = load_checkpoint(ckpt)
    heldout = synthetic_corpus(DESK["heldout_signals"], int(DESK["train_seconds"] * cfg.sample_rate),
                               seed=DESK["heldout_seed"])
    return DeskModel(Separator(weights, cfg), cfg, heldout, time.perf_counter() - t0, cached)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def record():
    """``record(n, passed, detail)`` stores one acceptance line for the terminal summary."""
    def _record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
