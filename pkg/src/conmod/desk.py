"""Desk-scale presets: a reduced model and STFT that train in minutes on one CPU core.

Shared by the acceptance suite and the experiment scripts so both run the same recipe.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path

import numpy as np

from .losses import LossWeights
from .model import ConmodConfig
from .oracles import DatasetManifest, OracleConfig, PhaserOracleConfig, build_dataset, render, with_condition
from .signals import DEFAULT_SR, AudioBuffer, generate_test_signal
from .spectral import StftConfig
from .trainer import Checkpoint, TrainConfig, train

log = logging.getLogger(__name__)

DESK_CHIRP_S = 2.0
DESK_EPOCHS = 500
DESK_TEST_S = 10.0
DESK_STFT = StftConfig(frame_size=440, fft_size=1024, hop=110, sample_rate=DEFAULT_SR)
DESK_MODEL = ConmodConfig(lstm_hidden=16, mlp_hidden=128, bins=DESK_STFT.bins)
# Entrywise-sum MRSL swamps the ESR term by ~1e6 and stalls at this budget; see notes.
DESK_WEIGHTS = LossWeights(lam=100.0, reduction="mean")

DESK_PHASER = PhaserOracleConfig(stages=2)
DESK_PHASER_ALT = PhaserOracleConfig(stages=4, sweep_octaves=0.75, mix=0.5)


def desk_dataset(out_dir, grids: dict[str, tuple[OracleConfig, list[float], list[float]]],
                 duration_s: float = DESK_CHIRP_S) -> DatasetManifest:
    """Render {effect_id: (template, freqs, feedbacks)} into one pooled manifest."""
    manifest = None
    for i, (eid, (template, freqs, fbs)) in enumerate(grids.items()):
        manifest = build_dataset(eid, freqs, fbs, 0.0, duration_s, DESK_STFT.sample_rate, out_dir,
                                 template=template, append=i > 0)
    return manifest


def desk_train(manifest: DatasetManifest, epochs: int = DESK_EPOCHS, lfo_init: str = "exact",
               seed: int = 0, out_dir=None, on_epoch=None) -> Checkpoint:
    cond_dim = 3 if len(manifest.effect_ids) > 1 else 1
    model_cfg = dataclasses.replace(DESK_MODEL, cond_dim=cond_dim)
    train_cfg = TrainConfig(epochs=epochs, loss_weights=DESK_WEIGHTS, seed=seed, lfo_init=lfo_init)
    return train(manifest, model_cfg, train_cfg, out_dir, DESK_STFT, on_epoch=on_epoch)


def held_out_signal(duration_s: float = DESK_TEST_S, seed: int = 0) -> AudioBuffer:
    return generate_test_signal(duration_s, DESK_STFT.sample_rate, seed)


def condition_esr(ckpt: Checkpoint, template: OracleConfig, freq: float, fb: float, x: AudioBuffer,
                  effect_id: str | None = None) -> float:
    """ESR (ratio, not percent) of the model against the oracle at one condition.

    The model's LFO runs at `freq` with the phase of the nearest trained bank entry.
    """
    from .evaluator import esr_pct, predict

    y_hat, phase = predict(ckpt, x, freq, fb, effect_id)
    y = render(x, with_condition(template, freq, phase, fb))
    return esr_pct(y, y_hat) / 100.0


def mean_condition_esr(ckpt: Checkpoint, template: OracleConfig, conditions, x: AudioBuffer,
                       effect_id: str | None = None) -> float:
    return float(np.mean([condition_esr(ckpt, template, f, fb, x, effect_id) for f, fb in conditions]))


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
