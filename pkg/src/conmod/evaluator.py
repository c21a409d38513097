"""Evaluation protocols: ESR grids, long renders, embedding interpolation, spectrogram export."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .losses import esr
from .model import ConditionVector
from .oracles import OracleConfig, render, with_condition
from .signals import AudioBuffer, generate_test_signal
from .spectral import magnitude_spectrogram, stft
from .trainer import Checkpoint

SPEC_FLOOR_DB = -120.0


@dataclass
class EvalRow:
    effect_id: str
    lfo_freq_hz: float
    feedback_pct: float
    seen: bool
    esr_pct: float
    valid: bool = True
    note: str = ""


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def valid_rows(self) -> list[EvalRow]:
        return [r for r in self.rows if r.valid]

    def lookup(self, lfo_freq_hz: float, feedback_pct: float, effect_id: str | None = None) -> EvalRow:
        for r in self.rows:
            if (math.isclose(r.lfo_freq_hz, lfo_freq_hz) and math.isclose(r.feedback_pct, feedback_pct)
                    and (effect_id is None or r.effect_id == effect_id)):
                return r
        raise KeyError((effect_id, lfo_freq_hz, feedback_pct))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["effect_id", "lfo_freq_hz", "feedback_pct", "seen", "esr_pct"])
            for r in self.rows:
                w.writerow([r.effect_id, r.lfo_freq_hz, r.feedback_pct, int(r.seen),
                            r.esr_pct if r.valid else "nan"])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"metadata": self.metadata, "rows": [asdict(r) for r in self.rows]},
                                         indent=2), encoding="utf-8")


def weights_digest(ckpt: Checkpoint) -> str:
    h = hashlib.sha256()
    for name, value in sorted(ckpt.model.named_arrays().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(value).tobytes())
    return h.hexdigest()


def nearest_bank_index(ckpt: Checkpoint, freq: float) -> int:
    labels = ckpt.bank_labels or list(ckpt.model.bank.freqs)
    return int(np.argmin([abs(f - freq) for f in labels]))


def _require_audible(y: AudioBuffer) -> None:
    if not np.any(y.samples):
        raise ValueError("ground-truth target is silent; ESR undefined")


def esr_pct(target: AudioBuffer, prediction: AudioBuffer) -> float:
    _require_audible(target)
    return 100.0 * esr(target.samples, prediction.samples).item()


def predict(ckpt: Checkpoint, x: AudioBuffer, lfo_freq_hz: float, feedback_pct: float,
            effect_id: str | None = None, lfo_phase: float | None = None) -> tuple[AudioBuffer, float]:
    """Render with the LFO frequency overridden; phase from the nearest bank entry unless given."""
    model = ckpt.model
    idx = nearest_bank_index(ckpt, lfo_freq_hz)
    phase = float(model.bank.phases[idx]) if lfo_phase is None else lfo_phase
    eid = effect_id if model.cfg.cond_dim == 3 else None
    y = model.render(x, idx, feedback_pct, ckpt.stft_cfg, effect_id=eid, lfo_override=(lfo_freq_hz, phase))
    return y, phase


def evaluate_grid(ckpt: Checkpoint, oracle_template: OracleConfig, lfo_freqs, feedback_pcts,
                  test_signal: AudioBuffer, train_manifest=None, effect_id: str = "phaser") -> EvalReport:
    """ESR% of the model against the oracle at every (frequency, feedback) grid point."""
    seen = set()
    if train_manifest is not None:
        seen = {(e.label.effect_id, e.label.lfo_freq_hz, e.label.feedback_pct) for e in train_manifest.entries}
    report = EvalReport(metadata={
        "checkpoint": weights_digest(ckpt)[:16],
        "test_signal": hashlib.sha256(test_signal.samples.tobytes()).hexdigest()[:16],
        "duration_s": test_signal.duration,
        "effect_id": effect_id,
    })
    for f in lfo_freqs:
        for fb in feedback_pcts:
            is_seen = (effect_id, float(f), float(fb)) in seen
            try:
                y_hat, phase = predict(ckpt, test_signal, f, fb, effect_id)
                cfg = with_condition(oracle_template, f, phase, fb)
                y = render(test_signal, cfg)
            except ValueError as exc:
                report.rows.append(EvalRow(effect_id, float(f), float(fb), is_seen, float("nan"), False, str(exc)))
                continue
            report.rows.append(EvalRow(effect_id, float(f), float(fb), is_seen, esr_pct(y, y_hat)))
    return report


def long_sequence_eval(ckpt: Checkpoint, durations, oracle_template: OracleConfig, lfo_freq_hz: float,
                       feedback_pct: float, effect_id: str | None = None, seed: int = 0) -> list[tuple[float, float]]:
    """ESR% for fresh test signals of increasing length, same checkpoint throughout."""
    durations = [float(d) for d in durations]
    if durations != sorted(durations):
        raise ValueError("durations must be ascending")
    if durations and durations[-1] > 120:
        raise ValueError("durations above 120 s are not supported")
    sr = ckpt.stft_cfg.sample_rate
    out = []
    for d in durations:
        if round(d * sr) < ckpt.stft_cfg.frame_size:
            raise ValueError(f"duration {d} s is shorter than one STFT frame")
        x = generate_test_signal(d, sr, seed)
        y_hat, phase = predict(ckpt, x, lfo_freq_hz, feedback_pct, effect_id)
        y = render(x, with_condition(oracle_template, lfo_freq_hz, phase, feedback_pct))
        out.append((d, esr_pct(y, y_hat)))
    return out


def interpolate_embedding_render(ckpt: Checkpoint, alpha: float, lfo_freq_hz: float, feedback_pct: float,
                                 test_signal: AudioBuffer, effects: tuple[str, str] | None = None) -> AudioBuffer:
    """Render with c_emb = (1 - alpha) e0 + alpha e1 between two learned effect embeddings."""
    model = ckpt.model
    if model.cfg.cond_dim != 3 or len(model.embeddings) < 2:
        raise ValueError("checkpoint was not trained on two effects")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    e0, e1 = effects or tuple(model.effect_ids[:2])
    a, b = model.embeddings[e0].value, model.embeddings[e1].value
    if alpha == 0:
        emb = a.copy()
    elif alpha == 1:
        emb = b.copy()
    else:
        emb = (1 - alpha) * a + alpha * b
    idx = nearest_bank_index(ckpt, lfo_freq_hz)
    phase = float(model.bank.phases[idx])
    cond = ConditionVector(feedback_pct / 100.0, ad.Tensor(emb))
    with ad.no_grad():
        y = model.forward_render(test_signal, idx, cond, ckpt.stft_cfg, lfo_override=(lfo_freq_hz, phase))
    return AudioBuffer(y.value, test_signal.sample_rate)


def spectral_distance(a: AudioBuffer, b: AudioBuffer, fft_size: int = 1024) -> float:
    """Relative L1 distance between magnitude spectrograms, ||A - B||_1 / ||B||_1."""
    with ad.no_grad():
        A = magnitude_spectrogram(a.samples, fft_size).value
        B = magnitude_spectrogram(b.samples, fft_size).value
    return float(np.abs(A - B).sum() / np.abs(B).sum())


def log_spectrogram(x: AudioBuffer, fft_size: int = 1024) -> np.ndarray:
    """(bins, frames) log-magnitude in dB, floored at SPEC_FLOOR_DB."""
    with ad.no_grad():
        mag = magnitude_spectrogram(x.samples, fft_size).value
    return np.maximum(20 * np.log10(mag), SPEC_FLOOR_DB).T


def export_spectrogram(x: AudioBuffer, out_path, fft_size: int = 1024) -> tuple[Path, Path]:
    """Write a log-magnitude spectrogram as binary PGM (low bins at the bottom) plus CSV."""
    out_path = Path(out_path)
    db = log_spectrogram(x, fft_size)
    pgm = out_path.parent / f"{out_path.name}.pgm"
    csv_path = out_path.parent / f"{out_path.name}.csv"
    top = db.max()
    span = top - SPEC_FLOOR_DB
    if span <= 0:
        img = np.zeros_like(db, dtype=np.uint8)
    else:
        img = np.round(255 * (db - SPEC_FLOOR_DB) / span).astype(np.uint8)
    img = img[::-1]
    with open(pgm, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    np.savetxt(csv_path, db, delimiter=",", fmt="%.9g")
    return pgm, csv_path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
