"""Training loop: per-condition LFO routing, Adam with per-epoch exponential decay, checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .losses import LossWeights, loss_terms, target_spectrograms
from .model import Conmod, ConmodConfig, LfoBank
from .oracles import DatasetManifest, ManifestEntry
from .signals import AudioBuffer, wav_read
from .spectral import ComplexSpectrogram, StftConfig, stft

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
_MAGIC = b"CONMODCK"
LFO_INIT_STRATEGIES = ("exact", "perturbed", "pilot")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10_000
    initial_lr: float = 1e-3
    lr_decay_gamma: float = 0.9997
    batch_size: int = 1
    loss_weights: LossWeights = LossWeights()
    seed: int = 0
    lfo_init: str = "exact"
    lfo_init_sigma: float = 0.1
    pilot_epochs: int = 500
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if not 0 < self.lr_decay_gamma <= 1:
            raise ValueError("lr_decay_gamma must lie in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lfo_init not in LFO_INIT_STRATEGIES:
            raise ValueError(f"lfo_init must be one of {LFO_INIT_STRATEGIES}")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.lr_decay_gamma**epoch


class TrainingDiverged(RuntimeError):
    pass


class Adam:
    """Adam with per-parameter state; parameters without a grad this step are left untouched."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, params, lr: float) -> list[str]:
        updated = []
        for p in params:
            if p.grad is None:
                continue
            m, v, t = self.state.get(p.name, (np.zeros_like(p.value), np.zeros_like(p.value), 0))
            t += 1
            m = self.beta1 * m + (1 - self.beta1) * p.grad
            v = self.beta2 * v + (1 - self.beta2) * p.grad**2
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            self.state[p.name] = (m, v, t)
            updated.append(p.name)
        return updated


# ------------------------------------------------------------------ data


@dataclass
class PreparedPair:
    """One manifest entry with its signals, dry STFT and target magnitudes cached."""

    entry: ManifestEntry
    bank_index: int
    dry: AudioBuffer
    wet: AudioBuffer
    dry_spec: ComplexSpectrogram
    target_mags: dict

    @property
    def label(self):
        return self.entry.label


def bank_frequencies(manifest: DatasetManifest) -> list[float]:
    """Distinct LFO frequencies in first-seen order; one bank entry each."""
    freqs: list[float] = []
    for e in manifest.entries:
        if e.label.lfo_freq_hz not in freqs:
            freqs.append(e.label.lfo_freq_hz)
    return freqs


def prepare_pairs(manifest: DatasetManifest, stft_cfg: StftConfig, weights: LossWeights,
                  bank_freqs: list[float]) -> list[PreparedPair]:
    cache: dict[Path, tuple[AudioBuffer, ComplexSpectrogram]] = {}
    pairs = []
    for e in manifest.entries:
        if e.dry_path not in cache:
            dry = wav_read(e.dry_path)
            with ad.no_grad():
                cache[e.dry_path] = (dry, stft(dry, stft_cfg))
        dry, spec = cache[e.dry_path]
        wet = wav_read(e.wet_path)
        if len(wet) != len(dry) or wet.sample_rate != dry.sample_rate:
            raise ValueError(f"{e.wet_path}: length or sample rate differs from {e.dry_path}")
        if dry.sample_rate != stft_cfg.sample_rate:
            raise ValueError(f"{e.dry_path}: sample rate {dry.sample_rate} != STFT config {stft_cfg.sample_rate}")
        idx = bank_freqs.index(e.label.lfo_freq_hz)
        pairs.append(PreparedPair(e, idx, dry, wet, spec, target_spectrograms(wet.samples, weights.fft_sizes)))
    return pairs


# ------------------------------------------------------------------ init


def init_lfo_bank(manifest: DatasetManifest, strategy: str = "exact", sigma_rel: float = 0.1,
                  seed: int = 0, pilot: Callable[[int, float, float], tuple[float, float]] | None = None) -> LfoBank:
    """Bank with one (z_a, z_b) per distinct manifest frequency.

    `pilot(index, freq_guess, phase_guess) -> (freq, phase)` performs the
    single-signal fit for the "pilot" strategy.
    """
    if not manifest.entries:
        raise ValueError("empty manifest")
    all_freqs = [e.label.lfo_freq_hz for e in manifest.entries]
    freqs = bank_frequencies(manifest)
    if len(freqs) < len(all_freqs) and len(set(e.label.key for e in manifest.entries)) == len(freqs):
        warnings.warn("duplicate LFO frequencies collapsed into shared bank entries", stacklevel=2)
    phases = [next(e.label.lfo_phase for e in manifest.entries if e.label.lfo_freq_hz == f) for f in freqs]
    freqs_arr = np.array(freqs, dtype=float)
    phases_arr = np.array(phases, dtype=float)
    if strategy == "exact":
        pass
    elif strategy in ("perturbed", "pilot"):
        rng = np.random.default_rng(seed)
        freqs_arr = freqs_arr * (1.0 + rng.uniform(-sigma_rel, sigma_rel, size=len(freqs_arr)))
        if strategy == "pilot":
            if pilot is None:
                raise ValueError("pilot strategy needs a pilot fitting function")
            fitted = [pilot(i, f, p) for i, (f, p) in enumerate(zip(freqs_arr, phases_arr))]
            freqs_arr = np.array([f for f, _ in fitted])
            phases_arr = np.array([p for _, p in fitted])
    else:
        raise ValueError(f"unknown LFO init strategy {strategy!r}")
    return LfoBank(freqs_arr, phases_arr)


# ------------------------------------------------------------------ steps


def train_step(pair: PreparedPair, model: Conmod, optimizer: Adam, lr: float, stft_cfg: StftConfig,
               weights: LossWeights, epoch: int = -1) -> dict[str, float]:
    """One routed forward/backward/Adam update; returns the loss terms."""
    model.zero_grad()
    cond = model.condition(pair.label.feedback_pct, pair.label.effect_id)
    try:
        y_hat = model.forward_render(pair.dry, pair.bank_index, cond, stft_cfg, dry_spec=pair.dry_spec)
        terms = loss_terms(pair.wet.samples, y_hat, weights, pair.target_mags)
    except FloatingPointError as exc:
        raise TrainingDiverged(f"non-finite forward pass at epoch {epoch}, pair {pair.label}: {exc}") from exc
    values = {k: t.item() for k, t in terms.items()}
    if not all(math.isfinite(v) for v in values.values()):
        raise TrainingDiverged(f"non-finite loss at epoch {epoch}, pair {pair.label}: {values}")
    ad.backward(terms["total"])
    optimizer.step(model.parameters(), lr)
    return values


@dataclass
class Checkpoint:
    model: Conmod
    stft_cfg: StftConfig
    optimizer: Adam = field(default_factory=Adam)
    epoch: int = 0
    bank_labels: list[float] = field(default_factory=list)
    train_cfg: TrainConfig | None = None
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_checkpoint(self, path)


def _prepare_training(manifest, model_cfg, train_cfg, stft_cfg, model):
    freqs = bank_frequencies(manifest)
    pairs = prepare_pairs(manifest, stft_cfg, train_cfg.loss_weights, freqs)
    if model is None:
        pilot = None
        if train_cfg.lfo_init == "pilot":
            pilot = _pilot_fitter(pairs, model_cfg, train_cfg, stft_cfg)
        bank = init_lfo_bank(manifest, train_cfg.lfo_init, train_cfg.lfo_init_sigma, train_cfg.seed, pilot)
        effect_ids = manifest.effect_ids if model_cfg.cond_dim == 3 else ()
        model = Conmod(model_cfg, bank, effect_ids, seed=train_cfg.seed)
    return freqs, pairs, model


def _pilot_fitter(pairs, model_cfg, train_cfg, stft_cfg):
    def fit(index, freq, phase):
        candidates = [p for p in pairs if p.bank_index == index]
        pair = min(candidates, key=lambda p: p.label.feedback_pct)
        pilot_pair = dataclasses.replace(pair, bank_index=0)
        effect_ids = [pair.label.effect_id] if model_cfg.cond_dim == 3 else ()
        model = Conmod(model_cfg, LfoBank([freq], [phase]), effect_ids, seed=train_cfg.seed)
        opt = Adam()
        for e in range(train_cfg.pilot_epochs):
            train_step(pilot_pair, model, opt, train_cfg.lr_at(e), stft_cfg, train_cfg.loss_weights, e)
        log.info("pilot fit %d: %.4f Hz -> %.4f Hz", index, freq, model.bank.freqs[0])
        return float(model.bank.freqs[0]), float(model.bank.phases[0])

    return fit


def train(manifest: DatasetManifest, model_cfg: ConmodConfig, train_cfg: TrainConfig, out_dir=None,
          stft_cfg: StftConfig = StftConfig(), resume: Checkpoint | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Train on every manifest entry once per epoch in a seeded shuffled order."""
    if resume is not None:
        model, opt, start = resume.model, resume.optimizer, resume.epoch
    else:
        model, opt, start = None, Adam(), 0
    freqs, pairs, model = _prepare_training(manifest, model_cfg, train_cfg, stft_cfg, model)
    ckpt = Checkpoint(model, stft_cfg, opt, start, freqs, train_cfg)
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / "metrics.jsonl", "a", encoding="utf-8")
    rng = np.random.default_rng(train_cfg.seed)
    # burn the permutations of completed epochs so resumed runs see the same order
    for _ in range(start):
        rng.permutation(len(pairs))
    try:
        for epoch in range(start, train_cfg.epochs):
            lr = train_cfg.lr_at(epoch)
            per_condition = []
            for i in rng.permutation(len(pairs)):
                terms = train_step(pairs[i], model, opt, lr, stft_cfg, train_cfg.loss_weights, epoch)
                lab = pairs[i].label
                per_condition.append({
                    "effect_id": lab.effect_id, "lfo_freq_hz": lab.lfo_freq_hz,
                    "feedback_pct": lab.feedback_pct, "loss": terms["total"], "esr": terms["esr"],
                })
            ckpt.epoch = epoch + 1
            record = {
                "epoch": epoch + 1,
                "lr": lr,
                "mean_loss": float(np.mean([c["loss"] for c in per_condition])),
                "per_condition": per_condition,
                "z_a": model.bank.freqs.tolist(),
            }
            if metrics is not None:
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
            if on_epoch is not None:
                on_epoch(record)
            if out is not None and train_cfg.checkpoint_every and ckpt.epoch % train_cfg.checkpoint_every == 0:
                save_checkpoint(ckpt, out / f"checkpoint_{ckpt.epoch:06d}.ckpt")
    finally:
        if metrics is not None:
            metrics.close()
    if out is not None:
        save_checkpoint(ckpt, out / "final.ckpt")
    return ckpt


# ------------------------------------------------------------------ checkpoint I/O


class CheckpointError(IOError):
    pass


def _config_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    if "loss_weights" in d:
        d["loss_weights"]["fft_sizes"] = list(d["loss_weights"]["fft_sizes"])
    return d


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write: JSON header (names, shapes, config) then raw little-endian float64 arrays."""
    path = Path(path)
    model = ckpt.model
    arrays: list[tuple[str, np.ndarray]] = [(n, v) for n, v in model.named_arrays().items()]
    adam_t = {}
    for name, (m, v, t) in sorted(ckpt.optimizer.state.items()):
        arrays.append((f"adam.m.{name}", m))
        arrays.append((f"adam.v.{name}", v))
        adam_t[name] = t
    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "epoch": ckpt.epoch,
        "model_cfg": _config_dict(model.cfg),
        "stft_cfg": _config_dict(ckpt.stft_cfg),
        "train_cfg": _config_dict(ckpt.train_cfg) if ckpt.train_cfg else None,
        "effect_ids": model.effect_ids,
        "bank_size": len(model.bank),
        "bank_labels": list(ckpt.bank_labels),
        "adam": {"beta1": ckpt.optimizer.beta1, "beta2": ckpt.optimizer.beta2,
                 "eps": ckpt.optimizer.eps, "t": adam_t},
        "extra": ckpt.extra,
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in arrays],
    }
    blob = json.dumps(header).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<Q", len(blob)) + blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if raw[:8] != _MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(
            f"{path}: schema_version {header.get('schema_version')} != {CHECKPOINT_SCHEMA_VERSION}"
        )
    arrays = {}
    pos = 16 + hlen
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(spec["shape"]).copy()
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")

    model_cfg = ConmodConfig(**header["model_cfg"])
    stft_cfg = StftConfig(**header["stft_cfg"])
    n = header["bank_size"]
    bank = LfoBank([arrays[f"lfo.z_a.{i}"][0] for i in range(n)], [arrays[f"lfo.z_b.{i}"][0] for i in range(n)])
    model = Conmod(model_cfg, bank, header["effect_ids"])
    for p in model.parameters():
        if p.name not in arrays:
            raise CheckpointError(f"{path}: missing array {p.name}")
        p.value[...] = arrays[p.name]
    a = header["adam"]
    opt = Adam(a["beta1"], a["beta2"], a["eps"])
    for name, t in a["t"].items():
        opt.state[name] = (arrays[f"adam.m.{name}"], arrays[f"adam.v.{name}"], t)
    tc = header.get("train_cfg")
    train_cfg = None
    if tc:
        tc = dict(tc)
        tc["loss_weights"] = LossWeights(**tc["loss_weights"])
        train_cfg = TrainConfig(**tc)
    return Checkpoint(model, stft_cfg, opt, header["epoch"], header["bank_labels"], train_cfg, header.get("extra", {}))
