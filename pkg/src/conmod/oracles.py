"""Reference LFO phaser / flanger and ground-truth dataset assembly.

These stand in for the plugins and hardware used as training targets: the
renders are sample-accurate, deterministic and causal, so every training and
evaluation target can be regenerated from a manifest.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numba
import numpy as np

from .signals import DEFAULT_SR, AudioBuffer, generate_chirp_train, wav_read, wav_write

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
MAX_FEEDBACK = 0.95
FLANGER_LINE_MS = 20.0


@dataclass(frozen=True)
class PhaserOracleConfig:
    stages: int = 6
    center_hz: float = 1300.0
    sweep_octaves: float = 1.5
    lfo_freq_hz: float = 0.0
    lfo_phase: float = 0.0
    feedback: float = 0.0
    mix: float = 0.7

    def validate(self, sample_rate: int) -> None:
        if self.stages < 1 or self.stages % 2:
            raise ValueError(f"phaser stages must be a positive even count, got {self.stages}")
        if not 0 <= self.feedback <= MAX_FEEDBACK:
            raise ValueError(f"phaser feedback {self.feedback} outside [0, {MAX_FEEDBACK}]")
        if not 0 <= self.mix <= 1:
            raise ValueError(f"mix {self.mix} outside [0, 1]")
        if self.lfo_freq_hz < 0:
            raise ValueError("lfo_freq_hz must be >= 0")
        lo = self.center_hz * 2.0 ** (-self.sweep_octaves)
        hi = self.center_hz * 2.0 ** self.sweep_octaves
        if lo <= 0 or hi >= sample_rate / 2:
            raise ValueError(f"phaser sweep [{lo:.1f}, {hi:.1f}] Hz leaves (0, Nyquist)")


@dataclass(frozen=True)
class FlangerOracleConfig:
    base_delay_ms: float = 1.5
    lfo_amount: float = 0.8
    lfo_freq_hz: float = 0.0
    lfo_phase: float = 0.0
    feedback: float = 0.0
    mix: float = 0.7

    def validate(self, sample_rate: int) -> None:
        if self.base_delay_ms <= 0:
            raise ValueError("base_delay_ms must be positive")
        if not 0 <= self.lfo_amount <= 1:
            raise ValueError(f"lfo_amount {self.lfo_amount} outside [0, 1]")
        if not 0 <= self.feedback <= MAX_FEEDBACK:
            raise ValueError(f"flanger feedback {self.feedback} outside [0, {MAX_FEEDBACK}]")
        if not 0 <= self.mix <= 1:
            raise ValueError(f"mix {self.mix} outside [0, 1]")
        if self.lfo_freq_hz < 0:
            raise ValueError("lfo_freq_hz must be >= 0")
        if self.base_delay_ms * (1 + self.lfo_amount) > FLANGER_LINE_MS:
            raise ValueError(f"modulated delay exceeds the {FLANGER_LINE_MS} ms delay line")
        if round(self.base_delay_ms * 1e-3 * sample_rate) < 1:
            raise ValueError("base delay shorter than one sample")


OracleConfig = Union[PhaserOracleConfig, FlangerOracleConfig]


def allpass_coefficient(break_hz, sample_rate: float):
    t = np.tan(np.pi * np.asarray(break_hz) / sample_rate)
    return (t - 1.0) / (t + 1.0)


@numba.njit(cache=True)
def _phaser_kernel(x, coeff, stages, feedback, mix):
    n = x.shape[0]
    y = np.empty(n)
    sx = np.zeros(stages)
    sy = np.zeros(stages)
    d_prev = 0.0
    for i in range(n):
        a = coeff[i]
        u = x[i] + feedback * d_prev
        for k in range(stages):
            v = a * u + sx[k] - a * sy[k]
            sx[k] = u
            sy[k] = v
            u = v
        d_prev = u
        y[i] = mix * u + (1.0 - mix) * x[i]
    return y


def render_phaser(x: AudioBuffer, cfg: PhaserOracleConfig) -> AudioBuffer:
    """Feedback phaser: an LFO-swept cascade of first-order all-passes mixed with the dry path."""
    cfg.validate(x.sample_rate)
    sr = x.sample_rate
    n = np.arange(len(x))
    lfo = np.sin(2 * np.pi * cfg.lfo_freq_hz * n / sr + cfg.lfo_phase)
    coeff = allpass_coefficient(cfg.center_hz * 2.0 ** (cfg.sweep_octaves * lfo), sr)
    y = _phaser_kernel(x.samples, coeff, cfg.stages, cfg.feedback, cfg.mix)
    return AudioBuffer(y, sr)


@numba.njit(cache=True)
def _flanger_kernel(x, delay, fb_tap, feedback, mix):
    n = x.shape[0]
    w = np.empty(n)
    y = np.empty(n)
    for i in range(n):
        fb = w[i - fb_tap] if i >= fb_tap else 0.0
        w[i] = x[i] + feedback * fb
        pos = i - delay[i]
        j = int(np.floor(pos))
        frac = pos - j
        a = w[j] if j >= 0 else 0.0
        b = w[j + 1] if j + 1 >= 0 else 0.0
        y[i] = mix * ((1.0 - frac) * a + frac * b) + (1.0 - mix) * x[i]
    return y


def flanger_delay_samples(cfg: FlangerOracleConfig, num_samples: int, sample_rate: int) -> np.ndarray:
    n = np.arange(num_samples)
    base = cfg.base_delay_ms * 1e-3 * sample_rate
    lfo = np.sin(2 * np.pi * cfg.lfo_freq_hz * n / sample_rate + cfg.lfo_phase)
    return np.maximum(base * (1.0 + cfg.lfo_amount * lfo), 1.0)


def render_flanger(x: AudioBuffer, cfg: FlangerOracleConfig) -> AudioBuffer:
    """Flanger with a linearly interpolated modulated tap and a fixed feedback tap at the nominal delay."""
    cfg.validate(x.sample_rate)
    sr = x.sample_rate
    delay = flanger_delay_samples(cfg, len(x), sr)
    fb_tap = int(round(cfg.base_delay_ms * 1e-3 * sr))
    y = _flanger_kernel(x.samples, delay, fb_tap, cfg.feedback, cfg.mix)
    return AudioBuffer(y, sr)


def render(x: AudioBuffer, cfg: OracleConfig) -> AudioBuffer:
    if isinstance(cfg, PhaserOracleConfig):
        return render_phaser(x, cfg)
    if isinstance(cfg, FlangerOracleConfig):
        return render_flanger(x, cfg)
    raise TypeError(f"unknown oracle config {type(cfg).__name__}")


def with_condition(cfg: OracleConfig, lfo_freq_hz: float, lfo_phase: float, feedback_pct: float) -> OracleConfig:
    if not 0 <= feedback_pct <= 100 * MAX_FEEDBACK:
        raise ValueError(f"feedback {feedback_pct}% outside [0, {100 * MAX_FEEDBACK:g}]%")
    return dataclasses.replace(
        cfg, lfo_freq_hz=float(lfo_freq_hz), lfo_phase=float(lfo_phase), feedback=feedback_pct / 100.0
    )


# Named oracle templates. "phaser_alt" is a second, differently voiced phaser
# used for two-effect training (shallower sweep, fewer stages, 50% mix).
EFFECTS: dict[str, OracleConfig] = {
    "phaser": PhaserOracleConfig(),
    "flanger": FlangerOracleConfig(),
    "phaser_alt": PhaserOracleConfig(stages=4, sweep_octaves=0.75, mix=0.5),
}


def oracle_to_dict(cfg: OracleConfig) -> dict:
    kind = "phaser" if isinstance(cfg, PhaserOracleConfig) else "flanger"
    return {"kind": kind, **dataclasses.asdict(cfg)}


def oracle_from_dict(d: dict) -> OracleConfig:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"phaser": PhaserOracleConfig, "flanger": FlangerOracleConfig}[kind]
    return cls(**d)


# ---------------------------------------------------------------- dataset


@dataclass(frozen=True)
class ConditionLabel:
    effect_id: str
    lfo_freq_hz: float
    lfo_phase: float
    feedback_pct: float

    def __post_init__(self):
        if self.lfo_freq_hz < 0:
            raise ValueError("lfo_freq_hz must be >= 0")
        if not 0 <= self.feedback_pct <= 100 * MAX_FEEDBACK:
            raise ValueError(f"feedback_pct {self.feedback_pct} outside [0, 95]")

    @property
    def key(self) -> tuple:
        return (self.effect_id, self.lfo_freq_hz, self.feedback_pct)


@dataclass(frozen=True)
class ManifestEntry:
    label: ConditionLabel
    dry_path: Path
    wet_path: Path
    duration_s: float

    def load(self) -> tuple[AudioBuffer, AudioBuffer]:
        return wav_read(self.dry_path), wav_read(self.wet_path)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    sample_rate: int = DEFAULT_SR
    oracles: dict[str, OracleConfig] = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def __post_init__(self):
        keys = [e.label.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (effect_id, lfo_freq_hz, feedback_pct) in manifest")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def effect_ids(self) -> list[str]:
        return sorted({e.label.effect_id for e in self.entries})

    def to_json(self, base_dir: Path | None = None) -> dict:
        def rel(p: Path) -> str:
            if base_dir is not None:
                try:
                    return os.path.relpath(p, base_dir)
                except ValueError:
                    pass
            return str(p)

        return {
            "schema_version": self.schema_version,
            "sample_rate": self.sample_rate,
            "oracles": {k: oracle_to_dict(v) for k, v in self.oracles.items()},
            "entries": [
                {
                    "effect_id": e.label.effect_id,
                    "lfo_freq_hz": e.label.lfo_freq_hz,
                    "lfo_phase": e.label.lfo_phase,
                    "feedback_pct": e.label.feedback_pct,
                    "dry_path": rel(e.dry_path),
                    "wet_path": rel(e.wet_path),
                    "duration_s": e.duration_s,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, d: dict, base_dir: Path | None = None) -> "DatasetManifest":
        if d.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ValueError(f"unsupported manifest schema_version {d.get('schema_version')}")
        base = Path(base_dir) if base_dir is not None else Path(".")
        entries = [
            ManifestEntry(
                label=ConditionLabel(e["effect_id"], e["lfo_freq_hz"], e["lfo_phase"], e["feedback_pct"]),
                dry_path=base / e["dry_path"],
                wet_path=base / e["wet_path"],
                duration_s=e["duration_s"],
            )
            for e in d["entries"]
        ]
        oracles = {k: oracle_from_dict(v) for k, v in d.get("oracles", {}).items()}
        return cls(entries, int(d["sample_rate"]), oracles)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_json(path.parent), indent=2), encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")), path.parent)

    def merged(self, other: "DatasetManifest") -> "DatasetManifest":
        if other.sample_rate != self.sample_rate:
            raise ValueError("cannot merge manifests with different sample rates")
        return DatasetManifest(
            self.entries + other.entries, self.sample_rate, {**self.oracles, **other.oracles}
        )


def build_dataset(
    effect_id: str,
    lfo_freqs,
    feedback_pcts,
    shared_phase: float = 0.0,
    duration_s: float = 6.67,
    sample_rate: int = DEFAULT_SR,
    out_dir=".",
    template: OracleConfig | None = None,
    append: bool = False,
) -> DatasetManifest:
    """Render chirp-train dry/wet pairs over the (frequency x feedback) grid.

    Writes one dry file shared by all conditions, one wet file per grid point
    and `manifest.json` into `out_dir`. With `append`, entries are added to
    an existing manifest there (used to pool several effects).
    """
    lfo_freqs = [float(f) for f in lfo_freqs]
    feedback_pcts = [float(f) for f in feedback_pcts]
    if not lfo_freqs or not feedback_pcts:
        raise ValueError("empty parameter grid")
    if len(set(lfo_freqs)) != len(lfo_freqs) or len(set(feedback_pcts)) != len(feedback_pcts):
        raise ValueError("duplicate grid points")
    if template is None:
        if effect_id not in EFFECTS:
            raise ValueError(f"unknown effect_id {effect_id!r}; pass a template")
        template = EFFECTS[effect_id]
    # validate every grid point before touching the disk
    configs = {
        (f, fb): with_condition(template, f, shared_phase, fb) for f in lfo_freqs for fb in feedback_pcts
    }
    for cfg in configs.values():
        cfg.validate(sample_rate)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    dry = generate_chirp_train(duration_s, sample_rate=sample_rate)
    dry_path = out / f"dry_chirp_{duration_s:g}s.wav"
    wav_write(dry_path, dry)

    entries = []
    for (f, fb), cfg in configs.items():
        wet = render(dry, cfg)
        wet_path = out / f"wet_{effect_id}_f{f:g}_fb{fb:g}.wav"
        wav_write(wet_path, wet)
        label = ConditionLabel(effect_id, f, float(shared_phase), fb)
        entries.append(ManifestEntry(label, dry_path, wet_path, duration_s))
        log.info("rendered %s", wet_path.name)

    manifest = DatasetManifest(entries, sample_rate, {effect_id: template})
    existing = out / "manifest.json"
    if append and existing.exists():
        manifest = DatasetManifest.load(existing).merged(manifest)
    manifest.save(existing)
    return manifest
