"""JSON run configuration: {oracle, stft, model, train, eval} sections over the typed configs."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights
from .model import ConmodConfig
from .oracles import EFFECTS, OracleConfig, oracle_to_dict
from .spectral import StftConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EffectGrid:
    effect_id: str = "phaser"
    lfo_freqs: tuple[float, ...] = (0.23, 0.73, 1.13)
    feedback_pcts: tuple[float, ...] = (0.0, 25.0, 50.0, 75.0)
    overrides: dict = field(default_factory=dict)

    def template(self) -> OracleConfig:
        if self.effect_id in EFFECTS:
            base = EFFECTS[self.effect_id]
        else:
            kind = self.overrides.get("kind")
            if kind is None:
                raise ConfigError(f"effect {self.effect_id!r} is not built in; give overrides.kind")
            base = EFFECTS[kind]
        fields = {k: v for k, v in self.overrides.items() if k != "kind"}
        try:
            return dataclasses.replace(base, **fields)
        except TypeError as exc:
            raise ConfigError(f"effect {self.effect_id!r}: {exc}") from None


@dataclass(frozen=True)
class OracleSection:
    effects: tuple[EffectGrid, ...] = (EffectGrid(),)
    shared_phase: float = 0.0
    duration_s: float = 6.67
    sample_rate: int = 44100


@dataclass(frozen=True)
class EvalSection:
    lfo_freqs: tuple[float, ...] = (0.1, 0.23, 0.5, 0.73, 1.13, 2.0)
    feedback_pcts: tuple[float, ...] = (0.0, 12.5, 25.0, 37.5, 50.0, 62.5, 75.0)
    test_duration_s: float = 10.0
    test_seed: int = 0
    long_durations: tuple[float, ...] = (10.0, 30.0, 60.0)
    long_condition: tuple[float, float] = (0.73, 0.0)


@dataclass(frozen=True)
class RunConfig:
    oracle: OracleSection = OracleSection()
    stft: StftConfig = StftConfig()
    model: ConmodConfig = ConmodConfig()
    train: TrainConfig = TrainConfig()
    eval: EvalSection = EvalSection()

    def templates(self) -> dict[str, OracleConfig]:
        return {g.effect_id: g.template() for g in self.oracle.effects}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for g, src in zip(d["oracle"]["effects"], self.oracle.effects):
            g["resolved"] = oracle_to_dict(src.template())
        return d


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def resolve(data: dict | None = None) -> RunConfig:
    """Defaults < file values. Model bins and cond_dim follow from stft and oracle sections."""
    data = dict(data or {})
    unknown = set(data) - {"oracle", "stft", "model", "train", "eval"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")

    osec = dict(data.get("oracle", {}))
    if "effects" in osec:
        osec["effects"] = tuple(_build(EffectGrid, e, "oracle.effects") for e in osec["effects"])
    oracle = _build(OracleSection, osec, "oracle")

    stft_data = dict(data.get("stft", {}))
    stft_data.setdefault("sample_rate", oracle.sample_rate)
    stft = _build(StftConfig, stft_data, "stft")

    mdata = dict(data.get("model", {}))
    cond_dim = 3 if len(oracle.effects) > 1 else 1
    for key, want in (("bins", stft.bins), ("cond_dim", cond_dim)):
        if mdata.get(key, want) != want:
            raise ConfigError(f"model.{key}={mdata[key]} conflicts with derived value {want}")
        mdata[key] = want
    model = _build(ConmodConfig, mdata, "model")

    tdata = dict(data.get("train", {}))
    if "loss_weights" in tdata:
        tdata["loss_weights"] = _build(LossWeights, tdata["loss_weights"], "train.loss_weights")
    if os.environ.get("CONMOD_SEED"):
        tdata["seed"] = int(os.environ["CONMOD_SEED"])
    train = _build(TrainConfig, tdata, "train")

    ev = _build(EvalSection, dict(data.get("eval", {})), "eval")
    return RunConfig(oracle, stft, model, train, ev)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve(data)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "resolved_config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    return path
