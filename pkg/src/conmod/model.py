"""CONMOD network: trainable LFO bank -> LSTM -> FiLM-conditioned MLP -> per-frame transfer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .signals import AudioBuffer
from .spectral import ComplexSpectrogram, StftConfig, apply_transfer, istft, stft


@dataclass(frozen=True)
class ConmodConfig:
    lstm_hidden: int = 32
    mlp_hidden: int = 512
    num_hidden_fc: int = 2
    bins: int = 2049
    cond_dim: int = 1
    film_hidden: int = 16

    def __post_init__(self):
        for name in ("lstm_hidden", "mlp_hidden", "num_hidden_fc", "bins", "film_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cond_dim not in (1, 3):
            raise ValueError("cond_dim must be 1 (feedback) or 3 (feedback + 2-d effect embedding)")


def count_parameters(cfg: ConmodConfig) -> int:
    """Closed-form count of network scalars (LFO bank and effect embeddings excluded)."""
    H, W, B = cfg.lstm_hidden, cfg.mlp_hidden, cfg.bins
    lstm = 4 * ((1 + H) * H + H)
    fc = (H * W + W) + (cfg.num_hidden_fc - 1) * (W * W + W) + (W * 2 * B + 2 * B)
    film = cfg.num_hidden_fc * (cfg.cond_dim * cfg.film_hidden + cfg.film_hidden + cfg.film_hidden * 2 * W + 2 * W)
    return lstm + fc + film


@dataclass
class ConditionVector:
    """Feedback fraction plus, in two-effect mode, a 2-d effect embedding."""

    c_fb: float
    c_emb: Tensor | None = None

    def __post_init__(self):
        if not np.isfinite(self.c_fb):
            raise ValueError("c_fb must be finite")
        if self.c_emb is not None and self.c_emb.shape != (2,):
            raise ad.ShapeError(f"c_emb must have shape (2,), got {self.c_emb.shape}")

    @property
    def dim(self) -> int:
        return 1 if self.c_emb is None else 3

    def as_tensor(self) -> Tensor:
        fb = Tensor(np.array([self.c_fb]))
        return fb if self.c_emb is None else ad.concat([fb, self.c_emb])


class LfoBank:
    """N sinusoidal LFOs, each with its own trainable frequency (Hz) and phase (rad)."""

    def __init__(self, freqs, phases):
        freqs = np.asarray(freqs, dtype=float).reshape(-1)
        phases = np.asarray(phases, dtype=float).reshape(-1)
        if len(freqs) < 1 or len(freqs) != len(phases):
            raise ValueError("LfoBank needs N >= 1 matching frequencies and phases")
        if not np.all(np.isfinite(freqs)):
            raise ValueError("LFO frequencies must be finite")
        self.z_a = [Parameter([f], f"lfo.z_a.{i}") for i, f in enumerate(freqs)]
        self.z_b = [Parameter([p], f"lfo.z_b.{i}") for i, p in enumerate(phases)]

    def __len__(self) -> int:
        return len(self.z_a)

    @property
    def freqs(self) -> np.ndarray:
        return np.array([p.value[0] for p in self.z_a])

    @property
    def phases(self) -> np.ndarray:
        return np.array([p.value[0] for p in self.z_b])

    def parameters(self) -> list[Parameter]:
        return self.z_a + self.z_b

    def routed(self, index: int) -> tuple[Tensor, Tensor]:
        """(z_a, z_b) of entry `index`; every other entry is cut off by stop_gradient."""
        if not 0 <= index < len(self):
            raise IndexError(f"LFO index {index} out of range for bank of {len(self)}")
        za = ad.concat([p if j == index else ad.stop_gradient(p) for j, p in enumerate(self.z_a)])
        zb = ad.concat([p if j == index else ad.stop_gradient(p) for j, p in enumerate(self.z_b)])
        return za[index : index + 1], zb[index : index + 1]


def lfo_frames(bank: LfoBank, index: int, num_frames: int, hop: int, sample_rate: int) -> Tensor:
    """s[m] = sin(2 pi z_a m hop / sr + z_b), as an (M, 1) column."""
    za, zb = bank.routed(index)
    t = (np.arange(num_frames) * hop / sample_rate).reshape(-1, 1)
    return ad.sin(2 * np.pi * t * za + zb)


def sinusoid_frames(freq, phase, num_frames: int, hop: int, sample_rate: int) -> Tensor:
    """LFO sequence from explicit (possibly non-bank) frequency and phase tensors."""
    t = (np.arange(num_frames) * hop / sample_rate).reshape(-1, 1)
    return ad.sin(2 * np.pi * t * ad.as_tensor(freq) + ad.as_tensor(phase))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conmod:
    """Network weights plus the trainable LFO bank and optional effect embeddings."""

    def __init__(self, cfg: ConmodConfig, bank: LfoBank, effect_ids=(), seed: int = 0):
        self.cfg = cfg
        self.bank = bank
        rng = np.random.default_rng(seed)
        H, W, B = cfg.lstm_hidden, cfg.mlp_hidden, cfg.bins
        p: dict[str, Parameter] = {}

        def add(name, value):
            p[name] = Parameter(value, name)

        add("lstm.w_x", _uniform(rng, H, (1, 4 * H)))
        add("lstm.w_h", _uniform(rng, H, (H, 4 * H)))
        add("lstm.b", _uniform(rng, H, (4 * H,)))
        fan = H
        for k in range(cfg.num_hidden_fc):
            add(f"fc{k}.w", _uniform(rng, fan, (fan, W)))
            add(f"fc{k}.b", _uniform(rng, fan, (W,)))
            add(f"film{k}.w1", _uniform(rng, cfg.cond_dim, (cfg.cond_dim, cfg.film_hidden)))
            add(f"film{k}.b1", _uniform(rng, cfg.cond_dim, (cfg.film_hidden,)))
            # identity modulation at init: gamma = 1, beta = 0
            add(f"film{k}.w2", np.zeros((cfg.film_hidden, 2 * W)))
            add(f"film{k}.b2", np.concatenate([np.ones(W), np.zeros(W)]))
            fan = W
        add("out.w", _uniform(rng, W, (W, 2 * B)))
        add("out.b", _uniform(rng, W, (2 * B,)))
        self.params = p

        effect_ids = list(effect_ids)
        if (cfg.cond_dim == 3) != bool(effect_ids):
            raise ValueError("effect embeddings are required iff cond_dim == 3")
        self.effect_ids = effect_ids
        self.embeddings = {
            eid: Parameter(rng.normal(0.0, 0.1, size=2), f"emb.{eid}") for eid in effect_ids
        }

    # ------------------------------------------------------------ plumbing

    def weights(self) -> list[Parameter]:
        return list(self.params.values())

    def parameters(self) -> list[Parameter]:
        return self.weights() + self.bank.parameters() + list(self.embeddings.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def condition(self, feedback_pct: float, effect_id: str | None = None) -> ConditionVector:
        if self.cfg.cond_dim == 1:
            return ConditionVector(feedback_pct / 100.0)
        if effect_id not in self.embeddings:
            raise KeyError(f"unknown effect_id {effect_id!r}; model knows {self.effect_ids}")
        return ConditionVector(feedback_pct / 100.0, self.embeddings[effect_id])

    # ------------------------------------------------------------ forward

    def film(self, x_fc: Tensor, cond: ConditionVector, site: int) -> Tensor:
        """y = gamma * x + beta with [gamma, beta] from a small tanh MLP on the condition."""
        if cond.dim != self.cfg.cond_dim:
            raise ad.ShapeError(f"condition has dim {cond.dim}, model expects {self.cfg.cond_dim}")
        p = self.params
        c = ad.reshape(cond.as_tensor(), (1, -1))
        hidden = ad.tanh(c @ p[f"film{site}.w1"] + p[f"film{site}.b1"])
        gb = hidden @ p[f"film{site}.w2"] + p[f"film{site}.b2"]
        W = self.cfg.mlp_hidden
        return gb[:, :W] * x_fc + gb[:, W:]

    def predict_transfer(self, lfo_seq: Tensor, cond: ConditionVector) -> ComplexSpectrogram:
        p = self.params
        h = ad.lstm(lfo_seq, p["lstm.w_x"], p["lstm.w_h"], p["lstm.b"])
        for k in range(self.cfg.num_hidden_fc):
            h = ad.tanh(h @ p[f"fc{k}.w"] + p[f"fc{k}.b"])
            h = self.film(h, cond, k)
        out = h @ p["out.w"] + p["out.b"]
        B = self.cfg.bins
        return ComplexSpectrogram(out[:, :B], out[:, B:])

    def render_spectrum(self, dry_spec: ComplexSpectrogram, lfo_seq: Tensor, cond: ConditionVector,
                        stft_cfg: StftConfig, out_len: int) -> Tensor:
        H = self.predict_transfer(lfo_seq, cond)
        return istft(apply_transfer(dry_spec, H), stft_cfg, out_len)

    def forward_render(self, dry, lfo_index: int, cond: ConditionVector, stft_cfg: StftConfig,
                       dry_spec: ComplexSpectrogram | None = None, lfo_override=None) -> Tensor:
        """Predicted wet signal for a dry input.

        `lfo_override=(freq, phase)` replaces the bank entry (used to probe
        frequencies the model was not trained on). `dry_spec` may carry a
        precomputed STFT of `dry`.
        """
        if stft_cfg.bins != self.cfg.bins:
            raise ad.ShapeError(f"STFT has {stft_cfg.bins} bins, model emits {self.cfg.bins}")
        samples = dry.samples if isinstance(dry, AudioBuffer) else np.asarray(dry, dtype=float)
        if dry_spec is None:
            with ad.no_grad():
                dry_spec = stft(samples, stft_cfg)
        M = dry_spec.frames
        if lfo_override is None:
            lfo = lfo_frames(self.bank, lfo_index, M, stft_cfg.hop, stft_cfg.sample_rate)
        else:
            lfo = sinusoid_frames(np.array([lfo_override[0]]), np.array([lfo_override[1]]),
                                  M, stft_cfg.hop, stft_cfg.sample_rate)
        return self.render_spectrum(dry_spec, lfo, cond, stft_cfg, len(samples))

    def render(self, dry: AudioBuffer, lfo_index: int, feedback_pct: float, stft_cfg: StftConfig,
               effect_id: str | None = None, lfo_override=None) -> AudioBuffer:
        with ad.no_grad():
            y = self.forward_render(dry, lfo_index, self.condition(feedback_pct, effect_id), stft_cfg,
                                    lfo_override=lfo_override)
        return AudioBuffer(y.value, dry.sample_rate)
