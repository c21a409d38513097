"""ESR, multi-resolution spectral loss and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import MRSL_FFT_SIZES, magnitude_spectrogram

ESR_EPS = 1e-10


@dataclass(frozen=True)
class LossWeights:
    lam: float = 2.0
    fft_sizes: tuple[int, ...] = MRSL_FFT_SIZES
    esr_epsilon: float = ESR_EPS
    # "sum": entrywise L1 sums. "mean": per-resolution averages, scale-free across signal lengths.
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.fft_sizes:
            raise ValueError("fft_sizes must be non-empty")
        object.__setattr__(self, "fft_sizes", tuple(int(n) for n in self.fft_sizes))


def _values(y) -> np.ndarray:
    return y.value if isinstance(y, Tensor) else np.asarray(getattr(y, "samples", y), dtype=float)


def esr(y, y_hat, eps: float = ESR_EPS) -> Tensor:
    """sum (y - y_hat)^2 / (sum y^2 + eps). Differentiable in y_hat."""
    target = _values(y)
    y_hat = y_hat if isinstance(y_hat, Tensor) else Tensor(_values(y_hat))
    if target.shape != y_hat.shape:
        raise ValueError(f"esr: length mismatch {target.shape} vs {y_hat.shape}")
    err = y_hat - target
    return ad.total(err * err) * (1.0 / (np.sum(target**2) + eps))


def target_spectrograms(y, fft_sizes) -> dict[int, np.ndarray]:
    """Precompute target magnitudes so training steps only transform the prediction."""
    with ad.no_grad():
        return {n: magnitude_spectrogram(_values(y), n).value for n in fft_sizes}


def mrsl(y, y_hat, weights: LossWeights = LossWeights(), target_mags=None) -> Tensor:
    """sum_i ||S_i - S^_i||_1 + ||log S_i - log S^_i||_1 over the configured FFT sizes."""
    target = _values(y)
    y_hat = y_hat if isinstance(y_hat, Tensor) else Tensor(_values(y_hat))
    if target.shape != y_hat.shape:
        raise ValueError(f"mrsl: length mismatch {target.shape} vs {y_hat.shape}")
    if len(target) < max(weights.fft_sizes):
        raise ValueError(f"mrsl: signal of {len(target)} samples shorter than fft size {max(weights.fft_sizes)}")
    if target_mags is None:
        target_mags = target_spectrograms(target, weights.fft_sizes)
    reduce = ad.total if weights.reduction == "sum" else ad.mean
    terms = []
    for n in weights.fft_sizes:
        S = target_mags[n]
        S_hat = magnitude_spectrogram(y_hat, n)
        terms.append(reduce(ad.absolute(S_hat - S)))
        terms.append(reduce(ad.absolute(ad.log(S_hat) - np.log(S))))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def combine(esr_value, mrsl_value, weights: LossWeights = LossWeights()):
    """lambda * ESR + MRSL for already evaluated terms (floats or tensors)."""
    return esr_value * weights.lam + mrsl_value


def total_loss(y, y_hat, weights: LossWeights = LossWeights(), target_mags=None) -> Tensor:
    return combine(esr(y, y_hat, weights.esr_epsilon), mrsl(y, y_hat, weights, target_mags), weights)


def loss_terms(y, y_hat, weights: LossWeights = LossWeights(), target_mags=None) -> dict[str, Tensor]:
    e = esr(y, y_hat, weights.esr_epsilon)
    m = mrsl(y, y_hat, weights, target_mags)
    return {"esr": e, "mrsl": m, "total": combine(e, m, weights)}
