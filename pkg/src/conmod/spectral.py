"""Differentiable STFT / overlap-add iSTFT and magnitude spectrograms.

The real DFT is evaluated with numpy's FFT and differentiated through its
exact adjoint, so every transform here is a linear map inside the autodiff
graph. `dft_matrices` gives the explicit basis used to cross-check it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .signals import DEFAULT_SR, AudioBuffer

MAG_EPS = 1e-12
MRSL_FFT_SIZES = (512, 1024, 2048)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (COLA at hop n/4 with overlap sum 2)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def overlap_sum(window: np.ndarray, hop: int, num_frames: int) -> np.ndarray:
    return _overlap_add(np.tile(window, (num_frames, 1)), hop)


@dataclass(frozen=True)
class StftConfig:
    frame_size: int = 1764
    fft_size: int = 4096
    hop: int = 441
    sample_rate: int = DEFAULT_SR

    def __post_init__(self):
        if self.fft_size < self.frame_size:
            raise ValueError(f"fft_size {self.fft_size} < frame_size {self.frame_size}")
        if self.hop <= 0 or self.frame_size % self.hop:
            raise ValueError(f"hop {self.hop} must divide frame_size {self.frame_size}")
        ratio = self.frame_size // self.hop
        ola = overlap_sum(self.window, self.hop, 2 * ratio + 1)
        interior = ola[self.frame_size : -self.frame_size]
        if np.ptp(interior) > 1e-9:
            raise ValueError("window is not constant-overlap-add at this hop")

    @property
    def window(self) -> np.ndarray:
        return hann(self.frame_size)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def ola_gain(self) -> float:
        """Interior value of the summed, hop-shifted analysis windows."""
        return float(self.window.sum() / self.hop)

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    def num_frames(self, length: int) -> int:
        """Frames needed to cover `length` samples, the last one zero-padded."""
        if length < self.frame_size:
            raise ValueError(f"signal of {length} samples is shorter than one frame ({self.frame_size})")
        return -(-(length - self.frame_size) // self.hop) + 1


@dataclass
class ComplexSpectrogram:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        self.real = ad.as_tensor(self.real)
        self.imag = ad.as_tensor(self.imag)
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise ad.ShapeError(f"real {self.real.shape} and imag {self.imag.shape} must be equal 2-d shapes")

    @property
    def shape(self) -> tuple[int, int]:
        return self.real.shape

    @property
    def frames(self) -> int:
        return self.real.shape[0]

    @property
    def bins(self) -> int:
        return self.real.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real.value + 1j * self.imag.value


# ------------------------------------------------------------ primitive ops


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Sum frames (M, N) placed at multiples of hop; vectorized per hop-sized chunk."""
    M, N = frames.shape
    out = np.zeros((M - 1) * hop + N)
    for start in range(0, N, hop):
        chunk = frames[:, start : start + hop]
        w = chunk.shape[1]
        if w == hop:
            out[start : start + M * hop] += chunk.reshape(-1)
        else:
            for m in range(M):
                out[m * hop + start : m * hop + start + w] += chunk[m]
    return out


def frame_signal(x, frame_size: int, hop: int, num_frames: int) -> Tensor:
    """Slice (M, frame_size) frames at hop spacing; zero-pads the tail as needed."""
    x = ad.as_tensor(x)
    n = x.shape[0]
    needed = (num_frames - 1) * hop + frame_size
    padded = np.zeros(max(needed, n))
    padded[:n] = x.value
    idx = np.arange(num_frames)[:, None] * hop + np.arange(frame_size)[None, :]
    out = padded[idx]

    def bw(g):
        acc = _overlap_add(g, hop)
        if len(acc) < n:
            acc = np.concatenate([acc, np.zeros(n - len(acc))])
        return (acc[:n],)

    return ad.make_node(out, (x,), bw)


def overlap_add(frames, hop: int) -> Tensor:
    frames = ad.as_tensor(frames)
    frame_size = frames.shape[1]
    num_frames = frames.shape[0]
    idx = np.arange(num_frames)[:, None] * hop + np.arange(frame_size)[None, :]

    def bw(g):
        return (g[idx],)

    return ad.make_node(_overlap_add(frames.value, hop), (frames,), bw)


def rfft(x, n: int) -> tuple[Tensor, Tensor]:
    """Real DFT along the last axis, zero-padded to n; returns (real, imag)."""
    x = ad.as_tensor(x)
    width = x.shape[-1]
    if width > n:
        raise ad.ShapeError(f"rfft: input width {width} exceeds n={n}")
    X = np.fft.rfft(x.value, n=n, axis=-1)
    # adjoint: x_grad[t] = sum_k gr_k cos(2pi k t/n) - gi_k sin(2pi k t/n)
    scale = np.full(n // 2 + 1, 0.5)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0

    def adjoint(gr, gi):
        G = (gr + 1j * gi) * scale
        return (n * np.fft.irfft(G, n=n, axis=-1))[..., :width]

    # share one adjoint evaluation between the two outputs through a pair node
    pair = ad.make_node(np.stack([X.real, X.imag]), (x,), lambda g: (adjoint(g[0], g[1]),))
    return pair[0], pair[1]


def irfft(real, imag, n: int) -> Tensor:
    """Inverse real DFT of length n along the last axis."""
    real, imag = ad.as_tensor(real), ad.as_tensor(imag)
    bins = n // 2 + 1
    if real.shape[-1] != bins or imag.shape != real.shape:
        raise ad.ShapeError(f"irfft: spectra {real.shape}/{imag.shape} do not match n={n}")
    out = np.fft.irfft(real.value + 1j * imag.value, n=n, axis=-1)
    c = np.full(bins, 2.0 / n)
    c[0] = 1.0 / n
    if n % 2 == 0:
        c[-1] = 1.0 / n

    def bw(g):
        G = np.fft.rfft(g, n=n, axis=-1)
        gi = c * G.imag
        gi[..., 0] = 0.0
        if n % 2 == 0:
            gi[..., -1] = 0.0
        return (c * G.real, gi)

    return ad.make_node(out, (real, imag), bw)


def dft_matrices(width: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Explicit (width, n//2+1) cosine / negative-sine bases of the zero-padded real DFT."""
    t = np.arange(width)[:, None]
    k = np.arange(n // 2 + 1)[None, :]
    ang = 2 * np.pi * t * k / n
    return np.cos(ang), -np.sin(ang)


# ------------------------------------------------------------ public API


def _signal_tensor(x) -> Tensor:
    if isinstance(x, AudioBuffer):
        return Tensor(x.samples)
    return ad.as_tensor(x)


def stft(x, cfg: StftConfig) -> ComplexSpectrogram:
    """Hann-windowed frames from sample 0 at hop spacing, zero-padded to fft_size."""
    x = _signal_tensor(x)
    M = cfg.num_frames(x.shape[0])
    frames = frame_signal(x, cfg.frame_size, cfg.hop, M) * cfg.window
    re, im = rfft(frames, cfg.fft_size)
    return ComplexSpectrogram(re, im)


def apply_transfer(S: ComplexSpectrogram, H: ComplexSpectrogram) -> ComplexSpectrogram:
    if S.shape != H.shape:
        raise ad.ShapeError(f"apply_transfer: spectrogram {S.shape} vs transfer {H.shape}")
    re, im = ad.complex_mul(S.real, S.imag, H.real, H.imag)
    return ComplexSpectrogram(re, im)


def istft(S: ComplexSpectrogram, cfg: StftConfig, out_len: int) -> Tensor:
    """Full-length inverse DFT per frame, overlap-added at hop, divided by the window overlap gain."""
    if S.bins != cfg.bins:
        raise ad.ShapeError(f"istft: {S.bins} bins but config expects {cfg.bins}")
    if out_len > S.frames * cfg.hop + cfg.fft_size:
        raise ValueError(f"out_len {out_len} exceeds what {S.frames} frames can cover")
    frames = irfft(S.real, S.imag, cfg.fft_size)
    y = overlap_add(frames, cfg.hop) * (1.0 / cfg.ola_gain)
    if y.shape[0] < out_len:
        y = ad.concat([y, np.zeros(out_len - y.shape[0])])
    return y[:out_len]


def magnitude_spectrogram(x, fft_size: int, eps: float = MAG_EPS) -> Tensor:
    """sqrt(|STFT|^2 + eps), Hann window of fft_size, hop fft_size/4; floor-framed, no padding."""
    if fft_size not in MRSL_FFT_SIZES:
        warnings.warn(f"fft_size {fft_size} is outside the usual {MRSL_FFT_SIZES}", stacklevel=2)
    x = _signal_tensor(x)
    n = x.shape[0]
    if n < fft_size:
        raise ValueError(f"signal of {n} samples is shorter than fft_size {fft_size}")
    hop = fft_size // 4
    M = (n - fft_size) // hop + 1
    frames = frame_signal(x, fft_size, hop, M) * hann(fft_size)
    re, im = rfft(frames, fft_size)
    return ad.sqrt(re * re + im * im + eps)
