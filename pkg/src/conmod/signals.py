"""Audio buffers, WAV I/O and deterministic excitation signals."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

DEFAULT_SR = 44100
CHIRP_PEAK = 0.9
TEST_SIGNAL_PEAK = 0.5

# E minor pentatonic over the lower guitar range (Hz)
PENTATONIC_HZ = (82.41, 98.00, 110.00, 123.47, 146.83, 164.81, 196.00, 220.00, 246.94, 293.66)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SR

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("AudioBuffer samples must be finite")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _require_nonempty(x: AudioBuffer) -> None:
    if len(x) == 0:
        raise ValueError("empty AudioBuffer")


def first_order_allpass_static(x: AudioBuffer, p: float) -> AudioBuffer:
    """y[n] = p x[n] + x[n-1] - p y[n-1], zero initial state."""
    if not abs(p) < 1:
        raise ValueError(f"all-pass coefficient must satisfy |p| < 1, got {p}")
    _require_nonempty(x)
    y = sps.lfilter([p, 1.0], [1.0, p], x.samples)
    return AudioBuffer(y, x.sample_rate)


def generate_chirp_train(
    duration_s: float,
    impulse_period_s: float = 0.04,
    num_allpass: int = 64,
    p: float = 0.9,
    sample_rate: int = DEFAULT_SR,
) -> AudioBuffer:
    """Impulse train dispersed by a chain of identical first-order all-passes."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if not 0 < impulse_period_s < duration_s:
        raise ValueError("impulse period must lie in (0, duration_s)")
    if num_allpass < 0:
        raise ValueError("num_allpass must be >= 0")
    if not abs(p) < 1:
        raise ValueError(f"all-pass coefficient must satisfy |p| < 1, got {p}")
    n = int(round(duration_s * sample_rate))
    period = int(round(impulse_period_s * sample_rate))
    if period < 1:
        raise ValueError("impulse period shorter than one sample")
    x = np.zeros(n)
    x[::period] = 1.0
    for _ in range(num_allpass):
        x = sps.lfilter([p, 1.0], [1.0, p], x)
    x *= CHIRP_PEAK / np.max(np.abs(x))
    return AudioBuffer(x, sample_rate)


def generate_test_signal(duration_s: float, sample_rate: int = DEFAULT_SR, seed: int = 0) -> AudioBuffer:
    """Synthetic plucked-string phrase used as the held-out evaluation input.

    A note starts every 0.5 s; each is six harmonics with 1/k amplitudes under
    a 0.4 s exponential decay, fundamental drawn from PENTATONIC_HZ.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s * sample_rate))
    rng = np.random.default_rng(seed)
    onset_step = int(round(0.5 * sample_rate))
    onsets = np.arange(0, n, onset_step)
    fundamentals = rng.choice(PENTATONIC_HZ, size=len(onsets))
    out = np.zeros(n)
    for start, f0 in zip(onsets, fundamentals):
        t = np.arange(n - start) / sample_rate
        env = np.exp(-t / 0.4)
        tone = sum(np.sin(2 * np.pi * k * f0 * t) / k for k in range(1, 7))
        out[start:] += env * tone
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= TEST_SIGNAL_PEAK / peak
    return AudioBuffer(out, sample_rate)


# ---------------------------------------------------------------- WAV I/O


class WavError(IOError):
    pass


_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def wav_write(path, x: AudioBuffer) -> None:
    """Write mono 32-bit IEEE float WAV."""
    _require_nonempty(x)
    data = x.samples.astype("<f4").tobytes()
    fmt = struct.pack("<HHIIHH", _FLOAT, 1, x.sample_rate, x.sample_rate * 4, 4, 32)
    fact = struct.pack("<I", len(x))
    body = (
        b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"fact" + struct.pack("<I", len(fact)) + fact
        + b"data" + struct.pack("<I", len(data)) + data
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def wav_read(path) -> AudioBuffer:
    """Read PCM16/PCM24/PCM32/float32 WAV; stereo is averaged to mono."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or len(fmt) < 16:
        raise WavError(f"{path}: missing or malformed fmt chunk")
    if data is None:
        raise WavError(f"{path}: missing data chunk")
    tag, channels, sr, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack("<H", fmt[24:26])[0]
    if sr == 0:
        raise WavError(f"{path}: sample rate 0")
    if channels not in (1, 2):
        raise WavError(f"{path}: unsupported channel count {channels}")
    if block_align != channels * bits // 8 or len(data) % block_align:
        raise WavError(f"{path}: data size inconsistent with block alignment")

    if tag == _FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif tag == _PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2") / 32768.0
    elif tag == _PCM and bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        x = v / float(1 << 23)
    elif tag == _PCM and bits == 32:
        x = np.frombuffer(data, dtype="<i4") / float(1 << 31)
    else:
        raise WavError(f"{path}: unsupported codec (format tag {tag}, {bits} bits)")
    x = x.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(x, sr)
