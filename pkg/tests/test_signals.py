import struct

import numpy as np
import pytest

from conmod.signals import (
    AudioBuffer,
    WavError,
    first_order_allpass_static,
    generate_chirp_train,
    generate_test_signal,
    wav_read,
    wav_write,
)


def impulse(n=16, sr=44100):
    x = np.zeros(n)
    x[0] = 1.0
    return AudioBuffer(x, sr)


def test_audio_buffer_rejects_bad_values():
    with pytest.raises(ValueError):
        AudioBuffer([0.0, np.nan])
    with pytest.raises(ValueError):
        AudioBuffer([0.0], sample_rate=0)


def test_audio_buffer_is_immutable():
    x = AudioBuffer([1.0, 2.0])
    with pytest.raises(ValueError):
        x.samples[0] = 3.0


def test_allpass_zero_coefficient_is_unit_delay():
    y = first_order_allpass_static(impulse(), 0.0).samples
    assert y[1] == 1.0
    assert np.count_nonzero(y) == 1


def test_allpass_hand_unrolled_recursion():
    y = first_order_allpass_static(impulse(), 0.9).samples
    # y0 = 0.9, y1 = 1 - 0.81, y2 = -0.9 * 0.19
    np.testing.assert_allclose(y[:3], [0.9, 0.19, -0.171], atol=1e-12)


@pytest.mark.parametrize("p", [1.0, -1.0, 1.5])
def test_allpass_rejects_unstable(p):
    with pytest.raises(ValueError):
        first_order_allpass_static(impulse(), p)


def test_allpass_conserves_white_noise_power(rng):
    x = AudioBuffer(rng.normal(size=44100), 44100)
    y = first_order_allpass_static(x, 0.5)
    # brute force: compare power through the DFT magnitudes (Parseval)
    px = np.sum(np.abs(np.fft.fft(x.samples)) ** 2)
    py = np.sum(np.abs(np.fft.fft(y.samples)) ** 2)
    assert abs(py / px - 1) < 0.01


def test_chirp_train_impulse_positions():
    x = generate_chirp_train(0.1, 0.04, num_allpass=0, sample_rate=44100).samples
    assert np.flatnonzero(x).tolist() == [0, 1764, 3528]
    # raw impulse train, normalized to the 0.9 peak
    np.testing.assert_array_equal(x[[0, 1764, 3528]], 0.9)


def test_chirp_train_length_and_peak():
    x = generate_chirp_train(6.67, 0.04, 64, 0.9, 44100)
    assert len(x) == 294147
    assert np.max(np.abs(x.samples)) == pytest.approx(0.9)


def test_chirp_train_is_deterministic():
    a = generate_chirp_train(0.5)
    b = generate_chirp_train(0.5)
    np.testing.assert_array_equal(a.samples, b.samples)


@pytest.mark.parametrize("kwargs", [dict(impulse_period_s=0.0), dict(impulse_period_s=-0.1),
                                    dict(impulse_period_s=0.6), dict(num_allpass=-1)])
def test_chirp_train_rejects_bad_arguments(kwargs):
    with pytest.raises(ValueError):
        generate_chirp_train(0.5, **kwargs)


def test_test_signal_determinism_and_length():
    a = generate_test_signal(10.0, 44100, 7)
    b = generate_test_signal(10.0, 44100, 7)
    assert len(a) == 441000
    np.testing.assert_array_equal(a.samples, b.samples)


def test_test_signal_depends_on_seed():
    a = generate_test_signal(2.0, 44100, 1)
    b = generate_test_signal(2.0, 44100, 2)
    assert np.any(a.samples != b.samples)


def test_wav_float_round_trip(tmp_path):
    t = np.arange(44100) / 44100
    x = AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), 44100)
    wav_write(tmp_path / "a.wav", x)
    y = wav_read(tmp_path / "a.wav")
    assert y.sample_rate == 44100
    assert np.max(np.abs(y.samples - x.samples)) < 1e-7


def _pcm_wav(path, samples, bits=16, channels=1, sr=44100, truncate=0):
    width = bits // 8
    if bits == 16:
        data = np.asarray(samples, dtype="<i2").tobytes()
    else:
        ints = np.asarray(samples, dtype=np.int64)
        data = b"".join(int(v & 0xFFFFFF).to_bytes(3, "little") for v in ints)
    fmt = struct.pack("<HHIIHH", 1, channels, sr, sr * channels * width, channels * width, bits)
    declared = len(data)
    data = data[: len(data) - truncate]
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", declared) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_wav_read_pcm16_scaling(tmp_path):
    _pcm_wav(tmp_path / "p.wav", [16384, -16384, 0])
    x = wav_read(tmp_path / "p.wav")
    assert x.samples[0] == pytest.approx(0.5, abs=1e-4)
    assert x.samples[1] == pytest.approx(-0.5, abs=1e-4)


def test_wav_read_pcm24(tmp_path):
    _pcm_wav(tmp_path / "p.wav", [1 << 22, -(1 << 22)], bits=24)
    np.testing.assert_allclose(wav_read(tmp_path / "p.wav").samples, [0.5, -0.5])


def test_wav_read_downmixes_stereo(tmp_path):
    _pcm_wav(tmp_path / "s.wav", [16384, 0, 8192, 8192], channels=2)
    np.testing.assert_allclose(wav_read(tmp_path / "s.wav").samples, [0.25, 0.25])


def test_wav_read_truncated_data_is_an_error(tmp_path):
    _pcm_wav(tmp_path / "t.wav", [1, 2, 3, 4], truncate=3)
    with pytest.raises(WavError, match="truncated"):
        wav_read(tmp_path / "t.wav")


def test_wav_read_rejects_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(WavError):
        wav_read(tmp_path / "g.wav")


def test_wav_read_rejects_zero_sample_rate(tmp_path):
    _pcm_wav(tmp_path / "z.wav", [1, 2], sr=0)
    with pytest.raises(WavError, match="sample rate"):
        wav_read(tmp_path / "z.wav")
