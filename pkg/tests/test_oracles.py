import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conmod.oracles import (
    DatasetManifest,
    FlangerOracleConfig,
    PhaserOracleConfig,
    allpass_coefficient,
    build_dataset,
    render_flanger,
    render_phaser,
)
from conmod.signals import AudioBuffer

SR = 44100
NFFT = 16384


def impulse(n=NFFT):
    x = np.zeros(n)
    x[0] = 1.0
    return AudioBuffer(x, SR)


def measured_response(render, cfg, n=NFFT):
    return np.fft.rfft(render(impulse(n), cfg).samples)


def phaser_closed_form(cfg: PhaserOracleConfig, n=NFFT):
    lfo = np.sin(cfg.lfo_phase)
    a = allpass_coefficient(cfg.center_hz * 2 ** (cfg.sweep_octaves * lfo), SR)
    z1 = np.exp(-2j * np.pi * np.arange(n // 2 + 1) / n)
    cascade = ((a + z1) / (1 + a * z1)) ** cfg.stages
    d = cascade / (1 - cfg.feedback * z1 * cascade)
    return cfg.mix * d + (1 - cfg.mix)


def flanger_closed_form(delay, fb_tap, cfg, n=NFFT):
    z1 = np.exp(-2j * np.pi * np.arange(n // 2 + 1) / n)
    return (1 - cfg.mix) + cfg.mix * z1**delay / (1 - cfg.feedback * z1**fb_tap)


def test_phaser_mix_zero_is_dry(rng):
    x = AudioBuffer(rng.normal(size=4000), SR)
    y = render_phaser(x, PhaserOracleConfig(lfo_freq_hz=1.0, feedback=0.5, mix=0.0))
    np.testing.assert_array_equal(y.samples, x.samples)


@pytest.mark.parametrize("phase", [0.0, np.pi / 2, -1.0])
@pytest.mark.parametrize("feedback", [0.0, 0.5])
def test_static_phaser_matches_closed_form(phase, feedback):
    cfg = PhaserOracleConfig(lfo_phase=phase, feedback=feedback, mix=1.0)
    H = measured_response(render_phaser, cfg)
    ref = phaser_closed_form(cfg)
    assert np.max(np.abs(np.abs(H) - np.abs(ref)) / np.abs(ref)) < 0.01


def test_static_phaser_preserves_white_noise_energy(rng):
    x = AudioBuffer(rng.normal(size=SR), SR)
    y = render_phaser(x, PhaserOracleConfig(mix=1.0))
    assert abs(np.sum(y.samples**2) / np.sum(x.samples**2) - 1) < 0.01
    # all-pass: flat magnitude response
    H = measured_response(render_phaser, PhaserOracleConfig(mix=1.0))
    assert np.max(np.abs(np.abs(H) - 1)) < 0.01


@pytest.mark.parametrize("phase", [0.0, np.pi / 2, -np.pi / 2])
def test_two_stage_notch_at_break_frequency(phase):
    cfg = PhaserOracleConfig(stages=2, lfo_phase=phase, mix=0.5)
    H = measured_response(render_phaser, cfg)
    f_break = cfg.center_hz * 2 ** (cfg.sweep_octaves * np.sin(phase))
    # closed form: two-stage phase = 4 atan(-tan(w/2) / tan(pi f_b / sr)), reaching -pi at f_b
    w = 2 * np.pi * np.arange(len(H)) / NFFT
    phase_2 = 4 * np.arctan(-np.tan(w / 2) / np.tan(np.pi * f_break / SR))
    predicted = int(np.argmin(np.abs(phase_2 + np.pi)))
    assert abs(int(np.argmin(np.abs(H))) - predicted) <= 1


def test_phaser_rejects_unstable_or_out_of_band():
    x = AudioBuffer(np.ones(10), SR)
    with pytest.raises(ValueError):
        render_phaser(x, PhaserOracleConfig(feedback=0.96))
    with pytest.raises(ValueError):
        render_phaser(x, PhaserOracleConfig(center_hz=15000.0))
    with pytest.raises(ValueError):
        render_phaser(x, PhaserOracleConfig(stages=3))


def test_flanger_mix_zero_is_dry(rng):
    x = AudioBuffer(rng.normal(size=4000), SR)
    y = render_flanger(x, FlangerOracleConfig(lfo_freq_hz=1.0, feedback=0.5, mix=0.0))
    np.testing.assert_array_equal(y.samples, x.samples)


def test_flanger_comb_notches():
    D = 100
    cfg = FlangerOracleConfig(base_delay_ms=D / SR * 1000, lfo_amount=0.0, mix=0.5)
    mag = np.abs(measured_response(render_flanger, cfg))
    for k in range(6):
        f = (2 * k + 1) * SR / (2 * D)  # 220.5, 661.5, ...
        b = f * NFFT / SR
        lo = int(b) - 5
        found = lo + int(np.argmin(mag[lo : lo + 11]))
        assert abs(found - b) <= 1


def test_flanger_feedback_peak_notch_ratio():
    D = 100
    cfg = FlangerOracleConfig(base_delay_ms=D / SR * 1000, lfo_amount=0.0, feedback=0.5, mix=0.5)
    mag = np.abs(measured_response(render_flanger, cfg))
    ref = np.abs(flanger_closed_form(D, D, cfg))
    band = slice(1, NFFT // 8)
    ratio = mag[band].max() / mag[band].min()
    ref_ratio = ref[band].max() / ref[band].min()
    assert abs(ratio / ref_ratio - 1) < 0.05
    assert np.max(np.abs(mag - ref) / ref) < 0.01


def test_flanger_delay_floor_and_line_capacity():
    with pytest.raises(ValueError):
        render_flanger(AudioBuffer(np.ones(10), SR), FlangerOracleConfig(base_delay_ms=15.0))


@settings(max_examples=20, deadline=None)
@given(n_cut=st.integers(10, 3000), feedback=st.floats(0, 0.95), freq=st.floats(0, 5))
def test_oracles_are_causal(n_cut, feedback, freq):
    x = np.random.default_rng(n_cut).normal(size=3000)
    x2 = x.copy()
    x2[n_cut:] = 0.0
    for render, cfg in ((render_phaser, PhaserOracleConfig(lfo_freq_hz=freq, feedback=feedback)),
                        (render_flanger, FlangerOracleConfig(lfo_freq_hz=freq, feedback=feedback))):
        a = render(AudioBuffer(x, SR), cfg).samples
        b = render(AudioBuffer(x2, SR), cfg).samples
        np.testing.assert_array_equal(a[:n_cut], b[:n_cut])


def test_build_dataset_table_grid(tmp_path):
    m = build_dataset("phaser", [0.23, 0.73, 1.13], [0, 25, 50, 75], 0.0, 0.2, SR, tmp_path)
    assert len(m) == 12
    assert (tmp_path / "manifest.json").exists()
    assert all(e.wet_path.exists() and e.dry_path.exists() for e in m.entries)
    assert {e.label.lfo_phase for e in m.entries} == {0.0}


def test_build_dataset_single_point_differs_from_dry(tmp_path):
    m = build_dataset("flanger", [1.0], [25], 0.3, 0.2, SR, tmp_path)
    assert len(m) == 1
    dry, wet = m.entries[0].load()
    assert np.any(dry.samples != wet.samples)


def test_build_dataset_rejects_feedback_above_95(tmp_path):
    with pytest.raises(ValueError):
        build_dataset("phaser", [1.0], [0, 96], 0.0, 0.2, SR, tmp_path)
    assert not (tmp_path / "manifest.json").exists()


def test_build_dataset_rejects_duplicates(tmp_path):
    with pytest.raises(ValueError):
        build_dataset("phaser", [1.0, 1.0], [0], 0.0, 0.2, SR, tmp_path)


def test_manifest_round_trip(tmp_path):
    m = build_dataset("phaser", [0.5, 1.5], [0, 50], 0.25, 0.2, SR, tmp_path)
    loaded = DatasetManifest.load(tmp_path)
    assert loaded.to_json(tmp_path) == m.to_json(tmp_path)
    raw = json.loads((tmp_path / "manifest.json").read_text())
    assert set(raw) >= {"schema_version", "sample_rate", "entries"}
    assert set(raw["entries"][0]) == {"effect_id", "lfo_freq_hz", "lfo_phase", "feedback_pct",
                                      "dry_path", "wet_path", "duration_s"}
    assert loaded.oracles == m.oracles
