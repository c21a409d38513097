import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conmod import autodiff as ad
from conmod.model import Conmod, ConmodConfig, ConditionVector, LfoBank, count_parameters, lfo_frames
from conmod.signals import AudioBuffer
from conmod.spectral import StftConfig, istft, stft

from .conftest import TINY_MODEL, TINY_SR, TINY_STFT

# toy gradient-check configuration: fft 64, frame 32, hop 8, 8 frames
TOY_STFT = StftConfig(frame_size=32, fft_size=64, hop=8, sample_rate=TINY_SR)
TOY_MODEL = ConmodConfig(lstm_hidden=4, mlp_hidden=8, bins=TOY_STFT.bins, film_hidden=4)
TOY_LEN = 32 + 7 * 8


def identity_transfer(model: Conmod) -> None:
    """Zero every weight, output bias [1..1 | 0..0]: H == 1 everywhere."""
    for p in model.weights():
        if not p.name.startswith("film"):
            p.value[...] = 0.0
    B = model.cfg.bins
    model.params["out.b"].value[:B] = 1.0


# ------------------------------------------------------------------ LFO


def test_lfo_zero_frequency_is_constant():
    bank = LfoBank([0.0], [0.4])
    s = lfo_frames(bank, 0, 50, 441, 44100).value
    np.testing.assert_allclose(s, np.sin(0.4))


def test_lfo_frame_rate_and_period():
    bank = LfoBank([0.73], [0.3])
    s = lfo_frames(bank, 0, 300, 441, 44100).value[:, 0]
    assert StftConfig().frame_rate == 100.0
    assert s[0] == np.sin(0.3)
    np.testing.assert_allclose(s, np.sin(2 * np.pi * 0.73 * np.arange(300) / 100 + 0.3), atol=1e-12)
    # one period is 100 / 0.73 = 136.99 frames
    assert abs(s[137] - s[0]) <= abs(2 * np.pi * 0.73 * (137 - 100 / 0.73) / 100) + 1e-12


def test_lfo_phase_offset():
    s = lfo_frames(LfoBank([1.13], [np.pi / 2]), 0, 3, 441, 44100).value
    assert s[0, 0] == 1.0


def test_lfo_index_out_of_range():
    bank = LfoBank([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(IndexError):
        lfo_frames(bank, 2, 10, 441, 44100)
    with pytest.raises(IndexError):
        lfo_frames(bank, -1, 10, 441, 44100)


@settings(max_examples=30, deadline=None)
@given(freq=st.floats(0.1, 5.0), phase=st.floats(-np.pi, np.pi), m=st.integers(0, 500))
def test_lfo_periodicity(freq, phase, m):
    rate = 100.0
    period = round(rate / freq)
    s = lfo_frames(LfoBank([freq], [phase]), 0, m + period + 1, 441, 44100).value[:, 0]
    bound = abs(2 * np.pi * freq * (period / rate - 1 / freq))
    assert abs(s[m + period] - s[m]) <= bound + 1e-9


def test_lfo_grads_reach_only_selected_entry():
    bank = LfoBank([0.5, 1.0, 1.5], [0.1, 0.2, 0.3])
    ad.backward(ad.total(lfo_frames(bank, 1, 20, 441, 44100)))
    assert bank.z_a[1].grad is not None and bank.z_b[1].grad is not None
    for j in (0, 2):
        assert bank.z_a[j].grad is None and bank.z_b[j].grad is None


def test_bank_validation():
    with pytest.raises(ValueError):
        LfoBank([], [])
    with pytest.raises(ValueError):
        LfoBank([np.nan], [0.0])


# ------------------------------------------------------------------ FiLM


def test_film_identity_at_init(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), seed=3)
    x = ad.Tensor(rng.normal(size=(5, TINY_MODEL.mlp_hidden)))
    for fb in (0.0, 0.5, 0.9):
        np.testing.assert_array_equal(model.film(x, ConditionVector(fb), 0).value, x.value)


def test_film_direct_evaluation():
    cfg = ConmodConfig(lstm_hidden=1, mlp_hidden=1, bins=1, film_hidden=1)
    model = Conmod(cfg, LfoBank([1.0], [0.0]))
    model.params["film0.w2"].value[...] = 0.0
    model.params["film0.b2"].value[...] = [3.0, 1.0]
    assert model.film(ad.Tensor([[2.0]]), ConditionVector(0.3), 0).item() == 7.0


def test_film_responds_to_condition(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), seed=3)
    for k in range(TINY_MODEL.num_hidden_fc):
        model.params[f"film{k}.w2"].value[...] = rng.normal(size=model.params[f"film{k}.w2"].shape)
    x = ad.Tensor(rng.normal(size=(4, TINY_MODEL.mlp_hidden)))
    a = model.film(x, ConditionVector(0.0), 0).value
    b = model.film(x, ConditionVector(0.5), 0).value
    assert np.any(a != b)


def test_film_dimension_mismatch():
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]))
    with pytest.raises(ValueError):
        model.film(ad.Tensor(np.ones((2, 8))), ConditionVector(0.1, ad.Tensor(np.zeros(2))), 0)


def test_embeddings_required_iff_dual_mode():
    dual = ConmodConfig(4, 8, bins=TINY_STFT.bins, cond_dim=3, film_hidden=4)
    with pytest.raises(ValueError):
        Conmod(dual, LfoBank([1.0], [0.0]))
    with pytest.raises(ValueError):
        Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), effect_ids=["a", "b"])
    m = Conmod(dual, LfoBank([1.0], [0.0]), effect_ids=["a", "b"])
    assert m.condition(50, "b").dim == 3
    with pytest.raises(KeyError):
        m.condition(50, "c")


# ------------------------------------------------------------------ parameter counts


def test_default_parameter_count():
    cfg = ConmodConfig()
    n = count_parameters(cfg)
    assert n == 2_386_178 + 2 * (16 + 16 + 16 * 1024 + 1024) == 2_421_058
    assert 2_350_000 <= n <= 2_450_000
    model = Conmod(cfg, LfoBank([1.0], [0.0]))
    assert sum(p.value.size for p in model.weights()) == n


def test_hand_countable_parameters():
    cfg = ConmodConfig(lstm_hidden=1, mlp_hidden=1, bins=1, film_hidden=1)
    # lstm 4*(2+1); fc 2 + 2 + out 4; film 2 sites * (1+1+2+2)
    assert count_parameters(cfg) == 12 + 8 + 12
    model = Conmod(cfg, LfoBank([1.0], [0.0]))
    assert sum(p.value.size for p in model.weights()) == 32


@settings(max_examples=20, deadline=None)
@given(bins=st.integers(1, 3000), delta=st.integers(1, 500))
def test_bins_growth_is_linear(bins, delta):
    a = count_parameters(ConmodConfig(bins=bins))
    b = count_parameters(ConmodConfig(bins=bins + delta))
    assert b - a == 512 * 2 * delta + 2 * delta


# ------------------------------------------------------------------ transfer / render


def test_zero_weights_give_zero_transfer_and_output(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]))
    for p in model.weights():
        p.value[...] = 0.0
    H = model.predict_transfer(ad.Tensor(rng.normal(size=(6, 1))), ConditionVector(0.2))
    assert not H.real.value.any() and not H.imag.value.any()
    y = model.render(AudioBuffer(rng.normal(size=400), TINY_SR), 0, 20, TINY_STFT)
    assert not y.samples.any()


def test_predict_transfer_deterministic(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), seed=5)
    lfo = ad.Tensor(rng.normal(size=(7, 1)))
    a = model.predict_transfer(lfo, ConditionVector(0.5))
    b = model.predict_transfer(lfo, ConditionVector(0.5))
    np.testing.assert_array_equal(a.real.value, b.real.value)
    np.testing.assert_array_equal(a.imag.value, b.imag.value)
    assert a.shape == (7, TINY_MODEL.bins)


def test_identity_transfer_reconstructs_dry(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), seed=1)
    identity_transfer(model)
    x = AudioBuffer(rng.normal(size=1000), TINY_SR)
    y = model.render(x, 0, 30, TINY_STFT).samples
    sl = slice(TINY_STFT.frame_size, 1000 - TINY_STFT.fft_size)
    assert np.max(np.abs(y[sl] - x.samples[sl])) < 1e-9
    ref = istft(stft(x.samples, TINY_STFT), TINY_STFT, 1000).value
    np.testing.assert_allclose(y, ref, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(0, 10))
def test_transfer_is_frame_causal(seed, m):
    r = np.random.default_rng(seed)
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]), seed=seed)
    lfo = r.normal(size=(12, 1))
    a = model.predict_transfer(ad.Tensor(lfo), ConditionVector(0.4))
    lfo[m + 1 :] += r.normal(size=(11 - m, 1))
    b = model.predict_transfer(ad.Tensor(lfo), ConditionVector(0.4))
    np.testing.assert_array_equal(a.real.value[: m + 1], b.real.value[: m + 1])
    np.testing.assert_array_equal(a.imag.value[: m + 1], b.imag.value[: m + 1])


def test_no_gradient_reaches_dry(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]))
    dry = ad.Parameter(rng.normal(size=300), "dry")
    y = model.forward_render(dry.value, 0, ConditionVector(0.0), TINY_STFT)
    ad.backward(ad.total(y * y))
    assert dry.grad is None
    assert all(p.grad is not None for p in model.weights())


@pytest.mark.parametrize("dual", [False, True])
def test_end_to_end_gradient_check(rng, dual):
    cfg = ConmodConfig(4, 8, bins=TOY_STFT.bins, cond_dim=3 if dual else 1, film_hidden=4)
    model = Conmod(cfg, LfoBank([1.3, 0.7], [0.2, -0.4]), effect_ids=["a", "b"] if dual else (), seed=2)
    # move FiLM away from the identity so its gradients are exercised non-trivially
    for k in range(cfg.num_hidden_fc):
        model.params[f"film{k}.w2"].value[...] = rng.normal(0, 0.3, size=model.params[f"film{k}.w2"].shape)
    x = rng.normal(size=TOY_LEN)
    target = rng.normal(size=TOY_LEN)
    assert stft(x, TOY_STFT).frames == 8
    stft_hz = StftConfig(32, 64, 8, sample_rate=100)  # slow sample rate: LFO moves within 8 frames

    def f():
        y = model.forward_render(x, 1, model.condition(40, "b" if dual else None), stft_hz)
        return ad.total((y - target) * (y - target))

    live = [p for p in model.parameters() if not p.name.endswith(".0") and p.name != "emb.a"]
    err = ad.finite_difference_check(f, live, epsilon=1e-6, max_coords=12, rng=np.random.default_rng(0))
    assert err < 1e-3


def test_sixty_second_render_at_defaults():
    cfg = StftConfig()
    n = 60 * 44100
    assert cfg.num_frames(n) == 5997
    model = Conmod(ConmodConfig(), LfoBank([0.73], [0.0]))
    x = AudioBuffer(np.random.default_rng(0).normal(scale=0.1, size=n), 44100)
    y = model.render(x, 0, 0, cfg)
    assert len(y) == n and np.all(np.isfinite(y.samples))


def test_bins_mismatch_rejected(rng):
    model = Conmod(TINY_MODEL, LfoBank([1.0], [0.0]))
    with pytest.raises(ValueError):
        model.render(AudioBuffer(rng.normal(size=4000), 44100), 0, 0, StftConfig())
