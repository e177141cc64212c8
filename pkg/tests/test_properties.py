import os
import tempfile

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from tws.audio import (
    Waveform,
    fft_convolve,
    istft,
    load_wav,
    measure_snr,
    quantize_pcm16,
    signal_distance,
    stft,
    store_wav,
)
from tws.engine import has_tool_marker, parse_tool_call
from tws.errors import InvalidArgsError, ToolCallError
from tws.operators import default_registry
from tws.perturbations import NOISE_TYPES, AdditiveNoiseParams, add_noise_at_snr
from tws.theory import SimConfig, contraction_factor, simulate_contraction

seeds = st.integers(0, 2**32 - 1)
WINDOWS = [(256, 128), (256, 64), (512, 256), (512, 128), (1024, 512), (1024, 256), (2048, 512)]


@settings(max_examples=200, deadline=None)
@given(seed=seeds, length=st.integers(256, 65536), wh=st.sampled_from(WINDOWS))
def test_stft_round_trip(seed, length, wh):
    x = np.random.default_rng(seed).uniform(-1, 1, length)
    y = istft(stft(Waveform(x, 16000), *wh)).samples
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) < 1e-6


@settings(max_examples=200, deadline=None)
@given(seed=seeds, na=st.integers(1, 400), nb=st.integers(1, 400))
def test_fft_convolution_matches_direct(seed, na, nb):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(na), rng.standard_normal(nb)
    assert np.max(np.abs(fft_convolve(a, b) - np.convolve(a, b))) < 1e-6


@settings(max_examples=60, deadline=None)
@given(codes=st.lists(st.integers(-32768, 32767), min_size=1, max_size=2000), sr=st.sampled_from([8000, 16000, 44100]))
def test_pcm16_grid_round_trip(codes, sr):
    samples = np.array(codes, dtype=np.float64) / 32768.0
    assert np.array_equal(quantize_pcm16(samples), np.array(codes, dtype=np.int16))
    fd, path = tempfile.mkstemp(suffix=".wav")
    os.close(fd)
    try:
        store_wav(Waveform(samples, sr), path)
        back = load_wav(path)
    finally:
        os.unlink(path)
    assert back.sample_rate == sr
    assert np.array_equal(back.samples, samples)


vectors = st.integers(1, 300).flatmap(
    lambda n: st.tuples(*[st.lists(st.floats(-10, 10), min_size=n, max_size=n)] * 3)
)


@settings(max_examples=100, deadline=None)
@given(vs=vectors)
def test_distance_is_a_metric(vs):
    a, b, c = (Waveform(np.array(v), 16000) for v in vs)
    assert signal_distance(a, b) == pytest.approx(signal_distance(b, a))
    assert signal_distance(a, a) == 0.0
    assert signal_distance(a, c) <= signal_distance(a, b) + signal_distance(b, c) + 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=seeds, snr=st.floats(0, 25), noise=st.sampled_from(NOISE_TYPES))
def test_noise_lands_on_target_snr(seed, snr, noise):
    rng = np.random.default_rng(seed)
    x = Waveform(0.3 * np.sin(2 * np.pi * rng.uniform(100, 2000) * np.arange(8000) / 16000), 16000)
    y = add_noise_at_snr(x, AdditiveNoiseParams(snr, noise, False), rng)
    assert measure_snr(x, y) == pytest.approx(snr, abs=0.1)


unit = st.floats(0, 1)
rho_lt1 = st.floats(0, 0.99)


@given(a1=unit, a2=unit, rho=rho_lt1, k=st.integers(1, 20))
def test_theoretical_factor_decreases_in_alpha(a1, a2, rho, k):
    assume(a1 < a2 - 1e-6)
    assert contraction_factor(a2, rho) ** k < contraction_factor(a1, rho) ** k


@given(alpha=st.floats(0.01, 1), rho=rho_lt1, k=st.integers(0, 20))
def test_theoretical_factor_decreases_in_k(alpha, rho, k):
    f = contraction_factor(alpha, rho)
    assume(f > 0)  # alpha = 1, rho = 0 recovers fully after one step
    assert f ** (k + 1) < f**k


@settings(max_examples=30, deadline=None)
@given(alpha=unit, rho=unit, k=st.integers(0, 6), seed=seeds)
def test_empirical_mean_never_grows(alpha, rho, k, seed):
    res = simulate_contraction(SimConfig(alpha, rho, k, trials=500, seed=seed))
    assert np.all(np.diff(res.empirical_mean) <= 1e-12)
    assert res.empirical_mean[0] == 1.0


OPERATORS = list(default_registry())


@pytest.mark.parametrize("op", OPERATORS, ids=lambda o: o.name)
def test_descriptor_accepts_own_defaults(op):
    d = op.descriptor
    assert d.validate({}) == {p.name: p.default for p in d.params}
    assert d.validate({p.name: p.default for p in d.params}) == {p.name: p.default for p in d.params}


PARAMS = [(op.descriptor, p) for op in OPERATORS for p in op.descriptor.params]


@pytest.mark.parametrize("desc,param", PARAMS, ids=lambda v: getattr(v, "name", ""))
@settings(max_examples=50, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(data=st.data())
def test_descriptor_range_checks(desc, param, data):
    inside = data.draw(st.floats(param.low, param.high))
    assert desc.validate({param.name: inside})[param.name] == inside
    span = param.high - param.low
    outside = data.draw(st.one_of(
        st.floats(param.high + 1e-6 * max(span, 1), 1e9),
        st.floats(-1e9, param.low - 1e-6 * max(span, 1)),
        st.just(float("nan")),
        st.just(True),
    ))
    with pytest.raises(InvalidArgsError):
        desc.validate({param.name: outside})


REGISTRY = default_registry()


@settings(max_examples=300)
@given(text=st.text())
def test_plain_text_never_parses_to_a_call(text):
    assume(not has_tool_marker(text))
    assert parse_tool_call(text, REGISTRY) is None


@settings(max_examples=300)
@given(before=st.text(), after=st.text(), marker=st.sampled_from(["[TOOL:", "[tool:", "[Tool: "]))
def test_marker_never_yields_none(before, after, marker):
    text = before + marker + after
    try:
        call = parse_tool_call(text, REGISTRY)
    except ToolCallError:
        return
    assert call is not None
