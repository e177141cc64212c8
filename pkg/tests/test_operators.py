import math

import numpy as np
import pytest

from conftest import noise
from oracles import f0_of
from tws.audio import Waveform, measure_snr, rms_dbfs, signal_distance, stft
from tws.errors import InvalidArgsError, SignalTooShortError, UnknownOperatorError, ZeroPowerError
from tws.operators import (
    CATEGORIES,
    GROUPS,
    FeatureReport,
    analyze_spectrum,
    calibration_registry,
    correct_pitch,
    default_registry,
    denoise,
    dereverb,
    extract_voice,
    identity_operator,
    measure_adaptivity,
    normalize_loudness,
    pitch_report,
    render_audio_update,
    restore_tempo,
    _op,
)
from tws.perturbations import (
    AdditiveNoiseParams,
    CANONICAL_ORDER,
    Kind,
    add_noise_at_snr,
    apply_reverb,
    pitch_shift,
    synth_room_ir,
    time_stretch,
)
from tws.pitch import track_pitch, voiced_fraction
from tws.synth import click_train, covering_corpus, speech_like, tone, tone_stack, vowel


def energy(w):
    return float(np.sum(w.samples**2))


class TestDenoise:
    def test_clean_tone_barely_changes(self):
        x = tone(440.0, 1.0)
        assert measure_snr(x, denoise(x)) >= 20.0

    def test_white_noise_at_5db(self):
        x = tone(440.0, 1.0)
        noisy = add_noise_at_snr(x, AdditiveNoiseParams(5.0, "white", False), np.random.default_rng(0))
        out = denoise(noisy)
        assert measure_snr(x, out) >= 10.0
        assert measure_snr(x, out) - measure_snr(x, noisy) >= 5.0

    def test_zero_in_zero_out(self):
        assert not denoise(Waveform(np.zeros(4000))).samples.any()

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            denoise(Waveform(np.ones(500)))

    def test_spectral_floor_keeps_some_energy(self):
        x = noise(16000, seed=1)
        assert energy(denoise(x, over_subtraction=4.0)) > 0


class TestDereverb:
    def test_anechoic_level_kept(self, speech):
        assert abs(rms_dbfs(dereverb(speech)) - rms_dbfs(speech)) <= 3.0

    def test_reverb_reduced(self, speech):
        wet = apply_reverb(speech, synth_room_ir(600.0, 100.0, np.random.default_rng(0)))
        dry = speech
        assert signal_distance(dereverb(wet), dry) < signal_distance(wet, dry)

    def test_zero(self):
        assert not dereverb(Waveform(np.zeros(8000))).samples.any()

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            dereverb(Waveform(np.ones(1200)))


class TestNormalize:
    def test_already_at_target(self):
        x = tone(300.0, 0.5)
        x = Waveform(x.samples * 10 ** (-23 / 20) / x.rms())
        assert normalize_loudness(x) == x

    def test_raises_quiet_signal(self):
        x = tone(300.0, 0.5)
        x = Waveform(x.samples * 10 ** (-43 / 20) / x.rms())
        assert abs(rms_dbfs(normalize_loudness(x)) + 23.0) < 0.01

    def test_square_wave_down_to_minus_3(self):
        sq = Waveform(np.sign(np.sin(2 * np.pi * 100 * np.arange(16000) / 16000)) + (np.arange(16000) % 160 == 0) * 0)
        sq = Waveform(np.where(sq.samples == 0, 1.0, sq.samples))
        y = normalize_loudness(sq, -3.0)
        assert abs(rms_dbfs(y) + 3.0) < 0.01 and y.peak() < 1.0

    def test_silence(self):
        with pytest.raises(ZeroPowerError):
            normalize_loudness(Waveform(np.zeros(10)))


class TestAnalyze:
    def test_tone(self):
        r = analyze_spectrum(tone(1000.0, 1.0))
        assert abs(r.spectral_centroid_hz - 1000.0) <= 20.0 and r.spectral_flatness < 0.1

    def test_white_noise_flat(self):
        r = analyze_spectrum(noise(32000, seed=2))
        assert r.spectral_flatness > 0.8

    def test_silence(self):
        r = analyze_spectrum(Waveform(np.zeros(4000)))
        assert r.rms_dbfs == -math.inf and r.f0_median_hz == 0.0 and r.voiced_fraction == 0.0

    def test_fields_finite_and_bounded(self, speech):
        r = analyze_spectrum(speech)
        assert all(math.isfinite(v) for v in r.__dict__.values())
        assert 0 <= r.spectral_flatness <= 1 and 0 <= r.voiced_fraction <= 1
        assert math.isclose(r.duration_s, 1.5)

    def test_snr_estimate_tracks_noise(self, speech):
        noisy = add_noise_at_snr(speech, AdditiveNoiseParams(3.0, "white", False), np.random.default_rng(0))
        assert analyze_spectrum(noisy).estimated_snr_db < analyze_spectrum(speech).estimated_snr_db

    def test_render_is_single_line_key_values(self):
        text = analyze_spectrum(tone(500.0, 0.5)).render()
        assert "\n" not in text
        keys = [kv.split("=")[0] for kv in text.split(" ")]
        assert keys == list(FeatureReport.__dataclass_fields__)

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            analyze_spectrum(Waveform(np.ones(100)))


class TestPitchTracking:
    def test_vowel(self, vowel200):
        assert abs(f0_of(vowel200) - 200.0) <= 2.0

    def test_noise_mostly_unvoiced(self):
        assert voiced_fraction(track_pitch(noise(16000, seed=3))) < 0.2

    def test_silence(self):
        assert not track_pitch(Waveform(np.zeros(8000))).any()

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            track_pitch(Waveform(np.ones(100)))

    def test_report(self, vowel200):
        r = pitch_report(vowel200)
        assert abs(r.f0_median_hz - 200) <= 2 and r.f0_min_hz <= r.f0_median_hz <= r.f0_max_hz


class TestCorrectPitch:
    def test_round_trip(self, vowel200):
        back = correct_pitch(pitch_shift(vowel200, 4.0), -4.0)
        assert abs(f0_of(back) / 200.0 - 1) < 0.03

    def test_zero(self, vowel200):
        assert abs(f0_of(correct_pitch(vowel200, 0.0)) / 200.0 - 1) < 0.01

    def test_noise_fallback(self):
        assert correct_pitch(noise(8000), 2.0).meta["pitch_shift_method"] == "resample_fallback"


class TestRestoreTempo:
    def test_round_trip_length(self, speech):
        y = restore_tempo(time_stretch(speech, 1.3), 1.3)
        assert abs(len(y) - len(speech)) <= 2 * 512

    def test_factor_one(self, speech):
        assert abs(len(restore_tempo(speech, 1.0)) - len(speech)) <= 512

    def test_improves_distance(self, speech):
        slow = time_stretch(speech, 0.7)
        assert signal_distance(restore_tempo(slow, 0.7), speech) < signal_distance(slow, speech)


class TestExtractVoice:
    def test_tone_stack_kept(self):
        x = tone_stack(220.0, 8, 1.0)
        assert energy(extract_voice(x)) >= 0.9 * energy(x)

    def test_clicks_removed(self):
        x = click_train(4.0, 1.0)
        assert energy(extract_voice(x)) <= 0.3 * energy(x)

    def test_mixture(self):
        t = tone(300.0, 1.0, amp=0.3)
        mix = Waveform(t.samples + click_train(5.0, 1.0).samples)
        assert signal_distance(extract_voice(mix), t) < signal_distance(mix, t)

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            extract_voice(Waveform(np.ones(2000)))


class TestRegistry:
    def test_names_unique_and_categorised(self):
        reg = default_registry()
        assert len(set(reg.names)) == len(reg.names)
        for op in reg:
            assert op.category in CATEGORIES and op.group in GROUPS
            assert op.name.isidentifier()

    def test_defaults_accepted_out_of_range_rejected(self):
        for op in default_registry():
            op.descriptor.validate({})
            for p in op.descriptor.params:
                assert op.descriptor.validate({p.name: p.default})[p.name] == p.default
                for bad in (p.low - 1, p.high + 1, "abc", True, float("nan")):
                    with pytest.raises(InvalidArgsError):
                        op.descriptor.validate({p.name: bad})

    def test_unknown_parameter(self):
        with pytest.raises(InvalidArgsError):
            default_registry().get("denoise").descriptor.validate({"strength": 1})

    def test_lookup_case_insensitive(self):
        assert default_registry().get("DeNoise").name == "denoise"
        with pytest.raises(UnknownOperatorError):
            default_registry().get("fly")

    def test_duplicate_rejected(self):
        reg = default_registry()
        with pytest.raises(ValueError):
            reg.with_operators(reg.get("denoise"))

    def test_descriptor_render(self):
        text = default_registry().get("denoise").descriptor.render()
        assert text.startswith("- denoise(over_subtraction: number in [0.5, 4], default 1.5): ")
        assert text.endswith("Returns: audio.")

    def test_without_categories(self):
        reg = default_registry().without_categories(["denoise"])
        assert "denoise" not in reg and "extract_voice" not in reg and "dereverb" in reg
        assert not default_registry().without_categories(CATEGORIES)

    def test_audio_update_string(self):
        w = Waveform(np.full(16000, 0.1))
        assert render_audio_update(w) == "AUDIO_UPDATED duration_s=1.00 rms_dbfs=-20.00"

    def test_all_operators_total_and_deterministic(self, speech):
        for op in default_registry():
            a, b = op(speech), op(speech)
            if isinstance(a, Waveform):
                assert np.all(np.isfinite(a.samples)) and a == b
            else:
                assert all(math.isfinite(v) for v in a.__dict__.values()) and a == b


@pytest.fixture(scope="module")
def corpus():
    return covering_corpus(0, 12)


class TestAdaptivity:
    @pytest.mark.parametrize("kind", list(CANONICAL_ORDER))
    def test_identity_is_exactly_one(self, corpus, kind):
        r = measure_adaptivity("identity", kind, corpus, 30, np.random.default_rng(0))
        assert r.rho_estimate == 1.0 and r.trials + r.skipped == 30

    @pytest.mark.parametrize("kind", list(CANONICAL_ORDER))
    def test_clean_reference_operator_is_zero(self, kind):
        ref = tone(300.0, 1.0)
        reg = default_registry().with_operators(_op(lambda x: ref, "clean_ref", "test only", "analyze", "analysis"))
        r = measure_adaptivity("clean_ref", kind, [ref], 30, np.random.default_rng(1), reg)
        assert r.rho_estimate == 0.0

    def test_denoise_adaptive_for_noise(self, corpus):
        r = measure_adaptivity("denoise", Kind.ADDITIVE_NOISE, corpus, 30, np.random.default_rng(0))
        assert r.rho_estimate < 1.0 and r.epsilon > 0 and r.trials >= 30

    def test_guards(self, corpus):
        with pytest.raises(ValueError):
            measure_adaptivity("denoise", "AN", corpus, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            measure_adaptivity("denoise", "AN", [], 30, np.random.default_rng(0))
        with pytest.raises(UnknownOperatorError):
            measure_adaptivity("nope", "AN", corpus, 30, np.random.default_rng(0))

    def test_calibration_registry_has_identity(self):
        assert "identity" in calibration_registry()
        assert calibration_registry(calibration_registry()).names.count("identity") == 1
        assert identity_operator().name == "identity"
