import json

import numpy as np
import pytest

from tws.audio import Waveform, measure_snr
from tws.engine import (
    BASELINE_PROMPT,
    ChatTurn,
    OracleBackend,
    OraclePolicy,
    ReasoningTrace,
    RecordContext,
    ScriptedBackend,
    ToolCall,
    extract_answer,
    init_prompt,
    is_terminated,
    parse_tool_call,
    replay,
    run_baseline,
    run_tws,
    system_prompt,
    wrong_label,
    write_trace,
)
from tws.errors import BackendError, InvalidArgsError, PolicyError, UnknownToolError
from tws.operators import OperatorRegistry, default_registry
from tws.perturbations import AdditiveNoiseParams, Kind, PerturbationSpec, apply_spec
from tws.synth import EMOTIONS, speech_like

REG = default_registry()


@pytest.fixture(scope="module")
def clip():
    return speech_like(np.random.default_rng(11), 1.2)


class TestPrompts:
    def test_baseline_prompt_skeleton(self):
        turns = init_prompt(None, OperatorRegistry())
        assert turns[0].text == BASELINE_PROMPT
        assert "[TOOL:" not in turns[0].text
        assert "Emotion: [category]" in turns[0].text
        assert "{anger,disgust,fear,joy,neutral,sadness,surprise}" in turns[0].text
        assert turns[1].role == "user" and turns[1].audio_ref == 0

    def test_tool_section_lists_registry_in_order(self):
        sub = OperatorRegistry((REG.get("dereverb"), REG.get("denoise")))
        text = system_prompt(sub)
        lines = [l for l in text.splitlines() if l.startswith("- ")]
        assert [l.split("(")[0][2:] for l in lines] == ["dereverb", "denoise"]
        assert "[Detailed Operator Set Description]" not in text
        assert "[TOOL: tool_name(parameters)]" in text

    def test_deterministic(self):
        assert init_prompt("x", REG) == init_prompt("x", REG)


# 30-case grammar corpus: (text, expected) where expected is a ToolCall, None, or an error type
GRAMMAR = [
    ("I will clean it first. [TOOL: denoise(over_subtraction=2.0)]", ToolCall("denoise", (("over_subtraction", "2.0"),))),
    ("[TOOL: denoise()]", ToolCall("denoise")),
    ("[tool: DENOISE()]", ToolCall("denoise")),
    ("[TOOL:dereverb()]", ToolCall("dereverb")),
    ("[TOOL:  correct_pitch( semitones = -3.5 ) ]", ToolCall("correct_pitch", (("semitones", "-3.5"),))),
    ("[TOOL: restore_tempo(factor=1.25)] then answer", ToolCall("restore_tempo", (("factor", "1.25"),))),
    ('[TOOL: normalize_loudness(target_dbfs="-20")]', ToolCall("normalize_loudness", (("target_dbfs", "-20"),))),
    ("[TOOL: normalize_loudness(target_dbfs='-18.5')]", ToolCall("normalize_loudness", (("target_dbfs", "-18.5"),))),
    ("[TOOL: correct_pitch(semitones=+2)]", ToolCall("correct_pitch", (("semitones", "+2"),))),
    ("[TOOL: correct_pitch(semitones=1e0)]", ToolCall("correct_pitch", (("semitones", "1e0"),))),
    ("[TOOL: analyze_spectrum()] [TOOL: denoise()]", ToolCall("analyze_spectrum")),
    ("Let me check. [TOOL: track_pitch()]\nEmotion: joy", ToolCall("track_pitch")),
    ("[TOOL: extract_voice()]", ToolCall("extract_voice")),
    ("[TOOL: denoise(over_subtraction=.5)]", ToolCall("denoise", (("over_subtraction", ".5"),))),
    ("The emotion is clear. Emotion: joy", None),
    ("No tools needed here.", None),
    ("", None),
    ("TOOL: denoise()", None),
    ("[TOOLS are great] Emotion: fear", None),
    ("[TOOL: fly_to_moon()]", UnknownToolError),
    ("[TOOL: Denoiser()]", UnknownToolError),
    ("[TOOL: denoise(over_subtraction=9)]", InvalidArgsError),
    ("[TOOL: denoise(strength=1)]", InvalidArgsError),
    ("[TOOL: denoise(over_subtraction=abc)]", InvalidArgsError),
    ("[TOOL: denoise(over_subtraction=1.0, over_subtraction=2.0)]", InvalidArgsError),
    ("[TOOL: denoise(over_subtraction=1.0]", InvalidArgsError),
    ("[TOOL: denoise(over_subtraction=1.0)", InvalidArgsError),
    ("[TOOL: denoise(1.0)]", InvalidArgsError),
    ('[TOOL: normalize_loudness(target_dbfs="-20)]', InvalidArgsError),
    ("[TOOL: ]", InvalidArgsError),
]


@pytest.mark.parametrize("text,expected", GRAMMAR, ids=[f"g{i:02d}" for i in range(len(GRAMMAR))])
def test_grammar_corpus(text, expected):
    if isinstance(expected, type):
        with pytest.raises(expected):
            parse_tool_call(text, REG)
    else:
        assert parse_tool_call(text, REG) == expected


def test_grammar_corpus_size():
    assert len(GRAMMAR) == 30


def test_tool_call_render_round_trip():
    call = ToolCall("correct_pitch", (("semitones", "-2.0"),))
    assert parse_tool_call(call.render(), REG) == call


def _trace(*assistant):
    return ReasoningTrace([ChatTurn("assistant", a) for a in assistant], [])


class TestAnswers:
    def test_terminated(self):
        assert is_terminated(_trace("Emotion: sadness"))
        assert not is_terminated(_trace("Emotion: sadness [TOOL: denoise()]"))
        assert not is_terminated(_trace("the sadness is evident"))
        assert not is_terminated(_trace())

    def test_extract_normalises(self):
        assert extract_answer(_trace("Reasoning: x\nEmotion: Joy")) == "joy"
        assert extract_answer(_trace("**Emotion:** *Anger*.")) == "anger"

    def test_later_wins(self):
        assert extract_answer(_trace("Emotion: fear", "Emotion: surprise")) == "surprise"
        assert extract_answer(_trace("Emotion: fear\nEmotion: neutral")) == "neutral"

    def test_none(self):
        assert extract_answer(_trace("no idea")) is None
        assert extract_answer(_trace("Emotion: happiness")) is None


class TestLoop:
    def test_immediate_answer(self, clip):
        t = run_tws(clip, None, REG, ScriptedBackend(["Emotion: joy"]))
        assert t.steps_used == 1 and len(t.audio_versions) == 1
        assert t.terminated_by == "answer_found" and t.final_answer == "joy"

    def test_step_cap(self, clip):
        k = 3
        t = run_tws(clip, None, REG, ScriptedBackend(["[TOOL: analyze_spectrum()]"] * (k + 3)), k_max=k)
        assert t.steps_used == k and t.terminated_by == "k_max_reached" and t.final_answer is None

    def test_denoise_then_answer(self, clip):
        backend = ScriptedBackend(["[TOOL: denoise()]", "Emotion: anger"])
        a = run_tws(clip, None, REG, backend)
        b = run_tws(clip, None, REG, backend)
        assert len(a.audio_versions) == 2 and a.steps_used == 2
        assert a.dumps() == b.dumps()
        assert replay(clip, a.calls, REG).samples.tobytes() == a.final_audio.samples.tobytes()

    def test_tool_turn_follows_call(self, clip):
        t = run_tws(clip, None, REG, ScriptedBackend(["[TOOL: analyze_spectrum()]", "[TOOL: dereverb()]", "Emotion: fear"]))
        roles = [x.role for x in t.turns]
        for i, r in enumerate(roles):
            if r == "tool":
                assert roles[i - 1] == "assistant" and "[TOOL:" in t.turns[i - 1].text
        assert t.turns[3].text.startswith("estimated_snr_db=")
        assert t.turns[5].text.startswith("AUDIO_UPDATED duration_s=")
        assert t.turns[5].audio_ref == 1

    def test_errors_consume_steps_and_keep_audio(self, clip):
        replies = ["[TOOL: fly()]", "[TOOL: denoise(over_subtraction=99)]", "Emotion: joy"]
        t = run_tws(clip, None, REG, ScriptedBackend(replies))
        assert t.steps_used == 3 and len(t.audio_versions) == 1
        errors = [x.text for x in t.turns if x.role == "tool"]
        assert errors[0].startswith("ERROR UnknownToolError") and errors[1].startswith("ERROR InvalidArgsError")

    def test_operator_failure_reported(self):
        short = Waveform(np.ones(600))
        t = run_tws(short, None, REG, ScriptedBackend(["[TOOL: dereverb()]", "Emotion: joy"]))
        assert any(x.text.startswith("ERROR SignalTooShortError") for x in t.turns if x.role == "tool")
        assert t.final_answer == "joy" and len(t.audio_versions) == 1

    def test_backend_failure(self, clip):
        t = run_tws(clip, None, REG, ScriptedBackend(["[TOOL: denoise()]"], fail_at=1))
        assert t.terminated_by == "backend_error" and t.final_answer is None and t.steps_used == 1

    def test_threading_versions(self, clip):
        replies = ["[TOOL: normalize_loudness(target_dbfs=-30)]", "[TOOL: denoise()]", "Emotion: sadness"]
        t = run_tws(clip, None, REG, ScriptedBackend(replies))
        v = t.audio_versions
        assert v[1] == REG.get("normalize_loudness")(v[0], {"target_dbfs": -30})
        assert v[2] == REG.get("denoise")(v[1])

    def test_k_max_guard(self, clip):
        with pytest.raises(ValueError):
            run_tws(clip, None, REG, ScriptedBackend(["Emotion: joy"]), k_max=0)

    def test_empty_registry_matches_baseline(self, clip):
        backend = ScriptedBackend(["Reasoning...\nEmotion: disgust"])
        a = run_tws(clip, None, OperatorRegistry(), backend)
        b = run_baseline(clip, None, backend)
        assert a.dumps() == b.dumps() and a.final_answer == "disgust"


class TestBaseline:
    def test_answer(self, clip):
        t = run_baseline(clip, None, ScriptedBackend(["Emotion: anger"]))
        assert t.final_answer == "anger" and t.steps_used == 1

    def test_tool_text_ignored(self, clip):
        t = run_baseline(clip, None, ScriptedBackend(["[TOOL: denoise()]\nEmotion: fear"]))
        assert t.final_answer == "fear" and len(t.audio_versions) == 1 and not t.calls

    def test_failure(self, clip):
        t = run_baseline(clip, None, ScriptedBackend([], fail_at=0))
        assert t.terminated_by == "backend_error"

    def test_no_answer(self, clip):
        t = run_baseline(clip, None, ScriptedBackend(["hmm"]))
        assert t.final_answer is None and t.terminated_by != "answer_found"


class TestTracePersistence:
    def test_json_contains_digests(self, clip, tmp_path):
        t = run_tws(clip, None, REG, ScriptedBackend(["[TOOL: denoise()]", "Emotion: joy"]))
        p = tmp_path / "t" / "u1.json"
        write_trace(t, p)
        d = json.loads(p.read_text())
        assert d["audio_versions"] == [w.digest() for w in t.audio_versions]
        assert d["tool_calls"] == [{"name": "denoise", "args": []}]
        assert d["final_answer"] == "joy"


def _noisy_context(clip, uid="u1", label="joy", snr=2.0):
    spec = PerturbationSpec(Kind.ADDITIVE_NOISE, AdditiveNoiseParams(snr, "white", False), (1, 2))
    noisy = apply_spec(clip, spec)
    ctx = RecordContext(uid, label, (spec,), clip.duration_s, 0.0, noisy.duration_s)
    return ctx, noisy


class TestOracle:
    def test_alpha_one_denoises_then_answers(self, clip):
        ctx, noisy = _noisy_context(clip)
        t = run_tws(noisy, None, REG, OracleBackend(OraclePolicy(alpha=1.0)).bind(ctx))
        texts = t.assistant_texts()
        assert "[TOOL: denoise()]" in texts[0]
        assert t.final_answer == "joy" and t.steps_used == 2

    def test_alpha_zero_never_matches(self, clip):
        ctx, noisy = _noisy_context(clip)
        t = run_tws(noisy, None, REG, OracleBackend(OraclePolicy(alpha=0.0)).bind(ctx))
        assert "denoise" not in [c.name for c in t.calls]
        assert t.final_answer == wrong_label(ctx) != "joy"
        base = run_baseline(noisy, None, OracleBackend(OraclePolicy(alpha=0.0)).bind(ctx))
        assert base.final_answer == t.final_answer

    def test_clean_clip_immediate(self, clip):
        ctx = RecordContext("c", "sadness", (), clip.duration_s, 0.0, clip.duration_s)
        for alpha in (0.0, 0.5, 1.0):
            t = run_tws(clip, None, REG, OracleBackend(OraclePolicy(alpha=alpha)).bind(ctx))
            assert t.steps_used == 1 and t.final_answer == "sadness"

    def test_deterministic(self, clip):
        ctx, noisy = _noisy_context(clip)
        pol = OraclePolicy(alpha=0.5, seed=3, assess_prob=0.5)
        a = run_tws(noisy, None, REG, OracleBackend(pol).bind(ctx))
        b = run_tws(noisy, None, REG, OracleBackend(pol).bind(ctx))
        assert a.dumps() == b.dumps()

    def test_unbound(self, clip):
        with pytest.raises(BackendError):
            OracleBackend().complete(init_prompt(None, REG), clip)

    def test_wrong_label_never_true(self):
        for label in EMOTIONS:
            for i in range(20):
                assert wrong_label(RecordContext(f"u{i}", label)) != label

    @pytest.mark.parametrize("bad", [{"alpha": 1.5}, {"assess_prob": -0.1}, {"mismatch_budget": -1},
                                     {"f0_tolerance": -0.1}, {"snr_floor_db": float("nan")}, {"nonsense": 1}])
    def test_malformed_policy(self, bad):
        with pytest.raises(PolicyError):
            OraclePolicy.from_dict(bad)
