"""Interleaved reasoning loop: prompts, tool-call parsing, termination, backends.

A backend turns the running chat (plus the current audio version) into the
next assistant message. Three implementations ship here: a scripted one for
tests, a rule-based oracle bound to a record's hidden ground truth, and an
HTTP chat-completions client.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol, Sequence

import httpx
import numpy as np

from .audio import Waveform, wav_bytes
from .errors import (
    BackendError,
    InvalidArgsError,
    PolicyError,
    ToolCallError,
    TwsError,
    UnknownOperatorError,
    UnknownToolError,
    UnwritablePathError,
)
from .operators import FeatureReport, OperatorRegistry, analyze_spectrum, render_audio_update
from .perturbations import CANONICAL_ORDER, Kind, PerturbationSpec, utterance_key
from .pitch import median_f0, track_pitch
from .synth import EMOTIONS

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant", "tool")
TERMINATIONS = ("answer_found", "k_max_reached", "backend_error")
OPERATOR_PLACEHOLDER = "[Detailed Operator Set Description]"

_CATEGORY_LIST = ",".join(EMOTIONS)

BASELINE_PROMPT = f"""Instruction:
You are an expert in audio analysis and emotion recognition. Listen to the provided audio clip and identify the speaker's emotional state.

The audio contains a single speaker's utterance from a conversational context. Your task is to classify the emotion expressed in the speech.

Choose from the following emotion: {{{_CATEGORY_LIST}}}

Think step-by-step and provide your answer in the following format:
Emotion: [category]"""

TWS_SYSTEM_PROMPT = f"""System Instruction:
You are an advanced audio analysis system with access to specialized audio processing tools. Your goal is to perform comprehensive emotion recognition by actively analyzing and manipulating audio signals when needed.

You have access to the following audio processing tools:

{OPERATOR_PLACEHOLDER}

When encountering audio that may be degraded or challenging to analyze, think step-by-step:

1. First assess the audio quality and identify potential issues

2. Apply appropriate preprocessing or enhancement tools as needed

3. Perform detailed acoustic analysis using available tools

Format tool calls as:

[TOOL: tool_name(parameters)]"""

TWS_TASK_PROMPT = f"""Task Instruction:
Analyze the provided audio clip to determine the speaker's emotional state. Use your available tools strategically to ensure accurate analysis, especially if the audio quality presents challenges.

Emotion categories: {{{_CATEGORY_LIST}}}

Process:

1. Initial Assessment: Listen to the audio and evaluate its quality

2. Strategic Processing: If needed, apply appropriate tools to enhance or analyze the audio

3. Feature Extraction: Use analysis tools to extract emotion-relevant acoustic features

4. Integration: Combine your observations to reach a conclusion

5. Final Decision: Provide emotion classification.

Think through each step explicitly. Show your reasoning process and explain how each tool usage contributes to your final decision.

Expected output format:

Step-by-step Analysis:
[Your detailed reasoning process with tool calls]

Final Answer:

Reasoning: [brief justification]

Emotion: [category]"""

BASELINE_INSTRUCTION = "Classify the emotion of the speaker in this audio clip."


# --- trace types -------------------------------------------------------------

@dataclass(frozen=True)
class ChatTurn:
    role: str
    text: str
    audio_ref: Optional[int] = None  # index into ReasoningTrace.audio_versions

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: tuple[tuple[str, str], ...] = ()

    def render(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self.args)
        return f"[TOOL: {self.name}({inner})]"


@dataclass
class ReasoningTrace:
    turns: list[ChatTurn]
    audio_versions: list[Waveform]
    steps_used: int = 0
    terminated_by: str = "k_max_reached"
    final_answer: Optional[str] = None
    calls: list[ToolCall] = field(default_factory=list)  # successfully applied, in order

    @property
    def final_audio(self) -> Waveform:
        return self.audio_versions[-1]

    def assistant_texts(self) -> list[str]:
        return [t.text for t in self.turns if t.role == "assistant"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps_used": self.steps_used,
            "terminated_by": self.terminated_by,
            "final_answer": self.final_answer,
            "turns": [{"role": t.role, "text": t.text, "audio_ref": t.audio_ref} for t in self.turns],
            "tool_calls": [{"name": c.name, "args": [list(a) for a in c.args]} for c in self.calls],
            "audio_versions": [w.digest() for w in self.audio_versions],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def write_trace(trace: ReasoningTrace, path: str | os.PathLike) -> None:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(trace.dumps())
    except OSError as exc:
        raise UnwritablePathError(f"cannot write trace {p}: {exc}") from exc


# --- prompts -----------------------------------------------------------------

def render_operator_set(registry: OperatorRegistry) -> str:
    return "\n".join(op.descriptor.render() for op in registry)


def system_prompt(registry: OperatorRegistry) -> str:
    if not registry:
        return BASELINE_PROMPT
    return TWS_SYSTEM_PROMPT.replace(OPERATOR_PLACEHOLDER, render_operator_set(registry))


def init_prompt(instruction: Optional[str], registry: OperatorRegistry) -> list[ChatTurn]:
    """System turn plus the user's task turn with the original audio attached."""
    if instruction is None:
        instruction = TWS_TASK_PROMPT if registry else BASELINE_INSTRUCTION
    return [ChatTurn("system", system_prompt(registry)), ChatTurn("user", instruction, audio_ref=0)]


# --- tool-call grammar -------------------------------------------------------

_TOOL_MARK = re.compile(r"\[TOOL:", re.IGNORECASE)
_NAME = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(")
_KEY = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*")
_NUMBER = re.compile(r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?")


def _read_value(text: str, pos: int) -> tuple[str, int]:
    if pos < len(text) and text[pos] in "\"'":
        quote = text[pos]
        out = []
        i = pos + 1
        while i < len(text):
            ch = text[i]
            if ch == "\\" and i + 1 < len(text):
                out.append(text[i + 1])
                i += 2
                continue
            if ch == quote:
                return "".join(out), i + 1
            out.append(ch)
            i += 1
        raise InvalidArgsError("unterminated string in tool arguments")
    m = _NUMBER.match(text, pos)
    if not m:
        raise InvalidArgsError(f"expected a number or quoted string at {text[pos:pos + 12]!r}")
    return m.group(0), m.end()


def _parse_args(text: str, pos: int) -> tuple[list[tuple[str, str]], int]:
    """Parse ``k=v, ...)`` starting just after the opening parenthesis."""
    args: list[tuple[str, str]] = []
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos < len(text) and text[pos] == ")" and not args:
            return args, pos + 1
        m = _KEY.match(text, pos)
        if not m:
            raise InvalidArgsError("tool arguments must be key=value pairs")
        value, pos = _read_value(text, m.end())
        args.append((m.group(1), value))
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            raise InvalidArgsError("unterminated tool call")
        if text[pos] == ",":
            pos += 1
            continue
        if text[pos] == ")":
            return args, pos + 1
        raise InvalidArgsError(f"unexpected {text[pos]!r} in tool arguments")


def has_tool_marker(text: str) -> bool:
    return _TOOL_MARK.search(text) is not None


def parse_tool_call(assistant_text: str, registry: OperatorRegistry) -> Optional[ToolCall]:
    """First ``[TOOL: name(k=v, ...)]`` in the text, validated against the registry.

    Returns None only when no ``[TOOL:`` marker is present. A marker with a
    broken call raises InvalidArgsError; an unregistered name raises
    UnknownToolError.
    """
    mark = _TOOL_MARK.search(assistant_text)
    if mark is None:
        return None
    m = _NAME.match(assistant_text, mark.end())
    if not m:
        raise InvalidArgsError("malformed tool call: expected name(...)")
    name = m.group(1)
    args, pos = _parse_args(assistant_text, m.end())
    rest = assistant_text[pos:].lstrip()
    if not rest.startswith("]"):
        raise InvalidArgsError("malformed tool call: missing closing ']'")
    try:
        op = registry.get(name)
    except UnknownOperatorError:
        raise UnknownToolError(f"unknown tool {name!r}") from None
    op.descriptor.validate(args)
    return ToolCall(op.name, tuple(args))


# --- answers -----------------------------------------------------------------

_ANSWER_LINE = re.compile(r"^[\s*#>_-]*emotion[\s*_]*:\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_STRIP = " \t*_`'\".,;:!?()[]{}<>"


def answer_in(text: str) -> Optional[str]:
    """Label from the last parseable ``Emotion: <label>`` line, if any."""
    found = None
    for m in _ANSWER_LINE.finditer(text):
        label = m.group(1).strip(_STRIP).lower()
        if label in EMOTIONS:
            found = label
    return found


def is_terminated(trace: ReasoningTrace) -> bool:
    texts = trace.assistant_texts()
    if not texts:
        return False
    last = texts[-1]
    return not has_tool_marker(last) and answer_in(last) is not None


def extract_answer(trace: ReasoningTrace) -> Optional[str]:
    found = None
    for text in trace.assistant_texts():
        label = answer_in(text)
        if label is not None:
            found = label
    return found


# --- backends ----------------------------------------------------------------

@dataclass(frozen=True)
class RecordContext:
    """Hidden ground truth for one record; only the oracle backend looks at it."""

    utterance_id: str
    label: str
    specs: tuple[PerturbationSpec, ...] = ()
    clean_duration_s: float = 0.0
    clean_f0_hz: float = 0.0
    # duration the clip should have once any time stretch is undone
    reference_duration_s: float = 0.0

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(s.kind for s in self.specs)


class ModelBackend(Protocol):
    name: str
    max_concurrency: int

    def complete(self, turns: Sequence[ChatTurn], audio: Waveform) -> str: ...

    def bind(self, context: RecordContext) -> "ModelBackend": ...


class ScriptedBackend:
    """Replays a fixed list of assistant messages, indexed by assistant-turn count."""

    name = "scripted"
    max_concurrency = 64

    def __init__(self, replies: Sequence[str], fail_at: Optional[int] = None):
        self.replies = tuple(replies)
        self.fail_at = fail_at

    def bind(self, context: RecordContext) -> "ScriptedBackend":
        return self

    def complete(self, turns: Sequence[ChatTurn], audio: Waveform) -> str:
        i = sum(1 for t in turns if t.role == "assistant")
        if self.fail_at is not None and i >= self.fail_at:
            raise BackendError(f"scripted failure at turn {i}")
        if i >= len(self.replies):
            raise BackendError(f"script exhausted after {len(self.replies)} replies")
        return self.replies[i]


# --- the loop ----------------------------------------------------------------

def _tool_error_turn(exc: Exception, ref: int) -> ChatTurn:
    return ChatTurn("tool", f"ERROR {type(exc).__name__}: {exc}", audio_ref=ref)


def run_baseline(audio: Waveform, instruction: Optional[str], backend: ModelBackend) -> ReasoningTrace:
    """One backend call on the baseline prompt; any tool text is ignored."""
    trace = ReasoningTrace(turns=init_prompt(instruction, OperatorRegistry()), audio_versions=[audio])
    try:
        text = backend.complete(list(trace.turns), audio)
    except BackendError as exc:
        log.warning("backend failed: %s", exc)
        trace.terminated_by = "backend_error"
        return trace
    trace.turns.append(ChatTurn("assistant", text, audio_ref=0))
    trace.steps_used = 1
    trace.final_answer = extract_answer(trace)
    trace.terminated_by = "answer_found" if trace.final_answer else "k_max_reached"
    return trace


def run_tws(
    audio: Waveform,
    instruction: Optional[str],
    registry: OperatorRegistry,
    backend: ModelBackend,
    k_max: int = 5,
) -> ReasoningTrace:
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not registry:
        return run_baseline(audio, instruction, backend)
    trace = ReasoningTrace(turns=init_prompt(instruction, registry), audio_versions=[audio])
    while trace.steps_used < k_max:
        current = len(trace.audio_versions) - 1
        try:
            text = backend.complete(list(trace.turns), trace.audio_versions[current])
        except BackendError as exc:
            log.warning("backend failed: %s", exc)
            trace.terminated_by = "backend_error"
            return trace
        trace.steps_used += 1
        trace.turns.append(ChatTurn("assistant", text, audio_ref=current))
        try:
            call = parse_tool_call(text, registry)
        except ToolCallError as exc:
            trace.turns.append(_tool_error_turn(exc, current))
            continue
        if call is None:
            if is_terminated(trace):
                trace.terminated_by = "answer_found"
                trace.final_answer = extract_answer(trace)
                return trace
            continue
        try:
            result = registry.get(call.name)(trace.audio_versions[current], call.args)
        except (TwsError, ValueError) as exc:
            trace.turns.append(_tool_error_turn(exc, current))
            continue
        trace.calls.append(call)
        if isinstance(result, Waveform):
            trace.audio_versions.append(result)
            trace.turns.append(ChatTurn("tool", render_audio_update(result), audio_ref=current + 1))
        else:
            trace.turns.append(ChatTurn("tool", result.render(), audio_ref=current))
    trace.terminated_by = "k_max_reached"
    return trace


def replay(audio: Waveform, calls: Sequence[ToolCall], registry: OperatorRegistry) -> Waveform:
    """Re-apply recorded tool calls to the original audio."""
    current = audio
    for call in calls:
        result = registry.get(call.name)(current, call.args)
        if isinstance(result, Waveform):
            current = result
    return current


# --- oracle ------------------------------------------------------------------

MATCHED_TOOL = {
    Kind.ADDITIVE_NOISE: "denoise",
    Kind.REVERBERATION: "dereverb",
    Kind.PITCH_SHIFT: "correct_pitch",
    Kind.TIME_STRETCH: "restore_tempo",
}
# tools that never change what the integrity checks measure
NEUTRAL_TOOLS = ("normalize_loudness", "analyze_spectrum", "track_pitch")
ASSESS_TOOL = "analyze_spectrum"

_TOOL_LINE = re.compile(r"^- ([A-Za-z_][A-Za-z0-9_]*)\(", re.MULTILINE)
_CALLED = re.compile(r"\[TOOL:\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(", re.IGNORECASE)


@dataclass(frozen=True)
class OraclePolicy:
    """Rule set for the oracle backend.

    alpha: per-step probability of choosing the kind-matched corrective tool.
    assess_prob: probability of an analyze_spectrum call before the first fix.
    mismatch_budget: mismatched calls tolerated before answering anyway.
    The remaining fields are the integrity thresholds the answer rule applies.
    """

    alpha: float = 1.0
    seed: int = 0
    assess_prob: float = 0.0
    mismatch_budget: int = 2
    snr_floor_db: float = 10.0
    f0_tolerance: float = 0.08
    duration_tolerance: float = 0.03

    def __post_init__(self) -> None:
        for name in ("alpha", "assess_prob"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
                raise PolicyError(f"{name} must be a probability, got {v!r}")
        if not isinstance(self.mismatch_budget, int) or self.mismatch_budget < 0:
            raise PolicyError("mismatch_budget must be a non-negative integer")
        for name in ("snr_floor_db", "f0_tolerance", "duration_tolerance"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v)):
                raise PolicyError(f"{name} must be a finite number")
        if self.f0_tolerance < 0 or self.duration_tolerance < 0:
            raise PolicyError("tolerances must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "OraclePolicy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise PolicyError(f"unknown policy keys {sorted(unknown)}")
        return cls(**d)


def wrong_label(context: RecordContext) -> str:
    """Deterministic label that is never the true one."""
    i = EMOTIONS.index(context.label)
    return EMOTIONS[(i + 1 + utterance_key(context.utterance_id) % (len(EMOTIONS) - 1)) % len(EMOTIONS)]


class OracleBackend:
    """Rule-based stand-in for a model whose tool-selection accuracy is ``alpha``."""

    name = "oracle"
    max_concurrency = 64

    def __init__(self, policy: OraclePolicy | None = None, context: RecordContext | None = None):
        self.policy = policy or OraclePolicy()
        self.context = context

    def bind(self, context: RecordContext) -> "OracleBackend":
        return OracleBackend(self.policy, context)

    # integrity of the audio the answer would be based on
    def integrity_ok(self, audio: Waveform, applied: Sequence[str]) -> bool:
        ctx, pol = self.context, self.policy
        assert ctx is not None
        kinds = set(ctx.kinds)
        if Kind.ADDITIVE_NOISE in kinds and analyze_spectrum(audio).estimated_snr_db < pol.snr_floor_db:
            return False
        if Kind.REVERBERATION in kinds and "dereverb" not in applied:
            return False
        if Kind.TIME_STRETCH in kinds and ctx.reference_duration_s > 0:
            if abs(audio.duration_s / ctx.reference_duration_s - 1.0) > pol.duration_tolerance:
                return False
        if Kind.PITCH_SHIFT in kinds and ctx.clean_f0_hz > 0:
            f0 = median_f0(track_pitch(audio))
            if f0 <= 0 or abs(f0 / ctx.clean_f0_hz - 1.0) > pol.f0_tolerance:
                return False
        return True

    def _answer(self, audio: Waveform, applied: Sequence[str]) -> str:
        assert self.context is not None
        ok = self.integrity_ok(audio, applied)
        label = self.context.label if ok else wrong_label(self.context)
        why = "the audio is intact enough to judge prosody" if ok else "the cues are distorted, best guess"
        return f"Final Answer:\nReasoning: {why}.\nEmotion: {label}"

    def _call_text(self, name: str, args: str = "") -> str:
        return f"Step-by-step Analysis: applying {name} to the current audio.\n[TOOL: {name}({args})]"

    def _matched_args(self, kind: Kind) -> str:
        assert self.context is not None
        spec = next(s for s in self.context.specs if s.kind == kind)
        if kind == Kind.PITCH_SHIFT:
            return f"semitones={-float(spec.params.semitones)!r}"
        if kind == Kind.TIME_STRETCH:
            return f"factor={float(spec.params.stretch_factor)!r}"
        return ""

    def complete(self, turns: Sequence[ChatTurn], audio: Waveform) -> str:
        if self.context is None:
            raise BackendError("oracle backend used without a bound record")
        system = next((t.text for t in turns if t.role == "system"), "")
        available = set(_TOOL_LINE.findall(system))

        # successful calls so far: an assistant call followed by a non-error tool turn
        applied: list[str] = []
        for a, b in zip(turns, turns[1:]):
            if a.role == "assistant" and b.role == "tool" and not b.text.startswith("ERROR"):
                m = _CALLED.search(a.text)
                if m:
                    applied.append(m.group(1).lower())
        step = sum(1 for t in turns if t.role == "assistant")

        if not available:
            return self._answer(audio, applied)
        pending = [
            k for k in CANONICAL_ORDER
            if k in self.context.kinds and MATCHED_TOOL[k] in available and MATCHED_TOOL[k] not in applied
        ]
        if not pending:
            return self._answer(audio, applied)

        rng = np.random.default_rng([self.policy.seed, utterance_key(self.context.utterance_id), step])
        u_assess, u_alpha, u_pick = rng.random(3)
        if step == 0 and ASSESS_TOOL in available and u_assess < self.policy.assess_prob:
            return self._call_text(ASSESS_TOOL)
        if u_alpha < self.policy.alpha:
            kind = pending[0]
            return self._call_text(MATCHED_TOOL[kind], self._matched_args(kind))
        matched = set(MATCHED_TOOL.values())
        mismatches = sum(1 for n in applied if n not in matched and n != ASSESS_TOOL)
        pool = [n for n in NEUTRAL_TOOLS if n in available and n != ASSESS_TOOL]
        if mismatches >= self.policy.mismatch_budget or not pool:
            return self._answer(audio, applied)
        return self._call_text(pool[int(u_pick * len(pool))])


# --- HTTP chat-completions backend ------------------------------------------

def _message_content(turn: ChatTurn, audio_part: Optional[dict[str, Any]]) -> Any:
    if audio_part is None:
        return turn.text
    return [{"type": "text", "text": turn.text}, audio_part]


class HttpBackend:
    """Chat-completions client: temperature 0, top_p 0.95, latest audio as base64 WAV."""

    name = "http"

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "default",
        max_concurrency: int = 4,
        retries: int = 2,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise BackendError("no API base URL configured (set TWS_API_BASE)")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout_s, transport=transport)
        self.model = model
        self.max_concurrency = max_concurrency
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)

    @classmethod
    def from_env(cls, **kwargs: Any) -> "HttpBackend":
        return cls(
            os.environ.get("TWS_API_BASE", ""),
            os.environ.get("TWS_API_KEY", ""),
            model=os.environ.get("TWS_MODEL", "default"),
            **kwargs,
        )

    def bind(self, context: RecordContext) -> "HttpBackend":
        return self

    def payload(self, turns: Sequence[ChatTurn], audio: Waveform) -> dict[str, Any]:
        data = base64.b64encode(wav_bytes(audio)).decode("ascii")
        audio_part = {"type": "input_audio", "input_audio": {"data": data, "format": "wav"}}
        # only the latest audio version is sent, attached to the task turn
        user_idx = next((i for i, t in enumerate(turns) if t.role == "user"), None)
        messages = []
        for i, t in enumerate(turns):
            role = "user" if t.role == "tool" else t.role
            text_turn = ChatTurn(t.role, f"Tool result: {t.text}" if t.role == "tool" else t.text)
            messages.append({"role": role, "content": _message_content(text_turn, audio_part if i == user_idx else None)})
        return {"model": self.model, "messages": messages, "temperature": 0, "top_p": 0.95}

    def _post(self, body: dict[str, Any]) -> str:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self.client.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = BackendError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                content = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"unexpected response shape: {exc}") from exc
            if isinstance(content, list):
                content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
            if not isinstance(content, str):
                raise BackendError("response content is not text")
            return content
        raise BackendError(f"request failed after {self.retries + 1} attempts: {last}")

    def complete(self, turns: Sequence[ChatTurn], audio: Waveform) -> str:
        body = self.payload(turns, audio)
        with self._slots:
            return self._post(body)
