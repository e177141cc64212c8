"""Audio operator set: enhancement, analysis, transformation and separation tools.

Each operator is registered with a descriptor (name, summary, parameter
schema, return kind) that the reasoning loop renders into the system prompt
and validates tool-call arguments against. Operators are pure functions of
(waveform, validated kwargs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, Union

import numpy as np
from scipy.ndimage import median_filter, percentile_filter, uniform_filter1d

from .audio import (
    DEFAULT_HOP,
    DEFAULT_WINDOW,
    Waveform,
    istft,
    rms_dbfs,
    signal_distance,
    stft,
)
from .errors import (
    InvalidArgsError,
    ParameterRangeError,
    SignalTooShortError,
    UnknownOperatorError,
    ZeroPowerError,
)
from .perturbations import Kind, apply_spec, pitch_shift, sample_spec, time_stretch
from .pitch import median_f0, track_pitch, voiced_fraction

# ablation categories (one per operator) and the broader functional groups
CATEGORIES = ("denoise", "enhance", "normalize", "analyze")
GROUPS = ("enhancement", "analysis", "transformation", "separation")

SNR_CAP_DB = 120.0


# --- feature report ----------------------------------------------------------

@dataclass(frozen=True)
class FeatureReport:
    estimated_snr_db: float
    spectral_centroid_hz: float
    spectral_rolloff_hz: float
    spectral_flatness: float
    rms_dbfs: float
    f0_median_hz: float
    voiced_fraction: float
    duration_s: float

    def render(self) -> str:
        parts = []
        for key, value in self.__dict__.items():
            parts.append(f"{key}={_fmt(value)}")
        return " ".join(parts)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return f"{v:.2f}"


def render_audio_update(w: Waveform) -> str:
    return f"AUDIO_UPDATED duration_s={_fmt(w.duration_s)} rms_dbfs={_fmt(rms_dbfs(w))}"


def render_result(result: Union[Waveform, FeatureReport]) -> str:
    if isinstance(result, FeatureReport):
        return result.render()
    return render_audio_update(result)


# --- operators ---------------------------------------------------------------

def _need_frames(x: Waveform, frames: int, what: str) -> None:
    need = DEFAULT_WINDOW + (frames - 1) * DEFAULT_HOP
    if len(x) < need:
        raise SignalTooShortError(f"{what} needs at least {need} samples, got {len(x)}")


# noise floor: per-bin 10th percentile of 3-frame-smoothed magnitudes over a
# sliding 21-frame (~340 ms) neighbourhood, so masked or drifting noise is tracked,
# then a 31-bin (~480 Hz) median across frequency so steady tonal peaks are not
# mistaken for noise
NOISE_SMOOTH_FRAMES = 3
NOISE_WINDOW_FRAMES = 21
NOISE_PERCENTILE = 10
NOISE_FREQ_BINS = 31
SPECTRAL_FLOOR = 0.05


def noise_floor(mag: np.ndarray) -> np.ndarray:
    smooth = uniform_filter1d(mag, NOISE_SMOOTH_FRAMES, axis=0, mode="nearest")
    floor = percentile_filter(smooth, NOISE_PERCENTILE, size=(NOISE_WINDOW_FRAMES, 1), mode="nearest")
    return median_filter(floor, size=(1, NOISE_FREQ_BINS), mode="nearest")


def denoise(x: Waveform, over_subtraction: float = 1.5) -> Waveform:
    """Magnitude spectral subtraction against a local 10th-percentile noise floor."""
    if len(x) < DEFAULT_WINDOW:
        raise SignalTooShortError(f"denoise needs at least {DEFAULT_WINDOW} samples")
    spec = stft(x)
    mag = np.abs(spec.frames)
    cleaned = np.maximum(mag - over_subtraction * noise_floor(mag), SPECTRAL_FLOOR * mag)
    out = istft(spec.with_frames(cleaned * np.exp(1j * np.angle(spec.frames))))
    return x.with_samples(out.samples)


DEREVERB_WEIGHT = 0.85
DEREVERB_LAG = 2
DEREVERB_SCALE = 0.25


def dereverb(x: Waveform) -> Waveform:
    """Suppress a late-reverb estimate built from an exponential average of past frames.

    The estimate for frame f is the running average (weight 0.85) of the
    magnitudes up to frame f-2, scaled by DEREVERB_SCALE; the output keeps at
    least 10% of each bin's magnitude and the original phase.
    """
    _need_frames(x, 4, "dereverb")
    spec = stft(x)
    mag = np.abs(spec.frames)
    avg = np.zeros_like(mag)
    running = np.zeros(mag.shape[1])
    for f in range(mag.shape[0]):
        running = DEREVERB_WEIGHT * running + (1.0 - DEREVERB_WEIGHT) * mag[f]
        avg[f] = running
    late = np.zeros_like(mag)
    late[DEREVERB_LAG:] = DEREVERB_SCALE * avg[:-DEREVERB_LAG]
    cleaned = np.maximum(mag - late, 0.1 * mag)
    out = istft(spec.with_frames(cleaned * np.exp(1j * np.angle(spec.frames))))
    return x.with_samples(out.samples)


def normalize_loudness(x: Waveform, target_dbfs: float = -23.0) -> Waveform:
    r = x.rms()
    if r == 0.0:
        raise ZeroPowerError("cannot normalise a silent signal")
    gain = 10.0 ** (target_dbfs / 20.0) / r
    if abs(gain - 1.0) < 1e-9:
        return x
    return x.with_samples(np.clip(x.samples * gain, -1.0, 1.0))


def analyze_spectrum(x: Waveform) -> FeatureReport:
    if len(x) < DEFAULT_WINDOW:
        raise SignalTooShortError(f"analysis needs at least {DEFAULT_WINDOW} samples")
    spec = stft(x)
    power = np.abs(spec.frames) ** 2
    mean_power = power.mean(axis=0)
    freqs = np.fft.rfftfreq(spec.window_len, 1.0 / x.sample_rate)
    total = float(mean_power.sum())
    contour = track_pitch(x) if len(x) >= int(0.025 * x.sample_rate) else np.zeros(0)
    if total == 0.0:
        return FeatureReport(0.0, 0.0, 0.0, 0.0, -math.inf, 0.0, 0.0, x.duration_s)
    centroid = float(np.sum(freqs * mean_power) / total)
    cum = np.cumsum(mean_power)
    rolloff = float(freqs[int(np.searchsorted(cum, 0.85 * total))])
    floor = 1e-20
    flatness = float(np.exp(np.mean(np.log(mean_power + floor))) / (np.mean(mean_power) + floor))
    frame_power = power.sum(axis=1)
    p10 = float(np.percentile(frame_power, 10))
    snr = SNR_CAP_DB if p10 <= 0 else min(SNR_CAP_DB, 10.0 * math.log10(frame_power.mean() / p10))
    return FeatureReport(
        estimated_snr_db=float(snr),
        spectral_centroid_hz=centroid,
        spectral_rolloff_hz=rolloff,
        spectral_flatness=float(np.clip(flatness, 0.0, 1.0)),
        rms_dbfs=rms_dbfs(x),
        f0_median_hz=median_f0(contour),
        voiced_fraction=voiced_fraction(contour),
        duration_s=x.duration_s,
    )


@dataclass(frozen=True)
class PitchReport:
    """Feature-style wrapper so the contour can be returned as a tool result."""

    f0_median_hz: float
    voiced_fraction: float
    f0_min_hz: float
    f0_max_hz: float

    def render(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.__dict__.items())


def pitch_report(x: Waveform) -> PitchReport:
    c = track_pitch(x)
    v = c[c > 0]
    return PitchReport(
        median_f0(c),
        voiced_fraction(c),
        float(v.min()) if v.size else 0.0,
        float(v.max()) if v.size else 0.0,
    )


def correct_pitch(x: Waveform, semitones: float = 0.0) -> Waveform:
    """Formant-preserving shift by ``semitones`` (undo a pitch perturbation)."""
    return pitch_shift(x, semitones, preserve_formants=True)


def restore_tempo(x: Waveform, factor: float = 1.0) -> Waveform:
    """Undo a tempo change of ``factor`` by stretching with 1/factor."""
    if factor <= 0:
        raise ParameterRangeError("factor must be positive")
    return time_stretch(x, 1.0 / factor, "high")


HPSS_KERNEL = 17


def extract_voice(x: Waveform) -> Waveform:
    """Harmonic part of a median-filter HPSS split (soft mask, power 2)."""
    _need_frames(x, 8, "extract_voice")
    spec = stft(x)
    mag = np.abs(spec.frames)
    harmonic = median_filter(mag, size=(HPSS_KERNEL, 1), mode="reflect")
    percussive = median_filter(mag, size=(1, HPSS_KERNEL), mode="reflect")
    h2, p2 = harmonic**2, percussive**2
    denom = h2 + p2
    mask = np.divide(h2, denom, out=np.zeros_like(denom), where=denom > 0)
    out = istft(spec.with_frames(spec.frames * mask))
    return x.with_samples(out.samples)


def identity(x: Waveform) -> Waveform:
    return x


# --- descriptors and registry ------------------------------------------------

@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: type
    low: float
    high: float
    default: float
    doc: str = ""

    def validate(self, raw: Any) -> float:
        if isinstance(raw, bool):
            raise InvalidArgsError(f"{self.name}: expected a number, got a boolean")
        if isinstance(raw, str):
            try:
                raw = float(raw)
            except ValueError:
                raise InvalidArgsError(f"{self.name}: expected a number, got {raw!r}") from None
        if not isinstance(raw, (int, float)) or not math.isfinite(raw):
            raise InvalidArgsError(f"{self.name}: expected a finite number, got {raw!r}")
        if not (self.low <= raw <= self.high):
            raise InvalidArgsError(f"{self.name}={raw} outside [{self.low}, {self.high}]")
        return float(raw)

    def describe(self) -> str:
        return f"{self.name}: number in [{self.low:g}, {self.high:g}], default {self.default:g}"


@dataclass(frozen=True)
class OperatorDescriptor:
    name: str
    summary: str
    params: tuple[ParamSpec, ...] = ()
    returns: str = "audio"

    def __post_init__(self) -> None:
        if not self.name.isidentifier() or not self.name.isascii():
            raise ValueError(f"operator name {self.name!r} is not a valid identifier")

    def validate(self, args: Mapping[str, Any] | Sequence[tuple[str, Any]]) -> dict[str, float]:
        items = list(args.items()) if isinstance(args, Mapping) else list(args)
        by_name = {p.name: p for p in self.params}
        out: dict[str, float] = {}
        for key, raw in items:
            if key not in by_name:
                raise InvalidArgsError(f"{self.name} has no parameter {key!r}")
            if key in out:
                raise InvalidArgsError(f"{self.name}: parameter {key!r} given twice")
            out[key] = by_name[key].validate(raw)
        for p in self.params:
            out.setdefault(p.name, p.default)
        return out

    def render(self) -> str:
        sig = ", ".join(p.describe() for p in self.params)
        return f"- {self.name}({sig}): {self.summary} Returns: {self.returns}."


@dataclass(frozen=True)
class Operator:
    descriptor: OperatorDescriptor
    fn: Callable[..., Any]
    category: str
    group: str

    @property
    def name(self) -> str:
        return self.descriptor.name

    def __call__(self, x: Waveform, args: Mapping[str, Any] | Sequence[tuple[str, Any]] = ()) -> Union[Waveform, FeatureReport, PitchReport]:
        return self.fn(x, **self.descriptor.validate(args))


@dataclass(frozen=True)
class OperatorRegistry:
    """Immutable, ordered collection of operators keyed by lower-case name."""

    operators: tuple[Operator, ...] = ()
    _index: Mapping[str, Operator] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        index: dict[str, Operator] = {}
        for op in self.operators:
            if op.category not in CATEGORIES:
                raise ValueError(f"{op.name}: category {op.category!r} not in {CATEGORIES}")
            key = op.name.lower()
            if key in index:
                raise ValueError(f"duplicate operator name {op.name!r}")
            index[key] = op
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.operators)

    def __iter__(self) -> Iterator[Operator]:
        return iter(self.operators)

    def __bool__(self) -> bool:
        return bool(self.operators)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and name.lower() in self._index

    def get(self, name: str) -> Operator:
        try:
            return self._index[name.lower()]
        except KeyError:
            raise UnknownOperatorError(f"unknown operator {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(op.name for op in self.operators)

    def without_categories(self, categories: Iterable[str]) -> "OperatorRegistry":
        drop = set(categories)
        unknown = drop - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown operator categories {sorted(unknown)}")
        return OperatorRegistry(tuple(op for op in self.operators if op.category not in drop))

    def with_operators(self, *ops: Operator) -> "OperatorRegistry":
        return OperatorRegistry(self.operators + tuple(ops))

    def categories(self) -> dict[str, str]:
        return {op.name: op.category for op in self.operators}


def _op(fn, name, summary, category, group, params=(), returns="audio") -> Operator:
    return Operator(OperatorDescriptor(name, summary, tuple(params), returns), fn, category, group)


def default_registry() -> OperatorRegistry:
    return OperatorRegistry((
        _op(denoise, "denoise",
            "Spectral-subtraction noise reduction using a per-frequency noise floor.",
            "denoise", "enhancement",
            [ParamSpec("over_subtraction", float, 0.5, 4.0, 1.5, "noise floor multiplier")]),
        _op(dereverb, "dereverb",
            "Suppresses late reverberation (echo) estimated from preceding frames.",
            "enhance", "enhancement"),
        _op(extract_voice, "extract_voice",
            "Keeps the harmonic (voiced) component and removes clicks and transients.",
            "denoise", "separation"),
        _op(correct_pitch, "correct_pitch",
            "Shifts pitch by the given semitones while preserving formants.",
            "enhance", "transformation",
            [ParamSpec("semitones", float, -12.0, 12.0, 0.0, "shift in semitones")]),
        _op(restore_tempo, "restore_tempo",
            "Undoes a speed change: audio sped up by `factor` is stretched back.",
            "enhance", "transformation",
            [ParamSpec("factor", float, 0.25, 4.0, 1.0, "speed factor to undo")]),
        _op(normalize_loudness, "normalize_loudness",
            "Scales the audio to a target RMS level in dBFS.",
            "normalize", "enhancement",
            [ParamSpec("target_dbfs", float, -60.0, 0.0, -23.0, "target RMS level")]),
        _op(analyze_spectrum, "analyze_spectrum",
            "Measures SNR, spectral centroid/rolloff/flatness, level, f0 and voicing.",
            "analyze", "analysis", returns="feature report"),
        _op(pitch_report, "track_pitch",
            "Autocorrelation pitch tracking; reports f0 statistics and voicing.",
            "analyze", "analysis", returns="feature report"),
    ))


def identity_operator() -> Operator:
    return _op(identity, "identity", "Returns the audio unchanged.", "analyze", "analysis")


def calibration_registry(base: OperatorRegistry | None = None) -> OperatorRegistry:
    """``base`` (default registry) plus the no-op ``identity`` operator."""
    base = base if base is not None else default_registry()
    if "identity" in base:
        return base
    return base.with_operators(identity_operator())


# --- adaptivity measurement --------------------------------------------------

@dataclass(frozen=True)
class AdaptivityReport:
    operator_name: str
    perturbation_kind: Kind
    epsilon: float
    rho_estimate: float
    trials: int
    skipped: int = 0
    ratios: tuple[float, ...] = ()


def as_audio(x: Waveform, result: Any) -> Waveform:
    """Feature-returning operators leave the audio unchanged."""
    return result if isinstance(result, Waveform) else x


def measure_adaptivity(
    op_name: str,
    kind: Kind | str,
    corpus: Sequence[Waveform],
    trials: int,
    rng: np.random.Generator,
    registry: OperatorRegistry | None = None,
) -> AdaptivityReport:
    """Empirical max of ||T(x + d) - x|| / ||d|| over sampled perturbations d."""
    if trials < 30:
        raise ValueError("adaptivity needs at least 30 trials")
    if not corpus:
        raise ValueError("corpus is empty")
    registry = registry if registry is not None else calibration_registry()
    op = registry.get(op_name)
    kind = Kind.parse(kind)
    ratios: list[float] = []
    eps = 0.0
    skipped = 0
    for i in range(trials):
        x = corpus[i % len(corpus)]
        seed_path = tuple(int(v) for v in rng.integers(0, 2**32, size=2))
        spec = sample_spec(kind, rng, seed_path)
        noisy = apply_spec(x, spec)
        d_norm = signal_distance(noisy, x)
        if d_norm == 0.0:
            skipped += 1
            continue
        out = as_audio(noisy, op(noisy))
        ratios.append(signal_distance(out, x) / d_norm)
        eps = max(eps, d_norm)
    rho = max(ratios) if ratios else 0.0
    return AdaptivityReport(op.name, kind, eps, rho, len(ratios), skipped, tuple(ratios))
