"""Seeded acoustic perturbations and the hard-set corpus builder.

Four perturbation families are supported: additive coloured noise, synthetic
room reverberation, pitch shifting (TD-PSOLA or resample+stretch) and phase
vocoder time stretching. Parameters are drawn from fixed distributions:

    AdditiveNoise   snr_db ~ U[0, 25], noise_type ~ Cat{white, pink, brown},
                    temporal_mask_active ~ Bernoulli(0.2)
    Reverberation   rt60_ms ~ LogU[100, 800], room_size_m3 ~ U[20, 200]
    PitchShift      semitones ~ U[-4, 4], formant_preservation ~ Bernoulli(0.7)
    TimeStretch     stretch_factor ~ U[0.7, 1.3], quality_mode: high w.p. 0.8

Every random draw comes from a substream keyed by
(master_seed, utterance_id, roll, kind), so corpus output never depends on
execution order.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy import signal as sps

from .audio import (
    DEFAULT_SAMPLE_RATE,
    Waveform,
    fft_convolve,
    hann,
    load_wav,
    resample,
    resample_by,
    store_wav,
)
from .errors import (
    ManifestError,
    ParameterRangeError,
    SampleRateMismatchError,
    SignalTooShortError,
    TwsError,
    UnwritablePathError,
    ZeroPowerError,
)
from .pitch import HOP_S, FRAME_S, track_pitch

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
DEFAULT_MASTER_SEED = 1337
DEFAULT_P_APPLY = 0.3
_APPLY_TAG = 7


class Kind(str, enum.Enum):
    ADDITIVE_NOISE = "AdditiveNoise"
    REVERBERATION = "Reverberation"
    PITCH_SHIFT = "PitchShift"
    TIME_STRETCH = "TimeStretch"

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def parse(cls, value: Union[str, "Kind"]) -> "Kind":
        if isinstance(value, Kind):
            return value
        for k in cls:
            if value in (k.value, k.name, k.short, k.name.lower()):
                return k
        raise ValueError(f"unknown perturbation kind {value!r}")


_SHORT = {
    Kind.ADDITIVE_NOISE: "AN",
    Kind.REVERBERATION: "RE",
    Kind.PITCH_SHIFT: "PS",
    Kind.TIME_STRETCH: "TS",
}

# application order; also the index used in RNG substream keys
CANONICAL_ORDER = (Kind.ADDITIVE_NOISE, Kind.REVERBERATION, Kind.PITCH_SHIFT, Kind.TIME_STRETCH)
NOISE_TYPES = ("white", "pink", "brown")


@dataclass(frozen=True)
class AdditiveNoiseParams:
    snr_db: float
    noise_type: str
    temporal_mask_active: bool

    def validate(self) -> None:
        _check_range("snr_db", self.snr_db, 0.0, 25.0)
        if self.noise_type not in NOISE_TYPES:
            raise ParameterRangeError(f"noise_type must be one of {NOISE_TYPES}")


@dataclass(frozen=True)
class ReverberationParams:
    rt60_ms: float
    room_size_m3: float

    def validate(self) -> None:
        _check_range("rt60_ms", self.rt60_ms, 100.0, 800.0)
        _check_range("room_size_m3", self.room_size_m3, 20.0, 200.0)


@dataclass(frozen=True)
class PitchShiftParams:
    semitones: float
    formant_preservation: bool

    def validate(self) -> None:
        _check_range("semitones", self.semitones, -4.0, 4.0)


@dataclass(frozen=True)
class TimeStretchParams:
    stretch_factor: float
    quality_mode: str

    def validate(self) -> None:
        _check_range("stretch_factor", self.stretch_factor, 0.7, 1.3)
        if self.quality_mode not in ("fast", "high"):
            raise ParameterRangeError("quality_mode must be 'fast' or 'high'")


Params = Union[AdditiveNoiseParams, ReverberationParams, PitchShiftParams, TimeStretchParams]
_PARAM_TYPES = {
    Kind.ADDITIVE_NOISE: AdditiveNoiseParams,
    Kind.REVERBERATION: ReverberationParams,
    Kind.PITCH_SHIFT: PitchShiftParams,
    Kind.TIME_STRETCH: TimeStretchParams,
}


def _check_range(name: str, value: float, lo: float, hi: float) -> None:
    if not (lo <= value <= hi):
        raise ParameterRangeError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: Kind
    params: Params
    seed_path: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "params": asdict(self.params), "seed_path": list(self.seed_path)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PerturbationSpec":
        kind = Kind.parse(d["kind"])
        params = _PARAM_TYPES[kind](**d["params"])
        return cls(kind, params, tuple(int(s) for s in d.get("seed_path", ())))

    def apply_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(list(self.seed_path) + [_APPLY_TAG]))


# --- RNG substreams ------------------------------------------------------------

def utterance_key(utterance_id: str) -> int:
    return int.from_bytes(hashlib.sha256(utterance_id.encode("utf-8")).digest()[:8], "little")


def substream_path(master_seed: int, utterance_id: str, kind: Kind, roll: int = 0) -> tuple[int, ...]:
    if master_seed < 0:
        raise ValueError("master_seed must be non-negative")
    return (int(master_seed), utterance_key(utterance_id), int(roll), CANONICAL_ORDER.index(kind))


def substream(seed_path: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(seed_path)))


# --- sampling ----------------------------------------------------------------

def sample_spec(kind: Kind, rng: np.random.Generator, seed_path: Sequence[int] = ()) -> PerturbationSpec:
    kind = Kind.parse(kind)
    if kind is Kind.ADDITIVE_NOISE:
        params: Params = AdditiveNoiseParams(
            snr_db=float(rng.uniform(0.0, 25.0)),
            noise_type=NOISE_TYPES[int(rng.integers(0, 3))],
            temporal_mask_active=bool(rng.random() < 0.2),
        )
    elif kind is Kind.REVERBERATION:
        params = ReverberationParams(
            rt60_ms=float(np.exp(rng.uniform(np.log(100.0), np.log(800.0)))),
            room_size_m3=float(rng.uniform(20.0, 200.0)),
        )
    elif kind is Kind.PITCH_SHIFT:
        params = PitchShiftParams(
            semitones=float(rng.uniform(-4.0, 4.0)),
            formant_preservation=bool(rng.random() < 0.7),
        )
    else:
        params = TimeStretchParams(
            stretch_factor=float(rng.uniform(0.7, 1.3)),
            quality_mode="high" if rng.random() < 0.8 else "fast",
        )
    return PerturbationSpec(kind, params, tuple(seed_path))


# --- additive noise ----------------------------------------------------------

def gen_colored_noise(length: int, noise_type: str, rng: np.random.Generator, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Unit-RMS white, pink (1/f power) or brown (1/f^2 power) Gaussian noise."""
    if length < 256:
        raise SignalTooShortError(f"noise length must be >= 256, got {length}")
    white = rng.standard_normal(length)
    if noise_type == "white":
        y = white
    elif noise_type in ("pink", "brown"):
        exponent = 0.5 if noise_type == "pink" else 1.0
        spec = np.fft.rfft(white)
        f = np.arange(spec.shape[0], dtype=np.float64)
        scale = np.zeros_like(f)
        scale[1:] = f[1:] ** -exponent
        y = np.fft.irfft(spec * scale, length)
    else:
        raise ParameterRangeError(f"unknown noise type {noise_type!r}")
    y = y / np.sqrt(np.mean(y**2))
    return Waveform(y, sample_rate)


def add_noise_at_snr(x: Waveform, params: AdditiveNoiseParams, rng: np.random.Generator) -> Waveform:
    """x' = x + a * n, with a chosen so the SNR over the noisy region is ``snr_db``."""
    params.validate()
    if x.rms() == 0.0:
        raise ZeroPowerError("cannot set an SNR against a silent signal")
    n = gen_colored_noise(max(len(x), 256), params.noise_type, rng, x.sample_rate).samples[: len(x)]
    region = np.ones(len(x), dtype=bool)
    if params.temporal_mask_active:
        seg = max(1, int(round(rng.uniform(0.2, 0.8) * len(x))))
        start = int(rng.integers(0, len(x) - seg + 1))
        region[:] = False
        region[start : start + seg] = True
        n = np.where(region, n, 0.0)
    sig_rms = float(np.sqrt(np.mean(x.samples[region] ** 2)))
    if sig_rms == 0.0:
        # the segment landed in silence: reference the whole clip instead
        sig_rms = x.rms()
    noise_rms = float(np.sqrt(np.mean(n[region] ** 2)))
    alpha = sig_rms / (noise_rms * 10.0 ** (params.snr_db / 20.0))
    return x.with_samples(x.samples + alpha * n)


# --- reverberation -----------------------------------------------------------

def direct_to_reverberant_db(room_size_m3: float) -> float:
    """+6 dB at 20 m^3 falling linearly to -2 dB at 200 m^3."""
    return 6.0 - 8.0 * (room_size_m3 - 20.0) / 180.0


def _ir_layout(rt60_ms: float, room_size_m3: float, sample_rate: int) -> tuple[int, int]:
    pre = int(round(np.cbrt(room_size_m3) / SPEED_OF_SOUND * sample_rate))
    return pre, int(round(1.5 * rt60_ms / 1000.0 * sample_rate))


def synth_room_ir(rt60_ms: float, room_size_m3: float, rng: np.random.Generator, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Exponentially decaying Gaussian tail behind a unit direct-path impulse."""
    _check_range("rt60_ms", rt60_ms, 100.0, 800.0)
    _check_range("room_size_m3", room_size_m3, 20.0, 200.0)
    rt60 = rt60_ms / 1000.0
    pre, tail_len = _ir_layout(rt60_ms, room_size_m3, sample_rate)
    t = np.arange(1, tail_len) / sample_rate
    tail = rng.standard_normal(tail_len - 1) * 10.0 ** (-3.0 * t / rt60)
    tail_energy = 10.0 ** (-direct_to_reverberant_db(room_size_m3) / 10.0)
    tail *= np.sqrt(tail_energy / np.sum(tail**2))
    h = np.zeros(pre + tail_len)
    h[pre] = 1.0
    h[pre + 1 :] = tail
    return Waveform(h, sample_rate)


def apply_reverb(x: Waveform, ir: Waveform) -> Waveform:
    if x.sample_rate != ir.sample_rate:
        raise SampleRateMismatchError(f"{x.sample_rate} Hz signal vs {ir.sample_rate} Hz IR")
    y = fft_convolve(x.samples, ir.samples)
    peak_in, peak_out = x.peak(), float(np.max(np.abs(y)))
    if peak_out > 0.0:
        y *= peak_in / peak_out
    return x.with_samples(y)


# --- time stretch (phase vocoder) --------------------------------------------

_STRETCH_CONFIG = {"high": (2048, 512, True), "fast": (1024, 512, False)}


def _peak_regions(mag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local magnitude maxima and, for every bin, the index of its governing peak."""
    inner = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])
    peaks = np.flatnonzero(inner) + 1
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(mag))])
    bounds = (peaks[:-1] + peaks[1:]) / 2.0
    owner = np.searchsorted(bounds, np.arange(mag.shape[0]), side="left")
    return peaks, peaks[owner]


def time_stretch(x: Waveform, factor: float, quality: str = "high") -> Waveform:
    """Phase-vocoder time-scale modification; factor > 1 shortens the signal."""
    if not (0.25 <= factor <= 4.0):
        raise ParameterRangeError(f"stretch factor {factor} outside [0.25, 4]")
    if quality not in _STRETCH_CONFIG:
        raise ParameterRangeError(f"unknown quality mode {quality!r}")
    n_fft, hop_s, locking = _STRETCH_CONFIG[quality]
    n = len(x)
    out_len = max(1, int(round(n / factor)))
    if n == 0:
        raise SignalTooShortError("cannot stretch an empty signal")

    pad = n_fft
    padded = np.concatenate([np.zeros(pad), x.samples, np.zeros(pad + int(np.ceil(hop_s * factor)) + n_fft)])
    hop_a = hop_s * factor
    count = int((padded.shape[0] - n_fft) // hop_a) + 1
    positions = np.round(np.arange(count) * hop_a).astype(int)
    positions = positions[positions + n_fft <= padded.shape[0]]
    count = positions.shape[0]

    win = hann(n_fft)
    omega = 2.0 * np.pi * np.arange(n_fft // 2 + 1) / n_fft
    total = (count - 1) * hop_s + n_fft
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = win**2
    prev_phase = None
    synth_phase = None
    for m, a in enumerate(positions):
        spec = np.fft.rfft(padded[a : a + n_fft] * win)
        mag = np.abs(spec)
        phase = np.angle(spec)
        if m == 0:
            synth_phase = phase.copy()
        else:
            hop_actual = a - positions[m - 1]
            dphi = phase - prev_phase - omega * hop_actual
            dphi = (dphi + np.pi) % (2.0 * np.pi) - np.pi
            inst = omega + dphi / hop_actual
            advanced = synth_phase + hop_s * inst
            if locking:
                peaks, owner = _peak_regions(mag)
                synth_phase = advanced[owner] + (phase - phase[owner])
            else:
                synth_phase = advanced
        prev_phase = phase
        frame = np.fft.irfft(mag * np.exp(1j * synth_phase), n_fft) * win
        start = m * hop_s
        out[start : start + n_fft] += frame
        norm[start : start + n_fft] += w2
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    begin = int(round(pad / factor))
    y = out[begin : begin + out_len]
    if y.shape[0] < out_len:
        y = np.concatenate([y, np.zeros(out_len - y.shape[0])])
    return x.with_samples(y)


# --- pitch shift (TD-PSOLA) --------------------------------------------------

MARK_LOWPASS_HZ = 600.0


def _analysis_marks(x: np.ndarray, f0: np.ndarray, sr: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pitch marks with the local period and a voiced flag for each mark.

    Marks snap to peaks of a zero-phase 600 Hz low-passed copy, where the
    fundamental dominates, so they land on the same phase every period.
    """
    b, a = sps.butter(4, MARK_LOWPASS_HZ / (sr / 2.0))
    x = sps.filtfilt(b, a, x)
    hop = int(round(HOP_S * sr))
    frame_len = int(round(FRAME_S * sr))
    centres = np.arange(f0.shape[0]) * hop + frame_len / 2.0
    unvoiced_period = hop
    n = x.shape[0]

    def local(t: float) -> tuple[float, bool]:
        i = int(np.clip(np.round((t - frame_len / 2.0) / hop), 0, f0.shape[0] - 1))
        if f0[i] > 0:
            return sr / f0[i], True
        return float(unvoiced_period), False

    marks, periods, voiced = [], [], []
    t = 0.0
    was_voiced = False
    while t < n:
        p, v = local(t)
        if v:
            lo = int(max(0, t - (0.5 if not was_voiced else 0.15) * p))
            hi = int(min(n, t + (0.5 if not was_voiced else 0.15) * p + 1))
            if hi > lo:
                t = float(lo + int(np.argmax(x[lo:hi])))
        marks.append(int(round(t)))
        periods.append(p)
        voiced.append(v)
        was_voiced = v
        t += p
    return np.array(marks), np.array(periods), np.array(voiced)


def _psola(x: Waveform, semitones: float) -> Waveform | None:
    sr = x.sample_rate
    s = x.samples
    try:
        f0 = track_pitch(x)
    except SignalTooShortError:
        return None
    voiced_f0 = f0[f0 > 0]
    # need at least three pitch periods of voiced material to place marks
    if voiced_f0.size == 0 or np.sum(HOP_S / (1.0 / voiced_f0)) < 3:
        return None
    marks, periods, voiced = _analysis_marks(s, f0, sr)
    beta = 2.0 ** (semitones / 12.0)
    n = s.shape[0]
    out = np.zeros(n)
    t_s = float(marks[0])
    while t_s < n:
        j = int(np.argmin(np.abs(marks - t_s)))
        p = periods[j]
        half = int(round(p))
        centre = marks[j]
        lo, hi = centre - half, centre + half + 1
        win = np.hanning(2 * half + 3)[1:-1]
        grain = np.zeros(2 * half + 1)
        src_lo, src_hi = max(lo, 0), min(hi, n)
        grain[src_lo - lo : src_hi - lo] = s[src_lo:src_hi]
        grain *= win
        dst = int(round(t_s))
        d_lo, d_hi = dst - half, dst + half + 1
        c_lo, c_hi = max(d_lo, 0), min(d_hi, n)
        if c_hi > c_lo:
            out[c_lo:c_hi] += grain[c_lo - d_lo : c_hi - d_lo]
        t_s += p / beta if voiced[j] else p
    in_rms = x.rms()
    out_rms = float(np.sqrt(np.mean(out**2)))
    if out_rms > 0:
        out *= in_rms / out_rms
    return x.with_samples(out, pitch_shift_method="psola")


def _fit_length(y: np.ndarray, n: int) -> np.ndarray:
    if y.shape[0] >= n:
        return y[:n]
    return np.concatenate([y, np.zeros(n - y.shape[0])])


def _resample_shift(x: Waveform, semitones: float, method: str) -> Waveform:
    beta = 2.0 ** (semitones / 12.0)
    # playing 1/beta as many samples at the same rate raises pitch by beta
    squeezed = x.with_samples(resample_by(x.samples, 1.0 / beta))
    restored = time_stretch(squeezed, 1.0 / beta, "high") if abs(semitones) > 1e-9 else squeezed
    return x.with_samples(_fit_length(restored.samples, len(x)), pitch_shift_method=method)


def pitch_shift(x: Waveform, semitones: float, preserve_formants: bool = True) -> Waveform:
    """Shift pitch by ``semitones`` keeping the duration.

    With ``preserve_formants`` the shift is TD-PSOLA; otherwise (or when the
    input has no usable voicing) the signal is resampled and time-stretched
    back, which moves formants with the pitch. ``meta['pitch_shift_method']``
    records which path ran.
    """
    if abs(semitones) > 12:
        raise ParameterRangeError(f"semitones {semitones} outside [-12, 12]")
    if len(x) == 0:
        raise SignalTooShortError("cannot pitch-shift an empty signal")
    if semitones == 0:
        return x.with_samples(x.samples, pitch_shift_method="identity")
    if preserve_formants:
        shifted = _psola(x, semitones)
        if shifted is not None:
            return shifted
        return _resample_shift(x, semitones, "resample_fallback")
    return _resample_shift(x, semitones, "resample")


# --- applying specs ----------------------------------------------------------

def apply_spec(x: Waveform, spec: PerturbationSpec) -> Waveform:
    """Apply one spec; randomness comes only from the spec's own seed path."""
    spec.params.validate()
    p = spec.params
    if isinstance(p, AdditiveNoiseParams):
        return add_noise_at_snr(x, p, spec.apply_rng())
    if isinstance(p, ReverberationParams):
        ir = synth_room_ir(p.rt60_ms, p.room_size_m3, spec.apply_rng(), x.sample_rate)
        return apply_reverb(x, ir)
    if isinstance(p, PitchShiftParams):
        return pitch_shift(x, p.semitones, p.formant_preservation)
    return time_stretch(x, p.stretch_factor, p.quality_mode)


def apply_specs(x: Waveform, specs: Iterable[PerturbationSpec]) -> Waveform:
    for spec in sorted(specs, key=lambda s: CANONICAL_ORDER.index(s.kind)):
        x = apply_spec(x, spec)
    return x


def unstretched_length(n: int, specs: Iterable[PerturbationSpec], sample_rate: int = DEFAULT_SAMPLE_RATE) -> int:
    """Length after every spec except time stretching (reverb adds its tail)."""
    for spec in specs:
        if isinstance(spec.params, ReverberationParams):
            pre, tail = _ir_layout(spec.params.rt60_ms, spec.params.room_size_m3, sample_rate)
            n += pre + tail - 1
    return n


# --- manifests ---------------------------------------------------------------

@dataclass(frozen=True)
class SourceRecord:
    utterance_id: str
    source_path: str
    label: str

    def to_dict(self) -> dict[str, Any]:
        return {"utterance_id": self.utterance_id, "source_path": self.source_path, "label": self.label}


@dataclass(frozen=True)
class HardSetRecord:
    utterance_id: str
    source_path: str
    output_path: str
    label: str
    applied_specs: tuple[PerturbationSpec, ...] = ()

    @property
    def kinds(self) -> tuple[Kind, ...]:
        return tuple(s.kind for s in self.applied_specs)

    def to_dict(self) -> dict[str, Any]:
        return {
            "utterance_id": self.utterance_id,
            "source_path": self.source_path,
            "output_path": self.output_path,
            "label": self.label,
            "applied_specs": [s.to_dict() for s in self.applied_specs],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "HardSetRecord":
        return cls(
            utterance_id=str(d["utterance_id"]),
            source_path=str(d["source_path"]),
            output_path=str(d.get("output_path", d["source_path"])),
            label=str(d["label"]),
            applied_specs=tuple(PerturbationSpec.from_dict(s) for s in d.get("applied_specs", ())),
        )


@dataclass
class HardSetManifest:
    records: list[HardSetRecord]
    master_seed: int = DEFAULT_MASTER_SEED
    p_apply: float = DEFAULT_P_APPLY
    root: str = "."
    clean_passthrough: list[str] = field(default_factory=list)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.root, path)


def dumps_jsonl(rows: Iterable[Mapping[str, Any]]) -> str:
    return "".join(json.dumps(r, sort_keys=False, separators=(", ", ": ")) + "\n" for r in rows)


def write_jsonl(path: str | os.PathLike, rows: Iterable[Mapping[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(rows))


def read_jsonl(path: str | os.PathLike) -> list[dict[str, Any]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return rows


def read_source_manifest(path: str | os.PathLike) -> list[SourceRecord]:
    rows = read_jsonl(path)
    try:
        return [SourceRecord(str(r["utterance_id"]), str(r["source_path"]), str(r["label"])) for r in rows]
    except KeyError as exc:
        raise ManifestError(f"{path}: record missing field {exc}") from exc


def read_hard_manifest(path: str | os.PathLike) -> HardSetManifest:
    root = os.path.dirname(os.path.abspath(path))
    records = [HardSetRecord.from_dict(r) for r in read_jsonl(path)]
    meta_path = os.path.join(root, "hard_set_meta.json")
    seed, p = DEFAULT_MASTER_SEED, DEFAULT_P_APPLY
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        seed, p = int(meta.get("master_seed", seed)), float(meta.get("p_apply", p))
    return HardSetManifest(records, seed, p, root)


# --- corpus building ---------------------------------------------------------

def plan_kinds(
    utterance_id: str,
    master_seed: int,
    p_apply: float | Mapping[Kind, float],
    roll: int = 0,
) -> list[PerturbationSpec]:
    """Independent Bernoulli inclusion per kind, then a parameter draw."""
    specs = []
    for kind in CANONICAL_ORDER:
        p = p_apply[kind] if isinstance(p_apply, Mapping) else p_apply
        path = substream_path(master_seed, utterance_id, kind, roll)
        rng = substream(path)
        if rng.random() < p:
            specs.append(sample_spec(kind, rng, path))
    return specs


def plan_record(utterance_id: str, master_seed: int, p_apply: float | Mapping[Kind, float]) -> tuple[list[PerturbationSpec], bool]:
    """Returns the specs and whether the clip ended up clean after one re-roll."""
    specs = plan_kinds(utterance_id, master_seed, p_apply, roll=0)
    if not specs:
        specs = plan_kinds(utterance_id, master_seed, p_apply, roll=1)
    return specs, not specs


def build_hard_set(
    sources: Sequence[SourceRecord],
    out_dir: str | os.PathLike,
    master_seed: int = DEFAULT_MASTER_SEED,
    p_apply: float = DEFAULT_P_APPLY,
    kind_probs: Mapping[Kind, float] | None = None,
    workers: int = 1,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> HardSetManifest:
    """Perturb every source clip and write ``audio/*.wav`` plus ``manifest.jsonl``.

    ``kind_probs`` overrides ``p_apply`` per kind (used for kind-dominant
    desk corpora). Unreadable sources are skipped with a log line.
    """
    out = Path(out_dir)
    try:
        (out / "audio").mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UnwritablePathError(f"output directory {out} is not writable: {exc}") from exc
    probs: float | Mapping[Kind, float] = (
        {Kind.parse(k): float(v) for k, v in kind_probs.items()} if kind_probs else p_apply
    )

    def one(src: SourceRecord) -> tuple[HardSetRecord, bool] | None:
        try:
            clean = resample(load_wav(src.source_path), sample_rate)
        except (TwsError, OSError) as exc:
            log.warning("skipping %s: %s", src.utterance_id, exc)
            return None
        specs, passthrough = plan_record(src.utterance_id, master_seed, probs)
        y = apply_specs(clean, specs)
        rel = os.path.join("audio", f"{src.utterance_id}.wav")
        store_wav(y, out / rel)
        rec = HardSetRecord(src.utterance_id, src.source_path, rel, src.label, tuple(specs))
        return rec, passthrough

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, sources))
    else:
        results = [one(s) for s in sources]

    records, clean_ids = [], []
    for r in results:
        if r is None:
            continue
        records.append(r[0])
        if r[1]:
            clean_ids.append(r[0].utterance_id)
            log.info("%s passed through clean after re-roll", r[0].utterance_id)
    write_jsonl(out / "manifest.jsonl", (r.to_dict() for r in records))
    meta = {
        "master_seed": master_seed,
        "p_apply": p_apply,
        "kind_probs": {k.value: v for k, v in probs.items()} if isinstance(probs, Mapping) else None,
        "clean_passthrough": clean_ids,
    }
    with open(out / "hard_set_meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return HardSetManifest(records, master_seed, p_apply, str(out), clean_ids)


def spec_from_cli(kind: str, values: Mapping[str, Any], seed_path: Sequence[int] = (0,)) -> PerturbationSpec:
    """Build a spec from loose key/value input (CLI ``perturb``)."""
    k = Kind.parse(kind)
    cls = _PARAM_TYPES[k]
    try:
        params = cls(**values)
    except TypeError as exc:
        raise ParameterRangeError(f"bad parameters for {k.value}: {exc}") from exc
    params.validate()
    return PerturbationSpec(k, params, tuple(seed_path))
