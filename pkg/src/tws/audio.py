"""Waveform container, PCM-16 WAV I/O, STFT/ISTFT and signal metrics.

Everything here is a pure function of its arguments. Waveform samples are
stored as read-only float64 arrays so values can be shared across threads.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

import numpy as np
from scipy import signal as sps

from .errors import (
    LengthMismatchError,
    MissingAudioFileError,
    SampleRateMismatchError,
    SignalError,
    SignalTooShortError,
    TruncatedWavError,
    UnsupportedWavFormatError,
    UnwritablePathError,
    ZeroPowerError,
)

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_WINDOW = 1024
DEFAULT_HOP = 256
KAISER_BETA = 8.0

_PCM_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio: float samples nominally in [-1, 1] at ``sample_rate`` Hz.

    ``meta`` carries free-form processing notes (for example which pitch-shift
    path ran); it does not take part in equality.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise SignalError("waveform samples must be finite")
        if int(self.sample_rate) <= 0:
            raise SignalError(f"sample rate must be positive, got {self.sample_rate}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    __hash__ = None  # type: ignore[assignment]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray, **meta: str) -> "Waveform":
        return Waveform(samples, self.sample_rate, {**self.meta, **meta})

    def rms(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    def digest(self) -> str:
        """sha256 over the little-endian float64 sample bytes and the rate."""
        h = hashlib.sha256()
        h.update(str(self.sample_rate).encode())
        h.update(self.samples.astype("<f8").tobytes())
        return h.hexdigest()


def rms_dbfs(w: Waveform) -> float:
    r = w.rms()
    return 20.0 * math.log10(r) if r > 0 else -math.inf


# --- WAV I/O -----------------------------------------------------------------

def load_wav(path: str | os.PathLike) -> Waveform:
    """Read a PCM 16-bit mono/stereo WAV; stereo is averaged to mono."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingAudioFileError(f"no such audio file: {path}")
    try:
        with wave.open(path, "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            if width != 2:
                raise UnsupportedWavFormatError(f"{path}: {8 * width}-bit PCM is not supported (need 16-bit)")
            if channels not in (1, 2):
                raise UnsupportedWavFormatError(f"{path}: {channels} channels (need mono or stereo)")
            raw = fh.readframes(n_frames)
    except wave.Error as exc:
        # the stdlib raises wave.Error both for bad codecs and for garbage headers
        msg = str(exc)
        if "unknown format" in msg or "RIFF" in msg or "WAVE" in msg:
            raise UnsupportedWavFormatError(f"{path}: {msg}") from exc
        raise TruncatedWavError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise TruncatedWavError(f"{path}: header ended early") from exc
    if len(raw) != n_frames * channels * 2:
        raise TruncatedWavError(f"{path}: data chunk shorter than declared")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    return Waveform(pcm / _PCM_SCALE, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to the int16 range."""
    scaled = np.asarray(samples, dtype=np.float64) * _PCM_SCALE
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def _write_pcm16(w: Waveform, target: Any) -> None:
    with wave.open(target, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(quantize_pcm16(w.samples).tobytes())


def store_wav(w: Waveform, path: str | os.PathLike) -> None:
    if len(w) == 0:
        raise SignalError("refusing to write an empty waveform")
    path = os.fspath(path)
    try:
        with open(path, "wb") as fh:
            _write_pcm16(w, fh)
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc


def wav_bytes(w: Waveform) -> bytes:
    """The exact bytes ``store_wav`` would write, kept in memory."""
    if len(w) == 0:
        raise SignalError("refusing to encode an empty waveform")
    buf = io.BytesIO()
    _write_pcm16(w, buf)
    return buf.getvalue()


def resample(w: Waveform, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Kaiser-windowed sinc (polyphase) rate conversion."""
    if w.sample_rate == target_rate:
        return w
    ratio = Fraction(target_rate, w.sample_rate)
    y = sps.resample_poly(w.samples, ratio.numerator, ratio.denominator, window=("kaiser", KAISER_BETA))
    return Waveform(y, target_rate, w.meta)


def resample_by(samples: np.ndarray, ratio: float) -> np.ndarray:
    """Change length by ``ratio`` (output ~ len * ratio) using the same filter."""
    frac = Fraction(ratio).limit_denominator(1000)
    return sps.resample_poly(samples, frac.numerator, frac.denominator, window=("kaiser", KAISER_BETA))


# --- STFT --------------------------------------------------------------------

def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def check_cola(window_len: int, hop: int) -> None:
    if not _is_pow2(window_len):
        raise SignalError(f"window_len must be a power of two, got {window_len}")
    if hop <= 0 or hop > window_len or window_len % hop:
        raise SignalError(f"hop {hop} must divide window_len {window_len}")
    if window_len // hop < 2:
        # a Hann window with no overlap leaves zeros in the synthesis sum
        raise SignalError("hop must be at most window_len / 2 for Hann reconstruction")


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided STFT of a zero-padded signal.

    Frame ``f`` covers ``padded[f*hop : f*hop + window_len]`` where ``padded``
    is the input with ``offset`` leading zeros; ``length`` is the original
    sample count so the inverse can trim the padding back off.
    """

    frames: np.ndarray
    window_len: int
    hop: int
    sample_rate: int
    length: int
    offset: int
    window_kind: str = "hann"

    @property
    def bin_count(self) -> int:
        return self.window_len // 2 + 1

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames: np.ndarray) -> "Spectrogram":
        return Spectrogram(frames, self.window_len, self.hop, self.sample_rate, self.length, self.offset, self.window_kind)


def _pad_plan(n: int, window_len: int, hop: int) -> tuple[int, int]:
    front = window_len - hop
    total = front + n + (window_len - hop)
    extra = (-(total - window_len)) % hop
    return front, total + extra


def frame_signal(samples: np.ndarray, window_len: int, hop: int) -> tuple[np.ndarray, int]:
    n = samples.shape[0]
    front, total = _pad_plan(n, window_len, hop)
    padded = np.zeros(total)
    padded[front : front + n] = samples
    count = (total - window_len) // hop + 1
    idx = np.arange(window_len)[None, :] + hop * np.arange(count)[:, None]
    return padded[idx], front


def stft(w: Waveform, window_len: int = DEFAULT_WINDOW, hop: int = DEFAULT_HOP) -> Spectrogram:
    check_cola(window_len, hop)
    if len(w) < 1:
        raise SignalTooShortError("stft needs at least one sample")
    frames, front = frame_signal(w.samples, window_len, hop)
    spec = np.fft.rfft(frames * hann(window_len), axis=1)
    return Spectrogram(spec, window_len, hop, w.sample_rate, len(w), front)


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add with the analysis window, normalised by sum(w^2)."""
    frames = np.asarray(s.frames)
    if frames.ndim != 2 or frames.shape[1] != s.window_len // 2 + 1:
        raise SignalError(
            f"spectrogram frames have shape {frames.shape}, expected (*, {s.window_len // 2 + 1})"
        )
    check_cola(s.window_len, s.hop)
    win = hann(s.window_len)
    count = frames.shape[0]
    total = (count - 1) * s.hop + s.window_len
    if s.offset + s.length > total:
        raise SignalError("spectrogram has too few frames for its recorded length")
    chunks = np.fft.irfft(frames, n=s.window_len, axis=1) * win
    out = np.zeros(total)
    norm = np.zeros(total)
    w2 = win**2
    for f in range(count):
        start = f * s.hop
        out[start : start + s.window_len] += chunks[f]
        norm[start : start + s.window_len] += w2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return Waveform(out[s.offset : s.offset + s.length], s.sample_rate)


# --- metrics -----------------------------------------------------------------

def _power(x: np.ndarray) -> float:
    return float(np.mean(x**2)) if x.size else 0.0


def measure_snr(clean: Waveform, noisy: Waveform) -> float:
    """SNR in dB of ``noisy`` against the reference ``clean``; inf when identical."""
    if clean.sample_rate != noisy.sample_rate:
        raise SampleRateMismatchError(f"{clean.sample_rate} Hz vs {noisy.sample_rate} Hz")
    if len(clean) != len(noisy):
        raise LengthMismatchError(f"lengths differ: {len(clean)} vs {len(noisy)}")
    p_clean = _power(clean.samples)
    if p_clean == 0.0:
        raise ZeroPowerError("clean reference has zero power")
    p_res = _power(noisy.samples - clean.samples)
    if p_res == 0.0:
        return math.inf
    return 10.0 * math.log10(p_clean / p_res)


def align(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad the shorter array to the longer length."""
    n = max(a.shape[0], b.shape[0])
    if a.shape[0] < n:
        a = np.concatenate([a, np.zeros(n - a.shape[0])])
    if b.shape[0] < n:
        b = np.concatenate([b, np.zeros(n - b.shape[0])])
    return a, b


def signal_distance(a: Waveform, b: Waveform) -> float:
    """L2 norm of ``a - b`` after zero-padding to a common length."""
    if a.sample_rate != b.sample_rate:
        raise SampleRateMismatchError(f"{a.sample_rate} Hz vs {b.sample_rate} Hz")
    x, y = align(a.samples, b.samples)
    return float(np.linalg.norm(x - y))


def fft_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution via zero-padded real FFTs."""
    n = a.shape[0] + b.shape[0] - 1
    nfft = 1 << max(0, (n - 1).bit_length())
    out = np.fft.irfft(np.fft.rfft(a, nfft) * np.fft.rfft(b, nfft), nfft)
    return out[:n]
