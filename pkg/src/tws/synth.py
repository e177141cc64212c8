"""Synthetic test signals: tones, tone stacks, clicks and speech-like vowels.

Used by the test-suite, the covering study and the desk-scale benchmark corpus
(no recorded speech ships with the package).
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, store_wav

EMOTIONS = ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")

# rough adult vowel formants (Hz)
_FORMANTS = {
    "a": (730.0, 1090.0, 2440.0),
    "i": (270.0, 2290.0, 3010.0),
    "u": (300.0, 870.0, 2240.0),
    "e": (530.0, 1840.0, 2480.0),
    "o": (570.0, 840.0, 2410.0),
}


def tone(freq: float, duration_s: float = 1.0, sr: int = DEFAULT_SAMPLE_RATE, amp: float = 0.5, phase: float = 0.0) -> Waveform:
    t = np.arange(int(round(duration_s * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def tone_stack(f0: float, n_harmonics: int = 8, duration_s: float = 1.0, sr: int = DEFAULT_SAMPLE_RATE, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration_s * sr))) / sr
    y = sum(np.sin(2 * np.pi * f0 * h * t) / h for h in range(1, n_harmonics + 1) if f0 * h < sr / 2)
    y = np.asarray(y)
    return Waveform(amp * y / np.max(np.abs(y)), sr)


def click_train(rate_hz: float = 4.0, duration_s: float = 1.0, sr: int = DEFAULT_SAMPLE_RATE, amp: float = 0.9) -> Waveform:
    y = np.zeros(int(round(duration_s * sr)))
    step = int(round(sr / rate_hz))
    y[step // 2 :: step] = amp
    return Waveform(y, sr)


def _formant_gain(freqs: np.ndarray, formants: tuple[float, ...], bw: float = 120.0) -> np.ndarray:
    g = np.full(np.shape(freqs), 0.02)
    for f in formants:
        g += 1.0 / (1.0 + ((freqs - f) / bw) ** 2)
    return g


def vowel(
    f0: float = 200.0,
    duration_s: float = 1.0,
    sr: int = DEFAULT_SAMPLE_RATE,
    vowel_id: str = "a",
    glide: float = 0.0,
    amp: float = 0.5,
) -> Waveform:
    """Harmonic vowel with formant-shaped partials; ``glide`` is the total f0 change in Hz."""
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    f_inst = f0 + glide * (t / max(duration_s, 1e-9) - 0.5)
    phase = 2 * np.pi * np.cumsum(f_inst) / sr
    formants = _FORMANTS[vowel_id]
    y = np.zeros(n)
    h = 1
    while f0 * h < min(4000.0, sr / 2 - 200):
        gain = _formant_gain(np.array([f0 * h], dtype=float), formants)[0]
        y += gain * np.sin(h * phase) / np.sqrt(h)
        h += 1
    y *= amp / np.max(np.abs(y))
    return Waveform(y, sr)


def _raised_cosine_envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = r
        env[n - ramp :] = r[::-1]
    return env


def speech_like(
    rng: np.random.Generator,
    duration_s: float = 1.0,
    sr: int = DEFAULT_SAMPLE_RATE,
    f0_range: tuple[float, float] = (110.0, 230.0),
    amp: float = 0.5,
) -> Waveform:
    """Syllable-like vowel bursts separated by silent gaps (pauses of 140-200 ms)."""
    n = int(round(duration_s * sr))
    y = np.zeros(n)
    pos = int(rng.uniform(0.06, 0.1) * sr)
    f0 = rng.uniform(*f0_range)
    while True:
        syl = int(rng.uniform(0.14, 0.22) * sr)
        if pos + syl > n - int(0.06 * sr):
            break
        v = vowel(
            f0=float(np.clip(f0 * rng.uniform(0.92, 1.08), 70, 380)),
            duration_s=syl / sr,
            sr=sr,
            vowel_id=str(rng.choice(list(_FORMANTS))),
            glide=float(rng.uniform(-15, 15)),
            amp=1.0,
        )
        y[pos : pos + syl] += v.samples * _raised_cosine_envelope(syl, int(0.02 * sr))
        pos += syl + int(rng.uniform(0.14, 0.2) * sr)
    y *= amp / max(np.max(np.abs(y)), 1e-12)
    return Waveform(y, sr)


def covering_corpus(seed: int = 0, count: int = 12, sr: int = DEFAULT_SAMPLE_RATE) -> list[Waveform]:
    """Gated tones, tone stacks and speech-like synthetics (all noise-free).

    Every signal has leading/trailing silence and pauses, which is what the
    percentile-based noise estimators in the operator set rely on.
    """
    rng = np.random.default_rng(seed)
    out: list[Waveform] = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            base = tone(float(rng.uniform(180, 900)), 1.0, sr)
        elif kind == 1:
            base = tone_stack(float(rng.uniform(100, 250)), 8, 1.0, sr)
        else:
            out.append(speech_like(rng, 1.0, sr))
            continue
        out.append(base.with_samples(base.samples * burst_envelope(len(base), sr, rng)))
    return out


def burst_envelope(n: int, sr: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """On/off gating: ~200 ms bursts with 140-200 ms pauses and soft edges."""
    rng = rng or np.random.default_rng(0)
    env = np.zeros(n)
    pos = int(0.07 * sr)
    while pos < n - int(0.08 * sr):
        length = min(int(rng.uniform(0.16, 0.24) * sr), n - int(0.06 * sr) - pos)
        if length < int(0.05 * sr):
            break
        env[pos : pos + length] = _raised_cosine_envelope(length, int(0.015 * sr))
        pos += length + int(rng.uniform(0.14, 0.2) * sr)
    return env


def make_labeled_corpus(out_dir: str | os.PathLike, count: int, seed: int = 0, duration_s: float = 1.0) -> Path:
    """Write ``count`` speech-like clips plus ``labels.csv``; returns the labels path.

    Labels are assigned round-robin over the seven categories; a label nudges
    the f0 range so clips are not all identical, nothing more.
    """
    out = Path(out_dir)
    audio_dir = out / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    ranges = {
        "anger": (160, 240), "disgust": (100, 150), "fear": (190, 260), "joy": (170, 250),
        "neutral": (110, 160), "sadness": (90, 130), "surprise": (200, 280),
    }
    rows = []
    for i in range(count):
        label = EMOTIONS[i % len(EMOTIONS)]
        rng = np.random.default_rng([seed, i])
        w = speech_like(rng, duration_s, DEFAULT_SAMPLE_RATE, ranges[label])
        uid = f"utt{i:05d}"
        store_wav(w, audio_dir / f"{uid}.wav")
        rows.append((uid, label))
    labels = out / "labels.csv"
    with open(labels, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["utterance_id", "label"])
        wr.writerows(rows)
    return labels
