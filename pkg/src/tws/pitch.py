"""Autocorrelation pitch tracking (25 ms frames, 10 ms hop, 60-400 Hz)."""

from __future__ import annotations

import numpy as np

from .audio import Waveform
from .errors import SignalTooShortError

FRAME_S = 0.025
HOP_S = 0.010
F0_MIN = 60.0
F0_MAX = 400.0
VOICING_THRESHOLD = 0.5
# frames quieter than this (linear RMS), or this far below the loudest frame,
# are treated as silence; smeared low-level tails otherwise yield octave errors
SILENCE_RMS = 1e-5
RELATIVE_SILENCE_DB = 30.0


def _frame_f0(frame: np.ndarray, sr: int, lag_min: int, lag_max: int) -> float:
    frame = frame - frame.mean()
    n = frame.shape[0]
    if np.sqrt(np.mean(frame**2)) < SILENCE_RMS:
        return 0.0
    lag_max = min(lag_max, n - 2)
    if lag_max <= lag_min + 1:
        return 0.0
    spec = np.fft.rfft(frame, 2 * n)
    ac = np.fft.irfft(spec * np.conj(spec))[:n]
    # normalise each lag by the energies of the two overlapping segments
    cs = np.concatenate([[0.0], np.cumsum(frame**2)])
    lags = np.arange(n)
    e_head = cs[n - lags]
    e_tail = cs[n] - cs[lags]
    denom = np.sqrt(e_head * e_tail)
    r = np.zeros(n)
    ok = denom > 0
    r[ok] = ac[ok] / denom[ok]

    # one extra lag on each side so boundary peaks can still be interpolated
    lo = max(lag_min - 1, 1)
    seg = r[lo : lag_max + 2]
    best = float(seg[1:-1].max())
    if best <= VOICING_THRESHOLD:
        return 0.0
    # earliest local peak close to the global maximum avoids octave-down errors
    peak = None
    for i in range(1, seg.shape[0] - 1):
        if seg[i] >= seg[i - 1] and seg[i] >= seg[i + 1] and seg[i] >= 0.9 * best:
            peak = i
            break
    if peak is None:
        return 0.0
    a, b, c = seg[peak - 1], seg[peak], seg[peak + 1]
    denom2 = a - 2 * b + c
    shift = 0.5 * (a - c) / denom2 if denom2 != 0 else 0.0
    lag = lo + peak + float(np.clip(shift, -0.5, 0.5))
    return sr / lag


def track_pitch(x: Waveform) -> np.ndarray:
    """Per-frame f0 in Hz (0 for unvoiced) at a 10 ms hop."""
    sr = x.sample_rate
    frame_len = int(round(FRAME_S * sr))
    hop = int(round(HOP_S * sr))
    if len(x) < frame_len:
        raise SignalTooShortError(f"need at least {frame_len} samples for pitch tracking, got {len(x)}")
    lag_min = int(np.floor(sr / F0_MAX))
    lag_max = int(np.ceil(sr / F0_MIN))
    count = 1 + (len(x) - frame_len) // hop
    f0 = np.zeros(count)
    s = x.samples
    frames = [s[i * hop : i * hop + frame_len] for i in range(count)]
    levels = np.array([np.sqrt(np.mean((f - f.mean()) ** 2)) for f in frames])
    floor = levels.max() * 10.0 ** (-RELATIVE_SILENCE_DB / 20.0)
    for i, frame in enumerate(frames):
        if levels[i] > floor:
            f0[i] = _frame_f0(frame, sr, lag_min, lag_max)
    return f0


def median_f0(contour: np.ndarray) -> float:
    voiced = contour[contour > 0]
    return float(np.median(voiced)) if voiced.size else 0.0


def voiced_fraction(contour: np.ndarray) -> float:
    return float(np.mean(contour > 0)) if contour.size else 0.0
