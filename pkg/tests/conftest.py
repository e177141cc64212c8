import numpy as np
import pytest

from tws.audio import Waveform
from tws.synth import speech_like, vowel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def vowel200():
    return vowel(200.0, duration_s=1.0)


@pytest.fixture
def speech():
    return speech_like(np.random.default_rng(7), duration_s=1.5)


def noise(n, seed=0, sr=16000, scale=0.1):
    return Waveform(np.random.default_rng(seed).standard_normal(n) * scale, sr)
