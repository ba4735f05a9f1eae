"""WAV file input/output for multichannel signals."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .spectral import TimeSignal

_INT_SCALES = {np.dtype(np.int16): 2.0**15, np.dtype(np.int32): 2.0**31}


def read_wav(path) -> TimeSignal:
    """Read a PCM WAV file (16/32-bit int or 32/64-bit float) as float64 in [-1, 1]."""
    rate, data = wavfile.read(path)
    data = np.atleast_2d(data.T).T  # [num_samples, num_channels]
    if data.dtype in _INT_SCALES:
        data = data.astype(np.float64) / _INT_SCALES[data.dtype]
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    return TimeSignal(samples=data, sample_rate=int(rate))


def write_wav(path, signal: TimeSignal, dtype: str = "float32") -> None:
    """Write a signal as WAV; ``dtype`` is ``float32`` or ``int16``."""
    samples = signal.samples
    if dtype == "float32":
        data = samples.astype(np.float32)
    elif dtype == "int16":
        peak = np.max(np.abs(samples)) if samples.size else 0.0
        scale = 1.0 if peak <= 1.0 else peak
        data = np.clip(samples / scale * (2.0**15 - 1), -(2.0**15), 2.0**15 - 1)
        data = data.astype(np.int16)
    else:
        raise ValueError(f"unsupported dtype {dtype!r}")
    wavfile.write(path, signal.sample_rate, data)
