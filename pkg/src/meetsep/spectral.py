"""STFT analysis/synthesis and observation normalization.

Array conventions used throughout the package:

* time-domain signals are ``[num_samples, num_channels]`` float arrays,
* spectrograms are ``[T, F, M]`` complex arrays (frames x bins x channels),
* directional observations are unit-norm vectors over the channel axis.

The analysis uses a periodic Hann window.  The signal is zero padded by
``frame_size - frame_shift`` samples on both ends (plus tail padding up to a
full frame) so that every original sample is covered by a complete set of
overlapping windows; synthesis divides by the accumulated squared-window
envelope, which makes the round trip exact on the interior for any shift
that divides the frame size.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclasses.dataclass(frozen=True)
class TimeSignal:
    """Multichannel time-domain signal, ``samples`` shaped [num_samples, num_channels]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise ValueError(f"samples must be 1-D or 2-D, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate


@dataclasses.dataclass(frozen=True)
class MultichannelSpectrogram:
    """One-sided STFT, ``data`` shaped [T, F, M] with F = frame_size // 2 + 1."""

    data: np.ndarray
    frame_size: int
    frame_shift: int
    sample_rate: int
    num_samples: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"data must be [T, F, M], got shape {data.shape}")
        if data.shape[1] != self.frame_size // 2 + 1:
            raise ValueError(
                f"bin count {data.shape[1]} inconsistent with frame_size {self.frame_size}"
            )
        if not 0 < self.frame_shift <= self.frame_size:
            raise ValueError("frame_shift must be in (0, frame_size]")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


@dataclasses.dataclass(frozen=True)
class DirectionalObservations:
    """Unit-norm observation vectors [T, F, M] plus a mask of zero-norm bins."""

    data: np.ndarray
    zero_norm_mask: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]


def hann_window(frame_size: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(frame_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_size)


def _edge_padding(frame_size: int, frame_shift: int) -> int:
    return frame_size - frame_shift


def stft(
    signal: TimeSignal,
    frame_size: int = 1024,
    frame_shift: int = 256,
) -> MultichannelSpectrogram:
    """Analyze a multichannel signal into a one-sided STFT.

    The defaults (1024 / 256 at 16 kHz input) are the values used by the
    separation pipeline.

    Raises
    ------
    ValueError
        If ``frame_size`` is not a power of two, ``frame_shift`` does not
        divide ``frame_size``, or the signal is shorter than one frame.
    """
    if frame_size <= 0 or frame_size & (frame_size - 1):
        raise ValueError(f"frame_size must be a power of two, got {frame_size}")
    if frame_size % frame_shift:
        raise ValueError(
            f"frame_shift {frame_shift} must divide frame_size {frame_size}"
        )
    x = signal.samples
    if x.shape[0] < frame_size:
        raise ValueError(
            f"signal of {x.shape[0]} samples is shorter than one frame ({frame_size})"
        )

    pad = _edge_padding(frame_size, frame_shift)
    padded_len = x.shape[0] + 2 * pad
    num_frames = -(-(padded_len - frame_size) // frame_shift) + 1
    total = (num_frames - 1) * frame_shift + frame_size
    x = np.pad(x, ((pad, total - padded_len + pad), (0, 0)))

    frames = sliding_window_view(x, frame_size, axis=0)[::frame_shift]  # [T, M, N]
    window = hann_window(frame_size)
    data = np.fft.rfft(frames * window, axis=-1)  # [T, M, F]
    return MultichannelSpectrogram(
        data=np.ascontiguousarray(data.transpose(0, 2, 1)),
        frame_size=frame_size,
        frame_shift=frame_shift,
        sample_rate=signal.sample_rate,
        num_samples=signal.num_samples,
    )


def istft(spec: MultichannelSpectrogram) -> TimeSignal:
    """Overlap-add synthesis, inverse of :func:`stft` for matching metadata."""
    size, shift = spec.frame_size, spec.frame_shift
    if size % shift:
        raise ValueError(f"frame_shift {shift} must divide frame_size {size}")
    window = hann_window(size)
    frames = np.fft.irfft(spec.data.transpose(0, 2, 1), n=size, axis=-1)  # [T, M, N]
    frames = frames * window

    num_frames = spec.num_frames
    total = (num_frames - 1) * shift + size
    out = np.zeros((total, spec.num_channels))
    envelope = np.zeros(total)
    win_sq = window * window
    for t in range(num_frames):
        start = t * shift
        out[start : start + size] += frames[t].T
        envelope[start : start + size] += win_sq
    nonzero = envelope > 1e-12
    out[nonzero] /= envelope[nonzero, None]

    pad = _edge_padding(size, shift)
    out = out[pad : total - pad]
    if spec.num_samples is not None:
        if spec.num_samples > out.shape[0]:
            raise ValueError(
                f"metadata num_samples {spec.num_samples} exceeds synthesized "
                f"length {out.shape[0]}"
            )
        out = out[: spec.num_samples]
    return TimeSignal(samples=out, sample_rate=spec.sample_rate)


def normalize_observations(
    spec: MultichannelSpectrogram | np.ndarray,
) -> DirectionalObservations:
    """Project each time-frequency vector onto the unit sphere.

    Bins with exactly zero norm are flagged in ``zero_norm_mask`` and replaced
    by the uniform direction ``(1, ..., 1) / sqrt(M)`` so downstream code never
    divides by zero; the mask excludes them from model statistics.
    """
    data = spec.data if isinstance(spec, MultichannelSpectrogram) else np.asarray(spec)
    if data.ndim != 3:
        raise ValueError(f"expected [T, F, M] data, got shape {data.shape}")
    norms = np.linalg.norm(data, axis=-1)
    mask = norms == 0.0
    safe = np.where(mask, 1.0, norms)
    z = data / safe[..., None]
    if mask.any():
        m = data.shape[-1]
        z[mask] = np.full(m, 1.0 / np.sqrt(m), dtype=z.dtype)
    return DirectionalObservations(data=z, zero_norm_mask=mask)
