"""Segment-wise dereverberation and mask-based beamforming.

Extraction runs independently on each detected speech segment: the mixture
posteriors of the segment form a target mask (and a floored distortion mask),
a weighted power-minimizing distortionless beamformer is computed per
frequency, and the beamformed segment is written back into a full-length
per-speaker output stream via the inverse STFT.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

from .cacgmm import MixtureState
from .activity import SpeechSegments
from .spectral import MultichannelSpectrogram, TimeSignal, istft

_POWER_FLOOR = 1e-10
_DISTORTION_FLOOR = 1e-4


@dataclasses.dataclass(frozen=True)
class MaskPair:
    """Target/distortion masks [T_seg, F] for one speaker on one segment."""

    target: np.ndarray
    distortion: np.ndarray


@dataclasses.dataclass(frozen=True)
class SegmentRecord:
    speaker: int
    start_frame: int
    end_frame: int
    start_sample: int
    end_sample: int


def make_masks(gamma_segment, target_class: int) -> MaskPair:
    """Build the mask pair for a segment from [T_seg, F, K] posteriors.

    The target mask is the posterior of the target class; the distortion mask
    is the summed posterior of all other classes, floored at 1e-4.
    """
    gamma_segment = np.asarray(gamma_segment)
    target = gamma_segment[..., target_class]
    others = gamma_segment.sum(axis=-1) - target
    return MaskPair(
        target=target, distortion=np.maximum(others, _DISTORTION_FLOOR)
    )


def _stack_context(data, taps: int, delay: int):
    """Delayed multichannel context [T, F, M * taps] for linear prediction."""
    T, F, M = data.shape
    context = np.zeros((T, F, M * taps), dtype=data.dtype)
    for tau in range(taps):
        shift = delay + tau
        if shift < T:
            context[shift:, :, tau * M : (tau + 1) * M] = data[: T - shift]
    return context


def wpe_dereverberate(
    spec: MultichannelSpectrogram,
    taps: int = 10,
    delay: int = 3,
    iterations: int = 3,
    frequency_chunk: int = 64,
) -> MultichannelSpectrogram:
    """Block-offline weighted-prediction-error dereverberation.

    Per frequency, multichannel linear prediction filters over the delayed
    context ``[delay, delay + taps)`` are estimated with an iteratively
    re-estimated power weighting and the prediction is subtracted.
    """
    if taps < 1 or delay < 1:
        raise ValueError("taps and delay must be >= 1")
    data = spec.data
    T, F, M = data.shape
    out = np.empty_like(data)
    for f0 in range(0, F, frequency_chunk):
        block = data[:, f0 : f0 + frequency_chunk]
        context = _stack_context(block, taps, delay)
        dereverbed = block
        for _ in range(iterations):
            power = np.mean(np.abs(dereverbed) ** 2, axis=-1)
            power = np.maximum(power, _POWER_FLOOR)
            weighted = context / power[..., None]
            R = np.einsum("tfa,tfb->fab", weighted, context.conj(), optimize=True)
            P = np.einsum("tfa,tfm->fam", weighted, block.conj(), optimize=True)
            G = _stable_solve(R, P)
            prediction = np.einsum(
                "fam,tfa->tfm", G.conj(), context, optimize=True
            )
            dereverbed = block - prediction
        out[:, f0 : f0 + block.shape[1]] = dereverbed
    return dataclasses.replace(spec, data=out)


def _stable_solve(A, b):
    """Solve with Hermitian symmetrization and trace-scaled diagonal loading."""
    A = 0.5 * (A + np.conj(A.swapaxes(-2, -1)))
    try:
        solution = np.linalg.solve(A, b)
        if np.all(np.isfinite(solution)):
            return solution
    except np.linalg.LinAlgError:
        pass
    n = A.shape[-1]
    trace = np.real(np.trace(A, axis1=-2, axis2=-1))
    loading = 1e-10 * np.maximum(trace, 1.0)
    A = A + loading[..., None, None] * np.eye(n)
    return np.linalg.solve(A, b)


def estimate_covariance(data, mask) -> np.ndarray:
    """Mask-weighted spatial covariance per frequency.

    ``data`` is [T, F, M], ``mask`` is [T, F]; returns Hermitian [F, M, M]
    matrices ``sum_t mask y y^H / sum_t mask``.  Frequencies with zero mask
    mass fall back to scaled-identity loading (with a warning).
    """
    data = np.asarray(data)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != data.shape[:2]:
        raise ValueError("mask shape must match data frames and bins")
    weight = mask.sum(axis=0)
    cov = np.einsum("tf,tfm,tfn->fmn", mask, data, data.conj(), optimize=True)
    empty = weight == 0.0
    if empty.any():
        warnings.warn(
            f"zero mask mass at {int(empty.sum())} frequencies; "
            "using diagonal loading fallback",
            RuntimeWarning,
        )
        cov[empty] = _POWER_FLOOR * np.eye(data.shape[-1])
        weight = np.where(empty, 1.0, weight)
    cov /= weight[:, None, None]
    return 0.5 * (cov + np.conj(cov.swapaxes(-2, -1)))


def principal_eigenvector(
    matrices, iterations: int = 50, tol: float = 1e-10
) -> np.ndarray:
    """Dominant eigenvector of Hermitian PSD [..., M, M] matrices by power iteration."""
    matrices = np.asarray(matrices)
    M = matrices.shape[-1]
    diag = np.real(np.einsum("...mm->...m", matrices))
    start = np.argmax(diag, axis=-1)
    v = np.take_along_axis(
        matrices, start[..., None, None], axis=-1
    )[..., 0] + 1e-12 * np.ones(M)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    for _ in range(iterations):
        w = np.einsum("...mn,...n->...m", matrices, v)
        norm = np.linalg.norm(w, axis=-1, keepdims=True)
        w = np.divide(w, norm, out=np.zeros_like(w), where=norm > 0)
        # Phase-align to the previous iterate so convergence is measurable.
        phase = np.einsum("...m,...m->...", v.conj(), w)
        phase = np.where(np.abs(phase) > 0, phase / np.abs(phase), 1.0)
        w = w * np.conj(phase[..., None])
        if np.max(np.abs(w - v)) < tol:
            v = w
            break
        v = w
    return v


class BeamformerError(RuntimeError):
    pass


def wmpdr_beamform(data, masks: MaskPair, reference_channel: int = 0) -> np.ndarray:
    """Weighted power-minimizing distortionless beamformer for one segment.

    Per frequency: the steering vector is the principal eigenvector of the
    target-masked covariance, normalized to the reference channel; the
    observation covariance is weighted by the inverse masked-target power at
    the reference channel; the weights are
    ``w = Phi^-1 v / (v^H Phi^-1 v)``.  ``data`` is [T_seg, F, M]; returns
    the beamformed [T_seg, F] signal.
    """
    data = np.asarray(data)
    T, F, M = data.shape
    if M == 1:
        return data[..., 0].copy()

    target_cov = estimate_covariance(data, masks.target)
    v = principal_eigenvector(target_cov)
    ref = v[:, reference_channel]
    scale = np.where(np.abs(ref) > 1e-12, ref, 1e-12)
    v = v / scale[:, None]

    power = masks.target * np.abs(data[..., reference_channel]) ** 2
    power = np.maximum(power, _POWER_FLOOR)
    phi = np.einsum(
        "tf,tfm,tfn->fmn", 1.0 / power, data, data.conj(), optimize=True
    )
    phi = 0.5 * (phi + np.conj(phi.swapaxes(-2, -1)))

    numerator = _solve_with_retry(phi, v)
    denom = np.real(np.einsum("fm,fm->f", v.conj(), numerator))
    denom = np.where(np.abs(denom) > 0, denom, 1.0)
    weights = numerator / denom[:, None]
    return np.einsum("fm,tfm->tf", weights.conj(), data, optimize=True)


def _solve_with_retry(phi, v):
    try:
        solution = np.linalg.solve(phi, v)
        if np.all(np.isfinite(solution)):
            return solution
    except np.linalg.LinAlgError:
        pass
    M = phi.shape[-1]
    trace = np.real(np.trace(phi, axis1=-2, axis2=-1))
    loaded = phi + (1e-6 * trace / M)[:, None, None] * np.eye(M)
    try:
        solution = np.linalg.solve(loaded, v)
    except np.linalg.LinAlgError as err:
        raise BeamformerError(
            "observation covariance not invertible after diagonal loading"
        ) from err
    if not np.all(np.isfinite(solution)):
        raise BeamformerError("non-finite beamformer weights after loading")
    return solution


def extract_all(
    spec: MultichannelSpectrogram,
    state: MixtureState,
    segments: SpeechSegments,
    reference_channel: int = 0,
) -> tuple[list[TimeSignal], list[SegmentRecord]]:
    """Beamform every detected segment and assemble per-speaker signals.

    For each (speaker, segment) the masks come from the mixture posteriors
    restricted to the segment.  Beamformed segments are written into one
    spectrogram per speaker (zeros elsewhere) and synthesized back to the
    time domain, so every output stream matches the input length.

    Returns the per-speaker single-channel signals and the segment metadata.
    """
    gamma = state.posteriors
    T, F, M = spec.data.shape
    if gamma.shape[:2] != (T, F):
        raise ValueError("posterior shape does not match the spectrogram")
    shift = spec.frame_shift
    signals: list[TimeSignal] = []
    records: list[SegmentRecord] = []
    for speaker, (klass, segs) in enumerate(
        zip(segments.speaker_classes, segments.segments)
    ):
        stream = np.zeros((T, F), dtype=spec.data.dtype)
        for start, end in segs:
            if end - start < 1:
                warnings.warn(
                    f"skipping empty segment for speaker {speaker}", RuntimeWarning
                )
                continue
            masks = make_masks(gamma[start:end], klass)
            stream[start:end] = wmpdr_beamform(
                spec.data[start:end], masks, reference_channel
            )
            records.append(
                SegmentRecord(
                    speaker=speaker,
                    start_frame=int(start),
                    end_frame=int(end),
                    start_sample=int(start) * shift,
                    end_sample=int(end) * shift,
                )
            )
        mono = dataclasses.replace(spec, data=stream[:, :, None])
        signals.append(istft(mono))
    return signals, records
