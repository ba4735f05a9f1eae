"""Separation and diarization metrics for desk-scale validation.

Scale-invariant SDR per speaker under the best speaker permutation, plus a
frame-level diarization error rate computed under the same permutation.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .spectral import TimeSignal

SI_SDR_CAP_DB = 60.0


@dataclasses.dataclass(frozen=True)
class EvalReport:
    per_speaker_si_sdr: tuple[float, ...]
    mean_si_sdr: float
    der: float
    permutation: tuple[int, ...]
    silent_references: tuple[int, ...] = ()
    runtime_stats: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["per_speaker_si_sdr"] = [
            None if math.isnan(v) else v for v in self.per_speaker_si_sdr
        ]
        return json.dumps(payload, indent=2)


def si_sdr(estimate, reference, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at ``cap_db``.

    Returns NaN when the reference is silent (the metric is undefined).
    """
    estimate = np.asarray(estimate, dtype=np.float64).reshape(-1)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1)
    if estimate.shape != reference.shape:
        raise ValueError("estimate and reference must have equal length")
    ref_energy = float(reference @ reference)
    if ref_energy == 0.0:
        return math.nan
    alpha = float(estimate @ reference) / ref_energy
    target = alpha * reference
    target_energy = float(target @ target)
    error_energy = float(np.sum((estimate - target) ** 2))
    if target_energy == 0.0:
        return -cap_db
    if error_energy == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(target_energy / error_energy), -cap_db, cap_db))


def _as_matrix(signals, length=None):
    rows = []
    for s in signals:
        x = s.samples[:, 0] if isinstance(s, TimeSignal) else np.asarray(s)
        rows.append(x.reshape(-1))
    if length is None:
        length = max((r.shape[0] for r in rows), default=0)
    out = np.zeros((len(rows), length))
    for i, r in enumerate(rows):
        n = min(length, r.shape[0])
        out[i, :n] = r[:n]
    return out


def best_permutation(estimates, references):
    """Assign estimate streams to reference speakers by maximizing SI-SDR.

    Both inputs are [num_streams, N]; missing streams on either side are
    treated as silent.  Returns ``(perm, scores)`` where ``perm[j]`` is the
    estimate index assigned to reference ``j`` and ``scores[j]`` the SI-SDR
    (NaN for silent references).
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(references, dtype=np.float64))
    C = max(est.shape[0], ref.shape[0])
    N = max(est.shape[1], ref.shape[1])
    padded = np.zeros((2, C, N))
    padded[0, : est.shape[0], : est.shape[1]] = est
    padded[1, : ref.shape[0], : ref.shape[1]] = ref
    est, ref = padded

    table = np.empty((C, C))
    for i in range(C):
        for j in range(C):
            value = si_sdr(est[i], ref[j])
            table[i, j] = -SI_SDR_CAP_DB if math.isnan(value) else value
    rows, cols = linear_sum_assignment(-table.T)  # rows: references
    perm = tuple(int(c) for c in cols)
    scores = tuple(
        si_sdr(est[perm[j]], ref[j]) for j in range(C)
    )
    return perm, scores


def frame_der(truth_activity, estimated_activity, permutation) -> float:
    """Frame-level diarization error rate under a fixed speaker permutation.

    ``(miss + false alarm + confusion) / total speech frames``, clipped to
    [0, 1].  ``permutation[j]`` selects the estimated stream scored against
    reference speaker ``j``.
    """
    truth = np.asarray(truth_activity, dtype=bool)
    est = np.asarray(estimated_activity, dtype=bool)
    T, K = truth.shape
    mapped = np.zeros((T, K), dtype=bool)
    for j in range(K):
        idx = permutation[j] if j < len(permutation) else None
        if idx is not None and idx < est.shape[1]:
            mapped[:, j] = est[:T, idx] if est.shape[0] >= T else np.pad(
                est[:, idx], (0, T - est.shape[0])
            )
    n_ref = truth.sum(axis=1)
    n_sys = mapped.sum(axis=1)
    n_correct = (truth & mapped).sum(axis=1)
    errors = np.maximum(n_ref, n_sys) - n_correct
    total_speech = n_ref.sum()
    if total_speech == 0:
        return 0.0 if n_sys.sum() == 0 else 1.0
    return float(np.clip(errors.sum() / total_speech, 0.0, 1.0))


def evaluate(
    estimates,
    references,
    truth_activity,
    estimated_activity,
    runtime_stats=None,
) -> EvalReport:
    """Score separated streams against references with one shared permutation.

    ``estimates``/``references`` are sequences of mono signals (TimeSignal or
    arrays); activities are boolean [T, K] matrices on the same frame grid.
    """
    ref_mat = _as_matrix(references)
    est_mat = _as_matrix(estimates, ref_mat.shape[1] if ref_mat.size else None)
    perm, scores = best_permutation(est_mat, ref_mat)
    K = ref_mat.shape[0]
    per_speaker = tuple(scores[:K])
    silent = tuple(j for j, v in enumerate(per_speaker) if math.isnan(v))
    defined = [v for v in per_speaker if not math.isnan(v)]
    der = frame_der(truth_activity, estimated_activity, perm)
    return EvalReport(
        per_speaker_si_sdr=per_speaker,
        mean_si_sdr=float(np.mean(defined)) if defined else math.nan,
        der=der,
        permutation=perm,
        silent_references=silent,
        runtime_stats=dict(runtime_stats or {}),
    )
