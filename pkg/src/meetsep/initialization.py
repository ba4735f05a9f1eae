"""Initialization schemes for the mixture model.

Four strategies are provided: oracle posteriors from true speaker activity,
Dirichlet draws (independent per bin or frequency-tied), and the
clustering-based scheme: the recording is cut into short segments, a single
angular-Gaussian parameter set is fitted per segment, segments are grouped by
complete-linkage clustering on correlation-matrix distances, and the cluster
memberships define sharp time-varying priors.
"""

from __future__ import annotations

import dataclasses
import json
import warnings

import numpy as np

from .validation import check_observations

_ASSIGNED_PRIOR = 0.8


@dataclasses.dataclass(frozen=True)
class SegmentLabeling:
    """Per-segment cluster assignment over a tiling of the frame axis."""

    segment_bounds: tuple[tuple[int, int], ...]
    labels: np.ndarray

    @property
    def num_segments(self) -> int:
        return len(self.segment_bounds)

    def to_json(self) -> str:
        return json.dumps(
            {
                "segment_bounds": [list(b) for b in self.segment_bounds],
                "labels": np.asarray(self.labels).tolist(),
            }
        )


def init_oracle(activity) -> np.ndarray:
    """Posterior initialization from true speaker activities.

    ``activity`` is a boolean [T, K] matrix; an always-active noise class is
    appended and each row is normalized by its active count, so the result is
    a frequency-constant [T, K + 1] posterior matrix.
    """
    activity = np.asarray(activity, dtype=np.float64)
    if activity.ndim != 2:
        raise ValueError(f"activity must be [T, K], got shape {activity.shape}")
    T = activity.shape[0]
    padded = np.concatenate([activity, np.ones((T, 1))], axis=1)
    return padded / padded.sum(axis=1, keepdims=True)


def init_dirichlet(
    num_frames: int,
    num_bins: int,
    num_speakers: int,
    alpha=None,
    tied: bool = False,
    seed=None,
) -> np.ndarray:
    """Random posterior initialization drawn from a Dirichlet distribution.

    Draws ``num_speakers + 1`` class probabilities, independently per
    time-frequency bin, or once per frame and shared across frequencies when
    ``tied`` (equivalent to initializing the prior).  Returns [T, F, K + 1];
    the tied variant is a broadcast view.
    """
    num_classes = num_speakers + 1
    if alpha is None:
        alpha = np.ones(num_classes)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (num_classes,) or np.any(alpha <= 0):
        raise ValueError("alpha must be positive with one entry per class")
    rng = np.random.default_rng(seed)
    if tied:
        draws = rng.dirichlet(alpha, size=num_frames)
        return np.broadcast_to(
            draws[:, None, :], (num_frames, num_bins, num_classes)
        )
    return rng.dirichlet(alpha, size=(num_frames, num_bins))


def fit_single_cacg(
    z_segment,
    zero_mask=None,
    tol: float = 1e-6,
    max_iterations: int = 100,
    eigenvalue_floor: float = 1e-10,
) -> np.ndarray:
    """Fit one angular-Gaussian parameter matrix per frequency to a segment.

    Runs the fixed-point update ``B <- M / T * sum_t z z^H / (z^H B^-1 z)``
    from the identity, with the same regularization as the mixture M-step.
    Each frequency stops updating once its relative change drops below
    ``tol``.  ``z_segment`` is [T_seg, F, M]; returns [F, M, M].
    """
    from .cacgmm import _hermitian_inv_logdet, _regularize

    z = np.asarray(z_segment)
    T, F, M = z.shape
    if T < M:
        warnings.warn(
            f"segment of {T} frames is shorter than the channel count {M}; "
            "parameters are low rank and regularized",
            RuntimeWarning,
        )
    weights = np.ones((T, F))
    if zero_mask is not None:
        weights[zero_mask] = 0.0
    counts = weights.sum(axis=0)  # [F]
    degenerate = counts == 0

    B = np.broadcast_to(np.eye(M, dtype=complex), (F, M, M)).copy()
    active = ~degenerate
    for _ in range(max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Ba = B[idx]
        za = z[:, idx]
        B_inv, _ = _hermitian_inv_logdet(Ba)
        quad = np.einsum(
            "tfm,fmn,tfn->tf", za.conj(), B_inv, za, optimize=True
        ).real
        np.maximum(quad, np.finfo(quad.dtype).tiny, out=quad)
        w = weights[:, idx] / quad
        num = np.einsum("tf,tfm,tfn->fmn", w, za, za.conj(), optimize=True)
        Bn = _regularize(M * num / counts[idx, None, None], eigenvalue_floor)
        delta = np.abs(Bn - Ba).max(axis=(1, 2)) / np.abs(Ba).max(axis=(1, 2))
        B[idx] = Bn
        active[idx[delta < tol]] = False
    return B


def correlation_matrix_distance(B1, B2) -> float:
    """Distance ``1 - Re tr(B1 B2) / (||B1||_F ||B2||_F)``, in [0, 1] for PSD inputs."""
    B1 = np.asarray(B1)
    B2 = np.asarray(B2)
    n1 = np.linalg.norm(B1)
    n2 = np.linalg.norm(B2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("correlation matrix distance is undefined for zero matrices")
    return float(1.0 - np.real(np.trace(B1 @ B2)) / (n1 * n2))


def pairwise_distances(parameters) -> np.ndarray:
    """Frequency-averaged correlation-matrix distances between segments.

    ``parameters`` is [L, F, M, M] Hermitian; returns an exactly symmetric
    [L, L] matrix with zero diagonal.
    """
    P = np.asarray(parameters)
    if P.ndim != 4:
        raise ValueError(f"parameters must be [L, F, M, M], got shape {P.shape}")
    L = P.shape[0]
    if L < 2:
        raise ValueError("need at least two segments")
    norms = np.sqrt(np.einsum("afmn,afmn->af", P, P.conj()).real)
    if np.any(norms == 0.0):
        raise ValueError("zero parameter matrix in pairwise distances")
    # Hermitian inputs: tr(B_a B_b) equals the Frobenius inner product.
    inner = np.einsum("afmn,bfmn->abf", P, P.conj(), optimize=True).real
    d = 1.0 - inner / (norms[:, None, :] * norms[None, :, :])
    D = d.mean(axis=2)
    upper = np.triu(D, 1)
    return upper + upper.T


def complete_linkage(D, num_clusters: int) -> np.ndarray:
    """Agglomerative complete-linkage clustering down to ``num_clusters``.

    Repeatedly merges the pair of clusters with the smallest maximum
    inter-cluster distance; ties pick the lexicographically smallest index
    pair.  Returns labels in ``0 .. num_clusters - 1``, numbered by each
    cluster's smallest member index.
    """
    D = np.asarray(D, dtype=np.float64)
    L = D.shape[0]
    if D.shape != (L, L):
        raise ValueError("distance matrix must be square")
    if not 1 <= num_clusters <= L:
        raise ValueError(f"num_clusters must be in [1, {L}], got {num_clusters}")

    cd = D.copy()
    np.fill_diagonal(cd, np.inf)
    members: dict[int, list[int]] = {i: [i] for i in range(L)}
    while len(members) > num_clusters:
        i, j = np.unravel_index(np.argmin(cd), cd.shape)
        if i > j:
            i, j = j, i
        np.maximum(cd[i], cd[j], out=cd[i])
        cd[:, i] = cd[i]
        cd[i, i] = np.inf
        cd[j, :] = np.inf
        cd[:, j] = np.inf
        members[i].extend(members.pop(j))

    labels = np.empty(L, dtype=np.intp)
    for label, root in enumerate(sorted(members)):
        labels[members[root]] = label
    return labels


def init_cluster(
    z,
    num_speakers: int,
    segment_length: int = 30,
    tol: float = 1e-6,
    max_iterations: int = 100,
) -> tuple[np.ndarray, SegmentLabeling]:
    """Clustering-based prior initialization.

    The observations are tiled into contiguous ``segment_length``-frame
    segments (the last may be shorter), one angular Gaussian is fitted per
    segment and frequency, segments are clustered to ``num_speakers + 1``
    groups, and each frame's prior row puts 0.8 on its segment's cluster and
    ``0.2 / num_speakers`` elsewhere.

    Returns the [T, K + 1] prior matrix and the segment labeling.
    """
    obs = check_observations(z)
    T = obs.num_frames
    if segment_length < 1:
        raise ValueError("segment_length must be >= 1")
    if T < segment_length:
        raise ValueError(
            f"recording of {T} frames is shorter than one segment "
            f"({segment_length} frames)"
        )
    num_classes = num_speakers + 1
    bounds = [
        (start, min(start + segment_length, T))
        for start in range(0, T, segment_length)
    ]
    if len(bounds) < num_classes:
        raise ValueError(
            f"only {len(bounds)} segments for {num_classes} classes; "
            "use a shorter segment_length"
        )

    mask = obs.zero_norm_mask
    parameters = np.stack(
        [
            fit_single_cacg(
                obs.data[a:b],
                zero_mask=mask[a:b] if mask.any() else None,
                tol=tol,
                max_iterations=max_iterations,
            )
            for a, b in bounds
        ]
    )
    D = pairwise_distances(parameters)
    labels = complete_linkage(D, num_classes)

    off_value = 0.2 / num_speakers
    priors = np.full((T, num_classes), off_value)
    for (a, b), label in zip(bounds, labels):
        priors[a:b, label] = _ASSIGNED_PRIOR
    labeling = SegmentLabeling(segment_bounds=tuple(bounds), labels=labels)
    return priors, labeling
