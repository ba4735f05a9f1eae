"""Frequency permutation alignment for per-frequency mixture posteriors.

Classes of independently fitted per-frequency mixtures may be numbered
inconsistently across frequencies.  This solver permutes the class axis per
frequency so that the temporal posterior profiles agree with a global
centroid, using Pearson correlation as the similarity.

Procedure: profiles are standardized per (frequency, class); frequencies are
visited in order of decreasing profile energy; for each frequency the
permutation maximizing the summed correlation with the running centroid is
chosen (exhaustively for up to 6 classes, by Hungarian assignment above);
rounds repeat until no permutation changes, the total similarity stops
improving (the round is then rolled back), or 20 rounds have run.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

_EXHAUSTIVE_LIMIT = 6
_IMPROVEMENT_TOL = 1e-12


def apply_permutation(array, perm, axis: int) -> np.ndarray:
    """Reindex ``array`` along its class ``axis`` with per-frequency ``perm``.

    ``perm`` is [F, K]; the frequency axis of ``array`` must be ``axis - 1``.
    ``out[..., f, k, ...] = array[..., f, perm[f, k], ...]``.
    """
    array = np.asarray(array)
    if perm.shape[1] != array.shape[axis]:
        raise ValueError("permutation class count does not match array")
    shape = [1] * array.ndim
    shape[axis - 1], shape[axis] = perm.shape
    return np.take_along_axis(array, perm.reshape(shape), axis=axis)


def _standardize(profiles):
    """Zero-mean, unit-norm rows; constant rows become zero vectors."""
    centered = profiles - profiles.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(centered, axis=-1, keepdims=True)
    return np.divide(centered, norm, out=np.zeros_like(centered), where=norm > 0)


def _best_permutation(corr, current, perms):
    """Permutation maximizing ``sum_k corr[perm[k], k]``.

    Returns ``current`` unless a strictly better permutation exists; exhaustive
    candidates are enumerated in lexicographic order so ties pick the lowest.
    """
    K = corr.shape[0]
    current_score = corr[current, np.arange(K)].sum()
    if perms is not None:
        scores = corr[perms, np.arange(K)].sum(axis=1)
        best = int(np.argmax(scores))
        if scores[best] > current_score + _IMPROVEMENT_TOL:
            return perms[best], scores[best]
        return current, current_score
    rows, cols = linear_sum_assignment(-corr.T)
    candidate = cols
    score = corr[candidate, rows].sum()
    if score > current_score + _IMPROVEMENT_TOL:
        return candidate, score
    return current, current_score


def _total_similarity(zprofiles, perm):
    """Summed correlation of aligned profiles with their standardized centroid."""
    F = zprofiles.shape[0]
    aligned = np.take_along_axis(zprofiles, perm[:, :, None], axis=1)
    centroid = _standardize(aligned.mean(axis=0))
    return float(np.einsum("fkt,kt->", aligned, centroid))


def align_frequencies(gamma, freq_weights=None, max_rounds: int = 20):
    """Align mixture classes across frequencies.

    Parameters
    ----------
    gamma : [T, F, K] posteriors.
    freq_weights : optional [F] processing-order weights (e.g. spectral
        power); defaults to the posterior profile energy per frequency.
    max_rounds : upper bound on centroid/assignment rounds.

    Returns
    -------
    (aligned, perm) : aligned posteriors and the [F, K] permutation map with
        ``aligned[t, f, k] = gamma[t, f, perm[f, k]]``.
    """
    gamma = np.asarray(gamma)
    T, F, K = gamma.shape
    perm = np.tile(np.arange(K), (F, 1))
    if F <= 1 or K <= 1:
        return gamma, perm

    zprofiles = _standardize(np.ascontiguousarray(gamma.transpose(1, 2, 0)))
    if freq_weights is None:
        freq_weights = np.einsum("tfk,tfk->f", gamma, gamma)
    order = np.argsort(-np.asarray(freq_weights), kind="stable")

    perms = None
    if K <= _EXHAUSTIVE_LIMIT:
        perms = np.array(list(itertools.permutations(range(K))))

    best_total = _total_similarity(zprofiles, perm)
    centroid_sum = zprofiles.sum(axis=0)
    for _ in range(max_rounds):
        snapshot = perm.copy()
        changed = False
        for f in order:
            centroid = _standardize(
                (centroid_sum - zprofiles[f][perm[f]]) / max(F - 1, 1)
            )
            corr = zprofiles[f] @ centroid.T  # [class j, centroid k]
            new_perm, _ = _best_permutation(corr, perm[f], perms)
            if not np.array_equal(new_perm, perm[f]):
                centroid_sum += zprofiles[f][new_perm] - zprofiles[f][perm[f]]
                perm[f] = new_perm
                changed = True
        if not changed:
            break
        total = _total_similarity(zprofiles, perm)
        if total <= best_total + _IMPROVEMENT_TOL:
            perm = snapshot
            break
        best_total = total

    aligned = apply_permutation(gamma, perm, axis=2)
    return aligned, perm
