"""Speaker activity detection on the learned time-varying priors.

Three post-EM stages, all built from thresholded sliding-window morphology:
identify the noise class (the most active one after dilation-erosion
smoothing), fuse classes whose smoothed activity patterns overlap strongly,
and segment speech with a dilation that deliberately overestimates activity.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .cacgmm import MixtureState
from .validation import check_odd_window


@dataclasses.dataclass(frozen=True)
class MorphologyConfig:
    smooth_window: int = 101
    activity_threshold: float = 0.2
    fuse_iou_threshold: float = 0.8
    segment_window: int = 79
    segment_threshold: float = 0.5

    def __post_init__(self):
        check_odd_window(self.smooth_window, "smooth_window")
        check_odd_window(self.segment_window, "segment_window")
        for name in ("activity_threshold", "fuse_iou_threshold", "segment_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")


@dataclasses.dataclass(frozen=True)
class SpeechSegments:
    """Per-speaker segments [start_frame, end_frame) with their class indices."""

    segments: tuple[tuple[tuple[int, int], ...], ...]
    speaker_classes: tuple[int, ...]

    @property
    def num_speakers(self) -> int:
        return len(self.segments)

    def to_rttm(
        self, frame_shift: int, sample_rate: int, recording_id: str = "rec"
    ) -> str:
        """Render as RTTM text (one SPEAKER line per segment)."""
        seconds_per_frame = frame_shift / sample_rate
        lines = []
        for speaker, segs in enumerate(self.segments):
            for start, end in segs:
                onset = start * seconds_per_frame
                duration = (end - start) * seconds_per_frame
                lines.append(
                    f"SPEAKER {recording_id} 1 {onset:.3f} {duration:.3f} "
                    f"<NA> <NA> spk{speaker} <NA> <NA>"
                )
        return "\n".join(lines) + ("\n" if lines else "")


@dataclasses.dataclass(frozen=True)
class FusionResult:
    state: MixtureState
    groups: tuple[tuple[int, ...], ...]
    class_map: np.ndarray


def dilate(x, window: int) -> np.ndarray:
    """Centered sliding maximum; the window is clipped at the edges."""
    check_odd_window(window)
    x = np.asarray(x, dtype=np.float64)
    return maximum_filter1d(x, size=window, axis=0, mode="constant", cval=-np.inf)


def erode(x, window: int) -> np.ndarray:
    """Centered sliding minimum; the window is clipped at the edges."""
    check_odd_window(window)
    x = np.asarray(x, dtype=np.float64)
    return minimum_filter1d(x, size=window, axis=0, mode="constant", cval=np.inf)


def smooth_activity(priors, window: int) -> np.ndarray:
    """Morphological closing (dilate then erode) along the frame axis."""
    return erode(dilate(priors, window), window)


def _activity_indicators(priors, cfg: MorphologyConfig) -> np.ndarray:
    return smooth_activity(priors, cfg.smooth_window) > cfg.activity_threshold


def identify_noise_class(priors, cfg: MorphologyConfig | None = None) -> int:
    """Class with the largest number of smoothed-active frames (ties: lowest index)."""
    cfg = cfg or MorphologyConfig()
    priors = np.asarray(priors)
    if priors.ndim != 2 or priors.shape[1] < 2:
        raise ValueError("priors must be [T, K] with at least two classes")
    counts = _activity_indicators(priors, cfg).sum(axis=0)
    return int(np.argmax(counts))


def class_iou(priors, k: int, kappa: int, cfg: MorphologyConfig | None = None) -> float:
    """Intersection over union of two smoothed, thresholded class activities."""
    if k == kappa:
        raise ValueError("class indices must differ")
    cfg = cfg or MorphologyConfig()
    indicators = _activity_indicators(np.asarray(priors)[:, [k, kappa]], cfg)
    return _iou(indicators[:, 0], indicators[:, 1])


def _iou(a, b) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def _iou_table(indicators) -> np.ndarray:
    K = indicators.shape[1]
    table = np.zeros((K, K))
    for k in range(K):
        for kappa in range(k + 1, K):
            table[k, kappa] = table[kappa, k] = _iou(
                indicators[:, k], indicators[:, kappa]
            )
    return table


def _merge_groups(pairs, num_classes):
    """Connected components over the fusion graph, as sorted tuples."""
    parent = list(range(num_classes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for c in range(num_classes):
        groups.setdefault(find(c), []).append(c)
    return tuple(tuple(sorted(g)) for _, g in sorted(groups.items()))


def fuse_classes(
    state: MixtureState,
    cfg: MorphologyConfig | None = None,
    mode: str = "threshold",
    exclude: int | None = None,
) -> FusionResult:
    """Fuse mixture classes that represent the same speaker.

    ``threshold`` mode fuses every pair whose smoothed-activity IoU exceeds
    ``cfg.fuse_iou_threshold``, transitively.  ``forced`` mode fuses exactly
    the single highest-IoU pair regardless of threshold.  Priors and
    posteriors of fused classes are summed; the fused class keeps the lowest
    participating index and its parameter matrix (recomputed at the next
    M-step when fitting continues).  ``exclude`` removes one class (the noise
    class) from all candidate pairs.

    Returns the new state, the merged groups, and an ``[old_K]`` map from old
    to new class indices.
    """
    cfg = cfg or MorphologyConfig()
    K = state.num_classes
    candidates = [c for c in range(K) if c != exclude]
    if mode not in ("threshold", "forced"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    if mode == "forced" and len(candidates) < 2:
        raise ValueError("forced fusion needs at least two candidate classes")

    indicators = _activity_indicators(state.priors, cfg)
    table = _iou_table(indicators)
    pairs = []
    if mode == "forced":
        best = None
        for i, k in enumerate(candidates):
            for kappa in candidates[i + 1 :]:
                if best is None or table[k, kappa] > table[best]:
                    best = (k, kappa)
        pairs = [best]
    else:
        for i, k in enumerate(candidates):
            for kappa in candidates[i + 1 :]:
                if table[k, kappa] > cfg.fuse_iou_threshold:
                    pairs.append((k, kappa))

    groups = _merge_groups(pairs, K)
    class_map = np.empty(K, dtype=np.intp)
    for new, group in enumerate(groups):
        for old in group:
            class_map[old] = new

    if len(groups) == K:
        return FusionResult(state=state, groups=groups, class_map=class_map)

    keep = [g[0] for g in groups]
    priors = np.zeros((state.priors.shape[0], len(groups)))
    posteriors = np.zeros(state.posteriors.shape[:2] + (len(groups),))
    for new, group in enumerate(groups):
        priors[:, new] = state.priors[:, group].sum(axis=1)
        posteriors[..., new] = state.posteriors[..., group].sum(axis=-1)
    fused = MixtureState(
        priors=priors,
        parameters=state.parameters[:, keep],
        posteriors=posteriors,
        log_likelihood_trace=state.log_likelihood_trace,
    )
    return FusionResult(state=fused, groups=groups, class_map=class_map)


def forced_fusion_hook(cfg: MorphologyConfig | None = None):
    """EM hook fusing the single highest-IoU pair (intermediate fusion)."""

    def hook(state: MixtureState) -> MixtureState:
        return fuse_classes(state, cfg, mode="forced").state

    return hook


def segment_speech(
    priors,
    noise_class: int,
    cfg: MorphologyConfig | None = None,
) -> tuple[np.ndarray, SpeechSegments]:
    """Estimate per-speaker activity and contiguous speech segments.

    Activity is ``dilate(prior, segment_window) >= segment_threshold`` per
    non-noise class; the dilation overestimates so utterance boundaries are
    not clipped.  Returns the [T, K - 1] activity matrix (speakers ordered by
    class index) and the segment lists.
    """
    cfg = cfg or MorphologyConfig()
    priors = np.asarray(priors)
    T, K = priors.shape
    speaker_classes = [k for k in range(K) if k != noise_class]
    dilated = dilate(priors[:, speaker_classes], cfg.segment_window)
    active = dilated >= cfg.segment_threshold

    all_segments = []
    for col in range(active.shape[1]):
        flags = active[:, col]
        edges = np.flatnonzero(np.diff(np.r_[0, flags.astype(np.int8), 0]))
        starts, ends = edges[0::2], edges[1::2]
        all_segments.append(tuple(zip(starts.tolist(), ends.tolist())))
    segments = SpeechSegments(
        segments=tuple(all_segments),
        speaker_classes=tuple(speaker_classes),
    )
    return active, segments
