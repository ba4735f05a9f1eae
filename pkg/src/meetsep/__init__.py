"""Unsupervised multichannel meeting separation and diarization.

A spatial mixture model over directional STFT observations with time-varying
class priors, fitted by EM with frequency permutation alignment, plus a
clustering-based initialization, morphological speaker-activity detection,
class fusion, and segment-wise mask-based extraction.
"""

from .activity import (
    MorphologyConfig,
    SpeechSegments,
    class_iou,
    dilate,
    erode,
    fuse_classes,
    identify_noise_class,
    segment_speech,
)
from .cacgmm import (
    CACGMM,
    EMDivergenceError,
    MixtureState,
    SingularParameterError,
    cacg_log_pdf,
    e_step,
    load_state,
    log_likelihood,
    m_step_parameters,
    m_step_priors,
    save_state,
)
from .evaluate import EvalReport, best_permutation, evaluate, frame_der, si_sdr
from .extraction import (
    MaskPair,
    estimate_covariance,
    extract_all,
    make_masks,
    wmpdr_beamform,
    wpe_dereverberate,
)
from .initialization import (
    SegmentLabeling,
    complete_linkage,
    correlation_matrix_distance,
    fit_single_cacg,
    init_cluster,
    init_dirichlet,
    init_oracle,
    pairwise_distances,
)
from .io import read_wav, write_wav
from .permutation import align_frequencies, apply_permutation
from .pipeline import (
    MeetingSeparator,
    PipelineConfig,
    PipelineResult,
    PipelineStageError,
    run_pipeline,
)
from .simulate import (
    MeetingSpec,
    SimulatedMeeting,
    Utterance,
    intervals_to_activity,
    make_meeting_spec,
    simulate_meeting,
    synth_utterance,
)
from .spectral import (
    DirectionalObservations,
    MultichannelSpectrogram,
    TimeSignal,
    istft,
    normalize_observations,
    stft,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
