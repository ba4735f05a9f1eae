"""End-to-end separation pipeline and its configuration.

Stages: STFT -> optional dereverberation -> observation normalization ->
initialization -> EM with permutation alignment and scheduled intermediate
fusions -> noise class identification -> final threshold fusion -> speech
segmentation -> segment-wise extraction.  Every stage is timed and failures
carry the stage name.
"""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import io as wav_io
from .activity import (
    MorphologyConfig,
    SpeechSegments,
    forced_fusion_hook,
    fuse_classes,
    identify_noise_class,
    segment_speech,
)
from .cacgmm import CACGMM, MixtureState, save_state
from .evaluate import EvalReport, evaluate
from .extraction import SegmentRecord, extract_all
from .initialization import SegmentLabeling, init_cluster, init_dirichlet, init_oracle
from .spectral import MultichannelSpectrogram, TimeSignal, normalize_observations, stft
from .extraction import wpe_dereverberate

_INIT_SCHEMES = ("proposed", "dirichlet", "dirichlet_tied", "oracle")

# Stage indices for the per-stage random streams derived from the one seed.
_RNG_STAGES = {"meeting": 0, "noise": 1, "init": 2}


def stage_rng(seed, stage: str) -> np.random.Generator:
    """Independent random stream for a named pipeline stage."""
    return np.random.default_rng([_RNG_STAGES[stage], 0 if seed is None else seed])


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    """Pipeline settings; the defaults are the full separation recipe
    (clustering initialization, intermediate + final fusion, dereverberation,
    100 EM iterations, 1024/256 STFT at 16 kHz)."""

    num_speakers: int
    sample_rate: int = 16000
    frame_size: int = 1024
    frame_shift: int = 256
    em_iterations: int = 100
    initialization: str = "proposed"
    seed: int | None = 0
    segment_length: int = 30
    extra_classes: int = 2
    fusion_iterations: tuple[int, ...] = (10, 20)
    final_fusion: bool = True
    wpe: bool = True
    wpe_taps: int = 10
    wpe_delay: int = 3
    wpe_iterations: int = 3
    morphology: MorphologyConfig = dataclasses.field(default_factory=MorphologyConfig)
    permutation_solver: bool = True
    single_precision: bool = False

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ValueError("num_speakers must be >= 1")
        if self.initialization not in _INIT_SCHEMES:
            raise ValueError(
                f"initialization must be one of {_INIT_SCHEMES}, "
                f"got {self.initialization!r}"
            )
        if self.extra_classes < 0:
            raise ValueError("extra_classes must be >= 0")
        if self.initialization == "oracle" and self.extra_classes:
            raise ValueError("oracle initialization does not support extra classes")

    @property
    def num_classes(self) -> int:
        return self.num_speakers + 1 + self.extra_classes

    @classmethod
    def dirichlet_preset(cls, num_speakers: int, **overrides) -> "PipelineConfig":
        """Random-initialization baseline: untied Dirichlet, final fusion only."""
        defaults = dict(
            initialization="dirichlet",
            extra_classes=0,
            fusion_iterations=(),
            final_fusion=True,
        )
        defaults.update(overrides)
        return cls(num_speakers=num_speakers, **defaults)

    @classmethod
    def oracle_preset(cls, num_speakers: int, **overrides) -> "PipelineConfig":
        """Oracle-initialization upper bound: 20 EM iterations, no fusion, no WPE."""
        defaults = dict(
            initialization="oracle",
            em_iterations=20,
            extra_classes=0,
            fusion_iterations=(),
            final_fusion=False,
            wpe=False,
        )
        defaults.update(overrides)
        return cls(num_speakers=num_speakers, **defaults)

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["fusion_iterations"] = list(self.fusion_iterations)
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        payload = json.loads(text)
        morphology = payload.pop("morphology", None)
        if morphology is not None:
            payload["morphology"] = MorphologyConfig(**morphology)
        payload["fusion_iterations"] = tuple(payload.get("fusion_iterations", ()))
        return cls(**payload)


@dataclasses.dataclass(frozen=True)
class PipelineResult:
    signals: tuple[TimeSignal, ...]
    segments: SpeechSegments
    records: tuple[SegmentRecord, ...]
    rttm: str
    state: MixtureState
    noise_class: int
    activity: np.ndarray
    labeling: SegmentLabeling | None
    timings: dict
    config: PipelineConfig
    report: EvalReport | None = None


class _StageTimer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def run(self, stage: str, func, *args, **kwargs):
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        except Exception as err:
            raise PipelineStageError(stage, err) from err
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + (
                time.perf_counter() - start
            )


def _initial_posteriors(obs, config: PipelineConfig, oracle_activity):
    T, F = obs.num_frames, obs.num_bins
    scheme = config.initialization
    labeling = None
    if scheme == "proposed":
        priors, labeling = init_cluster(
            obs,
            num_speakers=config.num_speakers + config.extra_classes,
            segment_length=config.segment_length,
        )
        init = priors
    elif scheme == "oracle":
        if oracle_activity is None:
            raise ValueError("oracle initialization requires the true activity")
        init = init_oracle(np.asarray(oracle_activity)[:T])
    else:
        seed = stage_rng(config.seed, "init").integers(2**31)
        init = init_dirichlet(
            T,
            F,
            config.num_speakers + config.extra_classes,
            tied=(scheme == "dirichlet_tied"),
            seed=seed,
        )
    return init, labeling


def run_pipeline(
    mixture: TimeSignal,
    config: PipelineConfig,
    *,
    oracle_activity=None,
    references=None,
    reference_activity=None,
    output_dir=None,
    dump_dir=None,
    recording_id: str = "rec",
) -> PipelineResult:
    """Separate a multichannel meeting recording into per-speaker streams.

    ``oracle_activity`` feeds the oracle initialization; ``references`` and
    ``reference_activity`` (when given) produce an evaluation report.  With
    ``output_dir`` the per-speaker WAVs, RTTM, segment manifest, resolved
    configuration and model checkpoint are written there; ``dump_dir``
    additionally stores per-stage arrays.
    """
    if mixture.sample_rate != config.sample_rate:
        raise ValueError(
            f"input sample rate {mixture.sample_rate} does not match the "
            f"configured {config.sample_rate} (resampling is out of scope)"
        )
    timer = _StageTimer()
    dump = _Dumper(dump_dir)

    spec = timer.run(
        "stft", stft, mixture, config.frame_size, config.frame_shift
    )
    if config.single_precision:
        spec = dataclasses.replace(spec, data=spec.data.astype(np.complex64))
    dump.array("spectrogram", spec.data)

    if config.wpe:
        spec = timer.run(
            "wpe",
            wpe_dereverberate,
            spec,
            taps=config.wpe_taps,
            delay=config.wpe_delay,
            iterations=config.wpe_iterations,
        )
        dump.array("spectrogram_dereverbed", spec.data)

    obs = timer.run("normalize", normalize_observations, spec)

    init, labeling = timer.run(
        "initialize", _initial_posteriors, obs, config, oracle_activity
    )
    dump.array("initial_priors", np.asarray(init))

    hooks = {
        iteration: forced_fusion_hook(config.morphology)
        for iteration in config.fusion_iterations
    }
    model = CACGMM(
        n_classes=init.shape[-1],
        n_iterations=config.em_iterations,
        permutation_solver=config.permutation_solver,
    )
    timer.run("em", model.fit, obs, initialization=init, hooks=hooks)
    state = model.state_
    dump.array("priors", state.priors)
    dump.array("log_likelihood", np.asarray(state.log_likelihood_trace))

    noise_class = timer.run(
        "noise_id", identify_noise_class, state.priors, config.morphology
    )
    if config.final_fusion and state.num_classes > 2:
        fusion = timer.run(
            "final_fusion",
            fuse_classes,
            state,
            config.morphology,
            mode="threshold",
            exclude=noise_class,
        )
        state = fusion.state
        noise_class = int(fusion.class_map[noise_class])

    activity, segments = timer.run(
        "segmentation", segment_speech, state.priors, noise_class, config.morphology
    )
    dump.array("estimated_activity", activity)

    signals, records = timer.run(
        "extraction", extract_all, spec, state, segments
    )
    rttm = segments.to_rttm(config.frame_shift, config.sample_rate, recording_id)

    report = None
    if references is not None and reference_activity is not None:
        report = timer.run(
            "evaluate",
            evaluate,
            signals,
            references,
            reference_activity,
            activity,
            runtime_stats=dict(timer.timings),
        )

    result = PipelineResult(
        signals=tuple(signals),
        segments=segments,
        records=tuple(records),
        rttm=rttm,
        state=state,
        noise_class=noise_class,
        activity=activity,
        labeling=labeling,
        timings=dict(timer.timings),
        config=config,
        report=report,
    )
    if output_dir is not None:
        _write_outputs(result, Path(output_dir), recording_id)
    return result


class _Dumper:
    def __init__(self, dump_dir):
        self.path = Path(dump_dir) if dump_dir is not None else None
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)

    def array(self, name: str, values) -> None:
        if self.path is not None:
            np.save(self.path / f"{name}.npy", np.asarray(values))


def _write_outputs(result: PipelineResult, out: Path, recording_id: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for idx, signal in enumerate(result.signals):
        wav_io.write_wav(out / f"spk{idx}.wav", signal)
    (out / "segments.rttm").write_text(result.rttm)
    manifest = {
        "recording_id": recording_id,
        "noise_class": result.noise_class,
        "num_speakers": len(result.signals),
        "segments": [dataclasses.asdict(r) for r in result.records],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    (out / "config.json").write_text(result.config.to_json())
    np.save(out / "est_activity.npy", result.activity)
    save_state(out / "state.npz", result.state, noise_class=result.noise_class)
    if result.report is not None:
        (out / "report.json").write_text(result.report.to_json())


class MeetingSeparator(BaseEstimator):
    """Estimator facade over the pipeline.

    ``fit`` runs the full separation on a ``[num_samples, M]`` waveform (or
    TimeSignal); ``transform`` returns the stacked per-speaker waveforms and
    ``predict`` the estimated frame activity.  Keyword parameters mirror
    :class:`PipelineConfig`.
    """

    def __init__(
        self,
        num_speakers: int = 2,
        sample_rate: int = 16000,
        frame_size: int = 1024,
        frame_shift: int = 256,
        em_iterations: int = 100,
        initialization: str = "proposed",
        seed: int | None = 0,
        segment_length: int = 30,
        extra_classes: int = 2,
        fusion_iterations: tuple[int, ...] = (10, 20),
        final_fusion: bool = True,
        wpe: bool = True,
        wpe_taps: int = 10,
        wpe_delay: int = 3,
        wpe_iterations: int = 3,
        permutation_solver: bool = True,
        single_precision: bool = False,
    ):
        self.num_speakers = num_speakers
        self.sample_rate = sample_rate
        self.frame_size = frame_size
        self.frame_shift = frame_shift
        self.em_iterations = em_iterations
        self.initialization = initialization
        self.seed = seed
        self.segment_length = segment_length
        self.extra_classes = extra_classes
        self.fusion_iterations = fusion_iterations
        self.final_fusion = final_fusion
        self.wpe = wpe
        self.wpe_taps = wpe_taps
        self.wpe_delay = wpe_delay
        self.wpe_iterations = wpe_iterations
        self.permutation_solver = permutation_solver
        self.single_precision = single_precision

    def _config(self) -> PipelineConfig:
        params = self.get_params()
        params["fusion_iterations"] = tuple(params["fusion_iterations"])
        return PipelineConfig(**params)

    def fit(self, X, y=None, *, oracle_activity=None):
        if not isinstance(X, TimeSignal):
            X = TimeSignal(samples=np.asarray(X), sample_rate=self.sample_rate)
        self.result_ = run_pipeline(
            X, self._config(), oracle_activity=oracle_activity
        )
        return self

    def transform(self, X=None):
        """Stacked [num_streams, num_samples] separated waveforms."""
        if not hasattr(self, "result_"):
            if X is None:
                raise ValueError("fit the separator first")
            self.fit(X)
        return np.stack(
            [signal.samples[:, 0] for signal in self.result_.signals]
        ) if self.result_.signals else np.zeros((0, 0))

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, **fit_params).transform()

    def predict(self, X=None):
        """Estimated boolean frame activity [T, num_streams]."""
        if not hasattr(self, "result_"):
            if X is None:
                raise ValueError("fit the separator first")
            self.fit(X)
        return self.result_.activity
