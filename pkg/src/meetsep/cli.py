"""Command line interface: simulate, separate, evaluate, run-all."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io as wav_io
from .activity import MorphologyConfig
from .evaluate import evaluate
from .pipeline import PipelineConfig, PipelineStageError, run_pipeline
from .simulate import make_meeting_spec, meeting_summary_json, simulate_meeting
from .spectral import TimeSignal


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file (flags override)")
    parser.add_argument("--num-speakers", "-k", type=int)
    parser.add_argument("--sample-rate", type=int)
    parser.add_argument("--frame-size", type=int)
    parser.add_argument("--frame-shift", type=int)
    parser.add_argument("--em-iterations", type=int)
    parser.add_argument(
        "--init",
        dest="initialization",
        choices=("proposed", "dirichlet", "dirichlet_tied", "oracle"),
    )
    parser.add_argument("--seed", type=int)
    parser.add_argument("--segment-length", type=int)
    parser.add_argument("--extra-classes", type=int)
    parser.add_argument(
        "--fusion-iterations",
        type=str,
        help="comma separated EM iteration indices for forced fusions",
    )
    parser.add_argument("--final-fusion", dest="final_fusion",
                        action=argparse.BooleanOptionalAction)
    parser.add_argument("--wpe", dest="wpe", action=argparse.BooleanOptionalAction)
    parser.add_argument("--wpe-taps", type=int)
    parser.add_argument("--wpe-delay", type=int)
    parser.add_argument("--wpe-iterations", type=int)
    parser.add_argument("--permutation-solver", dest="permutation_solver",
                        action=argparse.BooleanOptionalAction)
    parser.add_argument("--single-precision", dest="single_precision",
                        action=argparse.BooleanOptionalAction)
    parser.add_argument("--smooth-window", type=int)
    parser.add_argument("--activity-threshold", type=float)
    parser.add_argument("--fuse-iou-threshold", type=float)
    parser.add_argument("--segment-window", type=int)
    parser.add_argument("--segment-threshold", type=float)


_MORPH_FLAGS = {
    "smooth_window",
    "activity_threshold",
    "fuse_iou_threshold",
    "segment_window",
    "segment_threshold",
}


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    base: dict = {}
    if args.config is not None:
        base = json.loads(Path(args.config).read_text())
    morphology = dict(base.pop("morphology", {}))
    for name in _MORPH_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            morphology[name] = value
    for field in dataclasses.fields(PipelineConfig):
        if field.name == "morphology":
            continue
        value = getattr(args, field.name, None)
        if value is not None:
            base[field.name] = value
    if "fusion_iterations" in base and isinstance(base["fusion_iterations"], str):
        text = base["fusion_iterations"].strip()
        base["fusion_iterations"] = (
            tuple(int(part) for part in text.split(",") if part) if text else ()
        )
    if "fusion_iterations" in base:
        base["fusion_iterations"] = tuple(base["fusion_iterations"])
    if "num_speakers" not in base:
        raise SystemExit("--num-speakers is required (or provide it in --config)")
    base["morphology"] = MorphologyConfig(**morphology)
    return PipelineConfig(**base)


def _cmd_init_config(args) -> int:
    config = PipelineConfig(num_speakers=args.num_speakers)
    text = config.to_json()
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_simulate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = make_meeting_spec(
        num_speakers=args.num_speakers,
        duration=args.duration,
        overlap=args.overlap,
        snr_db=args.snr,
        seed=args.seed,
        num_mics=args.num_mics,
        sample_rate=args.sample_rate,
    )
    meeting = simulate_meeting(
        spec, seed=args.seed, frame_size=args.frame_size, frame_shift=args.frame_shift
    )
    wav_io.write_wav(out / "mixture.wav", meeting.mixture)
    for k, reference in enumerate(meeting.references):
        wav_io.write_wav(out / f"ref_spk{k}.wav", reference)
    wav_io.write_wav(out / "noise.wav", meeting.noise)
    np.save(out / "activity.npy", meeting.activity)
    (out / "meeting.json").write_text(meeting_summary_json(spec))
    print(f"wrote {args.num_speakers}-speaker meeting to {out}")
    return 0


def _cmd_separate(args) -> int:
    config = _build_config(args)
    mixture = wav_io.read_wav(args.input)
    oracle_activity = None
    if args.oracle_activity is not None:
        oracle_activity = np.load(args.oracle_activity)
    result = run_pipeline(
        mixture,
        config,
        oracle_activity=oracle_activity,
        output_dir=args.out_dir,
        dump_dir=args.dump_dir,
        recording_id=args.recording_id,
    )
    print(
        f"separated {len(result.signals)} streams "
        f"({sum(len(s) for s in result.segments.segments)} segments) "
        f"into {args.out_dir}"
    )
    return 0


def _load_meeting_dir(meeting_dir: Path):
    references = []
    for k in range(256):
        path = meeting_dir / f"ref_spk{k}.wav"
        if not path.exists():
            break
        references.append(wav_io.read_wav(path).samples[:, 0])
    activity = np.load(meeting_dir / "activity.npy")
    return references, activity


def _cmd_evaluate(args) -> int:
    est_dir = Path(args.estimates_dir)
    estimates = []
    for k in range(256):
        path = est_dir / f"spk{k}.wav"
        if not path.exists():
            break
        estimates.append(wav_io.read_wav(path).samples[:, 0])
    est_activity = np.load(est_dir / "est_activity.npy")
    references, activity = _load_meeting_dir(Path(args.meeting_dir))
    report = evaluate(estimates, references, activity, est_activity)
    print(report.to_json())
    if args.out is not None:
        Path(args.out).write_text(report.to_json())
    return 0


def _cmd_run_all(args) -> int:
    out = Path(args.out_dir)
    config = _build_config(args)
    spec = make_meeting_spec(
        num_speakers=config.num_speakers,
        duration=args.duration,
        overlap=args.overlap,
        snr_db=args.snr,
        seed=config.seed,
        num_mics=args.num_mics,
        sample_rate=config.sample_rate,
    )
    meeting = simulate_meeting(
        spec, seed=config.seed,
        frame_size=config.frame_size, frame_shift=config.frame_shift,
    )
    sim_dir = out / "meeting"
    sim_dir.mkdir(parents=True, exist_ok=True)
    wav_io.write_wav(sim_dir / "mixture.wav", meeting.mixture)
    for k, reference in enumerate(meeting.references):
        wav_io.write_wav(sim_dir / f"ref_spk{k}.wav", reference)
    np.save(sim_dir / "activity.npy", meeting.activity)

    references = [r.samples[:, 0] for r in meeting.references]
    result = run_pipeline(
        meeting.mixture,
        config,
        oracle_activity=meeting.activity,
        references=references,
        reference_activity=meeting.activity,
        output_dir=out / "separated",
        dump_dir=args.dump_dir,
    )
    print(result.report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meetsep",
        description="Unsupervised multichannel meeting separation and diarization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic meeting")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--num-speakers", "-k", type=int, required=True)
    p_sim.add_argument("--duration", type=float, default=60.0)
    p_sim.add_argument("--overlap", type=float, default=0.3)
    p_sim.add_argument("--snr", type=float, default=20.0)
    p_sim.add_argument("--num-mics", type=int, default=4)
    p_sim.add_argument("--sample-rate", type=int, default=16000)
    p_sim.add_argument("--frame-size", type=int, default=1024)
    p_sim.add_argument("--frame-shift", type=int, default=256)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.set_defaults(func=_cmd_simulate)

    p_sep = sub.add_parser("separate", help="separate a multichannel WAV")
    p_sep.add_argument("--input", required=True)
    p_sep.add_argument("--out-dir", required=True)
    p_sep.add_argument("--oracle-activity", help="activity .npy for oracle init")
    p_sep.add_argument("--dump-dir", help="directory for per-stage array dumps")
    p_sep.add_argument("--recording-id", default="rec")
    _add_config_flags(p_sep)
    p_sep.set_defaults(func=_cmd_separate)

    p_eval = sub.add_parser("evaluate", help="score separated streams")
    p_eval.add_argument("--estimates-dir", required=True)
    p_eval.add_argument("--meeting-dir", required=True)
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_all = sub.add_parser("run-all", help="simulate, separate and evaluate")
    p_all.add_argument("--out-dir", required=True)
    p_all.add_argument("--duration", type=float, default=60.0)
    p_all.add_argument("--overlap", type=float, default=0.3)
    p_all.add_argument("--snr", type=float, default=20.0)
    p_all.add_argument("--num-mics", type=int, default=4)
    p_all.add_argument("--dump-dir")
    _add_config_flags(p_all)
    p_all.set_defaults(func=_cmd_run_all)

    p_cfg = sub.add_parser("init-config", help="write the default configuration")
    p_cfg.add_argument("--num-speakers", "-k", type=int, required=True)
    p_cfg.add_argument("--out", help="target file (stdout otherwise)")
    p_cfg.set_defaults(func=_cmd_init_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineStageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
