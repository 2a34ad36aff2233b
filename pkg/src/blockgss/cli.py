"""Command line: ``blockgss run | bench | scene``."""

import argparse
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .audio_io import StreamingReader, WavFormatError, read_wav, write_wav
from .diarization import SegmentParseError, format_segments, parse_segments
from .evaluation import SceneSpec, generate_scene, overlapped, score_utterance
from .offline import OfflineConfig
from .online import OnlineConfig
from .pipeline import bench, process_offline, process_online
from .report import RunReport, UtteranceRecord, speech_union_sec
from .stft import StftConfig


class UsageError(Exception):
    pass


def _add_engine_flags(p):
    p.add_argument("--block-frames", type=int, default=150, help="online block length L")
    p.add_argument("--context-frames", type=int, default=150, help="online pre-context C")
    p.add_argument("--strategy", choices=("accumulation", "decay"), default="decay")
    p.add_argument("--eta", type=float, default=0.9, help="decay factor for --strategy decay")
    p.add_argument("--offline-context-sec", type=float, default=10.0)
    p.add_argument("--em-iterations", type=int, default=20)
    p.add_argument("--reference", type=int, default=None,
                   help="fixed reference channel (default: select by output SNR)")
    p.add_argument("--threads", type=int, default=1, help="BLAS/LAPACK threads")


def _add_input_flags(p, required=True):
    p.add_argument("input", nargs="?", help="multichannel 16 kHz / 16-bit WAV")
    p.add_argument("--ch", action="append", default=[], metavar="PATH",
                   help="mono WAV per channel, repeat in channel order")
    p.add_argument("--segments", required=required, help="segment file: label start end")


def _add_scene_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=60.0, help="seconds")
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--snr", type=float, default=15.0, help="dB; inf disables noise")
    p.add_argument("--moving", action="store_true", help="sources drift during utterances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockgss", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="enhance a session and write one WAV per utterance")
    _add_input_flags(run)
    _add_engine_flags(run)
    run.add_argument("--mode", choices=("online", "offline"), default="online")
    run.add_argument("--out", required=True, help="output directory for enhanced WAVs")
    run.add_argument("--report", help="report path (default: stdout)")
    run.add_argument("--refs", help="directory of <label>.wav speaker images for SI-SDR")
    run.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    b = sub.add_parser("bench", help="time online and offline modes on identical input")
    _add_input_flags(b, required=False)
    _add_engine_flags(b)
    _add_scene_flags(b)
    b.add_argument("--report", help="report path (default: stdout)")

    s = sub.add_parser("scene", help="write a synthetic scene: mixture, segments, images")
    _add_scene_flags(s)
    s.add_argument("--out", required=True, help="output directory")
    return parser


def _configs(args):
    online = OnlineConfig(block_len_frames=args.block_frames,
                          context_len_frames=args.context_frames,
                          strategy=args.strategy, eta=args.eta, reference=args.reference)
    offline = OfflineConfig(context_sec=args.offline_context_sec,
                            em_iterations=args.em_iterations, reference=args.reference)
    return online, offline


def _sources(args):
    if args.input and args.ch:
        raise UsageError("give either a multichannel input or --ch files, not both")
    if args.input:
        return [args.input]
    if args.ch:
        return list(args.ch)
    raise UsageError("no input: give a multichannel WAV or --ch files")


def _open(args) -> StreamingReader:
    reader = StreamingReader(_sources(args))
    if reader.num_channels < 2:
        reader.close()
        raise UsageError(f"need at least 2 channels, got {reader.num_channels}")
    return reader


def _read_all(args) -> np.ndarray:
    return np.concatenate([read_wav(p) for p in _sources(args)])


def _load_segments(path):
    if not Path(path).exists():
        raise FileNotFoundError(2, "no such file", str(path))
    with open(path, encoding="utf-8") as fh:
        return parse_segments(fh)


def _load_refs(directory, labels, num_channels, num_samples):
    """Speaker images keyed by label; mono files are used for every channel."""
    images = {}
    for label in labels:
        path = Path(directory) / f"{label}.wav"
        if not path.exists():
            continue
        img = read_wav(path)
        if img.shape[0] == 1:
            img = np.repeat(img, num_channels, axis=0)
        if img.shape != (num_channels, num_samples):
            raise UsageError(f"{path}: shape {img.shape}, expected "
                             f"{(num_channels, num_samples)}")
        images[label] = img
    return images


def output_name(label, start_sec, end_sec) -> str:
    return f"{label}_{int(round(start_sec * 1000))}_{int(round(end_sec * 1000))}.wav"


def _utt_times(utt, stft):
    per_frame = stft.hop_samples / stft.sample_rate_hz
    return utt.start_frame * per_frame, (utt.end_frame + 1) * per_frame


def _records(result, stft, out_dir=None, images=None, mixture=None):
    records = []
    for utt, wav in zip(result.utterances, result.audio):
        start, end = _utt_times(utt, stft)
        rec = UtteranceRecord(utt.label, start, end)
        if out_dir is not None:
            rec.path = str(Path(out_dir) / output_name(utt.label, start, end))
        refs = np.unique(utt.references)
        rec.reference_channel = int(refs[0]) if refs.size == 1 else None
        if images and utt.label in images:
            rec.si_sdr_db, rec.mixture_si_sdr_db = score_utterance(
                utt, images[utt.label], mixture, stft)
        records.append(rec)
    return records


def _report(result, segments, stft, records) -> RunReport:
    extra = {"lookahead_violations": result.lookahead_violations} \
        if result.mode == "online" else {}
    overl = [overlapped(u, result.activities) for u in result.utterances]
    if records and any(r.si_sdr_db is not None for r in records):
        gains = [r.si_sdr_db - r.mixture_si_sdr_db for r, o in zip(records, overl)
                 if o and r.si_sdr_db is not None]
        if gains:
            extra["overlapped_si_sdr_gain_db"] = f"{np.mean(gains):.3f}"
    speech = speech_union_sec(segments, result.audio_sec)
    return RunReport(result.mode, result.audio_sec, speech, result.processing_sec,
                     records, extra)


def _emit(text, path):
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    stft = StftConfig()
    online_cfg, offline_cfg = _configs(args)
    segments = _load_segments(args.segments)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def save(utt, wav):
        start, end = _utt_times(utt, stft)
        write_wav(out_dir / output_name(utt.label, start, end), wav)

    with threadpool_limits(args.threads), _open(args) as reader:
        if args.mode == "online":
            result = process_online(reader, segments, online_cfg, stft, save)
        else:
            reader.allow(reader.num_samples)
            mixture = reader.read(reader.num_samples)
            result = process_offline(mixture, segments, offline_cfg, stft, save)

    images, mixture = None, None
    if args.refs:
        mixture = _read_all(args)
        labels = result.activities.labels[1:]
        images = _load_refs(args.refs, labels, *mixture.shape)
    report = _report(result, segments, stft,
                     _records(result, stft, out_dir, images, mixture))
    _emit(report.to_text(), args.report)
    if not args.no_figures:
        from .plotting import write_figures
        prefix = Path(args.report).with_suffix("") if args.report else out_dir / "report"
        write_figures(report, str(prefix))
    return 0


def cmd_bench(args) -> int:
    stft = StftConfig()
    online_cfg, offline_cfg = _configs(args)
    if args.input or args.ch:
        if not args.segments:
            raise UsageError("--segments is required with an input session")
        segments = _load_segments(args.segments)
        mixture = _read_all(args)
        if mixture.shape[0] < 2:
            raise UsageError(f"need at least 2 channels, got {mixture.shape[0]}")
    else:
        scene = generate_scene(_scene_spec(args))
        mixture, segments = scene.mixture, scene.segments
    with threadpool_limits(args.threads):
        result = bench(mixture, segments, online_cfg, offline_cfg, stft)
    on = _report(result.online, segments, stft, _records(result.online, stft))
    off = _report(result.offline, segments, stft, _records(result.offline, stft))
    lines = [
        f"audio_sec={on.audio_sec:.3f}",
        f"speech_sec={on.speech_sec:.3f}",
        f"online_processing_sec={on.processing_sec:.3f}",
        f"offline_processing_sec={off.processing_sec:.3f}",
        f"online_real_time_factor={on.real_time_factor:.4f}",
        f"offline_real_time_factor={off.real_time_factor:.4f}",
        f"speedup={result.speedup:.3f}",
        f"lookahead_violations={result.online.lookahead_violations}",
        f"threads={args.threads}",
    ]
    for rep in (on, off):
        lines += [f"{rep.mode}.{k}={v}" for k, v in rep.totals().items() if k != "mode"]
    _emit("\n".join(lines) + "\n", args.report)
    return 0


def _scene_spec(args) -> SceneSpec:
    return SceneSpec(seed=args.seed, num_speakers=args.speakers, num_channels=args.channels,
                     duration_sec=args.duration, overlap_ratio=args.overlap,
                     snr_db=args.snr, moving=args.moving)


def cmd_scene(args) -> int:
    scene = generate_scene(_scene_spec(args))
    out = Path(args.out)
    write_wav(out / "mixture.wav", scene.mixture)
    (out / "segments.txt").write_text(format_segments(scene.segments))
    for label, img in zip(scene.labels, scene.images):
        write_wav(out / "refs" / f"{label}.wav", img)
    print(f"wrote {out / 'mixture.wav'} ({scene.mixture.shape[0]} channels, "
          f"{len(scene.segments)} utterances)")
    return 0


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "scene": cmd_scene}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"blockgss: error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (UsageError, WavFormatError, SegmentParseError, ValueError) as exc:
        print(f"blockgss: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
