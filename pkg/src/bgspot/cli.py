"""``bgspot`` command line: synth, train, spot, eval, compare, stillframes, zones, inspect.

Exit codes: 0 success, 2 usage or input error, 3 corrupt data.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .container import (ContainerError, CorruptStreamError, DepthFrame, InsufficientDataError, SkeletonFrameRecord,
                        frame_rate_stats, read_session)
from .evaluation import (EvaluationError, compare_gesture_sets, false_positive_clips, gesture_zone,
                         match_detections, occupancy_map, spot_tracks, still_frames, tracked_seconds, write_pgm)
from .features import FeatureConfig, load_feature_config, read_key_values
from .gsn import (DetectionEvent, NetworkFormatError, isolated_accuracy, load_network, save_network,
                  split_examples, train_network)
from .skeleton import tracks_from_records
from .synth import AnnotationTrack, SynthConfig, annotated_sequences, gesture_examples, generate_session
from .templates import ALL_GESTURES, variants_of

logger = logging.getLogger("bgspot")

EXIT_OK, EXIT_USAGE, EXIT_CORRUPT = 0, 2, 3
DETECTIONS_SCHEMA = "bgspot.detections"
MIN_EXAMPLES, PAPER_EXAMPLES = 10, 80


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    inputs: list
    outputs: list
    config_path: str | None
    seed: int | None
    toolkit_version: str = __version__
    wall_clock_s: float = 0.0
    argv: list = field(default_factory=list)

    def to_dict(self):
        return {"schema": "bgspot.manifest", "version": 1, "subcommand": self.subcommand,
                "inputs": [str(p) for p in self.inputs], "outputs": [str(p) for p in self.outputs],
                "config_path": self.config_path, "seed": self.seed, "toolkit_version": self.toolkit_version,
                "wall_clock_s": self.wall_clock_s, "argv": list(self.argv)}

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def manifest_path(output: Path) -> Path:
    output = Path(output)
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


# -- io helpers ---------------------------------------------------------------------

def _load_tracks(path):
    header, frames = read_session(path)
    return header, tracks_from_records(f for f in frames if isinstance(f, SkeletonFrameRecord))


def _depth_frames(path):
    _, frames = read_session(path)
    return (f for f in frames if isinstance(f, DepthFrame))


def _load_network(path):
    try:
        return load_network(path)
    except NetworkFormatError as exc:
        raise UsageError("%s: %s" % (path, exc)) from None


def _load_annotations(path) -> AnnotationTrack:
    try:
        track = AnnotationTrack.load(path)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError("%s: %s" % (path, exc)) from None
    return track


def _write_json(doc, out):
    text = json.dumps(doc, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _emit(args, doc, text):
    """JSON (with --json or to a file) or a human table on stdout."""
    if args.out is not None:
        _write_json(doc, args.out)
        if not args.json:
            print(text)
    elif args.json:
        _write_json(doc, None)
    else:
        print(text)


def _hands(hand):
    return "both" if hand == "both" else (hand,)


def _feature_config(args):
    return load_feature_config(args.config) if getattr(args, "config", None) else None


# -- subcommands ------------------------------------------------------------------------

def cmd_synth(args):
    values = read_key_values(args.config) if args.config else {}
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("duration_s", "prompts_per_gesture", "intensity", "n_skeletons", "depth_hz"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    try:
        cfg = SynthConfig.from_mapping(values, **overrides)
    except (ValueError, KeyError) as exc:
        raise UsageError("bad synth config: %s" % exc) from None
    out = Path(args.out or ".")
    bgac, ann = generate_session(cfg, out)
    logger.info("wrote %s and %s", bgac, ann)
    return [], [bgac, ann], cfg.seed, out


def _training_examples(args):
    gestures = tuple(args.gestures.split(",")) if args.gestures else None
    fc = _feature_config(args) or FeatureConfig()
    if args.synthetic:
        gestures = gestures or ALL_GESTURES
        examples = {}
        for g in gestures:
            try:
                vs = variants_of(g)
            except KeyError as exc:
                raise UsageError(str(exc)) from None
            for v in vs:
                examples[(g, v.variant)] = gesture_examples(g, v.variant, n=args.synthetic, seed=args.seed or 0,
                                                            feature_config=fc)
        return examples, fc, []
    if not args.inputs or len(args.inputs) % 2:
        raise UsageError("train expects SESSION ANNOTATIONS pairs (or --synthetic N)")
    examples, inputs = {}, []
    for sess, ann in zip(args.inputs[::2], args.inputs[1::2]):
        track = _load_annotations(ann)
        if not len(track):
            raise UsageError("%s has no annotations" % ann)
        _, tracks = _load_tracks(sess)
        for key, seqs in annotated_sequences(tracks, track, fc).items():
            examples.setdefault(key, []).extend(seqs)
        inputs += [sess, ann]
    if gestures:
        missing = [g for g in gestures if not any(k[0] == g for k in examples)]
        if missing:
            raise UsageError("no annotated examples for: %s" % ", ".join(missing))
        examples = {k: v for k, v in examples.items() if k[0] in gestures}
    return examples, fc, inputs


def cmd_train(args):
    if args.out is None:
        raise UsageError("train needs --out NETWORK.gsn")
    examples, fc, inputs = _training_examples(args)
    if not examples:
        raise UsageError("no training examples")
    for key, seqs in examples.items():
        if len(seqs) < MIN_EXAMPLES:
            raise UsageError("%s/%s has %d examples; at least %d needed" % (key[0], key[1], len(seqs), MIN_EXAMPLES))
        if len(seqs) < PAPER_EXAMPLES:
            logger.warning("%s/%s has only %d examples (fewer than %d)", key[0], key[1], len(seqs), PAPER_EXAMPLES)
        short = [len(s) for s in seqs if len(s) < args.states]
        if short:
            raise UsageError("%s/%s has sequences shorter than %d states" % (key[0], key[1], args.states))
    seed = args.seed or 0
    train, test = split_examples(examples, 0.1, seed)
    net = train_network(train, n_states=args.states, seed=seed, feature_config=fc)
    acc = isolated_accuracy(net.variants, test)
    save_network(net, args.out)
    n_test = sum(len(v) for v in test.values())
    doc = {"schema": "bgspot.train", "version": 1, "network": str(args.out), "variants": ["%s/%s" % k for k in examples], "n_states": args.states,
           "n_train": sum(len(v) for v in train.values()), "n_test": n_test, "held_out_accuracy": acc}
    text = "trained %d variants (%d states); held-out isolated accuracy %.3f on %d sequences" % (
        len(net.variants), args.states, acc, n_test)
    if args.json:
        _write_json(doc, None)
    else:
        print(text)
    return inputs, [Path(args.out)], seed, Path(args.out)


def _check_features(net, args):
    fc = _feature_config(args)
    if fc is not None and fc != net.feature_config:
        raise UsageError("feature config %s does not match the network's %s" % (fc.as_dict(),
                                                                                net.feature_config.as_dict()))


def cmd_spot(args):
    net = _load_network(args.network)
    _check_features(net, args)
    _, tracks = _load_tracks(args.session)
    events = spot_tracks(net, tracks, _hands(args.hand))
    doc = {"schema": DETECTIONS_SCHEMA, "version": 1, "network": str(args.network), "session": str(args.session),
           "detections": [e.to_dict() for e in events]}
    lines = ["%-18s %-16s %5s %6s %10.0f %10.0f %8.2f" % (e.gesture_name, e.variant_name, e.skeleton_id,
                                                          e.hand_side, e.start_timestamp_ms, e.end_timestamp_ms,
                                                          e.log_likelihood_margin) for e in events]
    _emit(args, doc, "\n".join(["%d detections" % len(events)] + lines))
    return [args.network, args.session], [args.out] if args.out else [], None, args.out


def load_detections(path) -> list[DetectionEvent]:
    try:
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != DETECTIONS_SCHEMA:
            raise ValueError("not a detections file")
        return [DetectionEvent.from_dict(d) for d in doc["detections"]]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise UsageError("%s: %s" % (path, exc)) from None


def _person_seconds(session_path):
    _, tracks = _load_tracks(session_path)
    total = sum((t.times_ms[-1] - t.times_ms[0]) / 1000.0 for t in tracks.values() if len(t) > 1)
    tracked = sum(tracked_seconds(t) for t in tracks.values())
    return total or None, tracked or None


def cmd_eval(args):
    events = load_detections(args.detections)
    truth = _load_annotations(args.annotations)
    person_s = tracked_s = None
    inputs = [args.detections, args.annotations]
    if args.session:
        person_s, tracked_s = _person_seconds(args.session)
        inputs.append(args.session)
    rep = match_detections(events, truth, args.window_ms, person_s, tracked_s)
    doc = rep.to_dict()
    doc["schema"], doc["version"] = "bgspot.score_report", 1
    doc["false_positive_clips"] = false_positive_clips(rep)
    _emit(args, doc, rep.table())
    return inputs, [args.out] if args.out else [], None, args.out


def cmd_compare(args):
    a, b = _load_network(args.network_a), _load_network(args.network_b)
    _, tracks = _load_tracks(args.session)
    truth = _load_annotations(args.annotations) if args.annotations else None
    try:
        rep = compare_gesture_sets(a, b, tracks, truth, _hands(args.hand))
    except EvaluationError as exc:
        raise UsageError(str(exc)) from None
    doc = rep.to_dict()
    doc["schema"], doc["version"] = "bgspot.comparison", 1
    _emit(args, doc, rep.table())
    inputs = [args.network_a, args.network_b, args.session] + ([args.annotations] if args.annotations else [])
    return inputs, [args.out] if args.out else [], None, args.out


def cmd_stillframes(args):
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    intervals = still_frames(_depth_frames(args.session), args.threshold_mm, args.min_s)
    rows, outputs = [], []
    for k, iv in enumerate(intervals):
        row = {"start_index": iv.start_index, "end_index": iv.end_index, "start_ms": iv.start_ms,
               "end_ms": iv.end_ms, "duration_s": iv.duration_s, "middle_index": iv.middle_index}
        if out is not None:
            pgm = out / ("still_%03d.pgm" % k)
            write_pgm(pgm, iv.frame.depth_mm / 8191.0)
            row["frame_file"] = pgm.name
            outputs.append(pgm)
        rows.append(row)
    doc = {"schema": "bgspot.stillframes", "version": 1, "threshold_mm": args.threshold_mm,
           "min_duration_s": args.min_s, "intervals": rows}
    text = "\n".join(["%d still intervals" % len(rows)] +
                     ["%10.0f %10.0f  %6.1f s" % (r["start_ms"], r["end_ms"], r["duration_s"]) for r in rows])
    if out is not None:
        _write_json(doc, out / "stillframes.json")
        outputs.append(out / "stillframes.json")
    if args.json:
        _write_json(doc, None)
    else:
        print(text)
    return [args.session], outputs, None, out


def cmd_zones(args):
    truth = _load_annotations(args.annotations)
    wanted = [a for a in truth if args.gesture in (None, a.gesture_name)]
    if not wanted:
        raise UsageError("no annotations for gesture %r" % args.gesture)
    spans = sorted((a.start_ms, a.end_ms) for a in wanted)
    all_spans = sorted((a.start_ms, a.end_ms) for a in truth)

    def inside(ts, sp):
        return any(lo <= ts <= hi for lo, hi in sp)
    gesture_frames, background_frames = [], []
    for f in _depth_frames(args.session):
        if inside(f.timestamp_ms, spans):
            gesture_frames.append(f.pixels)
        elif not inside(f.timestamp_ms, all_spans):
            background_frames.append(f.pixels)
    try:
        g_map, b_map = occupancy_map(gesture_frames), occupancy_map(background_frames)
    except EvaluationError as exc:
        raise UsageError(str(exc)) from None
    zone = gesture_zone(g_map, b_map)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    files = {"gesture": out / "gesture_occupancy.pgm", "background": out / "background_occupancy.pgm",
             "zone": out / "zone.pgm"}
    for key, m in (("gesture", g_map), ("background", b_map), ("zone", zone)):
        write_pgm(files[key], m)
    doc = {"schema": "bgspot.zones", "version": 1, "gesture": args.gesture,
           "gesture_frames": g_map.n_frames, "background_frames": b_map.n_frames,
           "zone_pixels": int((zone.values > 0).sum()), "zone_max": float(zone.values.max()),
           "files": {k: v.name for k, v in files.items()}}
    _write_json(doc, out / "zones.json")
    if args.json:
        _write_json(doc, None)
    else:
        print("zone: %d pixels, max %.3f (gesture %d frames, background %d frames)" % (
            doc["zone_pixels"], doc["zone_max"], doc["gesture_frames"], doc["background_frames"]))
    return [args.session, args.annotations], list(files.values()) + [out / "zones.json"], None, out


def cmd_inspect(args):
    header, frames = read_session(args.session)
    try:
        stats = frame_rate_stats(frames)
    except InsufficientDataError as exc:
        raise UsageError("%s: %s" % (args.session, exc)) from None
    doc = {"schema": "bgspot.inspect", "version": 1,
           "header": {"format_version": header.format_version, "sensor_id": header.sensor_id,
                      "start_epoch_ms": header.start_epoch_ms, "stream_flags": int(header.stream_flags)},
           "streams": {name: {"frames": s.n_frames, "min_gap_ms": s.min_ms, "median_gap_ms": s.median_ms,
                              "max_gap_ms": s.max_ms, "nominal_hz": 1000.0 / s.median_ms if s.median_ms else None}
                       for name, s in stats.items()}}
    lines = ["sensor %s, format v%d, flags %s" % (header.sensor_id, header.format_version, header.stream_flags)]
    for name, s in doc["streams"].items():
        lines.append("%-9s %7d frames  ~%.1f Hz  gaps %.0f/%.0f/%.0f ms" % (
            name, s["frames"], s["nominal_hz"] or math.nan, s["min_gap_ms"], s["median_gap_ms"], s["max_gap_ms"]))
    _emit(args, doc, "\n".join(lines))
    return [args.session], [args.out] if args.out else [], None, args.out


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgspot", description="Gesture spotting against background activity.")
    p.add_argument("--version", action="version", version="bgspot " + __version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="key = value config file"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        sp.add_argument("--out", help="output file or directory")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic session"), "synth config file")
    s.add_argument("--duration-s", dest="duration_s", type=float)
    s.add_argument("--prompts", dest="prompts_per_gesture", type=int)
    s.add_argument("--intensity", choices=("quiet", "typical", "boisterous"))
    s.add_argument("--skeletons", dest="n_skeletons", type=int)
    s.add_argument("--depth-hz", dest="depth_hz", type=float)
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("train", help="train a spotting network"), "feature config file")
    s.add_argument("inputs", nargs="*", help="SESSION.bgac ANNOTATIONS.json pairs")
    s.add_argument("--gestures", help="comma-separated gesture names")
    s.add_argument("--states", type=int, default=4)
    s.add_argument("--synthetic", type=int, metavar="N", help="train on N synthetic clips per variant instead")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("spot", help="run a network over a session"), "feature config file")
    s.add_argument("network")
    s.add_argument("session")
    s.add_argument("--hand", choices=("left", "right", "both"), default="both")
    s.set_defaults(func=cmd_spot)

    s = common(sub.add_parser("eval", help="score detections against annotations"))
    s.add_argument("detections")
    s.add_argument("annotations")
    s.add_argument("--session", help="session for person-second normalisation")
    s.add_argument("--window-ms", type=float, default=2000.0)
    s.set_defaults(func=cmd_eval)

    s = common(sub.add_parser("compare", help="false positives of two gesture sets on one session"))
    s.add_argument("network_a")
    s.add_argument("network_b")
    s.add_argument("session")
    s.add_argument("--annotations", help="foreground annotations to exclude")
    s.add_argument("--hand", choices=("left", "right", "both"), default="both")
    s.set_defaults(func=cmd_compare)

    s = common(sub.add_parser("stillframes", help="find long still periods in the depth stream"))
    s.add_argument("session")
    s.add_argument("--threshold-mm", type=float, default=8.0)
    s.add_argument("--min-s", type=float, default=5.0)
    s.set_defaults(func=cmd_stillframes)

    s = common(sub.add_parser("zones", help="gesture occupancy zone from depth player masks"))
    s.add_argument("session")
    s.add_argument("annotations")
    s.add_argument("--gesture", help="restrict the gesture map to one gesture")
    s.set_defaults(func=cmd_zones)

    s = common(sub.add_parser("inspect", help="header and frame-rate statistics"))
    s.add_argument("session")
    s.set_defaults(func=cmd_inspect)
    return p


def _configure_logging():
    level = os.environ.get("BGAC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _configure_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    t0 = time.perf_counter()
    try:
        inputs, outputs, seed, anchor = args.func(args)
    except CorruptStreamError as exc:
        print("bgspot: corrupt data at byte offset %d: %s" % (exc.offset, exc), file=sys.stderr)
        return EXIT_CORRUPT
    except (UsageError, ContainerError, EvaluationError, FileNotFoundError, IsADirectoryError) as exc:
        print("bgspot: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    if anchor is not None:
        man = RunManifest(args.command, inputs, outputs, getattr(args, "config", None), seed,
                          wall_clock_s=time.perf_counter() - t0, argv=argv)
        man.write(manifest_path(Path(anchor)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
