"""Scoring detections against ground truth, and the dataset analyses.

Matching rule: a detection is a true positive when its end timestamp falls
in ``[start, end + window]`` of a same-gesture truth interval on the same
(skeleton, hand). A truth interval takes at most one true positive; further
matches are absorbed and count as neither TP nor FP.
"""

from __future__ import annotations

import json
import math
import os
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .container import DepthFrame
from .features import extract_sequence
from .gsn import DetectionEvent, GestureSpottingNetwork, spot
from .skeleton import MAX_GAP_MS, Side
from .templates import REDESIGN_PAIRS

DEFAULT_WINDOW_MS = 2000.0
DEFAULT_STILL_THRESHOLD_MM = 8.0
DEFAULT_STILL_MIN_S = 5.0


class EvaluationError(ValueError):
    """Inputs that cannot be compared (dimension or configuration mismatch)."""


def fp_interval(fp_count: int, person_seconds: float) -> float:
    """Person-seconds of activity per false positive (inf when there are none)."""
    if person_seconds <= 0:
        raise EvaluationError("person_seconds must be positive")
    return math.inf if fp_count == 0 else person_seconds / fp_count


def _interval_json(x):
    return None if x is None or math.isinf(x) else x


def _interval_text(x):
    if x is None:
        return "-"
    return "none" if math.isinf(x) else "%.1f" % x


@dataclass
class GestureScore:
    gesture_name: str
    n_truth: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    absorbed: int = 0

    @property
    def tp_rate(self):
        return self.tp / self.n_truth if self.n_truth else None


@dataclass
class ScoreReport:
    """Per-gesture counts plus FP intervals under both time normalisations.

    ``person_seconds`` is total observed time; ``tracked_person_seconds`` only
    counts time with a tracked skeleton. Either may be None when unknown.
    """

    gestures: dict
    window_ms: float = DEFAULT_WINDOW_MS
    person_seconds: float | None = None
    tracked_person_seconds: float | None = None
    false_positives: list = field(default_factory=list, repr=False)

    def _fields(self, tp, fp, fn, n_truth, absorbed):
        d = {"n_truth": n_truth, "tp": tp, "fp": fp, "fn": fn, "absorbed": absorbed,
             "tp_rate": tp / n_truth if n_truth else None, "fp_count": fp}
        for key, secs in (("fp_interval_s", self.person_seconds),
                          ("fp_interval_tracked_s", self.tracked_person_seconds)):
            d[key] = fp_interval(fp, secs) if secs else None
        return d

    def gesture_dict(self, name):
        g = self.gestures[name]
        return self._fields(g.tp, g.fp, g.fn, g.n_truth, g.absorbed)

    @property
    def totals(self):
        gs = self.gestures.values()
        return self._fields(sum(g.tp for g in gs), sum(g.fp for g in gs), sum(g.fn for g in gs),
                            sum(g.n_truth for g in gs), sum(g.absorbed for g in gs))

    def to_dict(self):
        def clean(d):
            return {k: (_interval_json(v) if k.startswith("fp_interval") else v) for k, v in d.items()}
        return {
            "window_ms": self.window_ms,
            "person_seconds": self.person_seconds,
            "tracked_person_seconds": self.tracked_person_seconds,
            "gestures": {name: clean(self.gesture_dict(name)) for name in self.gestures},
            "totals": clean(self.totals),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        head = ("gesture", "truth", "TP", "FN", "FP", "TP rate", "s/FP", "s/FP tracked")
        rows = []
        for name in list(self.gestures) + ["TOTAL"]:
            d = self.totals if name == "TOTAL" else self.gesture_dict(name)
            rate = "-" if d["tp_rate"] is None else "%.3f" % d["tp_rate"]
            rows.append((name, str(d["n_truth"]), str(d["tp"]), str(d["fn"]), str(d["fp"]), rate,
                         _interval_text(d["fp_interval_s"]), _interval_text(d["fp_interval_tracked_s"])))
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]

        def fmt(r):
            return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows])


def _side(x):
    return None if x is None else Side(getattr(x, "value", x)).value


def _stream_key(skeleton_id, hand):
    return (skeleton_id, _side(hand))


def match_detections(events, truth, window_ms: float = DEFAULT_WINDOW_MS, person_seconds=None,
                     tracked_person_seconds=None) -> ScoreReport:
    """Score ``events`` against ``truth`` annotations (see module docstring).

    Events without a skeleton id or hand side match truths on any stream.
    Input order does not matter; events are processed by end time.
    """
    truths = list(getattr(truth, "annotations", truth))
    events = sorted(events, key=lambda e: (e.end_timestamp_ms, e.start_timestamp_ms, e.gesture_name,
                                           e.variant_name, -1 if e.skeleton_id is None else e.skeleton_id,
                                           _side(e.hand_side) or ""))
    scores = {}
    for name in sorted({a.gesture_name for a in truths} | {e.gesture_name for e in events}):
        scores[name] = GestureScore(name)
    by_gesture = defaultdict(list)
    for a in sorted(truths, key=lambda a: (a.start_ms, a.end_ms)):
        scores[a.gesture_name].n_truth += 1
        by_gesture[a.gesture_name].append(a)
    matched = set()
    fps = []
    for e in events:
        key = _stream_key(e.skeleton_id, e.hand_side)
        hits = [a for a in by_gesture.get(e.gesture_name, ())
                if a.start_ms <= e.end_timestamp_ms <= a.end_ms + window_ms
                and (key[0] is None or a.skeleton_id == key[0])
                and (key[1] is None or _side(a.hand_side) == key[1])]
        fresh = [a for a in hits if id(a) not in matched]
        if fresh:
            matched.add(id(fresh[0]))
            scores[e.gesture_name].tp += 1
        elif hits:
            scores[e.gesture_name].absorbed += 1
        else:
            scores[e.gesture_name].fp += 1
            fps.append(e)
    for s in scores.values():
        s.fn = s.n_truth - s.tp
    return ScoreReport(scores, window_ms, person_seconds, tracked_person_seconds, fps)


def false_positive_clips(report: ScoreReport, pad_ms: float = 1000.0) -> list[dict]:
    """Time ranges of every false positive, padded, for manual review."""
    return [{"gesture_name": e.gesture_name, "variant_name": e.variant_name, "skeleton_id": e.skeleton_id,
             "hand_side": _side(e.hand_side), "start_ms": e.start_timestamp_ms - pad_ms,
             "end_ms": e.end_timestamp_ms + pad_ms} for e in report.false_positives]


def tracked_seconds(track, max_gap_ms: float = MAX_GAP_MS) -> float:
    """Seconds covered by consecutive frames no more than ``max_gap_ms`` apart."""
    t = np.asarray(track.times_ms, dtype=np.float64)
    if len(t) < 2:
        return 0.0
    gaps = np.diff(t)
    return float(gaps[gaps <= max_gap_ms].sum()) / 1000.0


# -- spotting over sessions ----------------------------------------------------

def _hands(hands):
    if hands in (None, "both"):
        return (Side.LEFT, Side.RIGHT)
    if isinstance(hands, (str, Side)):
        return (Side(hands),)
    return tuple(Side(h) for h in hands)


def spot_tracks(network: GestureSpottingNetwork, tracks: dict, hands="both") -> list[DetectionEvent]:
    """Spot every hand of every skeleton track; events carry their stream's ids."""
    out = []
    for pid in sorted(tracks):
        for side in _hands(hands):
            seqs = extract_sequence(tracks[pid], side, network.feature_config)
            for e in spot(network, seqs):
                e.skeleton_id = pid
                e.hand_side = side.value
                out.append(e)
    return out


def _ratio(a, b):
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


@dataclass
class ComparisonRow:
    gesture_a: str
    gesture_b: str
    fp_a: int
    fp_b: int

    @property
    def ratio(self):
        return _ratio(self.fp_a, self.fp_b)


@dataclass
class ComparisonReport:
    rows: list
    fp_a: dict
    fp_b: dict

    @property
    def total_a(self):
        return sum(self.fp_a.values())

    @property
    def total_b(self):
        return sum(self.fp_b.values())

    @property
    def total_ratio(self):
        return _ratio(self.total_a, self.total_b)

    def to_dict(self):
        def r(x):
            return None if math.isinf(x) else x
        return {"pairs": [{"gesture_a": p.gesture_a, "gesture_b": p.gesture_b, "fp_a": p.fp_a, "fp_b": p.fp_b,
                           "ratio": r(p.ratio)} for p in self.rows],
                "fp_a": dict(self.fp_a), "fp_b": dict(self.fp_b),
                "total_a": self.total_a, "total_b": self.total_b, "total_ratio": r(self.total_ratio)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def table(self) -> str:
        lines = ["%-20s %-20s %8s %8s %8s" % ("set A", "set B", "FP A", "FP B", "A/B")]
        for p in self.rows + [ComparisonRow("TOTAL", "", self.total_a, self.total_b)]:
            ratio = "inf" if math.isinf(p.ratio) else "%.2f" % p.ratio
            lines.append("%-20s %-20s %8d %8d %8s" % (p.gesture_a, p.gesture_b, p.fp_a, p.fp_b, ratio))
        return "\n".join(lines)


def pair_gestures(names_a, names_b) -> list[tuple[str, str]]:
    """Shared names pair with themselves, then redesign pairs, then list position."""
    names_a, names_b = list(names_a), list(names_b)
    pairs, left_b = [], list(names_b)
    rest_a = []
    for a in names_a:
        if a in left_b:
            pairs.append((a, a))
            left_b.remove(a)
        elif REDESIGN_PAIRS.get(a) in left_b:
            pairs.append((a, REDESIGN_PAIRS[a]))
            left_b.remove(REDESIGN_PAIRS[a])
        else:
            rest_a.append(a)
    pairs += list(zip(rest_a, left_b))
    return pairs


def compare_gesture_sets(network_a: GestureSpottingNetwork, network_b: GestureSpottingNetwork, tracks,
                         truth=None, hands="both", window_ms: float = DEFAULT_WINDOW_MS) -> ComparisonReport:
    """False positives of two networks over the same background streams.

    ``tracks`` maps skeleton ids to tracks (or is a session exposing
    ``tracks()``). With ``truth`` given, detections matching it are not FPs.
    """
    if network_a.feature_config != network_b.feature_config:
        raise EvaluationError("networks were trained with different feature configurations")
    if hasattr(tracks, "tracks"):
        tracks = tracks.tracks()
    counts = []
    for net in (network_a, network_b):
        events = spot_tracks(net, tracks, hands)
        rep = match_detections(events, truth or [], window_ms)
        fp = {g: 0 for g in net.gesture_names}
        for e in rep.false_positives:
            fp[e.gesture_name] += 1
        counts.append(fp)
    rows = [ComparisonRow(a, b, counts[0][a], counts[1][b])
            for a, b in pair_gestures(network_a.gesture_names, network_b.gesture_names)]
    return ComparisonReport(rows, counts[0], counts[1])


# -- still frames ----------------------------------------------------------------

@dataclass
class StillInterval:
    start_index: int
    end_index: int  # inclusive
    start_ms: float
    end_ms: float
    frame: DepthFrame = field(repr=False, default=None)

    @property
    def duration_s(self):
        return (self.end_ms - self.start_ms) / 1000.0

    @property
    def middle_index(self):
        return (self.start_index + self.end_index) // 2


def _depth_plane(f):
    if isinstance(f, DepthFrame):
        return f.depth_mm.astype(np.float64)
    return np.asarray(f, dtype=np.float64)


def _timestamp(f, i, period_ms):
    ts = getattr(f, "timestamp_ms", None)
    return float(i * period_ms if ts is None else ts)


def still_frames(frames, diff_threshold_mm: float = DEFAULT_STILL_THRESHOLD_MM,
                 min_duration_s: float = DEFAULT_STILL_MIN_S, period_ms: float = 1000.0 / 30) -> list[StillInterval]:
    """Maximal runs whose consecutive mean absolute depth differences stay below the threshold.

    Frames may be DepthFrames or plain depth arrays (timed at ``period_ms``).
    Each interval carries its middle frame; only the frames a future middle
    may need are buffered.
    """
    if min_duration_s <= 0:
        raise EvaluationError("min_duration_s must be positive")
    out = []
    prev = None
    run_start = None  # (index, ms)
    buf = []  # (index, frame) from the current middle candidate onward
    last = None

    def close(end_i, end_ms):
        if run_start is not None and (end_ms - run_start[1]) >= min_duration_s * 1000.0:
            mid = (run_start[0] + end_i) // 2
            frame = next(f for i, f in buf if i == mid)
            out.append(StillInterval(run_start[0], end_i, run_start[1], end_ms, frame))

    for i, f in enumerate(frames):
        plane = _depth_plane(f)
        ts = _timestamp(f, i, period_ms)
        if prev is not None:
            if plane.shape != prev.shape:
                raise EvaluationError("depth frames differ in size")
            if np.abs(plane - prev).mean() < diff_threshold_mm:
                if run_start is None:
                    run_start = last
                    buf = [(last[0], last[2])]
                buf.append((i, f))
                mid = (run_start[0] + i) // 2
                while buf and buf[0][0] < mid:
                    buf.pop(0)
            else:
                close(last[0], last[1])
                run_start, buf = None, []
        prev = plane
        last = (i, ts, f)
    if last is not None:
        close(last[0], last[1])
    return out


# -- occupancy ----------------------------------------------------------------------

@dataclass
class OccupancyMap:
    values: np.ndarray  # (height, width) fraction of frames with a body at the pixel
    n_frames: int = 0

    @property
    def shape(self):
        return self.values.shape


def _player_plane(f):
    if isinstance(f, DepthFrame):
        return f.player_ids
    return np.asarray(f) & 0x7


def occupancy_map(frames) -> OccupancyMap:
    """Per-pixel fraction of frames whose player id is nonzero.

    Frames are DepthFrames or packed depth-pixel arrays.
    """
    acc = None
    n = 0
    for f in frames:
        body = _player_plane(f) != 0
        if acc is None:
            acc = np.zeros(body.shape, dtype=np.int64)
        elif body.shape != acc.shape:
            raise EvaluationError("frames differ in size")
        acc += body
        n += 1
    if n == 0:
        raise EvaluationError("occupancy needs at least one frame")
    return OccupancyMap(acc / n, n)


def gesture_zone(gesture_map: OccupancyMap, background_map: OccupancyMap) -> OccupancyMap:
    """Where gestures put the body more often than background does (clamped at 0)."""
    if gesture_map.shape != background_map.shape:
        raise EvaluationError("occupancy maps differ in size")
    return OccupancyMap(np.maximum(gesture_map.values - background_map.values, 0.0), gesture_map.n_frames)


def write_pgm(path, occupancy: OccupancyMap | np.ndarray):
    """16-bit binary PGM, 0..1 mapped onto 0..65535."""
    values = occupancy.values if isinstance(occupancy, OccupancyMap) else np.asarray(occupancy)
    if values.ndim != 2:
        raise EvaluationError("PGM needs a 2-D map")
    h, w = values.shape
    pix = np.rint(np.clip(values, 0.0, 1.0) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(pix.tobytes())


# exactly one whitespace byte separates maxval from the raster
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (returns values in 0..1)."""
    data = open(path, "rb").read() if isinstance(path, (str, os.PathLike)) else path.read()
    m = _PGM_HEADER.match(data)
    if m is None or int(m.group(3)) != 65535:
        raise EvaluationError("not a 16-bit P5 PGM")
    w, h = int(m.group(1)), int(m.group(2))
    body = data[m.end():]
    if len(body) < 2 * w * h:
        raise EvaluationError("truncated PGM")
    pix = np.frombuffer(body[: 2 * w * h], dtype=">u2").reshape(h, w)
    return pix.astype(np.float64) / 65535.0
