import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgspot.container import DepthFrame
from bgspot.evaluation import (EvaluationError, OccupancyMap, compare_gesture_sets, false_positive_clips,
                               fp_interval, gesture_zone, match_detections, occupancy_map, pair_gestures, read_pgm,
                               still_frames, tracked_seconds, write_pgm)
from bgspot.gsn import DetectionEvent, GestureSpottingNetwork
from bgspot.skeleton import SkeletonTrack
from bgspot.synth import Annotation, SynthConfig, synthesize
from bgspot.features import FeatureConfig


def ev(g, end, start=None, pid=1, hand="right"):
    return DetectionEvent(g, "v", end - 300 if start is None else start, end, 1.0, pid, hand)


def truth(g, lo, hi, pid=1, hand="right"):
    return Annotation(g, pid, hand, lo, hi)


# -- matching --------------------------------------------------------------------

def test_no_events():
    rep = match_detections([], [truth("Swipe", k * 10000, k * 10000 + 600) for k in range(5)])
    d = rep.gesture_dict("Swipe")
    assert (d["tp"], d["fn"], d["fp"]) == (0, 5, 0)


def test_single_tp():
    rep = match_detections([ev("Swipe", 1500)], [truth("Swipe", 1000, 1600)])
    d = rep.gesture_dict("Swipe")
    assert (d["tp"], d["fp"], d["fn"]) == (1, 0, 0)
    assert d["tp_rate"] == 1.0


def test_duplicates_absorbed():
    rep = match_detections([ev("Swipe", t) for t in (1400, 2500, 3500)], [truth("Swipe", 1000, 1600)])
    d = rep.gesture_dict("Swipe")
    assert (d["tp"], d["fp"], d["fn"], d["absorbed"]) == (1, 0, 0, 2)


def test_window_edges():
    t = [truth("Point", 1000, 2000)]
    assert match_detections([ev("Point", 4000)], t).gesture_dict("Point")["tp"] == 1
    assert match_detections([ev("Point", 4001)], t).gesture_dict("Point")["fp"] == 1
    assert match_detections([ev("Point", 999)], t).gesture_dict("Point")["fp"] == 1
    assert match_detections([ev("Point", 4500)], t, window_ms=2500).gesture_dict("Point")["tp"] == 1


def test_wrong_gesture_or_stream_is_fp():
    t = [truth("Swipe", 1000, 1600)]
    rep = match_detections([ev("Wave", 1500), ev("Swipe", 1500, pid=2), ev("Swipe", 1500, hand="left")], t)
    assert rep.gesture_dict("Wave")["fp"] == 1
    assert rep.gesture_dict("Swipe")["fp"] == 2 and rep.gesture_dict("Swipe")["fn"] == 1


def test_streamless_event_matches_any_stream():
    e = DetectionEvent("Swipe", "v", 1000, 1500, 1.0)
    assert match_detections([e], [truth("Swipe", 1000, 1600, pid=2, hand="left")]).totals["tp"] == 1


def test_fp_interval_values():
    assert fp_interval(10, 200.0) == 20.0
    assert math.isinf(fp_interval(0, 100.0))
    with pytest.raises(EvaluationError):
        fp_interval(3, 0.0)


def test_report_json_and_table():
    rep = match_detections([ev("Swipe", 1500), ev("Swipe", 9000)], [truth("Swipe", 1000, 1600)],
                           person_seconds=200.0, tracked_person_seconds=100.0)
    d = rep.to_dict()
    assert d["gestures"]["Swipe"]["fp_interval_s"] == 200.0
    assert d["totals"]["fp_interval_tracked_s"] == 100.0
    quiet = match_detections([], [truth("Swipe", 1000, 1600)], person_seconds=50.0).to_dict()
    assert quiet["totals"]["fp_interval_s"] is None
    text = rep.table()
    assert "TOTAL" in text and "Swipe" in text
    clips = false_positive_clips(rep, pad_ms=500)
    assert clips == [{"gesture_name": "Swipe", "variant_name": "v", "skeleton_id": 1, "hand_side": "right",
                      "start_ms": 8200, "end_ms": 9500}]


events_st = st.lists(st.tuples(st.sampled_from(["Swipe", "Point"]), st.integers(0, 30000),
                               st.integers(1, 2), st.sampled_from(["left", "right"])), max_size=25)
truths_st = st.lists(st.tuples(st.sampled_from(["Swipe", "Point"]), st.integers(0, 9), st.integers(1, 2),
                               st.sampled_from(["left", "right"])), max_size=8)


@settings(max_examples=150, deadline=None)
@given(events_st, truths_st, st.randoms(use_true_random=False))
def test_conservation_and_order_independence(raw_events, raw_truths, rnd):
    events = [ev(g, t, pid=p, hand=h) for g, t, p, h in raw_events]
    truths = [truth(g, slot * 3000, slot * 3000 + 700, p, h) for g, slot, p, h in raw_truths]
    rep = match_detections(events, truths)
    shuffled = list(events)
    rnd.shuffle(shuffled)
    rep2 = match_detections(shuffled, truths)
    for name in rep.gestures:
        d, d2 = rep.gesture_dict(name), rep2.gesture_dict(name)
        assert d["tp"] + d["fn"] == sum(a.gesture_name == name for a in truths)
        assert d["tp"] + d["fp"] + d["absorbed"] == sum(e.gesture_name == name for e in events)
        assert d == d2


def test_tracked_seconds_skips_gaps():
    tr = SkeletonTrack(1, np.array([0.0, 100.0, 200.0, 2000.0, 2100.0]), np.zeros((5, 20, 3)),
                      np.full((5, 20), 2, np.uint8))
    assert tracked_seconds(tr) == pytest.approx(0.3)


# -- comparison -------------------------------------------------------------------

def test_pairing():
    assert pair_gestures(["Swipe", "Point", "X"], ["Pause Swipe", "Forward Up", "Point"]) == \
        [("Swipe", "Pause Swipe"), ("Point", "Point"), ("X", "Forward Up")]


def test_compare_self_is_one(small_net):
    s = synthesize(SynthConfig(duration_s=120, prompts_per_gesture=0, seed=2, depth_hz=0))
    rep = compare_gesture_sets(small_net, small_net, s)
    assert rep.total_a == rep.total_b
    assert all(r.ratio == 1.0 for r in rep.rows)
    assert rep.total_ratio == 1.0
    assert len(rep.rows) == len(small_net.gesture_names)


def test_compare_config_mismatch(small_net):
    other = GestureSpottingNetwork(small_net.variants, small_net.threshold, small_net.config,
                                   FeatureConfig(radius_threshold_m=0.3))
    with pytest.raises(EvaluationError):
        compare_gesture_sets(small_net, other, {})


# -- still frames ------------------------------------------------------------------

def moving(rng, n, shape=(12, 16)):
    return [rng.integers(500, 4000, shape) for _ in range(n)]


def test_static_stream_single_interval():
    frames = [np.full((8, 8), 1500)] * 300
    (iv,) = still_frames(frames, min_duration_s=5)
    assert (iv.start_index, iv.end_index) == (0, 299)
    assert iv.middle_index == 149


def test_motion_stream_empty():
    assert still_frames(moving(np.random.default_rng(0), 300)) == []


def test_embedded_still_segment():
    rng = np.random.default_rng(1)
    still = np.full((12, 16), 2100)
    planes = moving(rng, 90) + [still + rng.integers(-3, 4, still.shape) for _ in range(180)] + moving(rng, 90)
    frames = [DepthFrame.from_planes(int(round(i * 1000 / 30)), p, np.zeros_like(p)) for i, p in enumerate(planes)]
    (iv,) = still_frames(frames)
    assert abs(iv.start_index - 90) <= 1 and abs(iv.end_index - 269) <= 1
    assert iv.frame is frames[iv.middle_index]
    assert iv.duration_s == pytest.approx(179 / 30, abs=0.05)


def test_short_still_ignored_and_bad_args():
    rng = np.random.default_rng(2)
    planes = moving(rng, 30) + [np.full((12, 16), 900)] * 60 + moving(rng, 30)
    assert still_frames(planes, min_duration_s=5) == []
    with pytest.raises(EvaluationError):
        still_frames(planes, min_duration_s=0)
    with pytest.raises(EvaluationError):
        still_frames([np.zeros((4, 4)), np.zeros((4, 5))])


# -- occupancy -----------------------------------------------------------------------

def packed(pid_plane):
    return (np.full(pid_plane.shape, 1000) << 3) | pid_plane


def test_occupancy_basics():
    empty = np.zeros((6, 8), dtype=np.int64)
    assert not occupancy_map([packed(empty)] * 3).values.any()
    blob = empty.copy()
    blob[2:4, 3:6] = 1
    assert np.array_equal(occupancy_map([packed(blob)]).values, blob.astype(float))
    half = occupancy_map([packed(blob), packed(empty)] * 5)
    assert half.values[2, 3] == 0.5 and half.n_frames == 10


def test_occupancy_errors():
    with pytest.raises(EvaluationError):
        occupancy_map([])
    with pytest.raises(EvaluationError):
        occupancy_map([np.zeros((2, 2), int), np.zeros((3, 2), int)])
    with pytest.raises(EvaluationError):
        gesture_zone(OccupancyMap(np.zeros((2, 2))), OccupancyMap(np.zeros((2, 3))))


def test_gesture_zone_recovers_region():
    rng = np.random.default_rng(4)
    h, w = 24, 32
    body = np.zeros((h, w), dtype=np.int64)
    body[8:24, 10:20] = 2
    arm = np.zeros((h, w), dtype=bool)
    arm[10:14, 20:28] = True
    background = [packed(body) for _ in range(40)]
    gesture = []
    for _ in range(40):
        f = body.copy()
        f[arm] = 2
        gesture.append(packed(f))
    rng.shuffle(gesture)
    zone = gesture_zone(occupancy_map(gesture), occupancy_map(background))
    assert np.array_equal(zone.values, arm.astype(float))
    assert np.array_equal(gesture_zone(occupancy_map(background), occupancy_map(background)).values,
                          np.zeros((h, w)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_zone_nonnegative_and_bounded(seed):
    rng = np.random.default_rng(seed)
    g = OccupancyMap(rng.random((5, 7)))
    b = OccupancyMap(rng.random((5, 7)))
    z = gesture_zone(g, b).values
    assert (z >= 0).all() and (z <= g.values).all()


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    values = rng.random((9, 13))
    values[0, 0] = 10 / 65535  # raster starting with a whitespace byte value
    p = tmp_path / "zone.pgm"
    write_pgm(p, OccupancyMap(values))
    back = read_pgm(p)
    assert np.abs(back - values).max() <= 0.5 / 65535
    assert p.read_bytes().startswith(b"P5\n13 9\n65535\n")
    with pytest.raises(EvaluationError):
        read_pgm(io.BytesIO(b"P2\n1 1\n255\n0"))
