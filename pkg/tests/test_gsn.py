import io

import numpy as np
import pytest

from bgspot.features import ObservationSequence, extract_sequence
from bgspot.gsn import (GestureSpottingNetwork, GestureVariant, NetworkFormatError, SpotConfig, SpottingEngine,
                        build_threshold_model, classify_isolated, load_network, save_network, spot)
from bgspot.hmm import HmmModel, Topology, uniform_model
from bgspot.synth import Injection, SynthConfig, gesture_examples, synthesize

FRAME_MS = 1000.0 / 30
REST_SYMBOL = 39 * 27 + 13  # radius 0, all angles mid, velocity rest


def lr_model(self_p, n_symbols=5, seed=0):
    rng = np.random.default_rng(seed)
    n = len(self_p)
    A = np.zeros((n, n))
    for i, p in enumerate(self_p):
        A[i, i] = p
        if i + 1 < n:
            A[i, i + 1] = 1 - p
    B = rng.random((n, n_symbols)) + 0.1
    B /= B.sum(axis=1, keepdims=True)
    return HmmModel(np.eye(n)[0], A, B, Topology.LEFT_TO_RIGHT)


def timed(symbols):
    symbols = np.asarray(symbols)
    return ObservationSequence(symbols, np.arange(len(symbols)) * FRAME_MS)


# -- threshold model ---------------------------------------------------------

def test_threshold_counts_and_rows():
    variants = [GestureVariant("g%d" % k, "v", lr_model([0.6, 0.6, 0.6, 1.0], seed=k)) for k in range(5)]
    thr = build_threshold_model(variants)
    assert thr.n_states == 20
    assert thr.topology == Topology.ERGODIC
    np.testing.assert_allclose(thr.initial, np.full(20, 0.05))
    assert thr.transitions[0, 0] == 0.6
    np.testing.assert_allclose(thr.transitions[0, 1:], 0.4 / 19, rtol=0, atol=1e-15)
    for k, v in enumerate(variants):
        assert np.array_equal(thr.emissions[4 * k:4 * k + 4], v.model.emissions)
    np.testing.assert_allclose(thr.transitions.sum(axis=1), 1.0, atol=1e-9)


def test_threshold_needs_variants():
    with pytest.raises(ValueError):
        build_threshold_model([])


def test_network_threshold_matches_variants(original_net):
    assert original_net.threshold.n_states == sum(v.model.n_states for v in original_net.variants)
    assert all(v.model.topology == Topology.LEFT_TO_RIGHT and v.model.n_states == 4
               for v in original_net.variants)


# -- isolated classification --------------------------------------------------

def test_classify_prefers_generating_model():
    rng = np.random.default_rng(3)
    model = lr_model([0.9, 0.9, 0.9, 1.0], n_symbols=8)
    obs = model.sample(50, rng)
    variants = [GestureVariant("uniform", "v", uniform_model(4, 8)), GestureVariant("own", "v", model)]
    assert classify_isolated(variants, obs)[0] == "own"


def test_classify_single_variant():
    v = GestureVariant("only", "v", lr_model([0.5, 1.0]))
    for obs in ([0], [1, 2, 3], [4] * 9):
        assert classify_isolated([v], obs)[0] == "only"


def test_classify_tie_goes_to_first():
    m = lr_model([0.5, 1.0])
    name, _ = classify_isolated([GestureVariant("first", "a", m), GestureVariant("second", "b", m)], [1, 2])
    assert name == "first"


def test_classify_empty_variants():
    with pytest.raises(ValueError):
        classify_isolated([], [0])


# -- persistence --------------------------------------------------------------

def test_save_load_bit_exact(small_net):
    buf = io.BytesIO()
    save_network(small_net, buf)
    back = load_network(buf.getvalue())
    assert back == small_net
    for a, b in zip(small_net.variants, back.variants):
        assert a.model.emissions.tobytes() == b.model.emissions.tobytes()
        assert a.final_exit == b.final_exit
    assert back.threshold.transitions.tobytes() == small_net.threshold.transitions.tobytes()


def test_save_load_path(tmp_path, small_net):
    p = tmp_path / "net.gsn"
    save_network(small_net, p)
    assert p.read_bytes()[:4] == b"GSN1"
    assert load_network(p) == small_net


def test_bad_magic(small_net):
    buf = io.BytesIO()
    save_network(small_net, buf)
    data = bytearray(buf.getvalue())
    data[0] ^= 0xFF
    with pytest.raises(NetworkFormatError):
        load_network(bytes(data))


def test_version_mismatch(small_net):
    buf = io.BytesIO()
    save_network(small_net, buf)
    data = bytearray(buf.getvalue())
    data[4] = 99
    with pytest.raises(NetworkFormatError):
        load_network(bytes(data))


def test_truncated(small_net):
    buf = io.BytesIO()
    save_network(small_net, buf)
    with pytest.raises(NetworkFormatError):
        load_network(buf.getvalue()[:-3])


def test_empty_network_round_trip():
    net = GestureSpottingNetwork([], config=SpotConfig(min_len_frames=9))
    buf = io.BytesIO()
    save_network(net, buf)
    back = load_network(buf.getvalue())
    assert back == net and back.variants == [] and back.threshold is None
    assert spot(back, timed([REST_SYMBOL] * 10)) == []


# -- spotting -------------------------------------------------------------------

def test_empty_observations(original_net):
    assert spot(original_net, []) == []
    assert spot(original_net, timed([])) == []


def test_rest_stream_is_silent(original_net):
    for sym in (REST_SYMBOL, 13, 1066, 270):
        assert spot(original_net, timed(np.full(600, sym))) == [], sym


def test_two_swipes_five_seconds_apart(original_net):
    sw = gesture_examples("Swipe", "elbow straight", n=2, seed=500)
    rest = np.full(150, REST_SYMBOL)
    seq = timed(np.concatenate([rest, sw[0].symbols, rest, sw[1].symbols, rest]))
    events = spot(original_net, seq)
    assert [e.gesture_name for e in events] == ["Swipe", "Swipe"]
    second_start = (300 + len(sw[0])) * FRAME_MS
    assert events[0].end_timestamp_ms < second_start <= events[1].end_timestamp_ms
    for e in events:
        assert e.start_timestamp_ms < e.end_timestamp_ms and e.log_likelihood_margin > 0


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_embedded_swipe_detected(original_net, seed):
    cfg = SynthConfig(duration_s=10, prompts_per_gesture=0, seed=seed, depth_hz=0,
                      injections=(Injection("Swipe", 4000, "elbow straight"),))
    s = synthesize(cfg)
    (a,) = s.annotations.annotations
    events = spot(original_net, extract_sequence(s.track(1), "right"))
    hits = [e for e in events if e.gesture_name == "Swipe"
            and e.start_timestamp_ms <= a.end_ms and a.start_ms <= e.end_timestamp_ms]
    assert hits


def test_spot_rejects_unsorted_and_untimed(original_net):
    with pytest.raises(ValueError):
        spot(original_net, ObservationSequence([1, 2, 3], [0.0, 10.0, 10.0]))
    with pytest.raises(ValueError):
        spot(original_net, ObservationSequence([1, 2, 3]))


def test_engine_rejects_out_of_alphabet(original_net):
    with pytest.raises(ValueError):
        SpottingEngine(original_net).push([1458], [0.0])


def test_spot_deterministic(original_net):
    s = synthesize(SynthConfig(duration_s=60, prompts_per_gesture=1, seed=4, depth_hz=0))
    obs = extract_sequence(s.track(1), "right")
    first = spot(original_net, obs)
    assert first and first == spot(original_net, obs)


def test_chunked_push_matches_batch(original_net):
    s = synthesize(SynthConfig(duration_s=60, prompts_per_gesture=1, seed=5, depth_hz=0))
    (seq,) = extract_sequence(s.track(1), "right")
    batch = spot(original_net, seq)
    eng = SpottingEngine(original_net)
    chunked = []
    for lo in range(0, len(seq), 37):
        chunked += eng.push(seq.symbols[lo:lo + 37], seq.timestamps_ms[lo:lo + 37], seq.skeleton_id, seq.side)
    assert chunked == batch


def test_refractory_and_min_len_are_honoured(original_net):
    sw = gesture_examples("Swipe", "elbow straight", n=2, seed=500)
    rest = np.full(150, REST_SYMBOL)
    seq = timed(np.concatenate([rest, sw[0].symbols, rest, sw[1].symbols, rest]))
    long_refractory = GestureSpottingNetwork(original_net.variants, original_net.threshold,
                                             SpotConfig(refractory_ms=60000.0))
    assert len(spot(long_refractory, seq)) == 1
    too_long = GestureSpottingNetwork(original_net.variants, original_net.threshold,
                                      SpotConfig(min_len_frames=10 ** 6))
    assert spot(too_long, seq) == []


def _performances(model, rng, n=40, piece=30):
    # each sampled piece is followed by a second of rest so pieces read as separate performances
    rest = np.full(30, REST_SYMBOL)
    return timed(np.concatenate([np.concatenate([model.sample(piece, rng), rest]) for _ in range(n)]))


def test_threshold_dominance(original_net):
    rng = np.random.default_rng(2024)
    for v in original_net.variants:
        on_threshold = len(spot(original_net, _performances(original_net.threshold, rng)))
        on_gesture = len(spot(original_net, _performances(v.model, rng)))
        assert on_threshold < on_gesture, (v.gesture_name, v.variant_name, on_threshold, on_gesture)
