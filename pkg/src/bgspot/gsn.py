"""Gesture spotting network: per-variant left-to-right HMMs plus a threshold model.

A variant fires when its final state outscores every state of the threshold
model. Spotting runs a best-path (max-product) recursion: all models
advance in lock-step and share one per-frame scale (the largest score over
every state), so the comparison is between like quantities. Any model may
be (re-)entered at every frame with the weight of the best hypothesis at
the previous frame, split evenly over the models. Each state carries the
frame its best path entered the gesture, which gives the start timestamp.

Best paths rather than forward sums keep evidence-free input quiet: a
summed final state integrates the re-entry flow over its whole dwell, so
on symbols no model has seen a gesture with a long final hold would
outscore the threshold model by structure alone. Final states also leak
toward an end node at a rate fitted to their training dwell.
"""

from __future__ import annotations

import io
import math
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
from numba import njit

from .features import FeatureConfig, ObservationSequence
from .hmm import DEFAULT_FLOOR, HmmModel, Topology, baum_welch_train, expected_occupancy, forward_log_likelihood

MAGIC = b"GSN1"
FILE_VERSION = 1
DEFAULT_MIN_DURATION_MS = {"Point": 800.0, "Wave": 800.0}


class NetworkFormatError(ValueError):
    pass


@dataclass
class SpotConfig:
    min_len_frames: int = 6
    refractory_ms: float = 1000.0
    emission_floor: float = DEFAULT_FLOOR
    min_duration_ms: dict = field(default_factory=lambda: dict(DEFAULT_MIN_DURATION_MS))

    def __post_init__(self):
        if self.min_len_frames < 2:
            raise ValueError("min_len_frames must be at least 2")


@dataclass(eq=False)
class GestureVariant:
    """One trained variant.

    ``final_exit`` is the per-frame probability of leaving the final state
    toward the network's end node while spotting. Training pins the final
    state's self-transition at 1, which would let it soak up entry mass
    indefinitely on uninformative input; 0 keeps it absorbing.
    """

    gesture_name: str
    variant_name: str
    model: HmmModel
    final_exit: float = 0.0

    def __eq__(self, other):
        return (isinstance(other, GestureVariant) and self.gesture_name == other.gesture_name
                and self.variant_name == other.variant_name and self.model == other.model
                and self.final_exit == other.final_exit)


@dataclass
class DetectionEvent:
    gesture_name: str
    variant_name: str
    start_timestamp_ms: float
    end_timestamp_ms: float
    log_likelihood_margin: float
    skeleton_id: int | None = None
    hand_side: str | None = None

    def to_dict(self):
        return {"gesture_name": self.gesture_name, "variant_name": self.variant_name,
                "start_timestamp_ms": self.start_timestamp_ms, "end_timestamp_ms": self.end_timestamp_ms,
                "log_likelihood_margin": self.log_likelihood_margin,
                "skeleton_id": self.skeleton_id, "hand_side": self.hand_side}

    @classmethod
    def from_dict(cls, d):
        return cls(d["gesture_name"], d["variant_name"], d["start_timestamp_ms"], d["end_timestamp_ms"],
                   d["log_likelihood_margin"], d.get("skeleton_id"), d.get("hand_side"))


def build_threshold_model(variants) -> HmmModel:
    """Ergodic model over copies of every gesture state.

    Each copy keeps its source self-transition and emission row; the rest of
    the row's mass is spread evenly over all other copies.
    """
    variants = list(variants)
    if not variants:
        raise ValueError("need at least one gesture variant")
    self_p = np.concatenate([np.diag(v.model.transitions) for v in variants])
    emissions = np.vstack([v.model.emissions for v in variants])
    n = len(self_p)
    if n == 1:
        A = np.ones((1, 1))
    else:
        A = np.repeat(((1.0 - self_p) / (n - 1))[:, None], n, axis=1)
        A[np.arange(n), np.arange(n)] = self_p
    return HmmModel(np.full(n, 1.0 / n), A, emissions.copy(), Topology.ERGODIC)


@dataclass(eq=False)
class GestureSpottingNetwork:
    variants: list
    threshold: HmmModel | None = None
    config: SpotConfig = field(default_factory=SpotConfig)
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if self.threshold is None and self.variants:
            self.threshold = build_threshold_model(self.variants)

    @property
    def gesture_names(self) -> list[str]:
        seen = []
        for v in self.variants:
            if v.gesture_name not in seen:
                seen.append(v.gesture_name)
        return seen

    def __eq__(self, other):
        if not isinstance(other, GestureSpottingNetwork):
            return NotImplemented
        return (self.variants == other.variants and self.config == other.config
                and self.feature_config == other.feature_config
                and ((self.threshold is None and other.threshold is None)
                     or (self.threshold is not None and self.threshold == other.threshold)))


def train_network(examples: dict, n_states: int = 4, seed: int = 0, config: SpotConfig | None = None,
                  feature_config: FeatureConfig | None = None) -> GestureSpottingNetwork:
    """``examples`` maps (gesture_name, variant_name) to training sequences."""
    config = config or SpotConfig()
    variants = []
    for k, ((gesture, variant), seqs) in enumerate(examples.items()):
        model = baum_welch_train(seqs, n_states, Topology.LEFT_TO_RIGHT, seed=seed + k,
                                 emission_floor=config.emission_floor)
        variants.append(GestureVariant(gesture, variant, model, final_exit_rate(model, seqs)))
    return GestureSpottingNetwork(variants, None, config, feature_config or FeatureConfig())


def final_exit_rate(model: HmmModel, sequences) -> float:
    """Exit probability giving the final state its mean training dwell (geometric)."""
    occ = expected_occupancy(model, sequences)
    dwell = max(occ[-1] / len(sequences), 1.0)
    return 1.0 / dwell


def classify_isolated(variants, obs) -> tuple[str, float]:
    """Gesture whose best variant gives ``obs`` the highest likelihood (first wins ties)."""
    variants = list(variants)
    if not variants:
        raise ValueError("no gesture variants to classify against")
    best_name, best_ll = None, -math.inf
    for v in variants:
        ll = forward_log_likelihood(v.model, obs)
        if best_name is None or ll > best_ll:
            best_name, best_ll = v.gesture_name, ll
    return best_name, best_ll


def split_examples(examples: dict, held_out: float = 0.1, seed: int = 0) -> tuple[dict, dict]:
    """Per-variant random split into (train, test); each side keeps at least one sequence."""
    if not 0 < held_out < 1:
        raise ValueError("held_out must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = {}, {}
    for key in examples:
        seqs = list(examples[key])
        if len(seqs) < 2:
            raise ValueError("variant %r needs at least 2 examples to split" % (key,))
        order = rng.permutation(len(seqs))
        k = min(max(int(round(held_out * len(seqs))), 1), len(seqs) - 1)
        test[key] = [seqs[i] for i in sorted(order[:k])]
        train[key] = [seqs[i] for i in sorted(order[k:])]
    return train, test


def isolated_accuracy(variants, test: dict) -> float:
    """Fraction of ``test`` sequences whose best-scoring variant has the right gesture name."""
    total = correct = 0
    for (gesture, _), seqs in test.items():
        for seq in seqs:
            total += 1
            correct += classify_isolated(variants, seq)[0] == gesture
    if total == 0:
        raise ValueError("no test sequences")
    return correct / total


# -- spotting ---------------------------------------------------------------

@njit(cache=True)
def _spot_kernel(symbols, times, frame0, Ag, pig, Bg, At, pit, Bt, final_idx, var_gesture, min_dur,
                 min_len, refractory, vg, vt, g_start, g_start_ms, last_emit,
                 run_start, run_start_ms, run_fired, ev_var, ev_start, ev_end, ev_margin):
    ng = vg.shape[0]
    nt = vt.shape[0]
    n_var = final_idx.shape[0]
    n_models = n_var + 1
    n_ev = 0
    new_g = np.empty(ng)
    new_start = np.empty(ng, dtype=np.int64)
    new_start_ms = np.empty(ng)
    new_t = np.empty(nt)
    for k in range(symbols.shape[0]):
        o = symbols[k]
        t = frame0 + k
        ts = times[k]
        # the best hypothesis that could have just ended re-enters every model through the start node
        exit_w = 0.0
        for v in range(n_var):
            exit_w = max(exit_w, vg[final_idx[v]])
        for j in range(nt):
            exit_w = max(exit_w, vt[j])
        if exit_w == 0.0:
            exit_w = 1.0
        entry = exit_w / n_models
        for j in range(ng):
            best = entry * pig[j]
            st = t
            st_ms = ts
            for i in range(ng):
                a = Ag[i, j]
                if a > 0.0 and vg[i] * a > best:
                    best = vg[i] * a
                    st = g_start[i]
                    st_ms = g_start_ms[i]
            new_g[j] = best * Bg[j, o]
            new_start[j] = st
            new_start_ms[j] = st_ms
        for j in range(nt):
            best = entry * pit[j]
            for i in range(nt):
                best = max(best, vt[i] * At[i, j])
            new_t[j] = best * Bt[j, o]
        c = 0.0
        for j in range(ng):
            c = max(c, new_g[j])
        for j in range(nt):
            c = max(c, new_t[j])
        if c <= 0.0:
            vg[:] = 0.0
            vt[:] = 0.0
            continue
        for j in range(ng):
            vg[j] = new_g[j] / c
            g_start[j] = new_start[j]
            g_start_ms[j] = new_start_ms[j]
        thr_max = 0.0
        for j in range(nt):
            vt[j] = new_t[j] / c
            thr_max = max(thr_max, vt[j])

        # candidate segment: maximal run of frames where the variant beats the threshold,
        # anchored at the earliest backtracked start seen during the run
        best_v = -1
        best_margin = 0.0
        for v in range(n_var):
            f = final_idx[v]
            if not vg[f] > thr_max:
                run_start[v] = -1
                run_fired[v] = False
                continue
            if run_start[v] < 0 or g_start[f] < run_start[v]:
                run_start[v] = g_start[f]
                run_start_ms[v] = g_start_ms[f]
            if run_fired[v]:
                continue
            if t - run_start[v] + 1 < min_len or ts - run_start_ms[v] < min_dur[v]:
                continue
            if ts - last_emit[var_gesture[v]] < refractory:
                continue
            m = np.log(vg[f]) - np.log(thr_max) if thr_max > 0.0 else np.inf
            if best_v < 0 or m > best_margin:
                best_v = v
                best_margin = m
        if best_v < 0:
            continue
        gi = var_gesture[best_v]
        last_emit[gi] = ts
        for v in range(n_var):
            if var_gesture[v] == gi and run_start[v] >= 0:
                run_fired[v] = True
        ev_var[n_ev] = best_v
        ev_start[n_ev] = run_start_ms[best_v]
        ev_end[n_ev] = ts
        ev_margin[n_ev] = best_margin
        n_ev += 1
    return n_ev


class SpottingEngine:
    """Online spotter for one (skeleton, hand) stream. Single owner, stateful."""

    def __init__(self, network: GestureSpottingNetwork):
        self.network = network
        variants = network.variants
        sizes = [v.model.n_states for v in variants]
        ng = sum(sizes)
        self._Ag = np.zeros((ng, ng))
        self._pig = np.zeros(ng)
        self._Bg = np.vstack([v.model.emissions for v in variants]) if variants else np.zeros((0, 1))
        self._final = np.zeros(len(variants), dtype=np.int64)
        off = 0
        for k, v in enumerate(variants):
            n = v.model.n_states
            self._Ag[off:off + n, off:off + n] = v.model.transitions
            self._Ag[off + n - 1, off + n - 1] *= 1.0 - v.final_exit
            self._pig[off:off + n] = v.model.initial
            self._final[k] = off + n - 1
            off += n
        names = network.gesture_names
        self._var_gesture = np.array([names.index(v.gesture_name) for v in variants], dtype=np.int64)
        cfg = network.config
        self._min_dur = np.array([float(cfg.min_duration_ms.get(v.gesture_name, 0.0)) for v in variants])
        thr = network.threshold
        self._At = thr.transitions if thr is not None else np.zeros((0, 0))
        self._pit = thr.initial if thr is not None else np.zeros(0)
        self._Bt = thr.emissions if thr is not None else np.zeros((0, 1))
        self.reset()

    def reset(self):
        self._last_emit = np.full(len(self.network.gesture_names), -np.inf)
        self._frame = 0
        self.reset_stream()

    def reset_stream(self):
        """Drop model state after a tracking break; refractory timers survive."""
        ng = len(self._pig)
        self._g_start = np.zeros(ng, dtype=np.int64)
        self._g_start_ms = np.zeros(ng)
        # a fresh stream starts in the non-gesture model; nobody is mid-gesture when tracking begins
        self._vg = np.zeros(ng)
        self._vt = self._pit.copy()
        nv = len(self.network.variants)
        self._run_start = np.full(nv, -1, dtype=np.int64)
        self._run_start_ms = np.zeros(nv)
        self._run_fired = np.zeros(nv, dtype=np.bool_)

    def push(self, symbols, timestamps_ms, skeleton_id=None, hand_side=None) -> list[DetectionEvent]:
        symbols = np.atleast_1d(np.asarray(symbols, dtype=np.int64))
        times = np.atleast_1d(np.asarray(timestamps_ms, dtype=np.float64))
        if not self.network.variants or symbols.size == 0:
            self._frame += symbols.size
            return []
        n_sym = self._Bg.shape[1]
        if symbols.min() < 0 or symbols.max() >= n_sym:
            raise ValueError("symbol outside alphabet of size %d" % n_sym)
        n = symbols.size
        ev_var = np.empty(n, dtype=np.int64)
        ev_start = np.empty(n)
        ev_end = np.empty(n)
        ev_margin = np.empty(n)
        cfg = self.network.config
        k = _spot_kernel(symbols, times, self._frame, self._Ag, self._pig, self._Bg, self._At, self._pit,
                         self._Bt, self._final, self._var_gesture, self._min_dur, cfg.min_len_frames,
                         float(cfg.refractory_ms), self._vg, self._vt, self._g_start, self._g_start_ms, self._last_emit,
                         self._run_start, self._run_start_ms, self._run_fired, ev_var, ev_start, ev_end, ev_margin)
        self._frame += n
        out = []
        for i in range(k):
            v = self.network.variants[ev_var[i]]
            out.append(DetectionEvent(v.gesture_name, v.variant_name, float(ev_start[i]), float(ev_end[i]),
                                      float(ev_margin[i]), skeleton_id,
                                      None if hand_side is None else str(getattr(hand_side, "value", hand_side))))
        return out


def spot(network: GestureSpottingNetwork, obs) -> list[DetectionEvent]:
    """Run a fresh engine over one or more timestamped observation sequences.

    The engine is reset between sequences (a tracking break starts over).
    """
    seqs = [obs] if isinstance(obs, ObservationSequence) else list(obs)
    engine = SpottingEngine(network)
    events = []
    for seq in seqs:
        if len(seq) == 0:
            continue
        if seq.timestamps_ms is None:
            raise ValueError("spotting needs timestamped observations")
        if np.any(np.diff(seq.timestamps_ms) <= 0):
            raise ValueError("observation timestamps must increase")
        engine.reset_stream()
        events += engine.push(seq.symbols, seq.timestamps_ms, seq.skeleton_id, seq.side)
    return events


# -- persistence -------------------------------------------------------------

def _put_str(buf, s):
    b = s.encode("utf-8")
    buf.write(struct.pack("<H", len(b)) + b)


def _get_str(src):
    (n,) = struct.unpack("<H", _read(src, 2))
    return _read(src, n).decode("utf-8")


def _read(src, n):
    data = src.read(n)
    if len(data) != n:
        raise NetworkFormatError("truncated network file")
    return data


def _put_model(buf, m: HmmModel):
    buf.write(struct.pack("<IIB", m.n_states, m.n_symbols, int(m.topology)))
    for arr in (m.initial, m.transitions, m.emissions):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _get_model(src) -> HmmModel:
    n, m, topo = struct.unpack("<IIB", _read(src, 9))

    def arr(count, shape):
        return np.frombuffer(_read(src, 8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return HmmModel(arr(n, (n,)), arr(n * n, (n, n)), arr(n * m, (n, m)), Topology(topo))


def save_network(network: GestureSpottingNetwork, sink):
    """Binary, little-endian, lossless: magic, version, config, variants, threshold."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            return save_network(network, fh)
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", FILE_VERSION))
    fc, sc = network.feature_config, network.config
    buf.write(struct.pack("<ddd", fc.radius_threshold_m, fc.speed_threshold_mps, fc.resample_hz))
    buf.write(struct.pack("<Idd", sc.min_len_frames, sc.refractory_ms, sc.emission_floor))
    buf.write(struct.pack("<I", len(sc.min_duration_ms)))
    for name, ms in sc.min_duration_ms.items():
        _put_str(buf, name)
        buf.write(struct.pack("<d", ms))
    buf.write(struct.pack("<I", len(network.variants)))
    for v in network.variants:
        _put_str(buf, v.gesture_name)
        _put_str(buf, v.variant_name)
        buf.write(struct.pack("<d", v.final_exit))
        _put_model(buf, v.model)
    buf.write(struct.pack("<B", network.threshold is not None))
    if network.threshold is not None:
        _put_model(buf, network.threshold)
    sink.write(buf.getvalue())


def load_network(source) -> GestureSpottingNetwork:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return load_network(fh)
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    magic = source.read(4)
    if magic != MAGIC:
        raise NetworkFormatError("bad network magic %r" % magic)
    (version,) = struct.unpack("<I", _read(source, 4))
    if version != FILE_VERSION:
        raise NetworkFormatError("unsupported network file version %d" % version)
    r, s, hz = struct.unpack("<ddd", _read(source, 24))
    min_len, refr, floor = struct.unpack("<Idd", _read(source, 20))
    (n_rules,) = struct.unpack("<I", _read(source, 4))
    rules = {}
    for _ in range(n_rules):
        name = _get_str(source)
        (rules[name],) = struct.unpack("<d", _read(source, 8))
    (n_var,) = struct.unpack("<I", _read(source, 4))
    variants = []
    for _ in range(n_var):
        g = _get_str(source)
        vn = _get_str(source)
        (exit_p,) = struct.unpack("<d", _read(source, 8))
        variants.append(GestureVariant(g, vn, _get_model(source), exit_p))
    (has_thr,) = struct.unpack("<B", _read(source, 1))
    threshold = _get_model(source) if has_thr else None
    fc = FeatureConfig(radius_threshold_m=r, speed_threshold_mps=s, resample_hz=hz)
    net = GestureSpottingNetwork(variants, threshold, SpotConfig(min_len, refr, floor, rules), fc)
    net.threshold = threshold
    return net
