"""Deterministic synthetic capture sessions with ground-truth gesture annotations.

Each seated person's hands follow a background process (rest spots, sway,
and Poisson-timed reaches, passes, gesticulation, self-touch and stretches)
defined on a 100 Hz grid in the shoulder-relative body frame used by
:mod:`bgspot.templates`. Gesture performances are blended in over 300 ms
ramps at prompt times. Arms are posed by two-link IK, frames are sampled at
a jittered sensor rate, and depth frames are rendered from the same poses.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import RgbFrame, SessionHeader, SkeletonFrameRecord, StreamFlags, write_session
from .features import FeatureConfig, ObservationSequence, extract_sequence
from .render import render_depth
from .skeleton import JointId, JointState, N_JOINTS, Side, Skeleton, SkeletonTrack
from .templates import (ORIGINAL_GESTURES, PATH_RATE_HZ, TEMPLATES, PathBuilder, _smooth_noise, min_jerk,
                        render_template, to_sensor, variants_of)

logger = logging.getLogger(__name__)

ANNOTATION_SCHEMA = "bgspot.annotations"
ANNOTATION_VERSION = 1
GRID_MS = 1000.0 / PATH_RATE_HZ
SPLICE_MS = 300.0
UPPER_ARM_M = 0.29
FOREARM_M = 0.27  # elbow to hand joint
SEAT_Z_M = 2.3
INTENSITIES = ("quiet", "typical", "boisterous")

# events per minute per hand
_RATES = {
    "quiet": dict(reach=1.0, pass_=0.4, gesticulate=0.5, touch=0.3, stretch=0.1, reposition=0.5),
    "typical": dict(reach=2.0, pass_=0.8, gesticulate=1.5, touch=0.6, stretch=0.2, reposition=1.0),
    "boisterous": dict(reach=3.0, pass_=1.2, gesticulate=4.0, touch=1.0, stretch=0.4, reposition=1.5),
}
_SWAY_M = {"quiet": 0.008, "typical": 0.015, "boisterous": 0.03}
_REST_SPOTS = np.array([
    [0.02, -0.42, 0.24],   # lap
    [0.16, -0.36, 0.10],   # armrest
    [0.16, -0.34, 0.36],   # forearm along armrest
    [-0.08, -0.40, 0.28],  # lap, inner
])


@dataclass(frozen=True)
class Injection:
    """A gesture performance placed at an explicit time, outside the prompt schedule."""
    gesture_name: str
    start_ms: float
    variant_name: str | None = None
    skeleton_id: int = 1
    hand_side: str = "right"
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 600.0
    n_skeletons: int = 1
    prompts_per_gesture: int = 5
    intensity: str = "typical"
    seed: int = 1
    gestures: tuple = ORIGINAL_GESTURES
    gesture_hand: str = "right"
    skeleton_hz: float = 30.0
    depth_hz: float = 30.0
    rgb_hz: float = 0.0
    depth_width: int = 640
    depth_height: int = 480
    sensor_noise_m: float = 0.0005
    frame_drop: float = 0.04
    joint_dropout: bool = False
    injections: tuple = ()

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if self.n_skeletons not in (1, 2):
            raise ValueError("n_skeletons must be 1 or 2")
        if self.prompts_per_gesture < 0:
            raise ValueError("prompts_per_gesture must be >= 0")
        if self.intensity not in INTENSITIES:
            raise ValueError("intensity must be one of %s" % ", ".join(INTENSITIES))
        if not self.skeleton_hz > 0 or self.depth_hz < 0 or self.rgb_hz < 0:
            raise ValueError("frame rates must be positive")
        if not 0 <= self.frame_drop < 0.5:
            raise ValueError("frame_drop must be in [0, 0.5)")
        Side(self.gesture_hand)
        for g in self.gestures:
            variants_of(g)

    @classmethod
    def from_mapping(cls, values, **overrides) -> "SynthConfig":
        """Build from string key/value pairs (config files, CLI)."""
        kw = {}
        casts = {"duration_s": float, "n_skeletons": int, "prompts_per_gesture": int, "intensity": str,
                 "seed": int, "gesture_hand": str, "skeleton_hz": float, "depth_hz": float, "rgb_hz": float,
                 "depth_width": int, "depth_height": int, "sensor_noise_m": float, "frame_drop": float}
        for key, raw in values.items():
            if key in casts:
                kw[key] = casts[key](raw)
            elif key == "gestures":
                kw[key] = tuple(g.strip() for g in str(raw).split(",") if g.strip())
            elif key == "joint_dropout":
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                raise ValueError("unknown synth config key %r" % key)
        kw.update(overrides)
        return cls(**kw)

    @property
    def duration_ms(self) -> float:
        return self.duration_s * 1000.0


# ---------------------------------------------------------------- annotations

@dataclass(frozen=True)
class Annotation:
    gesture_name: str
    skeleton_id: int
    hand_side: str
    start_ms: int
    end_ms: int
    kind: str = "prompted"
    variant_name: str | None = None

    def __post_init__(self):
        if self.end_ms <= self.start_ms:
            raise ValueError("annotation end must follow start")
        if self.kind not in ("prompted", "injected"):
            raise ValueError("kind must be 'prompted' or 'injected'")


@dataclass
class AnnotationTrack:
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        self.annotations = sorted(self.annotations, key=lambda a: (a.start_ms, a.skeleton_id, a.hand_side))
        self.validate()

    def __len__(self):
        return len(self.annotations)

    def __iter__(self):
        return iter(self.annotations)

    def validate(self):
        last = {}
        for a in self.annotations:
            key = (a.skeleton_id, a.hand_side)
            if key in last and a.start_ms < last[key]:
                raise ValueError("overlapping annotations on skeleton %d %s hand" % key)
            last[key] = a.end_ms
        return self

    def gestures(self) -> list[str]:
        return sorted({a.gesture_name for a in self.annotations})

    def to_json(self) -> str:
        doc = {"schema": ANNOTATION_SCHEMA, "version": ANNOTATION_VERSION,
               "annotations": [asdict(a) for a in self.annotations]}
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "AnnotationTrack":
        doc = json.loads(text)
        if not isinstance(doc, dict) or doc.get("version") != ANNOTATION_VERSION:
            raise ValueError("unsupported annotation file version")
        return cls([Annotation(**rec) for rec in doc["annotations"]])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "AnnotationTrack":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------- background

def _ms_to_n(ms) -> int:
    return max(int(round(ms / GRID_MS)), 1)


def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _ev_reach(rng):
    table = np.array([_u(rng, 0.05, 0.40), _u(rng, -0.50, -0.36), _u(rng, 0.32, 0.50)])
    b = PathBuilder(table)
    b.hold(_u(rng, 300, 1500))
    if rng.random() < 0.35:
        b.move([_u(rng, -0.20, -0.10), _u(rng, -0.02, 0.06), _u(rng, 0.06, 0.14)], _u(rng, 500, 800))
        b.hold(_u(rng, 500, 2000))
        if rng.random() < 0.7:
            b.move(table + rng.normal(0, 0.03, 3), _u(rng, 500, 800))
            b.hold(_u(rng, 200, 800))
    pts = b.points()
    pts = pts + _smooth_noise(rng, len(pts), 0.01, 10.0)
    return _u(rng, 500, 900), pts, _u(rng, 500, 900)


def _ev_pass(rng):
    s = 1.0 if rng.random() < 0.5 else -1.0
    y, z, half = _u(rng, -0.30, -0.12), _u(rng, 0.30, 0.45), _u(rng, 0.15, 0.33)
    b = PathBuilder([s * half, y, z])
    if rng.random() < 0.3:
        b.hold(_u(rng, 300, 1200))
    b.move([-s * half, y + _u(rng, -0.05, 0.05), z + _u(rng, -0.05, 0.05)], _u(rng, 450, 1000))
    b.hold(_u(rng, 200, 600))
    pts = b.points()
    return _u(rng, 400, 800), pts + _smooth_noise(rng, len(pts), 0.004, 8.0), _u(rng, 400, 800)


def _ev_gesticulate(rng):
    c = np.array([_u(rng, -0.05, 0.20), _u(rng, -0.25, 0.0), _u(rng, 0.15, 0.32)])
    n = _ms_to_n(_u(rng, 1000, 4000))
    t = np.arange(n) * GRID_MS / 1000.0
    pts = np.repeat(c[None, :], n, axis=0)
    for _ in range(2):
        d = rng.normal(size=3) * [1.0, 1.0, 0.4]
        d /= np.linalg.norm(d)
        f, amp, ph = _u(rng, 1.2, 3.0), _u(rng, 0.02, 0.07), _u(rng, 0, 2 * math.pi)
        pts = pts + amp * np.sin(2 * math.pi * f * t + ph)[:, None] * d
    return _u(rng, 300, 600), pts + _smooth_noise(rng, n, 0.01, 15.0), _u(rng, 300, 600)


def _ev_touch(rng):
    c = np.array([_u(rng, -0.20, 0.0), _u(rng, -0.05, 0.15), _u(rng, 0.05, 0.15)])
    n = _ms_to_n(_u(rng, 1000, 3000))
    t = np.arange(n) * GRID_MS / 1000.0
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    osc = _u(rng, 0.01, 0.025) * np.sin(2 * math.pi * _u(rng, 3.0, 5.0) * t)
    return _u(rng, 400, 700), c + osc[:, None] * d, _u(rng, 400, 700)


def _ev_stretch(rng):
    b = PathBuilder([_u(rng, 0.0, 0.25), _u(rng, 0.15, 0.45), _u(rng, 0.20, 0.45)])
    b.hold(_u(rng, 800, 2500))
    pts = b.points()
    return _u(rng, 800, 1400), pts + _smooth_noise(rng, len(pts), 0.01, 20.0), _u(rng, 800, 1400)


_EVENTS = {"reach": _ev_reach, "pass_": _ev_pass, "gesticulate": _ev_gesticulate,
           "touch": _ev_touch, "stretch": _ev_stretch}


def _splice(H, start_idx, path, ramp_in_ms, ramp_out_ms):
    """Blend ``path`` into ``H`` with min-jerk weight ramps on both sides."""
    rin, rout = _ms_to_n(ramp_in_ms), _ms_to_n(ramp_out_ms)
    P = np.vstack([np.repeat(path[:1], rin, axis=0), path, np.repeat(path[-1:], rout, axis=0)])
    w = np.ones(len(P))
    w[:rin] = min_jerk(np.arange(1, rin + 1) / (rin + 1))
    w[len(P) - rout:] = min_jerk(np.arange(rout, 0, -1) / (rout + 1))
    a = start_idx - rin
    lo, hi = max(a, 0), min(a + len(P), len(H))
    if hi <= lo:
        return
    seg = slice(lo - a, hi - a)
    H[lo:hi] = (1 - w[seg, None]) * H[lo:hi] + w[seg, None] * P[seg]


def _rest_base(rng, n, rate_per_min, log=None):
    base = np.empty((n, 3))
    spot = int(rng.integers(len(_REST_SPOTS)))
    cur = _REST_SPOTS[spot] + rng.normal(0, 0.02, 3)
    i = 0
    while i < n:
        hold = _ms_to_n(rng.exponential(60000.0 / rate_per_min))
        base[i:i + hold] = cur
        i += hold
        if i >= n:
            break
        spot = int((spot + rng.integers(1, len(_REST_SPOTS))) % len(_REST_SPOTS))
        nxt = _REST_SPOTS[spot] + rng.normal(0, 0.02, 3)
        m = _ms_to_n(_u(rng, 800, 1500))
        s = min_jerk(np.arange(1, m + 1) / m)[:, None]
        base[i:i + m] = (cur + s * (nxt - cur))[: n - i]
        if log is not None:
            log.append(("reposition", i * GRID_MS, min(i + m, n) * GRID_MS))
        cur = nxt
        i += m
    return base


def background_hand(rng, n, intensity="typical", blocked=(), log=None):
    """Background hand path (n grid samples) avoiding ``blocked`` (lo, hi) index spans.

    Scheduled events are appended to ``log`` as (kind, start_ms, end_ms) when given.
    """
    rates = _RATES[intensity]
    H = _rest_base(rng, n, rates["reposition"], log)
    H += _smooth_noise(rng, n, _SWAY_M[intensity], 40.0)
    H += _smooth_noise(rng, n, 0.001, 5.0)
    kinds = [k for k in _EVENTS]
    lam = np.array([rates[k] for k in kinds])
    mean_gap = 60000.0 / lam.sum()
    blocked = sorted(blocked)
    i = _ms_to_n(rng.exponential(mean_gap))
    while i < n:
        kind = kinds[rng.choice(len(kinds), p=lam / lam.sum())]
        rin, path, rout = _EVENTS[kind](rng)
        lo, hi = i, i + _ms_to_n(rin) + len(path) + _ms_to_n(rout)
        clash = [b for b in blocked if b[0] < hi and lo < b[1]]
        if clash:
            i = max(b[1] for b in clash) + _ms_to_n(rng.exponential(mean_gap))
            continue
        _splice(H, i + _ms_to_n(rin), path, rin, rout)
        if log is not None:
            log.append((kind.rstrip("_"), lo * GRID_MS, hi * GRID_MS))
        i = hi + _ms_to_n(rng.exponential(mean_gap))
    return H


# ---------------------------------------------------------------- body assembly

def _body_layout(seat_x, T):
    """Static seated skeleton (T, 20, 3) before arms are posed."""
    J = JointId
    pos = np.zeros((T, N_JOINTS, 3))
    hip = np.array([seat_x, -0.30, SEAT_Z_M])
    sc = hip + [0.0, 0.48, 0.02]
    fixed = {
        J.HIP_CENTER: hip, J.SPINE: hip + [0, 0.22, -0.01], J.SHOULDER_CENTER: sc, J.HEAD: sc + [0, 0.21, 0],
        J.SHOULDER_LEFT: sc + [0.18, -0.04, 0], J.SHOULDER_RIGHT: sc + [-0.18, -0.04, 0],
        J.HIP_LEFT: hip + [0.10, -0.04, 0], J.HIP_RIGHT: hip + [-0.10, -0.04, 0],
        J.KNEE_LEFT: hip + [0.12, 0.0, -0.45], J.KNEE_RIGHT: hip + [-0.12, 0.0, -0.45],
        J.ANKLE_LEFT: hip + [0.12, -0.45, -0.48], J.ANKLE_RIGHT: hip + [-0.12, -0.45, -0.48],
        J.FOOT_LEFT: hip + [0.12, -0.48, -0.58], J.FOOT_RIGHT: hip + [-0.12, -0.48, -0.58],
    }
    for j, p in fixed.items():
        pos[:, j] = p
    return pos


def solve_elbow(shoulder, hand, side, l1=UPPER_ARM_M, l2=FOREARM_M):
    """Two-link IK with the elbow swung outward, down and back."""
    pole = to_sensor(np.array([0.5, -1.0, -0.3]), side)
    d_vec = hand - shoulder
    d = np.linalg.norm(d_vec, axis=-1, keepdims=True)
    u = d_vec / np.maximum(d, 1e-9)
    d = np.clip(d, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6)
    a = (l1 ** 2 - l2 ** 2 + d ** 2) / (2 * d)
    h = np.sqrt(np.maximum(l1 ** 2 - a ** 2, 0.0))
    perp = pole - (u @ pole)[..., None] * u
    perp /= np.maximum(np.linalg.norm(perp, axis=-1, keepdims=True), 1e-9)
    return shoulder + a * u + h * perp


_ARM = {Side.LEFT: (JointId.SHOULDER_LEFT, JointId.ELBOW_LEFT, JointId.WRIST_LEFT, JointId.HAND_LEFT),
        Side.RIGHT: (JointId.SHOULDER_RIGHT, JointId.ELBOW_RIGHT, JointId.WRIST_RIGHT, JointId.HAND_RIGHT)}


def _sample_grid(H, times_ms):
    x = np.asarray(times_ms, float) / GRID_MS
    i = np.clip(np.floor(x).astype(np.int64), 0, len(H) - 2)
    f = np.clip(x - i, 0.0, 1.0)[:, None]
    return H[i] * (1 - f) + H[i + 1] * f


def pose_person(seat_x, times_ms, hands: dict, torso_sway=None):
    """Skeleton positions at ``times_ms`` given body-frame hand paths on the 100 Hz grid."""
    T = len(times_ms)
    pos = _body_layout(seat_x, T)
    if torso_sway is not None:
        lean = _sample_grid(torso_sway, times_ms)
        upper = [j for j in JointId if j not in (JointId.HIP_CENTER, JointId.HIP_LEFT, JointId.HIP_RIGHT,
                                                 JointId.KNEE_LEFT, JointId.KNEE_RIGHT, JointId.ANKLE_LEFT,
                                                 JointId.ANKLE_RIGHT, JointId.FOOT_LEFT, JointId.FOOT_RIGHT)]
        for j in upper:
            k = 0.5 if j == JointId.SPINE else 1.0
            pos[:, j] += k * lean
    for side in (Side.LEFT, Side.RIGHT):
        H = hands.get(side)
        if H is None:
            H = np.repeat(_REST_SPOTS[:1], 2, axis=0)
        sh, el, wr, ha = _ARM[side]
        hand = pos[:, sh] + to_sensor(_sample_grid(H, times_ms), side)
        elbow = solve_elbow(pos[:, sh], hand, side)
        pos[:, ha] = hand
        pos[:, el] = elbow
        fa = hand - elbow
        pos[:, wr] = hand - 0.07 * fa / np.maximum(np.linalg.norm(fa, axis=1, keepdims=True), 1e-9)
    return pos


def frame_times(rng, duration_ms, rate_hz, drop=0.04, jitter_ms=3.0):
    """Jittered integer timestamps with random dropped frames."""
    period = 1000.0 / rate_hz
    n = int(math.floor(duration_ms / period)) + 1
    t = np.arange(n) * period + rng.uniform(-jitter_ms, jitter_ms, n)
    t = np.clip(np.rint(t), 0, duration_ms).astype(np.int64)
    keep = rng.random(n) >= drop
    keep[0] = True
    t = t[keep]
    return t[np.concatenate([[True], np.diff(t) > 0])]


# ---------------------------------------------------------------- JPEG stub

_DC_BITS = (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
_DC_CODES = ("00", "010", "011", "100", "101", "110", "1110", "11110", "111110", "1111110",
             "11111110", "111111110")


def flat_jpeg(width: int, height: int, gray: int = 128) -> bytes:
    """Baseline greyscale JPEG of a uniform image (DC-only blocks)."""
    def seg(marker, body):
        return bytes([0xFF, marker]) + (len(body) + 2).to_bytes(2, "big") + body

    dqt = seg(0xDB, bytes([0]) + bytes([1] * 64))
    sof = seg(0xC0, bytes([8]) + height.to_bytes(2, "big") + width.to_bytes(2, "big") + bytes([1, 1, 0x11, 0]))
    dht_dc = seg(0xC4, bytes([0x00]) + bytes(_DC_BITS) + bytes(range(12)))
    dht_ac = seg(0xC4, bytes([0x10, 1] + [0] * 15 + [0x00]))  # one code "0" = EOB
    sos = seg(0xDA, bytes([1, 1, 0x00, 0, 63, 0]))
    dc = 8 * (int(gray) - 128)
    cat = abs(dc).bit_length()
    extra = format(dc if dc >= 0 else dc + (1 << cat) - 1, "0%db" % cat) if cat else ""
    blocks = ((width + 7) // 8) * ((height + 7) // 8)
    bits = _DC_CODES[cat] + extra + "0" + ("00" + "0") * (blocks - 1)
    bits += "1" * (-len(bits) % 8)
    data = bytearray()
    for k in range(0, len(bits), 8):
        byte = int(bits[k:k + 8], 2)
        data.append(byte)
        if byte == 0xFF:
            data.append(0)
    return b"\xff\xd8" + dqt + sof + dht_dc + dht_ac + sos + bytes(data) + b"\xff\xd9"


# ---------------------------------------------------------------- sessions

@dataclass(frozen=True)
class BackgroundEvent:
    """Ground truth for one scheduled background action (not written to the container)."""
    skeleton_id: int
    hand_side: str
    kind: str
    start_ms: float
    end_ms: float


@dataclass(eq=False)
class SynthSession:
    config: SynthConfig
    header: SessionHeader
    annotations: AnnotationTrack
    times_ms: np.ndarray
    positions: dict  # player_id -> (T, 20, 3)
    states: dict  # player_id -> (T, 20) uint8
    depth_index: np.ndarray
    rgb_index: np.ndarray
    background_events: list = field(default_factory=list)

    @property
    def player_ids(self) -> list[int]:
        return sorted(self.positions)

    @property
    def person_seconds(self) -> float:
        return len(self.positions) * self.config.duration_s

    def track(self, player_id: int) -> SkeletonTrack:
        return SkeletonTrack(player_id, self.times_ms.astype(np.float64), self.positions[player_id],
                             self.states[player_id])

    def tracks(self) -> dict[int, SkeletonTrack]:
        return {pid: self.track(pid) for pid in self.player_ids}

    def skeleton_records(self):
        for i, t in enumerate(self.times_ms):
            yield SkeletonFrameRecord(int(t), [Skeleton(pid, self.positions[pid][i], self.states[pid][i])
                                               for pid in self.player_ids])

    def depth_frames(self):
        cfg = self.config
        for k, i in enumerate(self.depth_index):
            rng = np.random.default_rng([cfg.seed, 7, k])
            yield render_depth(self.times_ms[i], [(pid, self.positions[pid][i]) for pid in self.player_ids],
                               cfg.depth_width, cfg.depth_height, rng)

    def rgb_frames(self):
        payload = flat_jpeg(self.config.depth_width, self.config.depth_height)
        for i in self.rgb_index:
            yield RgbFrame(int(self.times_ms[i]), self.config.depth_width, self.config.depth_height, payload)

    def frames(self):
        """All frames merged in timestamp order (depth, then RGB, then skeleton on ties)."""
        def keyed(it, rank):
            return ((f.timestamp_ms, rank, f) for f in it)
        merged = heapq.merge(keyed(self.depth_frames(), 0), keyed(self.rgb_frames(), 1),
                             keyed(self.skeleton_records(), 2), key=lambda x: x[:2])
        return (f for _, _, f in merged)

    def write(self, sink) -> int:
        return write_session(self.header, self.frames(), sink)


def _prompt_schedule(cfg: SynthConfig, rng, pid_offset: float):
    """(start_ms, gesture) pairs: rounds of shuffled gestures at even spacing with ±10% jitter."""
    n = cfg.prompts_per_gesture * len(cfg.gestures)
    if n == 0:
        return []
    spacing = cfg.duration_ms / n
    out = []
    for r in range(cfg.prompts_per_gesture):
        order = rng.permutation(len(cfg.gestures))
        for j, g in enumerate(order):
            k = r * len(cfg.gestures) + j
            t = (k + 0.5 + pid_offset) * spacing + rng.uniform(-0.1, 0.1) * spacing
            out.append((t, cfg.gestures[g]))
    return out


def synthesize(cfg: SynthConfig) -> SynthSession:
    """Generate a full session in memory (depth frames are rendered lazily)."""
    root = np.random.SeedSequence(cfg.seed)
    s_frames, s_people, s_depth = root.spawn(3)
    n_grid = int(math.ceil(cfg.duration_ms / GRID_MS)) + 2
    times = frame_times(np.random.default_rng(s_frames), cfg.duration_ms, cfg.skeleton_hz, cfg.frame_drop)

    annotations, positions, states, events = [], {}, {}, []
    variant_counter = {}
    for k, s_person in enumerate(s_people.spawn(cfg.n_skeletons)):
        pid = k + 1
        r_prompt, r_gest, r_bg, r_torso, r_noise, r_drop = [np.random.default_rng(s) for s in s_person.spawn(6)]
        plans = {Side.LEFT: [], Side.RIGHT: []}
        for t, g in _prompt_schedule(cfg, r_prompt, 0.5 * k / cfg.n_skeletons):
            vs = variants_of(g)
            c = variant_counter.get((pid, g), 0)
            variant_counter[(pid, g)] = c + 1
            plans[Side(cfg.gesture_hand)].append((t, vs[c % len(vs)], {}, "prompted"))
        for inj in cfg.injections:
            if inj.skeleton_id == pid:
                tpl = TEMPLATES[(inj.gesture_name, inj.variant_name or variants_of(inj.gesture_name)[0].variant)]
                plans[Side(inj.hand_side)].append((inj.start_ms, tpl, dict(inj.overrides), "injected"))

        hands = {}
        for side in (Side.LEFT, Side.RIGHT):
            spliced = []
            for t0, tpl, ov, kind in sorted(plans[side], key=lambda p: p[0]):
                path = render_template(tpl, r_gest.integers(2 ** 63), **ov)
                i0 = int(round(t0 / GRID_MS))
                i1 = i0 + len(path.points) - 1
                if i0 * GRID_MS - SPLICE_MS < 0 or i1 * GRID_MS + SPLICE_MS > cfg.duration_ms:
                    logger.warning("dropping %s at %.0f ms: outside the session", tpl.name, t0)
                    continue
                if spliced and i0 <= spliced[-1][0] + len(spliced[-1][1].points) + _ms_to_n(2 * SPLICE_MS):
                    logger.warning("dropping %s at %.0f ms: collides with the previous gesture", tpl.name, t0)
                    continue
                spliced.append((i0, path))
                annotations.append(Annotation(tpl.name, pid, side.value, int(round(i0 * GRID_MS)),
                                              int(round(i1 * GRID_MS)), kind, tpl.variant))
            guard = _ms_to_n(SPLICE_MS + 1500.0)
            blocked = [(i0 - guard, i0 + len(p.points) + guard) for i0, p in spliced]
            log = []
            H = background_hand(r_bg, n_grid, cfg.intensity, blocked, log)
            events.extend(BackgroundEvent(pid, side.value, k, a, b) for k, a, b in log)
            for i0, p in spliced:
                _splice(H, i0, p.points, SPLICE_MS, SPLICE_MS)
            hands[side] = H
        sway = _smooth_noise(r_torso, n_grid, _SWAY_M[cfg.intensity], 150.0) * [1.0, 0.3, 1.0]
        seat_x = -0.45 + 0.9 * k if cfg.n_skeletons == 2 else 0.0
        pos = pose_person(seat_x, times, hands, sway)
        pos += r_noise.normal(0.0, cfg.sensor_noise_m, pos.shape)
        st = np.full(pos.shape[:2], JointState.TRACKED, dtype=np.uint8)
        if cfg.joint_dropout:
            _apply_dropout(r_drop, times, pos, st)
        positions[pid] = pos.astype(np.float32).astype(np.float64)
        states[pid] = st

    flags = StreamFlags.SKELETON
    stride_d = max(int(round(cfg.skeleton_hz / cfg.depth_hz)), 1) if cfg.depth_hz > 0 else 0
    stride_r = max(int(round(cfg.skeleton_hz / cfg.rgb_hz)), 1) if cfg.rgb_hz > 0 else 0
    depth_index = np.arange(0, len(times), stride_d) if stride_d else np.zeros(0, np.int64)
    rgb_index = np.arange(0, len(times), stride_r) if stride_r else np.zeros(0, np.int64)
    if stride_d:
        flags |= StreamFlags.DEPTH
    if stride_r:
        flags |= StreamFlags.RGB
    header = SessionHeader(1, "synthetic-%d" % cfg.seed, 0, int(flags))
    return SynthSession(cfg, header, AnnotationTrack(annotations), times, positions, states, depth_index,
                        rgb_index, sorted(events, key=lambda e: e.start_ms))


def _apply_dropout(rng, times, pos, st):
    """Bursts (0.2–1.2 s, ~0.5/min per arm) where hand, wrist and elbow are lost."""
    dur_ms = float(times[-1]) if len(times) else 0.0
    for side in (Side.LEFT, Side.RIGHT):
        _, el, wr, ha = _ARM[side]
        t = rng.exponential(120000.0)
        while t < dur_ms:
            length = _u(rng, 200, 1200)
            m = (times >= t) & (times < t + length)
            for j in (el, wr, ha):
                st[m, j] = JointState.NOT_TRACKED
                pos[m, j] = 0.0
            t += length + rng.exponential(120000.0)


def generate_session(cfg: SynthConfig, out_dir, stem: str = "session") -> tuple[Path, Path]:
    """Write ``<stem>.bgac`` and ``<stem>.annotations.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = synthesize(cfg)
    bgac = out_dir / (stem + ".bgac")
    ann = out_dir / ("annotations.json" if stem == "session" else stem + ".annotations.json")
    session.write(bgac)
    session.annotations.save(ann)
    return bgac, ann


# ---------------------------------------------------------------- training data

def annotated_sequences(tracks: dict, annotations, cfg: FeatureConfig = FeatureConfig()):
    """Slice per-hand observation sequences at annotation intervals.

    Returns ``{(gesture, variant): [ObservationSequence, ...]}``.
    """
    out = {}
    cache = {}
    for a in annotations:
        key = (a.skeleton_id, a.hand_side)
        if key not in cache:
            tr = tracks.get(a.skeleton_id)
            cache[key] = extract_sequence(tr, a.hand_side, cfg) if tr is not None else []
        for seq in cache[key]:
            lo, hi = seq.time_range
            if lo <= a.start_ms and a.end_ms <= hi:
                part = seq.slice_time(a.start_ms, a.end_ms)
                if len(part):
                    out.setdefault((a.gesture_name, a.variant_name or "default"), []).append(part)
                break
    return out


def gesture_examples(gesture: str, variant: str | None = None, n: int = 80, seed: int = 0,
                     side: str = "right", intensity: str = "quiet",
                     feature_config: FeatureConfig = FeatureConfig(), **overrides) -> list[ObservationSequence]:
    """Isolated performances, each recorded in its own short clip with rest before and after."""
    tpl = TEMPLATES[(gesture, variant or variants_of(gesture)[0].variant)]
    side = Side(side)
    out = []
    for k, s in enumerate(np.random.SeedSequence([seed, zlib.crc32((gesture + "/" + tpl.variant).encode())]).spawn(n)):
        r_path, r_bg, r_frames, r_noise = [np.random.default_rng(x) for x in s.spawn(4)]
        path = render_template(tpl, r_path.integers(2 ** 63), **overrides)
        lead = _ms_to_n(_u(r_bg, 800, 1200))
        n_grid = lead + len(path.points) + _ms_to_n(1000.0) + 2
        H = _rest_base(r_bg, n_grid, 1e-6) + _smooth_noise(r_bg, n_grid, _SWAY_M[intensity], 40.0)
        _splice(H, lead, path.points, SPLICE_MS, SPLICE_MS)
        dur = (n_grid - 2) * GRID_MS
        times = frame_times(r_frames, dur, 30.0)
        pos = pose_person(0.0, times, {side: H})
        pos += r_noise.normal(0.0, 0.0005, pos.shape)
        track = SkeletonTrack(1, times.astype(np.float64), pos.astype(np.float32).astype(np.float64),
                              np.full(pos.shape[:2], JointState.TRACKED, np.uint8))
        t0, t1 = lead * GRID_MS, (lead + len(path.points) - 1) * GRID_MS
        ann = [Annotation(gesture, 1, side.value, int(round(t0)), int(round(t1)), "injected", tpl.variant)]
        seqs = annotated_sequences({1: track}, ann, feature_config)
        out.extend(seqs.get((gesture, tpl.variant), []))
    return out
