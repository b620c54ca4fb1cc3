"""Skeleton types, body-relative hand geometry and uniform resampling."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 20
MAX_GAP_MS = 500.0
DEFAULT_RATE_HZ = 30.0


class JointId(enum.IntEnum):
    # v1 sensor SDK ordering
    HIP_CENTER = 0
    SPINE = 1
    SHOULDER_CENTER = 2
    HEAD = 3
    SHOULDER_LEFT = 4
    ELBOW_LEFT = 5
    WRIST_LEFT = 6
    HAND_LEFT = 7
    SHOULDER_RIGHT = 8
    ELBOW_RIGHT = 9
    WRIST_RIGHT = 10
    HAND_RIGHT = 11
    HIP_LEFT = 12
    KNEE_LEFT = 13
    ANKLE_LEFT = 14
    FOOT_LEFT = 15
    HIP_RIGHT = 16
    KNEE_RIGHT = 17
    ANKLE_RIGHT = 18
    FOOT_RIGHT = 19


class JointState(enum.IntEnum):
    NOT_TRACKED = 0
    INFERRED = 1
    TRACKED = 2


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


# (shoulder, elbow, hand) per side
LIMB_JOINTS = {
    Side.LEFT: (JointId.SHOULDER_LEFT, JointId.ELBOW_LEFT, JointId.HAND_LEFT),
    Side.RIGHT: (JointId.SHOULDER_RIGHT, JointId.ELBOW_RIGHT, JointId.HAND_RIGHT),
}

BONES = [
    (JointId.HIP_CENTER, JointId.SPINE),
    (JointId.SPINE, JointId.SHOULDER_CENTER),
    (JointId.SHOULDER_CENTER, JointId.HEAD),
    (JointId.SHOULDER_CENTER, JointId.SHOULDER_LEFT),
    (JointId.SHOULDER_LEFT, JointId.ELBOW_LEFT),
    (JointId.ELBOW_LEFT, JointId.WRIST_LEFT),
    (JointId.WRIST_LEFT, JointId.HAND_LEFT),
    (JointId.SHOULDER_CENTER, JointId.SHOULDER_RIGHT),
    (JointId.SHOULDER_RIGHT, JointId.ELBOW_RIGHT),
    (JointId.ELBOW_RIGHT, JointId.WRIST_RIGHT),
    (JointId.WRIST_RIGHT, JointId.HAND_RIGHT),
    (JointId.HIP_CENTER, JointId.HIP_LEFT),
    (JointId.HIP_LEFT, JointId.KNEE_LEFT),
    (JointId.KNEE_LEFT, JointId.ANKLE_LEFT),
    (JointId.ANKLE_LEFT, JointId.FOOT_LEFT),
    (JointId.HIP_CENTER, JointId.HIP_RIGHT),
    (JointId.HIP_RIGHT, JointId.KNEE_RIGHT),
    (JointId.KNEE_RIGHT, JointId.ANKLE_RIGHT),
    (JointId.ANKLE_RIGHT, JointId.FOOT_RIGHT),
]


class UntrackedLimbError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    position: np.ndarray
    state: JointState


@dataclass(eq=False)
class Skeleton:
    """One tracked body: 20 joint positions (meters, sensor coordinates)."""

    player_id: int
    positions: np.ndarray
    states: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(N_JOINTS, 3)
        if self.states is None:
            self.states = np.full(N_JOINTS, JointState.TRACKED, dtype=np.uint8)
        else:
            self.states = np.asarray(self.states, dtype=np.uint8).reshape(N_JOINTS)
        if not 1 <= self.player_id <= 7:
            raise ValueError("player_id must be in 1..7, got %r" % self.player_id)

    def joint(self, jid: JointId) -> Joint:
        return Joint(self.positions[jid].copy(), JointState(int(self.states[jid])))

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return (self.player_id == other.player_id
                and self.positions.tobytes() == other.positions.tobytes()
                and self.states.tobytes() == other.states.tobytes())

    def translated(self, offset) -> "Skeleton":
        return Skeleton(self.player_id, self.positions + np.asarray(offset, float), self.states.copy())


def hand_vector(skel: Skeleton, side: Side | str) -> np.ndarray:
    """Hand position relative to the body: x, y from the elbow, z from the shoulder."""
    shoulder, elbow, hand = LIMB_JOINTS[Side(side)]
    if (skel.states[[shoulder, elbow, hand]] == JointState.NOT_TRACKED).any():
        raise UntrackedLimbError("%s arm not tracked for player %d" % (Side(side).value, skel.player_id))
    p = skel.positions
    return np.array([p[hand, 0] - p[elbow, 0],
                     p[hand, 1] - p[elbow, 1],
                     p[hand, 2] - p[shoulder, 2]])


def hand_vectors(positions: np.ndarray, side: Side | str) -> np.ndarray:
    """Vectorised :func:`hand_vector` over a (T, 20, 3) position array."""
    shoulder, elbow, hand = LIMB_JOINTS[Side(side)]
    out = np.empty((positions.shape[0], 3))
    out[:, :2] = positions[:, hand, :2] - positions[:, elbow, :2]
    out[:, 2] = positions[:, hand, 2] - positions[:, shoulder, 2]
    return out


@dataclass(eq=False)
class SkeletonTrack:
    """Time series of one body: times (T,), positions (T, 20, 3), states (T, 20)."""

    player_id: int
    times_ms: np.ndarray
    positions: np.ndarray
    states: np.ndarray

    def __len__(self):
        return len(self.times_ms)

    def skeleton(self, i) -> Skeleton:
        return Skeleton(self.player_id, self.positions[i], self.states[i])

    def frames(self):
        for i in range(len(self)):
            yield self.times_ms[i], self.skeleton(i)

    def subset(self, mask) -> "SkeletonTrack":
        return SkeletonTrack(self.player_id, self.times_ms[mask], self.positions[mask], self.states[mask])

    @classmethod
    def from_frames(cls, frames, player_id=None) -> "SkeletonTrack":
        frames = list(frames)
        if player_id is None:
            player_id = frames[0][1].player_id if frames else 1
        if not frames:
            return cls(player_id, np.empty(0), np.empty((0, N_JOINTS, 3)), np.empty((0, N_JOINTS), np.uint8))
        return cls(player_id,
                   np.array([t for t, _ in frames], dtype=np.float64),
                   np.stack([s.positions for _, s in frames]),
                   np.stack([s.states for _, s in frames]))


def tracks_from_records(records) -> dict[int, SkeletonTrack]:
    """Group container skeleton records into one track per player id."""
    per_player: dict[int, list] = {}
    for rec in records:
        for sk in rec.skeletons:
            per_player.setdefault(sk.player_id, []).append((rec.timestamp_ms, sk))
    return {pid: SkeletonTrack.from_frames(fr, pid) for pid, fr in sorted(per_player.items())}


def _as_track(stream) -> SkeletonTrack:
    if isinstance(stream, SkeletonTrack):
        return stream
    return SkeletonTrack.from_frames(stream)


def resample_skeletons(stream, rate_hz: float = DEFAULT_RATE_HZ,
                       max_gap_ms: float = MAX_GAP_MS) -> list[SkeletonTrack]:
    """Linearly interpolate a jittered stream onto a uniform grid.

    Returns one track per contiguous run; a gap longer than ``max_gap_ms``
    ends a run and no samples are produced inside it.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    track = _as_track(stream)
    if len(track) == 0:
        return []
    t = track.times_ms
    if np.any(np.diff(t) <= 0):
        raise ValueError("input timestamps must be strictly increasing")

    step = 1000.0 / rate_hz
    cuts = np.flatnonzero(np.diff(t) > max_gap_ms) + 1
    bounds = np.concatenate([[0], cuts, [len(t)]])
    out = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        ts = t[a:b]
        n = int(np.floor((ts[-1] - ts[0]) / step + 1e-9)) + 1
        grid = ts[0] + step * np.arange(n)
        hi = np.clip(np.searchsorted(ts, grid, side="left"), 0, len(ts) - 1)
        lo = np.clip(hi - 1, 0, None)
        exact = ts[hi] == grid
        lo = np.where(exact, hi, lo)
        span = ts[hi] - ts[lo]
        w = np.where(span > 0, (grid - ts[lo]) / np.where(span > 0, span, 1.0), 0.0)
        pos = track.positions[a:b]
        new_pos = pos[lo] + w[:, None, None] * (pos[hi] - pos[lo])
        st = track.states[a:b]
        new_states = np.minimum(st[lo], st[hi])
        out.append(SkeletonTrack(track.player_id, grid, new_pos, new_states))
    return out
