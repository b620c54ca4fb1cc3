"""Discretise body-relative hand motion into HMM observation symbols.

A symbol packs a position symbol (radius bit + three angle bins, 54 values)
and a velocity symbol (direction in {-1, 0, +1}^3, 27 values):
``symbol = position_index * 27 + velocity_index``.
"""

from __future__ import annotations

import configparser
import enum
import itertools
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .skeleton import (LIMB_JOINTS, JointState, Side, SkeletonTrack, hand_vectors,
                       resample_skeletons)

N_POSITION = 54
N_VELOCITY = 27
N_SYMBOLS = N_POSITION * N_VELOCITY
ANGLE_BIN_RAD = math.pi / 4


class AngleBin(enum.IntEnum):
    LOW = 0
    MID = 1
    HIGH = 2


@dataclass(frozen=True)
class FeatureConfig:
    radius_threshold_m: float = 0.25
    speed_threshold_mps: float = 0.15
    resample_hz: float = 30.0
    angle_bin_rad: float = field(default=ANGLE_BIN_RAD, init=False)

    def __post_init__(self):
        if self.radius_threshold_m <= 0 or self.speed_threshold_mps <= 0 or self.resample_hz <= 0:
            raise ValueError("feature thresholds and resample rate must be positive")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.init}

    @classmethod
    def from_mapping(cls, values) -> "FeatureConfig":
        known = {f.name for f in fields(cls) if f.init}
        return cls(**{k: float(v) for k, v in values.items() if k in known})


def read_key_values(path) -> dict[str, str]:
    """Read a ``key = value`` text file (``#`` comments allowed)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_string("[cfg]\n" + Path(path).read_text())
    return dict(parser["cfg"])


def load_feature_config(path) -> FeatureConfig:
    return FeatureConfig.from_mapping(read_key_values(path))


@dataclass(frozen=True)
class PositionSymbol:
    radius_bit: int
    angle_x: AngleBin
    angle_y: AngleBin
    angle_z: AngleBin

    @property
    def index(self) -> int:
        return self.radius_bit * 27 + self.angle_x * 9 + self.angle_y * 3 + self.angle_z

    @classmethod
    def from_index(cls, idx: int) -> "PositionSymbol":
        if not 0 <= idx < N_POSITION:
            raise ValueError("position index out of range: %r" % idx)
        r, rest = divmod(idx, 27)
        ax, rest = divmod(rest, 9)
        ay, az = divmod(rest, 3)
        return cls(r, AngleBin(ax), AngleBin(ay), AngleBin(az))


@dataclass(frozen=True)
class VelocitySymbol:
    direction: tuple[int, int, int]

    @property
    def index(self) -> int:
        dx, dy, dz = self.direction
        return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)

    @classmethod
    def from_index(cls, idx: int) -> "VelocitySymbol":
        if not 0 <= idx < N_VELOCITY:
            raise ValueError("velocity index out of range: %r" % idx)
        a, rest = divmod(idx, 9)
        b, c = divmod(rest, 3)
        return cls((a - 1, b - 1, c - 1))


REST = VelocitySymbol((0, 0, 0))

# nonzero direction candidates in packed-index order, so argmax ties go to the lowest index
_DIRS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)], dtype=np.float64)
_DIR_INDEX = np.array([VelocitySymbol(tuple(int(x) for x in d)).index for d in _DIRS])
_UNIT_DIRS = _DIRS / np.linalg.norm(_DIRS, axis=1, keepdims=True)


def pack_symbol(pos: PositionSymbol, vel: VelocitySymbol) -> int:
    return pos.index * N_VELOCITY + vel.index


def unpack_symbol(symbol: int) -> tuple[PositionSymbol, VelocitySymbol]:
    if not 0 <= symbol < N_SYMBOLS:
        raise ValueError("symbol out of range: %r" % symbol)
    p, v = divmod(int(symbol), N_VELOCITY)
    return PositionSymbol.from_index(p), VelocitySymbol.from_index(v)


def position_indices(v: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Position symbol index for each row of a (T, 3) hand-vector array."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    norm = np.linalg.norm(v, axis=1)
    radius_bit = (norm >= cfg.radius_threshold_m).astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arcsin(np.clip(v / norm[:, None], -1.0, 1.0))
    bins = np.where(theta < -cfg.angle_bin_rad, AngleBin.LOW,
                    np.where(theta > cfg.angle_bin_rad, AngleBin.HIGH, AngleBin.MID))
    bins[norm == 0] = AngleBin.MID
    return radius_bit * 27 + bins[:, 0] * 9 + bins[:, 1] * 3 + bins[:, 2]


def velocity_indices(vel: np.ndarray, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Velocity symbol index for each row of a (T, 3) velocity array (m/s)."""
    vel = np.atleast_2d(np.asarray(vel, dtype=np.float64))
    speed = np.linalg.norm(vel, axis=1)
    best = _DIR_INDEX[np.argmax(vel @ _UNIT_DIRS.T, axis=1)]
    return np.where(speed < cfg.speed_threshold_mps, REST.index, best)


def discretize_position(v, cfg: FeatureConfig = FeatureConfig()) -> PositionSymbol:
    return PositionSymbol.from_index(int(position_indices(v, cfg)[0]))


def discretize_velocity(v_now, v_prev, dt_s: float, cfg: FeatureConfig = FeatureConfig()) -> VelocitySymbol:
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    vel = (np.asarray(v_now, float) - np.asarray(v_prev, float)) / dt_s
    return VelocitySymbol.from_index(int(velocity_indices(vel, cfg)[0]))


def symbols_from_hand_vectors(hv: np.ndarray, dt_s: float, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Symbols for one uninterrupted, uniformly sampled run of hand vectors."""
    hv = np.asarray(hv, dtype=np.float64)
    vel = np.zeros_like(hv)
    if len(hv) > 1:
        vel[1:] = (hv[1:] - hv[:-1]) / dt_s
    vidx = velocity_indices(vel, cfg)
    vidx[0] = REST.index
    return position_indices(hv, cfg) * N_VELOCITY + vidx


@dataclass(eq=False)
class ObservationSequence:
    symbols: np.ndarray
    timestamps_ms: np.ndarray | None = None
    side: Side | None = None
    skeleton_id: int | None = None

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.int64)
        if self.timestamps_ms is not None:
            self.timestamps_ms = np.asarray(self.timestamps_ms, dtype=np.float64)
            if self.timestamps_ms.shape != self.symbols.shape:
                raise ValueError("timestamps and symbols differ in length")

    def __len__(self):
        return len(self.symbols)

    @property
    def time_range(self):
        if self.timestamps_ms is None or not len(self):
            return None
        return float(self.timestamps_ms[0]), float(self.timestamps_ms[-1])

    def slice_time(self, start_ms, end_ms) -> "ObservationSequence":
        m = (self.timestamps_ms >= start_ms) & (self.timestamps_ms <= end_ms)
        return ObservationSequence(self.symbols[m], self.timestamps_ms[m], self.side, self.skeleton_id)


def extract_sequence(stream, side: Side | str, cfg: FeatureConfig = FeatureConfig()) -> list[ObservationSequence]:
    """Skeleton stream -> observation sequences for one hand.

    Frames where the arm is not tracked are dropped; the stream is resampled
    at ``cfg.resample_hz`` and split wherever the resampler breaks.
    """
    side = Side(side)
    track = stream if isinstance(stream, SkeletonTrack) else SkeletonTrack.from_frames(stream)
    if len(track) == 0:
        return []
    limb = list(LIMB_JOINTS[side])
    ok = (track.states[:, limb] != JointState.NOT_TRACKED).all(axis=1)
    track = track.subset(ok)
    dt_s = 1.0 / cfg.resample_hz
    out = []
    for seg in resample_skeletons(track, cfg.resample_hz):
        hv = hand_vectors(seg.positions, side)
        out.append(ObservationSequence(symbols_from_hand_vectors(hv, dt_s, cfg),
                                       seg.times_ms, side, track.player_id))
    return out
