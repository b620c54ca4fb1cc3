"""Random frame builders shared by container tests."""

import numpy as np

from bgspot.container import DepthFrame, RgbFrame, SessionHeader, SkeletonFrameRecord, StreamFlags
from bgspot.skeleton import N_JOINTS, Skeleton
from bgspot.synth import flat_jpeg


def random_depth(rng, ts, h=None, w=None):
    h = h or int(rng.integers(1, 24))
    w = w or int(rng.integers(1, 24))
    depth = rng.integers(0, 8192, (h, w))
    if rng.random() < 0.5:  # smooth regions exercise back-references
        depth[:, : w // 2] = depth[0, 0]
    return DepthFrame.from_planes(ts, depth, rng.integers(0, 8, (h, w)))


def random_skeleton_record(rng, ts):
    n = int(rng.integers(0, 3))
    pids = rng.choice(np.arange(1, 8), size=n, replace=False)
    skels = [Skeleton(int(p), rng.normal(0, 1, (N_JOINTS, 3)).astype(np.float32).astype(np.float64),
                      rng.integers(0, 3, N_JOINTS)) for p in pids]
    return SkeletonFrameRecord(ts, skels)


def random_session(rng, n_frames=None):
    header = SessionHeader(sensor_id="fuzz-%d" % rng.integers(1000), start_epoch_ms=int(rng.integers(2 ** 40)),
                           stream_flags=StreamFlags(int(rng.integers(0, 16))))
    frames, ts = [], 0
    for _ in range(int(rng.integers(0, 12)) if n_frames is None else n_frames):
        ts += int(rng.integers(0, 50))
        kind = rng.integers(3)
        if kind == 0:
            frames.append(random_depth(rng, ts))
        elif kind == 1:
            frames.append(RgbFrame(ts, 8, 8, flat_jpeg(8, 8, int(rng.integers(256)))))
        else:
            frames.append(random_skeleton_record(rng, ts))
    return header, frames
