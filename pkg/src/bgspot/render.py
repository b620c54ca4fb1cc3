"""Coarse depth rendering of skeletons as capsule blobs with player-id masks."""

from __future__ import annotations

import numpy as np
from numba import njit

from .container import DepthFrame, MAX_DEPTH_MM
from .skeleton import BONES, JointId

FOCAL_PX = 571.0  # at 640x480
BLOCK = 4  # render at 1/BLOCK resolution, then upsample
BACKGROUND_MM = 3500.0

_BONE_PAIRS = np.array([[int(a), int(b)] for a, b in BONES], dtype=np.int64)
_RADII = np.array([0.15 if a == JointId.HIP_CENTER and b == JointId.SPINE else
                   0.16 if a == JointId.SPINE else
                   0.10 if b == JointId.HEAD else
                   0.07 if a == JointId.SHOULDER_CENTER else
                   0.09 if a in (JointId.HIP_CENTER, JointId.HIP_LEFT, JointId.HIP_RIGHT) else
                   0.05 for a, b in BONES])


@njit(cache=True)
def _raster(positions, player_ids, bones, radii, f, cx, cy, zbuf, pbuf):
    h, w = zbuf.shape
    for s in range(positions.shape[0]):
        pid = player_ids[s]
        for k in range(bones.shape[0]):
            p0 = positions[s, bones[k, 0]]
            p1 = positions[s, bones[k, 1]]
            if p0[2] < 0.3 or p1[2] < 0.3:
                continue
            R = radii[k]
            u0 = cx + f * p0[0] / p0[2]
            v0 = cy - f * p0[1] / p0[2]
            u1 = cx + f * p1[0] / p1[2]
            v1 = cy - f * p1[1] / p1[2]
            r0 = f * R / p0[2]
            r1 = f * R / p1[2]
            rmax = max(r0, r1)
            umin = max(int(min(u0, u1) - rmax), 0)
            umax = min(int(max(u0, u1) + rmax) + 1, w - 1)
            vmin = max(int(min(v0, v1) - rmax), 0)
            vmax = min(int(max(v0, v1) + rmax) + 1, h - 1)
            du = u1 - u0
            dv = v1 - v0
            L2 = du * du + dv * dv
            for v in range(vmin, vmax + 1):
                for u in range(umin, umax + 1):
                    if L2 > 0:
                        t = ((u - u0) * du + (v - v0) * dv) / L2
                        t = min(max(t, 0.0), 1.0)
                    else:
                        t = 0.0
                    qu = u0 + t * du - u
                    qv = v0 + t * dv - v
                    d = np.sqrt(qu * qu + qv * qv)
                    r = r0 + t * (r1 - r0)
                    if d < r:
                        z = p0[2] + t * (p1[2] - p0[2]) - R * np.sqrt(1.0 - (d / r) ** 2)
                        z_mm = z * 1000.0
                        if z_mm < zbuf[v, u]:
                            zbuf[v, u] = z_mm
                            pbuf[v, u] = pid


def background_depth(height: int, width: int) -> np.ndarray:
    """Back wall with a floor plane that approaches the sensor toward the image bottom."""
    rows = np.arange(height)
    horizon = 0.55 * height
    floor = np.where(rows > horizon, 1600.0 + (height - rows) / max(height - horizon, 1) * 1900.0, BACKGROUND_MM)
    return np.repeat(np.minimum(floor, BACKGROUND_MM)[:, None], width, axis=1)


def render_depth(timestamp_ms, skeletons, width=640, height=480, rng=None, noise_mm=3.0) -> DepthFrame:
    """Rasterise skeletons ((player_id, (20,3) positions) pairs) into a packed depth frame."""
    hc, wc = max(height // BLOCK, 1), max(width // BLOCK, 1)
    zbuf = background_depth(hc, wc)
    pbuf = np.zeros((hc, wc), dtype=np.int64)
    if skeletons:
        pos = np.stack([np.asarray(p, dtype=np.float64) for _, p in skeletons])
        pids = np.array([pid for pid, _ in skeletons], dtype=np.int64)
        _raster(pos, pids, _BONE_PAIRS, _RADII, FOCAL_PX * wc / 640.0, wc / 2.0, hc / 2.0, zbuf, pbuf)
    if rng is not None and noise_mm > 0:
        zbuf = zbuf + rng.normal(0.0, noise_mm, zbuf.shape)
    depth = np.clip(np.rint(zbuf), 0, MAX_DEPTH_MM).astype(np.uint16)
    depth = np.repeat(np.repeat(depth, BLOCK, axis=0), BLOCK, axis=1)[:height, :width]
    pid = np.repeat(np.repeat(pbuf.astype(np.uint16), BLOCK, axis=0), BLOCK, axis=1)[:height, :width]
    if depth.shape != (height, width):
        depth = np.pad(depth, ((0, height - depth.shape[0]), (0, width - depth.shape[1])), mode="edge")
        pid = np.pad(pid, ((0, height - pid.shape[0]), (0, width - pid.shape[1])), mode="edge")
    return DepthFrame(int(timestamp_ms), (depth << 3) | pid)
