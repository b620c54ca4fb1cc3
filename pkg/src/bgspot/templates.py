"""Parametric hand paths for the eight gestures.

Paths are hand positions relative to the same-side shoulder in a body frame
``(lateral, up, forward)``: lateral is positive away from the body midline,
forward points toward the sensor. :func:`to_sensor` maps them into sensor
axes for either hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .skeleton import Side

PATH_RATE_HZ = 100.0

ORIGINAL_GESTURES = ("Swipe", "AirTap", "Wave", "Point")
PROPOSED_GESTURES = ("Pause Swipe", "Circle", "Vertical Circling", "Forward Up")
ALL_GESTURES = ORIGINAL_GESTURES + PROPOSED_GESTURES
# proposed replacement for each original gesture
REDESIGN_PAIRS = dict(zip(ORIGINAL_GESTURES, PROPOSED_GESTURES))


@dataclass(frozen=True)
class GestureTemplate:
    name: str
    variant: str
    program: str
    amplitude_m: float = 0.0
    duration_ms: float = 600.0
    axis: str = "lateral"
    hold_ms: float = 0.0
    pause_ms: float = 0.0
    radius_m: float = 0.0
    period_ms: float = 0.0
    noise_sigma_m: float = 0.001
    amp_scale: tuple = (0.88, 1.12)
    dur_scale: tuple = (0.85, 1.2)
    start: tuple = (0.0, 0.0, 0.0)


@dataclass
class HandPath:
    times_ms: np.ndarray
    points: np.ndarray  # (K, 3) body frame, shoulder-relative
    template: GestureTemplate = field(repr=False, default=None)
    amp_scale: float = 1.0
    dur_scale: float = 1.0

    @property
    def duration_ms(self) -> float:
        return float(self.times_ms[-1] - self.times_ms[0])


def min_jerk(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau ** 3 * (10 - 15 * tau + 6 * tau ** 2)


def to_sensor(points, side: Side | str) -> np.ndarray:
    """Body-frame (lateral, up, forward) -> sensor axes (x right, y up, z away)."""
    p = np.asarray(points, dtype=np.float64)
    lat_sign = -1.0 if Side(side) == Side.RIGHT else 1.0
    return np.stack([lat_sign * p[..., 0], p[..., 1], -p[..., 2]], axis=-1)


def to_body(points, side: Side | str) -> np.ndarray:
    return to_sensor(points, side)  # the mapping is its own inverse


class PathBuilder:
    """Concatenates timed segments into one path sampled at PATH_RATE_HZ."""

    def __init__(self, start):
        self.pieces = [np.asarray(start, float)[None, :]]
        self.current = np.asarray(start, float)

    def move(self, target, ms):
        target = np.asarray(target, float)
        n = max(int(round(ms * PATH_RATE_HZ / 1000.0)), 1)
        s = min_jerk(np.arange(1, n + 1) / n)[:, None]
        self.pieces.append(self.current + s * (target - self.current))
        self.current = target

    def hold(self, ms):
        n = int(round(ms * PATH_RATE_HZ / 1000.0))
        if n > 0:
            self.pieces.append(np.repeat(self.current[None, :], n, axis=0))

    def curve(self, fn, ms):
        n = max(int(round(ms * PATH_RATE_HZ / 1000.0)), 1)
        pts = np.array([fn(k / n) for k in range(1, n + 1)])
        self.pieces.append(pts)
        self.current = pts[-1]

    def points(self):
        return np.vstack(self.pieces)


def _swipe(b, t, a, d):
    half = 0.5 * t.amplitude_m * a
    x0, y, z = t.start
    b.current = np.array([x0 + half, y, z])
    b.pieces = [b.current[None, :]]
    if t.pause_ms:
        b.hold(t.pause_ms)
    b.move([x0 - half, y, z], t.duration_ms * d)


def _airtap(b, t, a, d):
    x, y, z = t.start
    push = t.amplitude_m * a
    b.move([x, y, z + push], 220 * d)
    if t.variant == "relax":
        b.move([x, y - 0.03, z + 0.02], 450 * d)
    elif t.variant == "drop":
        b.move([x + 0.03, y - 0.30, z + push - 0.10], 400 * d)
    else:  # pull back
        b.move([x, y, z - 0.03], 150 * d)
        b.hold(150 * d)


def _wave(b, t, a, d):
    x0, y, z = t.start
    amp = 0.5 * t.amplitude_m * a
    dur = max(t.duration_ms * d, 800.0)
    cycles = max(round(t.duration_ms / t.period_ms), 1)  # fixed stroke count; jitter stretches the period

    def f(tau):
        ph = 2 * math.pi * tau * cycles
        return [x0 + amp * math.sin(ph), y + 0.01 * math.sin(2 * ph), z]
    b.curve(f, dur)


def _point(b, t, a, d):
    x, y, z = t.start
    reach = t.amplitude_m * a
    b.move([x - 0.02, y + 0.65 * reach, z + reach], 250 * d)
    b.hold(t.hold_ms * d)


def _circle(b, t, a, d):
    cx, cy, cz = t.start
    r = t.radius_m * a
    b.current = np.array([cx, cy + r, cz])
    b.pieces = [b.current[None, :]]

    def f(tau):
        ang = 2 * math.pi * float(min_jerk(tau))
        return [cx + r * math.sin(ang), cy + r * math.cos(ang), cz]
    b.curve(f, t.duration_ms * d)


def _vertical_circling(b, t, a, d):
    cx, cy, cz = t.start
    r = t.radius_m * a
    dur = t.duration_ms * d
    b.current = np.array([cx, cy, cz + r])
    b.pieces = [b.current[None, :]]

    def f(tau):
        ang = 2 * math.pi * tau * dur / t.period_ms
        return [cx + r * math.sin(ang), cy, cz + r * math.cos(ang)]
    b.curve(f, dur)


def _forward_up(b, t, a, d):
    x, y, z = t.start
    push = t.amplitude_m * a
    b.move([x, y, z + push], 250 * d)
    b.move([x, y + 0.6 * push, z + push], 150 * d)


PROGRAMS = {
    "swipe": _swipe,
    "airtap": _airtap,
    "wave": _wave,
    "point": _point,
    "circle": _circle,
    "vertical_circling": _vertical_circling,
    "forward_up": _forward_up,
}

_SWIPE_STRAIGHT = dict(program="swipe", amplitude_m=0.60, duration_ms=600.0, start=(0.0, -0.05, 0.42))

TEMPLATES: dict[tuple[str, str], GestureTemplate] = {
    ("Swipe", "elbow straight"): GestureTemplate("Swipe", "elbow straight", **_SWIPE_STRAIGHT),
    ("Swipe", "elbow bent"): GestureTemplate("Swipe", "elbow bent", "swipe", amplitude_m=0.60,
                                             duration_ms=650.0, start=(-0.03, -0.18, 0.28)),
    ("AirTap", "relax"): GestureTemplate("AirTap", "relax", "airtap", amplitude_m=0.25,
                                         start=(0.06, -0.12, 0.22)),
    ("AirTap", "drop"): GestureTemplate("AirTap", "drop", "airtap", amplitude_m=0.25,
                                        start=(0.06, -0.12, 0.22)),
    ("AirTap", "pull back"): GestureTemplate("AirTap", "pull back", "airtap", amplitude_m=0.25,
                                             start=(0.06, -0.12, 0.22)),
    ("Wave", "default"): GestureTemplate("Wave", "default", "wave", amplitude_m=0.25, duration_ms=900.0,
                                         period_ms=450.0, start=(0.20, 0.08, 0.20)),
    ("Point", "default"): GestureTemplate("Point", "default", "point", amplitude_m=0.32, hold_ms=1000.0,
                                          start=(0.06, -0.28, 0.18), dur_scale=(0.9, 1.1)),
    # hand raised beside the head for the pause, then swept across at that height
    ("Pause Swipe", "default"): GestureTemplate("Pause Swipe", "default", "swipe", amplitude_m=0.60,
                                                duration_ms=600.0, pause_ms=500.0, start=(0.0, 0.15, 0.22)),
    ("Circle", "default"): GestureTemplate("Circle", "default", "circle", radius_m=0.35, duration_ms=1300.0,
                                           start=(0.02, 0.0, 0.36), amp_scale=(0.9, 1.1)),
    ("Vertical Circling", "default"): GestureTemplate("Vertical Circling", "default", "vertical_circling",
                                                      radius_m=0.08, duration_ms=1500.0, period_ms=500.0,
                                                      start=(0.15, 0.12, 0.22)),
    ("Forward Up", "default"): GestureTemplate("Forward Up", "default", "forward_up", amplitude_m=0.25,
                                               duration_ms=400.0, start=(0.05, -0.12, 0.22),
                                               dur_scale=(0.85, 1.0)),
}


def variants_of(gesture: str) -> list[GestureTemplate]:
    out = [t for (g, _), t in TEMPLATES.items() if g == gesture]
    if not out:
        raise KeyError("unknown gesture %r" % gesture)
    return out


def get_template(gesture: str, variant: str | None = None) -> GestureTemplate:
    if variant is None:
        return variants_of(gesture)[0]
    return TEMPLATES[(gesture, variant)]


def _smooth_noise(rng, n, sigma, width_samples=8.0):
    if sigma <= 0 or n == 0:
        return np.zeros((n, 3))
    k = np.arange(-int(3 * width_samples), int(3 * width_samples) + 1)
    kernel = np.exp(-0.5 * (k / width_samples) ** 2)
    kernel /= np.sqrt((kernel ** 2).sum())
    raw = rng.normal(0.0, sigma, (n + len(k) - 1, 3))
    return np.stack([np.convolve(raw[:, i], kernel, mode="valid") for i in range(3)], axis=1)


def render_template(template: GestureTemplate, seed, **overrides) -> HandPath:
    """Sample one performance: amplitude/duration jitter plus smooth tremor."""
    if overrides:
        template = replace(template, **overrides)
    rng = np.random.default_rng(seed)
    a = rng.uniform(*template.amp_scale)
    d = rng.uniform(*template.dur_scale)
    b = PathBuilder(template.start)
    PROGRAMS[template.program](b, template, a, d)
    pts = b.points()
    pts = pts + _smooth_noise(rng, len(pts), template.noise_sigma_m)
    times = np.arange(len(pts)) * (1000.0 / PATH_RATE_HZ)
    return HandPath(times, pts, template, a, d)
