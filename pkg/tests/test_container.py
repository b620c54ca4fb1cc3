import io
import struct

import numpy as np
import pytest

from bgspot.container import (CorruptStreamError, DepthFrame, FormatError, InsufficientDataError, OrderingError,
                              RgbFrame, SessionHeader, SkeletonFrameRecord, frame_rate_stats, gap_stats,
                              pack_depth_pixel, read_session, unpack_depth_pixel, write_session)
from bgspot.synth import SynthConfig, flat_jpeg, synthesize

from _factories import random_depth, random_session, random_skeleton_record


def roundtrip(header, frames):
    buf = io.BytesIO()
    write_session(header, frames, buf)
    h, it = read_session(buf.getvalue())
    return buf.getvalue(), h, list(it)


@pytest.mark.parametrize("depth,pid,packed", [(0, 0, 0), (8191, 7, 65535), (1000, 2, 8002)])
def test_pack_depth_pixel(depth, pid, packed):
    assert pack_depth_pixel(depth, pid) == packed
    assert unpack_depth_pixel(packed) == (depth, pid)


@pytest.mark.parametrize("args", [(8192, 0), (-1, 0), (0, 8)])
def test_pack_rejects_out_of_range(args):
    with pytest.raises(ValueError):
        pack_depth_pixel(*args)


def test_empty_session():
    data, h, frames = roundtrip(SessionHeader(sensor_id="empty"), [])
    assert frames == [] and h.sensor_id == "empty"
    assert data[:4] == b"RIFF" and data[8:12] == b"BGAC"
    assert struct.unpack("<I", data[4:8])[0] == len(data) - 8


def test_single_depth_frame_pixel_identical():
    rng = np.random.default_rng(1)
    f = random_depth(rng, 33, 48, 64)
    _, _, frames = roundtrip(SessionHeader(), [f])
    assert frames == [f]
    assert frames[0].pixels.dtype == np.uint16


def test_mixed_round_trip_field_for_field():
    header, frames = random_session(np.random.default_rng(5), n_frames=30)
    _, h, back = roundtrip(header, frames)
    assert h == header
    assert back == frames


def test_unknown_chunk_skipped():
    rng = np.random.default_rng(2)
    frames = [random_depth(rng, 0), random_skeleton_record(rng, 10)]
    buf = io.BytesIO()
    write_session(SessionHeader(), frames[:1], buf)
    raw = bytearray(buf.getvalue())
    raw += b"AUDI" + struct.pack("<I", 3) + b"xyz\x00"
    tail = io.BytesIO()
    write_session(SessionHeader(), frames[1:], tail)
    header_len = 12 + 8 + struct.unpack_from("<I", tail.getvalue(), 16)[0]
    header_len += header_len % 2
    raw += tail.getvalue()[header_len:]
    struct.pack_into("<I", raw, 4, len(raw) - 8)
    _, it = read_session(bytes(raw))
    assert list(it) == frames


def test_truncated_file_names_offset():
    rng = np.random.default_rng(3)
    buf = io.BytesIO()
    write_session(SessionHeader(), [random_depth(rng, t, 32, 32) for t in range(3)], buf)
    cut = len(buf.getvalue()) - 17
    _, it = read_session(buf.getvalue()[:cut])
    with pytest.raises(CorruptStreamError) as err:
        list(it)
    assert err.value.offset == cut
    assert "byte offset %d" % cut in str(err.value)


def test_streaming_sink_without_seek():
    class Pipe(io.RawIOBase):
        def __init__(self):
            self.data = bytearray()

        def writable(self):
            return True

        def write(self, b):
            self.data += b
            return len(b)

    pipe = Pipe()
    f = random_depth(np.random.default_rng(4), 5)
    write_session(SessionHeader(), [f], pipe)
    assert bytes(pipe.data[4:8]) == b"\xff\xff\xff\xff"
    _, it = read_session(bytes(pipe.data))
    assert list(it) == [f]


def test_bad_magic():
    with pytest.raises(FormatError):
        read_session(b"RIFX\x00\x00\x00\x00WAVE")


def test_out_of_order_frames_rejected():
    rng = np.random.default_rng(6)
    with pytest.raises(OrderingError):
        write_session(SessionHeader(), [random_depth(rng, 10), random_depth(rng, 5)], io.BytesIO())


def test_streams_may_interleave_timestamps():
    rng = np.random.default_rng(7)
    frames = [random_depth(rng, 10), random_skeleton_record(rng, 5), random_depth(rng, 20)]
    assert roundtrip(SessionHeader(), frames)[2] == frames


def test_invariants_enforced():
    with pytest.raises(ValueError):
        RgbFrame(0, 1, 1, b"not a jpeg")
    with pytest.raises(ValueError):
        SkeletonFrameRecord(0, [object()] * 3)
    with pytest.raises(ValueError):
        DepthFrame.from_planes(0, np.full((2, 2), 9000), np.zeros((2, 2)))
    assert flat_jpeg(8, 8)[:2] == b"\xff\xd8"


def test_gap_stats_examples():
    s = gap_stats([0, 33, 66])
    assert (s.min_ms, s.median_ms, s.max_ms) == (33, 33, 33)
    s = gap_stats([0, 33, 100])
    assert (s.min_ms, s.max_ms) == (33, 67)
    with pytest.raises(InsufficientDataError):
        gap_stats([0])


def test_synthetic_session_rates_and_size(tmp_path):
    cfg = SynthConfig(duration_s=60, prompts_per_gesture=0, seed=1, depth_hz=30, depth_width=160,
                      depth_height=120)
    session = synthesize(cfg)
    path = tmp_path / "s.bgac"
    n = session.write(path)
    _, it = read_session(path)
    stats = frame_rate_stats(it)
    assert 33 <= stats["depth"].median_ms <= 67
    assert 33 <= stats["skeleton"].median_ms <= 67
    raw = stats["depth"].n_frames * 160 * 120 * 2
    assert n < raw
