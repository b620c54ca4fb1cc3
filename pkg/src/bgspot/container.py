"""RIFF capture container ("BGAC") for timestamped depth, RGB and skeleton frames.

Layout, all integers little-endian, chunks padded to even length::

    RIFF <u32 size> BGAC
      HDRS  u32 version, u64 epoch_ms, u32 stream_flags, u16 len + UTF-8 sensor_id
      DPTH  u64 timestamp_ms, u16 width, u16 height, u32 compressed_len, LZF block
      RGBF  u64 timestamp_ms, u16 width, u16 height, u32 len, JPEG bytes
      SKEL  u64 timestamp_ms, u8 count, count x (u8 player_id,
            20 x (u8 joint_state, 3 x f32 position_m))

Depth pixels are 16-bit: depth in mm in the high 13 bits, player id in the
low 3 bits. The RIFF size is patched on close when the sink can seek;
otherwise it is left at 0xFFFFFFFF and readers scan to end of file.
"""

from __future__ import annotations

import enum
import io
import logging
import os
import statistics
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Union

import numpy as np

from . import lzf
from .skeleton import N_JOINTS, Skeleton

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FORM_TYPE = b"BGAC"
UNKNOWN_SIZE = 0xFFFFFFFF
MAX_DEPTH_MM = 8191
MAX_PLAYER_ID = 7
MAX_SKELETONS = 2

_HDRS = struct.Struct("<IQI")
_DPTH = struct.Struct("<QHHI")
_RGBF = struct.Struct("<QHHI")
_SKEL = struct.Struct("<QB")
_JOINT_DTYPE = np.dtype([("state", "u1"), ("pos", "<f4", (3,))])
_SKEL_BODY = 1 + N_JOINTS * _JOINT_DTYPE.itemsize


class ContainerError(Exception):
    pass


class FormatError(ContainerError):
    pass


class CorruptStreamError(ContainerError):
    def __init__(self, message, offset):
        super().__init__("%s (byte offset %d)" % (message, offset))
        self.offset = offset


class OrderingError(ContainerError):
    pass


class StreamFlags(enum.IntFlag):
    DEPTH = 1
    RGB = 2
    SKELETON = 4
    AUDIO = 8  # reserved, no codec


def pack_depth_pixel(depth_mm: int, player_id: int) -> int:
    if not 0 <= depth_mm <= MAX_DEPTH_MM:
        raise ValueError("depth %r mm outside 0..%d" % (depth_mm, MAX_DEPTH_MM))
    if not 0 <= player_id <= MAX_PLAYER_ID:
        raise ValueError("player id %r outside 0..%d" % (player_id, MAX_PLAYER_ID))
    return (depth_mm << 3) | player_id


def unpack_depth_pixel(packed: int) -> tuple[int, int]:
    if not 0 <= packed <= 0xFFFF:
        raise ValueError("packed pixel %r is not 16-bit" % packed)
    return packed >> 3, packed & 7


@dataclass
class SessionHeader:
    format_version: int = FORMAT_VERSION
    sensor_id: str = ""
    start_epoch_ms: int = 0
    stream_flags: StreamFlags = StreamFlags.DEPTH | StreamFlags.RGB | StreamFlags.SKELETON

    def __post_init__(self):
        self.stream_flags = StreamFlags(int(self.stream_flags))


@dataclass(eq=False)
class DepthFrame:
    timestamp_ms: int
    pixels: np.ndarray  # (height, width) uint16, packed

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint16)
        if self.pixels.ndim != 2:
            raise ValueError("depth pixels must be a 2-D array")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def depth_mm(self) -> np.ndarray:
        return self.pixels >> 3

    @property
    def player_ids(self) -> np.ndarray:
        return self.pixels & 7

    @classmethod
    def from_planes(cls, timestamp_ms, depth_mm, player_ids) -> "DepthFrame":
        depth_mm = np.asarray(depth_mm)
        player_ids = np.asarray(player_ids)
        if depth_mm.min(initial=0) < 0 or depth_mm.max(initial=0) > MAX_DEPTH_MM:
            raise ValueError("depth outside 0..%d mm" % MAX_DEPTH_MM)
        if player_ids.min(initial=0) < 0 or player_ids.max(initial=0) > MAX_PLAYER_ID:
            raise ValueError("player id outside 0..%d" % MAX_PLAYER_ID)
        packed = (depth_mm.astype(np.uint16) << 3) | player_ids.astype(np.uint16)
        return cls(timestamp_ms, packed)

    def __eq__(self, other):
        if not isinstance(other, DepthFrame):
            return NotImplemented
        return (self.timestamp_ms == other.timestamp_ms
                and self.pixels.shape == other.pixels.shape
                and np.array_equal(self.pixels, other.pixels))


@dataclass
class RgbFrame:
    timestamp_ms: int
    width: int
    height: int
    payload: bytes

    def __post_init__(self):
        self.payload = bytes(self.payload)
        if not (self.payload[:2] == b"\xff\xd8" and self.payload[-2:] == b"\xff\xd9"):
            raise ValueError("RGB payload is not a framed JPEG (SOI/EOI missing)")


@dataclass
class SkeletonFrameRecord:
    timestamp_ms: int
    skeletons: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.skeletons) > MAX_SKELETONS:
            raise ValueError("at most %d skeletons per frame" % MAX_SKELETONS)


Frame = Union[DepthFrame, RgbFrame, SkeletonFrameRecord]

STREAM_NAMES = {DepthFrame: "depth", RgbFrame: "rgb", SkeletonFrameRecord: "skeleton"}


def _chunk(cid: bytes, payload: bytes) -> bytes:
    pad = b"\x00" if len(payload) % 2 else b""
    return cid + struct.pack("<I", len(payload)) + payload + pad


def encode_frame(frame: Frame) -> bytes:
    if isinstance(frame, DepthFrame):
        raw = frame.pixels.astype("<u2", copy=False).tobytes()
        block = lzf.compress(raw)
        return _chunk(b"DPTH", _DPTH.pack(frame.timestamp_ms, frame.width, frame.height, len(block)) + block)
    if isinstance(frame, RgbFrame):
        return _chunk(b"RGBF", _RGBF.pack(frame.timestamp_ms, frame.width, frame.height,
                                          len(frame.payload)) + frame.payload)
    if isinstance(frame, SkeletonFrameRecord):
        parts = [_SKEL.pack(frame.timestamp_ms, len(frame.skeletons))]
        for sk in frame.skeletons:
            joints = np.empty(N_JOINTS, dtype=_JOINT_DTYPE)
            joints["state"] = sk.states
            joints["pos"] = sk.positions
            parts.append(struct.pack("<B", sk.player_id) + joints.tobytes())
        return _chunk(b"SKEL", b"".join(parts))
    raise TypeError("not a frame: %r" % (frame,))


def encode_header(header: SessionHeader) -> bytes:
    sid = header.sensor_id.encode("utf-8")
    return _chunk(b"HDRS", _HDRS.pack(header.format_version, header.start_epoch_ms, int(header.stream_flags))
                  + struct.pack("<H", len(sid)) + sid)


class SessionWriter:
    """Streams frames into a container; memory use is one frame at a time."""

    def __init__(self, sink: BinaryIO, header: SessionHeader):
        self.sink = sink
        self.header = header
        self._last_ts: dict[type, int] = {}
        self._start = sink.tell() if sink.seekable() else None
        self.bytes_written = 0
        self._emit(b"RIFF" + struct.pack("<I", UNKNOWN_SIZE) + FORM_TYPE)
        self._emit(encode_header(header))
        self.closed = False

    def _emit(self, data: bytes):
        self.sink.write(data)
        self.bytes_written += len(data)

    def write(self, frame: Frame):
        kind = type(frame)
        last = self._last_ts.get(kind)
        if last is not None and frame.timestamp_ms < last:
            raise OrderingError("%s timestamp %d precedes %d" % (STREAM_NAMES[kind], frame.timestamp_ms, last))
        self._last_ts[kind] = frame.timestamp_ms
        self._emit(encode_frame(frame))

    def close(self) -> int:
        if self.closed:
            return self.bytes_written
        self.closed = True
        riff_size = self.bytes_written - 8
        if self._start is not None and riff_size <= 0xFFFFFFFE:
            end = self.sink.tell()
            self.sink.seek(self._start + 4)
            self.sink.write(struct.pack("<I", riff_size))
            self.sink.seek(end)
        self.sink.flush()
        return self.bytes_written

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_session(header: SessionHeader, frames, sink) -> int:
    """Write ``frames`` to ``sink`` (path or binary file); returns bytes written."""
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            return write_session(header, frames, fh)
    writer = SessionWriter(sink, header)
    for frame in frames:
        writer.write(frame)
    return writer.close()


class SessionReader:
    """Lazy container reader. Iterating yields frames in file order."""

    def __init__(self, source: BinaryIO):
        self.source = source
        self.offset = 0
        magic = self._read_exact(12, "RIFF header")
        if magic[:4] != b"RIFF" or magic[8:12] != FORM_TYPE:
            raise FormatError("not a BGAC RIFF container (magic %r)" % magic[:12])
        size = struct.unpack("<I", magic[4:8])[0]
        self.end = None if size == UNKNOWN_SIZE else 8 + size
        cid, payload, at = self._next_chunk()
        if cid != b"HDRS":
            raise FormatError("first chunk is %r, expected HDRS" % cid)
        self.header = self._decode_header(payload, at)
        if self.header.format_version != FORMAT_VERSION:
            raise FormatError("unsupported container version %d" % self.header.format_version)

    def _read_exact(self, n, what):
        data = self.source.read(n)
        if len(data) != n:
            raise CorruptStreamError("truncated %s: wanted %d bytes, got %d" % (what, n, len(data)),
                                     self.offset + len(data))
        self.offset += n
        return data

    def _next_chunk(self):
        if self.end is not None and self.offset >= self.end:
            return None, None, self.offset
        at = self.offset
        head = self.source.read(8)
        if not head and self.end is None:
            return None, None, at
        if len(head) != 8:
            raise CorruptStreamError("truncated chunk header", at + len(head))
        self.offset += 8
        cid, size = head[:4], struct.unpack("<I", head[4:])[0]
        if self.end is not None and at + 8 + size > self.end:
            raise CorruptStreamError("chunk %r overruns RIFF body" % cid, at)
        payload = self._read_exact(size, "chunk %r started at offset %d" % (cid, at))
        if size % 2:
            pad = self.source.read(1)
            self.offset += len(pad)
        return cid, payload, at

    @staticmethod
    def _decode_header(payload, at):
        try:
            version, epoch, flags = _HDRS.unpack_from(payload)
            (n,) = struct.unpack_from("<H", payload, _HDRS.size)
            sid = payload[_HDRS.size + 2:_HDRS.size + 2 + n]
            if len(sid) != n:
                raise struct.error("sensor id truncated")
            return SessionHeader(version, sid.decode("utf-8"), epoch, StreamFlags(flags))
        except (struct.error, UnicodeDecodeError) as exc:
            raise CorruptStreamError("bad HDRS chunk: %s" % exc, at) from None

    @staticmethod
    def _decode(cid, payload, at) -> Frame | None:
        try:
            if cid == b"DPTH":
                ts, w, h, n = _DPTH.unpack_from(payload)
                block = payload[_DPTH.size:_DPTH.size + n]
                if len(block) != n:
                    raise CorruptStreamError("DPTH block shorter than declared", at)
                raw = lzf.decompress(block, w * h * 2)
                return DepthFrame(ts, np.frombuffer(raw, dtype="<u2").reshape(h, w).astype(np.uint16))
            if cid == b"RGBF":
                ts, w, h, n = _RGBF.unpack_from(payload)
                data = payload[_RGBF.size:_RGBF.size + n]
                if len(data) != n:
                    raise CorruptStreamError("RGBF payload shorter than declared", at)
                return RgbFrame(ts, w, h, data)
            if cid == b"SKEL":
                ts, count = _SKEL.unpack_from(payload)
                if count > MAX_SKELETONS or len(payload) < _SKEL.size + count * _SKEL_BODY:
                    raise CorruptStreamError("bad SKEL chunk", at)
                skels = []
                pos = _SKEL.size
                for _ in range(count):
                    pid = payload[pos]
                    joints = np.frombuffer(payload, dtype=_JOINT_DTYPE, count=N_JOINTS, offset=pos + 1)
                    skels.append(Skeleton(pid, joints["pos"].astype(np.float64), joints["state"].copy()))
                    pos += _SKEL_BODY
                return SkeletonFrameRecord(ts, skels)
        except (struct.error, ValueError) as exc:
            raise CorruptStreamError("bad %s chunk: %s" % (cid.decode("latin-1"), exc), at) from None
        return None

    def __iter__(self) -> Iterator[Frame]:
        while True:
            cid, payload, at = self._next_chunk()
            if cid is None:
                return
            frame = self._decode(cid, payload, at)
            if frame is None:
                logger.warning("skipping unknown chunk %r at offset %d", cid, at)
                continue
            yield frame


def read_session(source) -> tuple[SessionHeader, Iterator[Frame]]:
    """Open a container; returns the header and a lazy frame iterator."""
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, "rb")
        try:
            reader = SessionReader(fh)
        except Exception:
            fh.close()
            raise

        def frames():
            with fh:
                yield from reader
        return reader.header, frames()
    reader = SessionReader(source)
    return reader.header, iter(reader)


@dataclass
class GapStats:
    min_ms: float
    median_ms: float
    max_ms: float
    n_frames: int


class InsufficientDataError(ValueError):
    pass


def gap_stats(timestamps) -> GapStats:
    ts = list(timestamps)
    if len(ts) < 2:
        raise InsufficientDataError("need at least 2 frames, got %d" % len(ts))
    gaps = [b - a for a, b in zip(ts, ts[1:])]
    return GapStats(min(gaps), statistics.median(gaps), max(gaps), len(ts))


def frame_rate_stats(frames) -> dict[str, GapStats]:
    """Inter-frame gap statistics per stream ("depth", "rgb", "skeleton").

    Streams with fewer than 2 frames are omitted; if no stream qualifies,
    :class:`InsufficientDataError` is raised.
    """
    times: dict[str, list] = {}
    for fr in frames:
        times.setdefault(STREAM_NAMES[type(fr)], []).append(fr.timestamp_ms)
    out = {name: gap_stats(ts) for name, ts in times.items() if len(ts) >= 2}
    if not out:
        raise InsufficientDataError("no stream has at least 2 frames")
    return out
