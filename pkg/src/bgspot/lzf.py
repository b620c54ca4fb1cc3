"""LZF block codec.

Produces the same token stream as liblzf's ``lzf_compress`` (VERY_FAST mode,
16-bit hash table) so depth payloads stay readable by other LZF decoders.

Token format:
  000LLLLL                      literal run of L+1 bytes
  LLLooooo oooooooo             back-reference, length L+2, offset o+1
  111ooooo LLLLLLLL oooooooo    long back-reference, length L+9
"""

import numpy as np
from numba import njit

HLOG = 16
HSIZE = 1 << HLOG
MAX_LIT = 1 << 5
MAX_OFF = 1 << 13
MAX_REF = (1 << 8) + (1 << 3)


class LzfError(ValueError):
    """Raised when a compressed block is malformed."""


@njit(cache=True)
def _idx(h):
    return ((h >> (24 - HLOG)) - h * 5) & (HSIZE - 1)


@njit(cache=True)
def _compress(src, dst, htab):
    in_len = src.shape[0]
    in_end = in_len
    ip = 0
    op = 1
    lit = 0

    hval = (np.int64(src[0]) << 8) | src[1] if in_len > 1 else 0
    while ip < in_end - 2:
        hval = ((hval << 8) | src[ip + 2]) & 0xFFFFFF
        slot = _idx(hval)
        ref = htab[slot]
        htab[slot] = ip
        off = ip - ref - 1
        if (ref < ip and off < MAX_OFF and ref > 0
                and src[ref + 2] == src[ip + 2]
                and src[ref] == src[ip] and src[ref + 1] == src[ip + 1]):
            length = 2
            maxlen = in_end - ip - length
            if maxlen > MAX_REF:
                maxlen = MAX_REF

            dst[op - lit - 1] = lit - 1
            if lit == 0:
                op -= 1

            while True:
                length += 1
                if not (length < maxlen and src[ref + length] == src[ip + length]):
                    break

            length -= 2
            ip += 1

            if length < 7:
                dst[op] = (off >> 8) + (length << 5)
                op += 1
            else:
                dst[op] = (off >> 8) + (7 << 5)
                dst[op + 1] = length - 7
                op += 2
            dst[op] = off & 0xFF
            op += 1

            lit = 0
            op += 1

            ip += length + 1
            if ip >= in_end - 2:
                break

            ip -= 2
            hval = (np.int64(src[ip]) << 8) | src[ip + 1]
            hval = ((hval << 8) | src[ip + 2]) & 0xFFFFFF
            htab[_idx(hval)] = ip
            ip += 1
            hval = ((hval << 8) | src[ip + 2]) & 0xFFFFFF
            htab[_idx(hval)] = ip
            ip += 1
        else:
            lit += 1
            dst[op] = src[ip]
            op += 1
            ip += 1
            if lit == MAX_LIT:
                dst[op - lit - 1] = lit - 1
                lit = 0
                op += 1

    while ip < in_end:
        lit += 1
        dst[op] = src[ip]
        op += 1
        ip += 1
        if lit == MAX_LIT:
            dst[op - lit - 1] = lit - 1
            lit = 0
            op += 1

    dst[op - lit - 1] = lit - 1
    if lit == 0:
        op -= 1
    return op


@njit(cache=True)
def _decompress(src, dst):
    """Returns bytes written, or a negative input offset on corruption."""
    ip = 0
    op = 0
    in_end = src.shape[0]
    out_end = dst.shape[0]
    while ip < in_end:
        ctrl = np.int64(src[ip])
        start = ip
        ip += 1
        if ctrl < 32:
            ctrl += 1
            if op + ctrl > out_end or ip + ctrl > in_end:
                return -start - 1
            for k in range(ctrl):
                dst[op + k] = src[ip + k]
            op += ctrl
            ip += ctrl
        else:
            length = ctrl >> 5
            ref = op - ((ctrl & 0x1F) << 8) - 1
            if ip >= in_end:
                return -start - 1
            if length == 7:
                length += src[ip]
                ip += 1
                if ip >= in_end:
                    return -start - 1
            ref -= src[ip]
            ip += 1
            if op + length + 2 > out_end or ref < 0:
                return -start - 1
            for k in range(length + 2):
                dst[op + k] = dst[ref + k]
            op += length + 2
    return op


def compress(raw):
    """Compress ``raw`` (bytes-like) into an LZF block."""
    src = np.frombuffer(bytes(raw), dtype=np.uint8)
    if src.size == 0:
        return b""
    # worst case: one control byte per 32 literals
    dst = np.empty(src.size + src.size // MAX_LIT + 16, dtype=np.uint8)
    htab = np.zeros(HSIZE, dtype=np.int64)
    n = _compress(src, dst, htab)
    return dst[:n].tobytes()


def decompress(block, out_len):
    """Inverse of :func:`compress`; ``out_len`` is the exact decoded size."""
    src = np.frombuffer(bytes(block), dtype=np.uint8)
    dst = np.empty(out_len, dtype=np.uint8)
    if src.size == 0:
        if out_len:
            raise LzfError("empty LZF block, expected %d bytes" % out_len)
        return b""
    n = _decompress(src, dst)
    if n < 0:
        raise LzfError("corrupt LZF token at block offset %d" % (-n - 1))
    if n != out_len:
        raise LzfError("LZF block decoded to %d bytes, expected %d" % (n, out_len))
    return dst.tobytes()
