"""64-bit FNV-1a, used for object etags and DLT1 checksums."""

from __future__ import annotations

import numpy as np
from numba import njit

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@njit(cache=True, nogil=True)
def _fnv1a_u8(buf, h):
    prime = np.uint64(FNV_PRIME)
    for i in range(buf.shape[0]):
        h = (h ^ np.uint64(buf[i])) * prime
    return h


def fnv1a64(data: bytes | bytearray | memoryview, seed: int = FNV_OFFSET) -> int:
    """Hash ``data``; pass a previous result as ``seed`` to hash incrementally."""
    buf = np.frombuffer(data, dtype=np.uint8)
    if buf.size == 0:
        return seed
    return int(_fnv1a_u8(buf, np.uint64(seed)))


def fnv1a64_hex(data: bytes | bytearray | memoryview) -> str:
    return f"{fnv1a64(data):016x}"
