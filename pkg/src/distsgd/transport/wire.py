"""Frame layout shared by every backend.

A frame is a 16-byte little-endian header ``{tag: u32, source: u32, length: u64}``
followed by ``length`` little-endian float64 values. Control messages are
ordinary frames with a short payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

HEADER = struct.Struct("<IIQ")
HEADER_SIZE = HEADER.size  # 16
WIRE_DTYPE = np.dtype("<f8")


@dataclass
class Message:
    tag: int
    payload: np.ndarray
    source: int


def encode(msg: Message) -> bytes:
    payload = np.ascontiguousarray(msg.payload, dtype=WIRE_DTYPE)
    return HEADER.pack(msg.tag, msg.source, payload.size) + payload.tobytes()


def decode_header(raw: bytes):
    """Returns ``(tag, source, n_elements)``."""
    if len(raw) != HEADER_SIZE:
        raise ValueError(f"header must be {HEADER_SIZE} bytes, got {len(raw)}")
    return HEADER.unpack(raw)


def decode(raw: bytes) -> Message:
    tag, source, n = decode_header(raw[:HEADER_SIZE])
    body = raw[HEADER_SIZE:]
    if len(body) != n * WIRE_DTYPE.itemsize:
        raise ValueError(f"payload is {len(body)} bytes, header declares {n} elements")
    payload = np.frombuffer(body, dtype=WIRE_DTYPE).astype(np.float64)
    return Message(tag, payload, source)
