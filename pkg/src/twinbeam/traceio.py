"""Binary trace files (``TBT1``).

Layout, little-endian::

    magic            4 bytes   b"TBT1"
    version          uint16    1
    sample_rate_hz   float64
    pulse_period_s   float64
    first_offset_s   float64
    n_samples        uint64
    samples          n_samples x float32 (volts)
"""

import struct
from pathlib import Path

import numpy as np

from .detector import VoltageTrace

MAGIC = b"TBT1"
VERSION = 1
_HEADER = struct.Struct("<4sHdddQ")


class TraceFormatError(ValueError):
    pass


def encode_trace(trace: VoltageTrace) -> bytes:
    samples = np.asarray(trace.samples, dtype="<f4")
    head = _HEADER.pack(MAGIC, VERSION, trace.sample_rate_hz, trace.pulse_period_s,
                        trace.first_pulse_offset_s, len(samples))
    return head + samples.tobytes()


def decode_trace(buf: bytes) -> VoltageTrace:
    if len(buf) < _HEADER.size:
        raise TraceFormatError("truncated header")
    magic, version, fs, period, offset, n = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}")
    body = buf[_HEADER.size:]
    if len(body) != 4 * n:
        raise TraceFormatError(f"expected {n} samples, found {len(body) // 4}")
    samples = np.frombuffer(body, dtype="<f4").astype(float)
    return VoltageTrace(samples=samples, sample_rate_hz=fs, pulse_period_s=period,
                        first_pulse_offset_s=offset)


def write_trace(path, trace: VoltageTrace) -> None:
    Path(path).write_bytes(encode_trace(trace))


def read_trace(path) -> VoltageTrace:
    return decode_trace(Path(path).read_bytes())
