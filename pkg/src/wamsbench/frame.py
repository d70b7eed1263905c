"""Measurement frame type and its 55-byte wire codec.

On-wire layout (all multi-byte fields big-endian):

    | Offset | Size | Field          | Encoding                        |
    |--------|------|----------------|---------------------------------|
    | 0      | 2    | magic          | 0xAA01                          |
    | 2      | 2    | device_id      | uint16                          |
    | 4      | 4    | frame_seq      | uint32                          |
    | 8      | 8    | utc_timestamp  | uint64, ms since Unix epoch     |
    | 16     | 8    | frequency      | IEEE 754 binary64, Hz           |
    | 24     | 8    | voltage_mag    | IEEE 754 binary64, per-unit     |
    | 32     | 8    | voltage_angle  | IEEE 754 binary64, degrees      |
    | 40     | 1    | status         | uint8 bitfield                  |
    | 41     | 12   | reserved       | zero fill                       |
    | 53     | 2    | crc            | CRC-16/CCITT-FALSE over [0:53)  |

Total length is exactly 55 bytes.  The magic prefix makes the stream
self-delimiting so a receiver can resynchronize after corruption; the
CRC (poly 0x1021, init 0xFFFF, no reflection, no final xor) covers
everything before it.  Reserved bytes are written as zeros and ignored
on decode.

The real recorder's field layout is not public, so this layout is a
documented stand-in with the same total length.
"""

import binascii
import math
import struct
from dataclasses import dataclass

FRAME_LEN = 55
MAGIC = 0xAA01
MAGIC_BYTES = b"\xaa\x01"

_HEADER_FMT = ">HHIQdddB"
_CRC_OFFSET = 53


class FrameError(Exception):
    """Base class for frame codec failures."""


class FrameEncodeError(FrameError):
    """A field is outside its encodable range; names the offending field."""


class FrameDecodeError(FrameError):
    """Base class for decode failures."""


class FramingError(FrameDecodeError):
    """Magic prefix missing; the caller should resynchronize the stream."""


class ChecksumError(FrameDecodeError):
    """CRC mismatch over an otherwise well-framed record."""


@dataclass(frozen=True)
class FdrFrame:
    """One synchrophasor measurement record.

    ``utc_timestamp`` is integer milliseconds since the Unix epoch; in
    steady streaming consecutive frames from one device are exactly
    100 ms apart.  ``voltage_angle`` is degrees in [-180, 180).
    """

    device_id: int
    frame_seq: int
    utc_timestamp: int
    frequency: float
    voltage_mag: float
    voltage_angle: float
    status: int = 0


def crc16(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, unreflected)."""
    return binascii.crc_hqx(data, 0xFFFF)


def _check_int(name: str, value: int, lo: int, hi: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise FrameEncodeError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise FrameEncodeError(f"{name}={value} outside [{lo}, {hi}]")


def _check_real(name: str, value: float) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise FrameEncodeError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value):
        raise FrameEncodeError(f"{name}={value!r} is not finite")


def encode_frame(frame: FdrFrame) -> bytes:
    """Serialize ``frame`` to its exact 55-byte wire form.

    Raises FrameEncodeError naming the first field found out of range.
    Out-of-range angles are rejected rather than silently wrapped.
    """
    _check_int("device_id", frame.device_id, 0, 0xFFFF)
    _check_int("frame_seq", frame.frame_seq, 0, 0xFFFFFFFF)
    _check_int("utc_timestamp", frame.utc_timestamp, 0, 0xFFFFFFFFFFFFFFFF)
    _check_int("status", frame.status, 0, 0xFF)
    _check_real("frequency", frame.frequency)
    _check_real("voltage_mag", frame.voltage_mag)
    _check_real("voltage_angle", frame.voltage_angle)
    if not -180.0 <= frame.voltage_angle < 180.0:
        raise FrameEncodeError(
            f"voltage_angle={frame.voltage_angle} outside [-180, 180)"
        )

    body = struct.pack(
        _HEADER_FMT,
        MAGIC,
        frame.device_id,
        frame.frame_seq,
        frame.utc_timestamp,
        frame.frequency,
        frame.voltage_mag,
        frame.voltage_angle,
        frame.status,
    )
    body += b"\x00" * 12
    assert len(body) == _CRC_OFFSET
    return body + struct.pack(">H", crc16(body))


def decode_frame(data: bytes) -> FdrFrame:
    """Decode the frame held in the first 55 bytes of ``data``.

    Raises FramingError when the magic prefix is wrong and ChecksumError
    when the CRC does not match; both leave resynchronization to the
    caller.
    """
    if len(data) < FRAME_LEN:
        raise FramingError(f"need {FRAME_LEN} bytes, got {len(data)}")
    if data[:2] != MAGIC_BYTES:
        raise FramingError(f"bad magic {data[:2].hex()}")
    body, (crc,) = data[:_CRC_OFFSET], struct.unpack_from(">H", data, _CRC_OFFSET)
    if crc16(body) != crc:
        raise ChecksumError("crc mismatch")
    (_, device_id, frame_seq, utc, freq, vmag, vangle, status) = struct.unpack_from(
        _HEADER_FMT, body
    )
    return FdrFrame(
        device_id=device_id,
        frame_seq=frame_seq,
        utc_timestamp=utc,
        frequency=freq,
        voltage_mag=vmag,
        voltage_angle=vangle,
        status=status,
    )
