"""Bit-exact CAN 2.0A data frames.

Bits are plain ints: 0 is dominant, 1 is recessive. Stuffing covers SOF
through the CRC sequence; the trailer (CRC delimiter, ACK slot, ACK
delimiter, EOF) is sent as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

DOMINANT = 0
RECESSIVE = 1

CRC15_POLY = 0x4599
MAX_ID = 0x7FF
MAX_DLC = 8

# Field widths, SOF through CRC sequence
HEADER_BITS = 1 + 11 + 1 + 1 + 1 + 4
CRC_BITS = 15
TRAILER = (RECESSIVE,) * (1 + 1 + 1 + 7)


class CanError(ValueError):
    """Base class for frame-level errors."""


class InvalidFrame(CanError):
    def __init__(self, msg: str = "invalid frame"):
        super().__init__(msg)


class StuffError(CanError):
    def __init__(self, msg: str = "stuff violation"):
        super().__init__(msg)


class CrcError(CanError):
    def __init__(self, msg: str = "crc error"):
        super().__init__(msg)


class TruncatedError(CanError):
    def __init__(self, msg: str = "truncated"):
        super().__init__(msg)


class ArbitrationConflict(CanError):
    def __init__(self, msg: str = "arbitration conflict"):
        super().__init__(msg)


@dataclass(frozen=True)
class CanFrame:
    id: int
    dlc: int
    payload: bytes = b""
    timestamp: float = 0.0

    def __post_init__(self):
        payload = bytes(self.payload)
        object.__setattr__(self, "payload", payload)
        if not (isinstance(self.id, int) and 0 <= self.id <= MAX_ID):
            raise InvalidFrame(f"invalid frame: id {self.id!r} outside 11-bit range")
        if not (isinstance(self.dlc, int) and 0 <= self.dlc <= MAX_DLC):
            raise InvalidFrame(f"invalid frame: dlc {self.dlc!r}")
        if len(payload) != self.dlc:
            raise InvalidFrame("invalid frame: payload length != dlc")
        if not self.timestamp >= 0:
            raise InvalidFrame("invalid frame: negative timestamp")


def _to_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def _from_bits(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | b
    return v


def _crc15_table() -> list[int]:
    table = []
    for i in range(256):
        reg = i << (CRC_BITS - 8)
        for _ in range(8):
            reg = ((reg << 1) ^ CRC15_POLY) if reg & 0x4000 else reg << 1
        table.append(reg & 0x7FFF)
    return table


_CRC_TABLE = _crc15_table()
_ASCII_BITS = bytes.maketrans(b"\x00\x01", b"01")


def crc15(bits: Sequence[int]) -> int:
    """CAN CRC-15 (remainder of m(x)*x^15 by the generator), bytewise by table."""
    n = len(bits)
    if n == 0:
        raise CanError("empty bitstream")
    head = n % 8
    reg = 0
    for b in bits[:head]:
        top = ((reg >> 14) & 1) ^ b
        reg = ((reg << 1) & 0x7FFF) ^ (CRC15_POLY if top else 0)
    if n > head:
        msg = int(bytes(bits[head:]).translate(_ASCII_BITS), 2)
        for byte in msg.to_bytes((n - head) // 8, "big"):
            reg = ((reg << 8) & 0x7FFF) ^ _CRC_TABLE[((reg >> 7) ^ byte) & 0xFF]
    return reg


def stuff_bits(bits: Iterable[int]) -> list[int]:
    out: list[int] = []
    last, run = None, 0
    for b in bits:
        out.append(b)
        if b == last:
            run += 1
        else:
            last, run = b, 1
        if run == 5:
            out.append(1 - b)
            last, run = 1 - b, 1
    return out


class _Destuffer:
    """Incremental destuffer over a stuffed stream."""

    def __init__(self, bits: Sequence[int]):
        self.bits = bits
        self.pos = 0
        self.last = None
        self.run = 0

    def take(self, n: int) -> list[int]:
        out = []
        for _ in range(n):
            out.append(self._next())
            if self.run == 5:
                self._consume_stuff()
        return out

    def _next(self) -> int:
        if self.pos >= len(self.bits):
            raise TruncatedError()
        b = self.bits[self.pos]
        self.pos += 1
        if b == self.last:
            self.run += 1
        else:
            self.last, self.run = b, 1
        return b

    def _consume_stuff(self):
        if self.pos >= len(self.bits):
            raise TruncatedError()
        b = self.bits[self.pos]
        self.pos += 1
        if b == self.last:
            raise StuffError()
        self.last, self.run = b, 1


def unstuff_bits(bits: Sequence[int]) -> list[int]:
    d = _Destuffer(bits)
    out = []
    while d.pos < len(bits):
        out.extend(d.take(1))
    return out


def frame_fields(frame: CanFrame) -> list[int]:
    """Unstuffed SOF..data bits, the CRC input."""
    bits = [DOMINANT]
    bits += _to_bits(frame.id, 11)
    bits += [DOMINANT, DOMINANT, DOMINANT]  # RTR, IDE, r0
    bits += _to_bits(frame.dlc, 4)
    for byte in frame.payload:
        bits += _to_bits(byte, 8)
    return bits


def serialize_frame(frame: CanFrame) -> list[int]:
    if not isinstance(frame, CanFrame):
        raise InvalidFrame()
    body = frame_fields(frame)
    body += _to_bits(crc15(body), CRC_BITS)
    return stuff_bits(body) + list(TRAILER)


def unstuffed_length(dlc: int) -> int:
    return HEADER_BITS + 8 * dlc + CRC_BITS + len(TRAILER)


def deserialize_frame(bits: Sequence[int], timestamp: float = 0.0) -> CanFrame:
    d = _Destuffer(bits)
    header = d.take(HEADER_BITS)
    if header[0] != DOMINANT or header[12:15] != [DOMINANT] * 3:
        raise InvalidFrame("invalid frame: bad control field")
    dlc = _from_bits(header[15:19])
    if dlc > MAX_DLC:
        raise InvalidFrame(f"invalid frame: dlc {dlc}")
    data = d.take(8 * dlc)
    crc = _from_bits(d.take(CRC_BITS))
    if crc != crc15(header + data):
        raise CrcError()
    trailer = list(bits[d.pos:d.pos + len(TRAILER)])
    if len(trailer) < len(TRAILER):
        raise TruncatedError()
    if trailer != list(TRAILER):
        raise InvalidFrame("invalid frame: form error in trailer")
    payload = bytes(_from_bits(data[8 * i:8 * i + 8]) for i in range(dlc))
    return CanFrame(_from_bits(header[1:12]), dlc, payload, timestamp)


def arbitrate(contenders: Iterable[CanFrame]) -> CanFrame:
    """Resolve bitwise arbitration over the identifier field.

    All contenders drive their ID bits onto a wired-AND bus; a node that
    sends recessive but reads back dominant drops out.
    """
    frames = list(contenders)
    if not frames:
        raise CanError("no contenders")
    ids = [f.id for f in frames]
    if len(set(ids)) != len(ids):
        raise ArbitrationConflict()
    alive = frames
    for i in range(11):
        bit = [(f.id >> (10 - i)) & 1 for f in alive]
        bus = min(bit)
        alive = [f for f, b in zip(alive, bit) if b == bus]
    return alive[0]


# Frame log -----------------------------------------------------------------

LOG_HEADER = "t,id,dlc,payload,sender,spoofed"


def format_log_line(frame: CanFrame, sender: str, spoofed: bool) -> str:
    return (f"{frame.timestamp:.9f},{frame.id:03X},{frame.dlc},"
            f"{frame.payload.hex().upper()},{sender},{int(bool(spoofed))}")


def parse_log_line(line: str) -> tuple[CanFrame, str, bool]:
    t, fid, dlc, payload, sender, spoofed = line.strip().split(",")
    frame = CanFrame(int(fid, 16), int(dlc), bytes.fromhex(payload), float(t))
    return frame, sender, spoofed.strip().lower() in ("1", "true")
