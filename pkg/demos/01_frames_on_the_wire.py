# What a CAN data frame looks like as bits, and how the bus picks a winner.

import numpy as np

from canoa.can import (
    CanFrame, CrcError, StuffError, arbitrate, crc15, deserialize_frame, frame_fields,
    serialize_frame, unstuffed_length,
)

# A brake-pressure style frame: 11-bit id, three data bytes.
frame = CanFrame(0x0B0, 3, bytes([0x01, 0xFE, 0x00]))
wire = serialize_frame(frame)
print("unstuffed length", unstuffed_length(frame.dlc), "bits; on the wire", len(wire), "bits")
print("".join(map(str, wire)))

# The CRC covers SOF through the data field.
print("crc15 = 0x%04X" % crc15(frame_fields(frame)))

# Five equal bits in a row are always followed by a complement bit, so the
# longest run before the trailer is five.
runs = np.diff(np.flatnonzero(np.diff(np.r_[-1, wire[:-10], -1]) != 0))
print("longest run before the trailer:", runs.max())

# Flip one bit inside the data field and the receiver notices.
bad = list(wire)
bad[25] ^= 1
try:
    deserialize_frame(bad)
except (CrcError, StuffError) as e:
    print("corrupted frame rejected:", e)

# Arbitration is a wired-AND: a dominant 0 overwrites a recessive 1, so the
# lowest identifier wins without either sender losing its bits.
contenders = [CanFrame(i, 0) for i in (0x300, 0x0C0, 0x0B0, 0x200)]
print("winner: 0x%03X" % arbitrate(contenders).id)
