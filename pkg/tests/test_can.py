import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from canoa.can import (
    ArbitrationConflict, CanError, CanFrame, CrcError, InvalidFrame, StuffError,
    TruncatedError, arbitrate, crc15, deserialize_frame, format_log_line,
    frame_fields, parse_log_line, serialize_frame, stuff_bits, unstuff_bits,
    unstuffed_length,
)
from oracles import crc15_bytes, crc15_lfsr, max_run

frames = st.builds(
    lambda i, p: CanFrame(i, len(p), p),
    st.integers(0, 0x7FF), st.binary(max_size=8),
)


def bits(s):
    return [int(c) for c in s]


class TestCrc:
    def test_all_zero(self):
        assert crc15([0] * 19) == 0

    def test_single_one_bit(self):
        # one division step of the shift register
        assert crc15_lfsr([1]) == 0x4599
        assert crc15([1]) == 0x4599

    def test_reference_frame(self):
        f = CanFrame(0x123, 1, b"\xab")
        body = frame_fields(f)
        assert crc15(body) == crc15_lfsr(body)

    def test_empty(self):
        with pytest.raises(CanError, match="empty bitstream"):
            crc15([])

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
    def test_matches_lfsr(self, b):
        assert crc15(b) == crc15_lfsr(b)

    @given(st.binary(min_size=1, max_size=16))
    def test_matches_bytewise(self, data):
        b = [(v >> (7 - i)) & 1 for v in data for i in range(8)]
        assert crc15(b) == crc15_bytes(data)


class TestStuffing:
    @pytest.mark.parametrize("raw, stuffed", [
        ("11111", "111110"),
        ("00000111", "000001111"),
        ("10101", "10101"),
        ("", ""),
        ("0000000000", "000001000001"),
    ])
    def test_examples(self, raw, stuffed):
        assert stuff_bits(bits(raw)) == bits(stuffed)
        assert unstuff_bits(bits(stuffed)) == bits(raw)

    def test_violation(self):
        with pytest.raises(StuffError, match="stuff violation"):
            unstuff_bits(bits("111111"))

    def test_round_trip_1000_random(self):
        rng = random.Random(7)
        for _ in range(1000):
            r = [rng.getrandbits(1) if rng.random() < 0.5 else 1
                 for _ in range(rng.randrange(0, 120))]
            s = stuff_bits(r)
            assert max_run(s) <= 5
            assert unstuff_bits(s) == r


class TestFrame:
    def test_invariants(self):
        with pytest.raises(InvalidFrame):
            CanFrame(0x800, 0)
        with pytest.raises(InvalidFrame):
            CanFrame(1, 9, bytes(9))
        with pytest.raises(InvalidFrame):
            CanFrame(1, 2, b"\x00")
        with pytest.raises(InvalidFrame):
            CanFrame(1, 0, b"", -1.0)

    def test_zero_frame_prefix(self):
        s = serialize_frame(CanFrame(0, 0))
        # SOF + 4 ID zeros, then a stuff bit
        assert s[:5] == [0] * 5 and s[5] == 1
        unstuffed = unstuff_bits(s[:-10])
        assert unstuffed[:12] == [0] * 12

    def test_length_dlc8(self):
        assert unstuffed_length(8) == 108
        f = CanFrame(0x555, 8, bytes(range(8)))
        body = unstuff_bits(serialize_frame(f)[:-10])
        assert len(body) + 10 == 108

    @pytest.mark.parametrize("dlc", range(9))
    def test_length_formula(self, dlc):
        assert unstuffed_length(dlc) == 44 + 8 * dlc

    @settings(max_examples=300)
    @given(frames)
    def test_round_trip(self, f):
        s = serialize_frame(f)
        assert max_run(s[:-10]) <= 5
        assert deserialize_frame(s) == f

    def test_timestamp_passthrough(self):
        f = CanFrame(0x10, 1, b"\x01", 2.5)
        assert deserialize_frame(serialize_frame(f), timestamp=2.5) == f

    def test_flipped_payload_bit(self):
        f = CanFrame(0x123, 2, b"\xab\xcd")
        body = frame_fields(f)
        body += [(crc15(body) >> (14 - i)) & 1 for i in range(15)]
        body[19 + 3] ^= 1
        with pytest.raises(CrcError, match="crc error"):
            deserialize_frame(stuff_bits(body) + [1] * 10)

    def test_any_flip_in_stream_is_rejected(self):
        rng = random.Random(3)
        for _ in range(200):
            p = bytes(rng.getrandbits(8) for _ in range(rng.randrange(9)))
            f = CanFrame(rng.randrange(0x800), len(p), p)
            s = serialize_frame(f)
            for i in range(len(s)):
                s2 = list(s)
                s2[i] ^= 1
                with pytest.raises(CanError):
                    deserialize_frame(s2)

    def test_empty_stream(self):
        with pytest.raises(TruncatedError, match="truncated"):
            deserialize_frame([])

    def test_truncated_trailer(self):
        s = serialize_frame(CanFrame(1, 1, b"\x11"))
        with pytest.raises(TruncatedError):
            deserialize_frame(s[:-3])

    def test_log_line_round_trip(self):
        f = CanFrame(0x0B0, 3, b"\x01\xfe\x00", 1.25)
        line = format_log_line(f, "ECU_A", True)
        assert line == "1.250000000,0B0,3,01FE00,ECU_A,1"
        assert parse_log_line(line) == (f, "ECU_A", True)


class TestArbitration:
    def test_examples(self):
        assert arbitrate([CanFrame(0x100, 0), CanFrame(0x0A0, 0)]).id == 0x0A0
        assert arbitrate([CanFrame(0x7FF, 0)]).id == 0x7FF

    def test_duplicate(self):
        with pytest.raises(ArbitrationConflict, match="arbitration conflict"):
            arbitrate([CanFrame(5, 0), CanFrame(5, 1, b"\x00")])

    def test_random_sets_of_8(self):
        rng = random.Random(11)
        for _ in range(500):
            ids = rng.sample(range(0x800), 8)
            assert arbitrate([CanFrame(i, 0) for i in ids]).id == min(ids)

    def test_all_small_subsets(self):
        pool = [CanFrame(i, 0) for i in random.Random(5).sample(range(0x800), 10)]
        for k in range(1, 5):
            for sub in itertools.combinations(pool, k):
                assert arbitrate(sub) == min(sub, key=lambda f: f.id)
