"""Adaptive binary range coder, syntax binarization and the .fmc container.

The coder is integer-only: a 32-bit range with carry propagation on the
encoder side, 16-bit probabilities of a one, and shift-5 adaptation.
"""

import struct
from dataclasses import dataclass, field, replace as dc_replace
from typing import List

import numpy as np

from .utils import round_half_away

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
PROB_INIT = PROB_ONE // 2
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
MAX_EG_PREFIX = 32


class EntropyError(Exception):
    """Malformed entropy-coded payload."""

    pass


class ContainerError(Exception):
    """Malformed .fmc container."""

    pass


class BinaryContext:
    __slots__ = ("p",)

    def __init__(self, p=PROB_INIT):
        self.p = p

    def update(self, bit):
        if bit:
            self.p += (PROB_ONE - self.p) >> ADAPT_SHIFT
        else:
            self.p -= self.p >> ADAPT_SHIFT

    def __repr__(self):
        return f"BinaryContext({self.p})"


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if (self.low & MASK32) < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def _normalize(self):
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode(self, bit, ctx):
        bound = (self.range >> PROB_BITS) * ctx.p
        if bit:
            self.range = bound
        else:
            self.low += bound
            self.range -= bound
        ctx.update(bit)
        self._normalize()

    def encode_bypass(self, bit):
        self.range >>= 1
        if bit:
            self.low += self.range
        self._normalize()

    def encode_eg0(self, value):
        """Order-0 exp-Golomb code of ``value >= 0``, bypass bits."""
        value += 1
        n = value.bit_length()
        for _ in range(n - 1):
            self.encode_bypass(0)
        for i in range(n - 1, -1, -1):
            self.encode_bypass((value >> i) & 1)

    def encode_signed_eg0(self, value):
        self.encode_eg0(2 * value - 1 if value > 0 else -2 * value)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(5):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self):
        if self.pos >= len(self.data):
            raise EntropyError(
                f"Payload underrun after {len(self.data)} bytes"
            )
        b = self.data[self.pos]
        self.pos += 1
        return b

    def _normalize(self):
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & MASK32

    def decode(self, ctx):
        bound = (self.range >> PROB_BITS) * ctx.p
        if self.code < bound:
            self.range = bound
            bit = 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 0
        ctx.update(bit)
        self._normalize()
        return bit

    def decode_bypass(self):
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        self._normalize()
        return bit

    def decode_eg0(self):
        zeros = 0
        while not self.decode_bypass():
            zeros += 1
            if zeros > MAX_EG_PREFIX:
                raise EntropyError("Exp-Golomb prefix too long")
        value = 1
        for _ in range(zeros):
            value = (value << 1) | self.decode_bypass()
        return value - 1

    def decode_signed_eg0(self):
        u = self.decode_eg0()
        return (u + 1) // 2 if u % 2 else -(u // 2)

    def finish(self):
        """Check that the whole payload was consumed."""
        if self.pos != len(self.data):
            raise EntropyError(
                f"Invalid final state: {len(self.data) - self.pos} of "
                f"{len(self.data)} payload bytes left unread"
            )


def bac_encode(bits, contexts=None):
    """Code ``(bit, context_id)`` pairs; a ``None`` context id means bypass.

    Contexts are created on first use at p = 1/2, in ``contexts`` if given.
    """
    contexts = {} if contexts is None else contexts
    enc = RangeEncoder()
    for bit, ctx_id in bits:
        if ctx_id is None:
            enc.encode_bypass(bit)
        else:
            ctx = contexts.get(ctx_id)
            if ctx is None:
                ctx = contexts[ctx_id] = BinaryContext()
            enc.encode(bit, ctx)
    return enc.finish()


def bac_decode(data, schedule, contexts=None):
    contexts = {} if contexts is None else contexts
    dec = RangeDecoder(data)
    bits = []
    for ctx_id in schedule:
        if ctx_id is None:
            bits.append(dec.decode_bypass())
        else:
            ctx = contexts.get(ctx_id)
            if ctx is None:
                ctx = contexts[ctx_id] = BinaryContext()
            bits.append(dec.decode(ctx))
    dec.finish()
    return bits


def _zigzag_order(n=8):
    def key(rc):
        r, c = rc
        s = r + c
        return (s, r if s % 2 else c)

    return sorted(((r, c) for r in range(n) for c in range(n)), key=key)


ZIGZAG = _zigzag_order()
ZIGZAG_ROWS = np.array([r for r, _ in ZIGZAG])
ZIGZAG_COLS = np.array([c for _, c in ZIGZAG])
# Scan band of each scan position: DC, low frequencies, the rest
BANDS = [0] + [1] * 9 + [2] * 54


class PlaneContexts:
    __slots__ = ("cbf", "sig", "eob")

    def __init__(self):
        self.cbf = BinaryContext()
        self.sig = [BinaryContext() for _ in range(3)]
        self.eob = [BinaryContext() for _ in range(3)]

    def all(self):
        return [self.cbf, *self.sig, *self.eob]


class CoderContexts:
    """All adaptive contexts carried from one frame to the next."""

    def __init__(self, planes=3):
        self.planes = [PlaneContexts() for _ in range(planes)]

    def plane(self, i):
        return self.planes[i]

    def probabilities(self):
        return tuple(ctx.p for pc in self.planes for ctx in pc.all())

    def copy(self):
        new = CoderContexts(len(self.planes))
        for ctx, p in zip(
            (c for pc in new.planes for c in pc.all()), self.probabilities()
        ):
            ctx.p = p
        return new

    def is_reset(self):
        return all(p == PROB_INIT for p in self.probabilities())

    def __eq__(self, other):
        return (
            isinstance(other, CoderContexts)
            and self.probabilities() == other.probabilities()
        )


def write_coeff_block(enc, levels, ctx):
    scan = np.asarray(levels)[ZIGZAG_ROWS, ZIGZAG_COLS]
    nonzero = np.flatnonzero(scan)
    if not len(nonzero):
        enc.encode(0, ctx.cbf)
        return
    enc.encode(1, ctx.cbf)
    last = int(nonzero[-1])
    for i in range(last + 1):
        level = int(scan[i])
        band = BANDS[i]
        enc.encode(level != 0, ctx.sig[band])
        if level:
            enc.encode_eg0(abs(level) - 1)
            enc.encode_bypass(level < 0)
            if i < 63:
                enc.encode(i == last, ctx.eob[band])


def read_coeff_block(dec, ctx):
    scan = np.zeros(64, dtype=np.int64)
    if dec.decode(ctx.cbf):
        for i in range(64):
            band = BANDS[i]
            if dec.decode(ctx.sig[band]):
                magnitude = dec.decode_eg0() + 1
                scan[i] = -magnitude if dec.decode_bypass() else magnitude
                if i == 63 or dec.decode(ctx.eob[band]):
                    break
        else:
            raise EntropyError("Coefficient block has no end")
    levels = np.zeros((8, 8), dtype=np.int64)
    levels[ZIGZAG_ROWS, ZIGZAG_COLS] = scan
    return levels


def code_coeff_block(levels):
    """Standalone payload for one block of levels, with fresh contexts."""
    enc = RangeEncoder()
    write_coeff_block(enc, levels, PlaneContexts())
    return enc.finish()


def decode_coeff_block(data):
    dec = RangeDecoder(data)
    levels = read_coeff_block(dec, PlaneContexts())
    dec.finish()
    return levels


def coarse_motion(q, q_num):
    """Motion is sent in full-pel units below mid quality."""
    return q < q_num / 2


def quantize_motion(vectors, q, q_num):
    """Vectors as the decoder will see them, in half-pel units."""
    vectors = np.asarray(vectors)
    if coarse_motion(q, q_num):
        return (2 * round_half_away(vectors / 2)).astype(np.int64)
    return vectors.astype(np.int64)


def write_motion(enc, vectors, predictor, coarse):
    vectors = np.asarray(vectors, dtype=np.int64)
    predictor = np.asarray(predictor, dtype=np.int64)
    if coarse:
        vectors = round_half_away(vectors / 2).astype(np.int64)
        predictor = round_half_away(predictor / 2).astype(np.int64)
    for residual in (vectors - predictor).reshape(-1).tolist():
        enc.encode_signed_eg0(residual)


def read_motion(dec, predictor, coarse):
    predictor = np.asarray(predictor, dtype=np.int64)
    if coarse:
        predictor = round_half_away(predictor / 2).astype(np.int64)
    residuals = [dec.decode_signed_eg0() for _ in range(predictor.size)]
    residuals = np.array(residuals, dtype=np.int64).reshape(predictor.shape)
    vectors = predictor + residuals
    return 2 * vectors if coarse else vectors


def code_motion(vectors, predictor, q, q_num=64):
    """Standalone motion payload (vectors and predictor are ``(gh, gw, 2)``)."""
    enc = RangeEncoder()
    write_motion(enc, vectors, predictor, coarse_motion(q, q_num))
    return enc.finish()


def decode_motion(data, predictor, q, q_num=64):
    dec = RangeDecoder(data)
    vectors = read_motion(dec, predictor, coarse_motion(q, q_num))
    dec.finish()
    return vectors


MAGIC = b"FMC1"
VERSION = 1
HEADER = struct.Struct("<4sBIIBIIHBQ")
RECORD = struct.Struct("<BBBII")
PIX_FMT_CODES = {"yuv420p": 0, "rgb24": 1}
PIX_FMT_NAMES = {v: k for k, v in PIX_FMT_CODES.items()}

INTRA = 0
INTER = 1


@dataclass(frozen=True)
class FrameRecord:
    frame_type: int
    q: int
    refresh_flag: bool
    motion: bytes = b""
    coeff: bytes = b""

    replace = dc_replace

    @property
    def bits(self):
        """Record size as counted by rate control: header plus payloads."""
        return (RECORD.size + len(self.motion) + len(self.coeff)) * 8

    def to_bytes(self):
        return (
            RECORD.pack(
                self.frame_type,
                self.q,
                int(self.refresh_flag),
                len(self.motion),
                len(self.coeff),
            )
            + self.motion
            + self.coeff
        )


@dataclass
class BitstreamContainer:
    width: int
    height: int
    pix_fmt: str
    fps_num: int
    fps_den: int
    refresh_period: int
    q_num: int
    digest: int
    records: List[FrameRecord] = field(default_factory=list)

    def to_bytes(self):
        if self.pix_fmt not in PIX_FMT_CODES:
            raise ContainerError(f"Unknown pixel format: '{self.pix_fmt}'")
        parts = [
            HEADER.pack(
                MAGIC,
                VERSION,
                self.width,
                self.height,
                PIX_FMT_CODES[self.pix_fmt],
                self.fps_num,
                self.fps_den,
                self.refresh_period,
                self.q_num,
                self.digest,
            )
        ]
        for record in self.records:
            if record.q >= self.q_num:
                raise ContainerError(
                    f"Record q={record.q} is out of range for q_num={self.q_num}"
                )
            parts.append(record.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if len(data) < HEADER.size:
            raise ContainerError(
                f"Container is {len(data)} bytes, shorter than its header"
            )
        (
            magic,
            version,
            width,
            height,
            pix_fmt,
            fps_num,
            fps_den,
            refresh_period,
            q_num,
            digest,
        ) = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ContainerError(f"Bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise ContainerError(f"Unsupported container version {version}")
        if pix_fmt not in PIX_FMT_NAMES:
            raise ContainerError(f"Unknown pixel format code {pix_fmt}")

        records = []
        pos = HEADER.size
        while pos < len(data):
            if pos + RECORD.size > len(data):
                raise ContainerError(f"Truncated record header at byte {pos}")
            frame_type, q, refresh, mlen, clen = RECORD.unpack_from(data, pos)
            pos += RECORD.size
            if frame_type not in (INTRA, INTER):
                raise ContainerError(
                    f"Bad frame type {frame_type} at byte {pos}"
                )
            if q >= q_num:
                raise ContainerError(
                    f"Record q={q} is out of range for q_num={q_num}"
                )
            if refresh > 1:
                raise ContainerError(
                    f"Bad refresh flag {refresh} at byte {pos}"
                )
            if pos + mlen + clen > len(data):
                raise ContainerError(
                    f"Record {len(records)} declares {mlen + clen} payload "
                    f"bytes, only {len(data) - pos} left"
                )
            motion = data[pos : pos + mlen]
            coeff = data[pos + mlen : pos + mlen + clen]
            pos += mlen + clen
            records.append(
                FrameRecord(frame_type, q, bool(refresh), motion, coeff)
            )

        return cls(
            width=width,
            height=height,
            pix_fmt=PIX_FMT_NAMES[pix_fmt],
            fps_num=fps_num,
            fps_den=fps_den,
            refresh_period=refresh_period,
            q_num=q_num,
            digest=digest,
            records=records,
        )

    def write(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def read(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())
