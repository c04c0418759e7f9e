import math

import numpy as np
import pytest

from fmcodec.entropy import (
    HEADER,
    INTER,
    INTRA,
    BinaryContext,
    BitstreamContainer,
    CoderContexts,
    ContainerError,
    EntropyError,
    FrameRecord,
    RangeDecoder,
    RangeEncoder,
    ZIGZAG,
    ZIGZAG_COLS,
    ZIGZAG_ROWS,
    bac_decode,
    bac_encode,
    code_coeff_block,
    code_motion,
    decode_coeff_block,
    decode_motion,
    quantize_motion,
    read_coeff_block,
    write_coeff_block,
)

from .common import TemporaryDir, one_test_per_assert


def sparse_blocks(rng, n, density=0.1, scale=6):
    mask = rng.random((n, 8, 8)) < density
    signs = rng.choice([-1, 1], size=(n, 8, 8))
    values = rng.geometric(1 / scale, size=(n, 8, 8)) * signs
    return (mask * values).astype(np.int64)


@pytest.fixture
def container():
    return BitstreamContainer(
        width=64,
        height=48,
        pix_fmt="yuv420p",
        fps_num=30000,
        fps_den=1001,
        refresh_period=32,
        q_num=64,
        digest=0x0123456789ABCDEF,
        records=[
            FrameRecord(INTRA, 40, True, b"", b"\x00\x01\x02"),
            FrameRecord(INTER, 41, False, b"\x07" * 5, b"\xff" * 9),
            FrameRecord(INTER, 63, True, b"\x01", b""),
        ],
    )


def test_context_bounds():
    ctx = BinaryContext()
    for _ in range(2000):
        ctx.update(1)
    assert ctx.p < 65536
    top = ctx.p
    for _ in range(4000):
        ctx.update(0)
    assert ctx.p >= 1
    assert ctx.p < top


def test_empty_sequence():
    data = bac_encode([])
    assert len(data) == 5
    assert bac_decode(data, []) == []


def test_bypass_cost():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, size=10**6).tolist()
    data = bac_encode((b, None) for b in bits)
    assert len(data) <= 10**6 // 8 + 16


def test_skewed_source_cost():
    rng = np.random.default_rng(1)
    n = 10**6
    bits = (rng.random(n) < 0.05).astype(int).tolist()
    data = bac_encode((b, 0) for b in bits)
    p = sum(bits) / n
    entropy = -(p * math.log2(p) + (1 - p) * math.log2(1 - p))
    assert entropy == pytest.approx(0.2864, abs=0.01)
    # Shift-5 adaptation costs about 4% over the empirical entropy
    assert len(data) * 8 <= 1.06 * entropy * n + 256


def test_mixed_round_trip():
    rng = np.random.default_rng(2)
    ids = [None, 0, 1, 2, "dc"]
    schedule = [ids[i] for i in rng.integers(0, len(ids), size=20000)]
    probs = {None: 0.5, 0: 0.02, 1: 0.5, 2: 0.9, "dc": 0.3}
    bits = [int(rng.random() < probs[c]) for c in schedule]
    data = bac_encode(zip(bits, schedule))
    assert bac_decode(data, schedule) == bits


def test_encoding_deterministic():
    rng = np.random.default_rng(3)
    pairs = [(int(b), int(c)) for b, c in rng.integers(0, 2, size=(5000, 2))]
    assert bac_encode(pairs) == bac_encode(pairs)


def test_shared_contexts():
    contexts = {}
    first = bac_encode([(1, "a")] * 100, contexts)
    assert contexts["a"].p > 60000
    second = bac_encode([(1, "a")] * 100, contexts)
    assert len(second) <= len(first)


def test_decode_underrun():
    data = bac_encode([(1, 0), (0, None)] * 200)
    with pytest.raises(EntropyError):
        bac_decode(data[:-1], [0, None] * 200)
    with pytest.raises(EntropyError):
        RangeDecoder(b"\x00\x00")


def test_decode_leftover_bytes():
    data = bac_encode([(1, 0)] * 10)
    with pytest.raises(EntropyError, match="left unread"):
        bac_decode(data + b"\x00", [0] * 10)


def test_exp_golomb_round_trip():
    values = [0, 1, 2, 3, 7, 8, 255, 1000, 123456]
    enc = RangeEncoder()
    for v in values:
        enc.encode_eg0(v)
        enc.encode_signed_eg0(-v)
        enc.encode_signed_eg0(v)
    dec = RangeDecoder(enc.finish())
    for v in values:
        assert dec.decode_eg0() == v
        assert dec.decode_signed_eg0() == -v
        assert dec.decode_signed_eg0() == v
    dec.finish()


def test_zigzag_scan():
    assert ZIGZAG[:6] == [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)]
    assert ZIGZAG[-1] == (7, 7)
    assert len(set(ZIGZAG)) == 64


def test_zero_block():
    zero = np.zeros((8, 8), dtype=np.int64)
    data = code_coeff_block(zero)
    assert np.array_equal(decode_coeff_block(data), zero)
    enc = RangeEncoder()
    write_coeff_block(enc, zero, CoderContexts().plane(0))
    # A single context-coded flag
    assert len(enc.finish()) == 5


def test_dc_only_block():
    block = np.zeros((8, 8), dtype=np.int64)
    block[0, 0] = 5
    assert np.array_equal(decode_coeff_block(code_coeff_block(block)), block)


def test_edge_blocks():
    full = np.full((8, 8), -3, dtype=np.int64)
    assert np.array_equal(decode_coeff_block(code_coeff_block(full)), full)
    last = np.zeros((8, 8), dtype=np.int64)
    last[7, 7] = 900
    assert np.array_equal(decode_coeff_block(code_coeff_block(last)), last)


def test_random_blocks_round_trip():
    rng = np.random.default_rng(4)
    blocks = sparse_blocks(rng, 10**4)
    enc = RangeEncoder()
    ctx = CoderContexts()
    for i, block in enumerate(blocks):
        write_coeff_block(enc, block, ctx.plane(i % 3))
    dec = RangeDecoder(enc.finish())
    ctx = CoderContexts()
    for i, block in enumerate(blocks):
        assert np.array_equal(read_coeff_block(dec, ctx.plane(i % 3)), block)
    dec.finish()


def short_scan_blocks(rng, n):
    """Blocks whose nonzero levels sit in the first few scan positions."""
    scan = np.zeros((n, 64), dtype=np.int64)
    reach = rng.integers(0, 12, size=n)
    positions = np.arange(64)
    mask = (positions < reach[:, None]) & (rng.random((n, 64)) < 0.5)
    signs = rng.choice([-1, 1], size=(n, 64))
    scan[mask] = (rng.geometric(0.3, size=(n, 64)) * signs)[mask]
    # A few large levels exercise long escape codes
    big = rng.random(n) < 0.01
    scan[big, 0] = rng.integers(-5000, 5001, size=int(big.sum()))
    blocks = np.zeros((n, 8, 8), dtype=np.int64)
    blocks[:, ZIGZAG_ROWS, ZIGZAG_COLS] = scan
    return blocks


def test_many_short_blocks_round_trip():
    rng = np.random.default_rng(14)
    blocks = short_scan_blocks(rng, 10**5)
    enc = RangeEncoder()
    ctx = CoderContexts()
    for i, block in enumerate(blocks):
        write_coeff_block(enc, block, ctx.plane(i % 3))
    dec = RangeDecoder(enc.finish())
    ctx = CoderContexts()
    decoded = np.stack(
        [read_coeff_block(dec, ctx.plane(i % 3)) for i in range(len(blocks))]
    )
    dec.finish()
    assert np.array_equal(decoded, blocks)


def test_coefficient_cost_monotone():
    rng = np.random.default_rng(5)
    for block in sparse_blocks(rng, 300, density=0.2):
        r, c = rng.integers(0, 8, size=2)
        bigger = block.copy()
        bigger[r, c] += 1 if bigger[r, c] >= 0 else -1
        assert len(code_coeff_block(bigger)) >= len(code_coeff_block(block)) - 1


def test_coder_contexts():
    ctx = CoderContexts()
    assert ctx.is_reset()
    enc = RangeEncoder()
    block = np.zeros((8, 8), dtype=np.int64)
    block[0, 1] = 2
    write_coeff_block(enc, block, ctx.plane(1))
    assert not ctx.is_reset()
    clone = ctx.copy()
    assert clone == ctx
    assert clone is not ctx
    write_coeff_block(enc, block, clone.plane(1))
    assert clone != ctx


@one_test_per_assert
def test_quantize_motion():
    assert quantize_motion([7, 0], 10, 64).tolist() == [8, 0]
    assert quantize_motion([-7, 3], 10, 64).tolist() == [-8, 4]
    assert quantize_motion([7, 0], 32, 64).tolist() == [7, 0]
    assert quantize_motion([5, -1], 31, 64).tolist() == [6, -2]


def test_motion_coarse_example():
    vectors = np.array([[[7, 0]]])
    data = code_motion(vectors, np.zeros_like(vectors), q=10)
    decoded = decode_motion(data, np.zeros_like(vectors), q=10)
    assert decoded.tolist() == [[[8, 0]]]


def test_motion_equal_to_predictor():
    rng = np.random.default_rng(6)
    vectors = rng.integers(-32, 33, size=(4, 5, 2))
    data = code_motion(vectors, vectors, q=40)
    zeros = code_motion(np.zeros_like(vectors), np.zeros_like(vectors), q=40)
    assert data == zeros
    assert np.array_equal(decode_motion(data, vectors, q=40), vectors)


def test_motion_random_round_trip():
    rng = np.random.default_rng(7)
    for q in (32, 47, 63):
        vectors = rng.integers(-32, 33, size=(6, 7, 2))
        predictor = rng.integers(-32, 33, size=(6, 7, 2))
        data = code_motion(vectors, predictor, q)
        assert np.array_equal(decode_motion(data, predictor, q), vectors)


def test_motion_coarse_round_trip():
    rng = np.random.default_rng(8)
    vectors = rng.integers(-32, 33, size=(3, 4, 2))
    predictor = rng.integers(-32, 33, size=(3, 4, 2))
    data = code_motion(vectors, predictor, 5)
    expected = quantize_motion(vectors, 5, 64)
    assert np.array_equal(decode_motion(data, predictor, 5), expected)


def test_record_bits():
    record = FrameRecord(INTER, 3, False, b"\x00" * 4, b"\x00" * 10)
    assert record.bits == (11 + 14) * 8


def test_container_round_trip(container):
    data = container.to_bytes()
    assert data[:4] == b"FMC1"
    payload = sum(r.bits // 8 for r in container.records)
    assert len(data) == HEADER.size + payload
    back = BitstreamContainer.from_bytes(data)
    assert back == container
    assert back.to_bytes() == data


def test_container_file_round_trip(container):
    tmp = TemporaryDir()
    container.write(tmp.rel("a.fmc"))
    back = BitstreamContainer.read(tmp.rel("a.fmc"))
    back.write(tmp.rel("b.fmc"))
    assert tmp.read("a.fmc") == tmp.read("b.fmc")


def test_container_header_layout(container):
    data = container.to_bytes()
    assert HEADER.size == 33
    assert int.from_bytes(data[5:9], "little") == 64
    assert int.from_bytes(data[9:13], "little") == 48
    assert data[13] == 0
    assert int.from_bytes(data[25:33], "little") == 0x0123456789ABCDEF


def test_container_bad_magic(container):
    data = bytearray(container.to_bytes())
    data[:4] = b"NOPE"
    with pytest.raises(ContainerError, match="magic"):
        BitstreamContainer.from_bytes(bytes(data))


def test_container_bad_version(container):
    data = bytearray(container.to_bytes())
    data[4] = 9
    with pytest.raises(ContainerError, match="version"):
        BitstreamContainer.from_bytes(bytes(data))


def test_container_truncated(container):
    data = container.to_bytes()
    with pytest.raises(ContainerError):
        BitstreamContainer.from_bytes(data[:-1])
    with pytest.raises(ContainerError):
        BitstreamContainer.from_bytes(data[:20])


def test_container_q_out_of_range(container):
    container.records.append(FrameRecord(INTER, 64, False))
    with pytest.raises(ContainerError):
        container.to_bytes()


def test_container_unknown_pix_fmt(container):
    container.pix_fmt = "nv12"
    with pytest.raises(ContainerError):
        container.to_bytes()
