import math
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reslink.binarizer import LatentBits
from reslink.link import (
    BBEC,
    BBSC,
    PERMUTATION,
    STRIDE,
    ChannelConfig,
    DomainError,
    FrameCRCError,
    FrameMagicError,
    FrameVersionError,
    InterleaverSpec,
    apply_channel,
    deinterleave,
    flip_quota,
    frame_decode,
    frame_encode,
    frame_payload_length,
    interleave,
    to_image_domain,
    to_tensor_domain,
    transmit_bits,
)


def random_bits(rng, shape):
    return LatentBits(rng.choice([-1.0, 1.0], size=shape))


def random_pixels(rng, n, density=0.5):
    return np.where(rng.random(n) < density, 255, 0).astype(np.uint8)


# -- domains -----------------------------------------------------------------------


def test_domain_mapping():
    np.testing.assert_array_equal(to_image_domain(np.array([-1.0, 1.0])), [0, 255])
    bits = random_bits(np.random.default_rng(0), (4, 5, 6))
    assert to_tensor_domain(to_image_domain(bits)) == bits


def test_domain_rejects_other_bytes():
    with pytest.raises(DomainError, match="128"):
        to_tensor_domain(np.array([0, 128, 255], dtype=np.uint8))


# -- interleaver ----------------------------------------------------------------------


def test_stride_example_order():
    spec = InterleaverSpec(STRIDE, 4, 16)
    out = interleave(np.arange(16), spec)
    np.testing.assert_array_equal(out, [0, 4, 8, 12, 1, 5, 9, 13, 2, 6, 10, 14, 3, 7, 11, 15])


@pytest.mark.parametrize("scheme", [STRIDE, PERMUTATION])
@given(n=st.integers(1, 100_000), param=st.integers(1, 2000))
def test_interleaver_is_a_bijection(scheme, n, param):
    spec = InterleaverSpec(scheme, param, n)
    pos = spec.positions()
    np.testing.assert_array_equal(np.sort(pos), np.arange(n))
    x = np.arange(n)
    np.testing.assert_array_equal(deinterleave(interleave(x, spec), spec), x)


def test_stride_separation_for_100_byte_blocks():
    n, d = 64_000, 800
    pos = InterleaverSpec.for_channel(n, ChannelConfig(block_bytes=100)).positions()
    rows = math.ceil(n / d)
    assert rows == 80
    gaps = np.diff(pos)
    assert np.all(gaps[np.arange(n - 1) % d != d - 1] == rows)


@given(n=st.integers(2, 5000), d=st.integers(2, 300))
def test_stride_scatters_neighbours(n, d):
    pos = InterleaverSpec(STRIDE, d, n).positions()
    rows = math.ceil(n / d)
    gap = max(1, n // d)  # columns past a ragged final row are one entry shorter
    same_row = np.arange(n - 1) % d != d - 1
    if same_row.any():
        assert np.diff(pos)[same_row].min() >= min(gap, rows)
    if n % d == 0:
        assert np.all(np.diff(pos)[same_row] == rows)
    if n >= d:
        # a transmitted block of d bits holds at most ceil(d / gap) bits of any one row
        for start in range(0, n, d):
            _, counts = np.unique(pos[start:start + d] // d, return_counts=True)
            assert counts.max() <= math.ceil(d / gap)


def test_interleave_size_mismatch():
    with pytest.raises(ValueError):
        interleave(np.zeros(10), InterleaverSpec(STRIDE, 4, 12))


# -- channel ----------------------------------------------------------------------------


def test_pe_zero_is_identity():
    px = random_pixels(np.random.default_rng(1), 4000)
    out, rep = apply_channel(px, ChannelConfig(BBEC, 0.0, 100, 3))
    np.testing.assert_array_equal(out, px)
    assert rep.blocks_hit == 0 and rep.ones_flipped == 0


def test_bbec_exact_quota_example():
    px = np.zeros(40_000, dtype=np.uint8)
    px[np.random.default_rng(2).choice(px.size, 10_000, replace=False)] = 255
    out, rep = apply_channel(px, ChannelConfig(BBEC, 16.0, 100, 9))
    assert rep.ones_flipped == 1600
    assert int((out == 255).sum()) == 8400
    assert not np.any((px == 0) & (out == 255))


@given(n=st.integers(1, 5000), density=st.floats(0, 1), pe=st.floats(0, 100),
       block=st.integers(1, 120), seed=st.integers(0, 2 ** 32 - 1))
def test_bbec_flips_exact_quota_and_never_zeros(n, density, pe, block, seed):
    px = random_pixels(np.random.default_rng(seed), n, density)
    ones = int((px == 255).sum())
    with np.testing.suppress_warnings() as sup:
        sup.filter(RuntimeWarning)
        out, rep = apply_channel(px, ChannelConfig(BBEC, pe, block, seed))
    target = flip_quota(pe, ones)
    assert rep.ones_flipped == target
    assert int((out == 255).sum()) == ones - target
    assert not np.any((px == 0) & (out == 255))
    assert rep.zeros_flipped == 0


@given(n=st.integers(1, 4000), pe=st.floats(0, 100), block=st.integers(1, 50), seed=st.integers(0, 10 ** 9))
def test_bbsc_flips_whole_blocks(n, pe, block, seed):
    px = random_pixels(np.random.default_rng(seed), n)
    ones = int((px == 255).sum())
    with np.testing.suppress_warnings() as sup:
        sup.filter(RuntimeWarning)
        out, rep = apply_channel(px, ChannelConfig(BBSC, pe, block, seed))
    assert rep.ones_flipped == flip_quota(pe, ones)
    assert int(((px == 255) & (out == 0)).sum()) == rep.ones_flipped
    assert int(((px == 0) & (out == 255)).sum()) == rep.zeros_flipped


def test_channel_is_replayable():
    px = random_pixels(np.random.default_rng(4), 10_000)
    cfg = ChannelConfig(BBEC, 8.0, 10, 77)
    a, _ = apply_channel(px, cfg)
    b, _ = apply_channel(px, cfg)
    c, _ = apply_channel(px, cfg.with_seed(78))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_no_ones_warns_and_reports_nothing():
    with pytest.warns(RuntimeWarning, match="no ones"):
        out, rep = apply_channel(np.zeros(64, np.uint8), ChannelConfig(BBEC, 50.0, 1, 0))
    assert rep.ones_flipped == 0 and not out.any()


def test_channel_rejects_non_binary_bytes():
    with pytest.raises(DomainError):
        apply_channel(np.array([0, 1, 255], np.uint8), ChannelConfig())


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(pe=101)
    with pytest.raises(ValueError):
        ChannelConfig(block_bytes=0)
    with pytest.raises(ValueError):
        ChannelConfig(model="AWGN")


@pytest.mark.parametrize("scheme", [STRIDE, PERMUTATION])
def test_chain_identity_at_pe_zero(scheme):
    rng = np.random.default_rng(8)
    bits = rng.choice([-1.0, 1.0], size=(4, 4, 4))
    spec = InterleaverSpec.for_channel(64, ChannelConfig(block_bytes=1), scheme, seed=3)
    back, _ = transmit_bits(bits, spec, ChannelConfig(BBEC, 0.0, 1, 5))
    np.testing.assert_array_equal(back, bits)


# -- frame ----------------------------------------------------------------------------------


@given(c=st.integers(1, 8), h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 2 ** 63 - 1),
       scheme=st.sampled_from([STRIDE, PERMUTATION]))
def test_frame_round_trip(c, h, w, seed, scheme):
    bits = random_bits(np.random.default_rng(seed % 1000), (c, h, w))
    spec = InterleaverSpec(scheme, 8 if scheme == STRIDE else seed, c * h * w)
    data = frame_encode(bits, spec, binarizer_seed=seed)
    out, spec2, bseed = frame_decode(data)
    assert out == bits and spec2 == spec and bseed == seed
    assert len(data) == 28 + math.ceil(c * h * w / 8) + 4


def test_frame_header_declares_payload_length():
    bits = random_bits(np.random.default_rng(0), (4, 4, 4))
    data = frame_encode(bits, InterleaverSpec(STRIDE, 8, 64))
    assert frame_payload_length((4, 4, 4)) == 8
    magic, version, c, h, w, scheme, param, bseed = struct.unpack_from("<4sBHHHBQQ", data)
    assert (magic, version, c, h, w, scheme, param) == (b"DS2C", 1, 4, 4, 4, 0, 8)
    assert len(data) - 28 - 4 == 8
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4])


def test_frame_errors_are_distinct():
    bits = random_bits(np.random.default_rng(1), (2, 3, 3))
    data = bytearray(frame_encode(bits, InterleaverSpec(STRIDE, 8, 18)))
    bad_payload = bytearray(data)
    bad_payload[30] ^= 0x01
    with pytest.raises(FrameCRCError):
        frame_decode(bytes(bad_payload))
    with pytest.raises(FrameMagicError):
        frame_decode(b"XXXX" + bytes(data[4:]))
    bad_version = bytearray(data)
    bad_version[4] = 9
    bad_version[-4:] = struct.pack("<I", zlib.crc32(bytes(bad_version[:-4])))
    with pytest.raises(FrameVersionError):
        frame_decode(bytes(bad_version))
