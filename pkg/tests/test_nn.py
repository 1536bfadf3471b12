import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reslink.autodiff import ShapeError, Tensor, no_grad
from reslink.binarizer import binarize
from reslink.nn import (
    BaseConfig,
    CheckpointError,
    ChecksumError,
    CodecConfig,
    VersionError,
    bresnet_decode,
    bresnet_encode,
    compnet_coarse,
    discnet_scores,
    finenet_step,
    init_base,
    init_enhancement,
    load_params,
    plan,
    save_params,
    sumnet,
    synthesize,
)
from reslink.nn import checkpoint as ckpt

SHAPE = (3, 32, 32)


@pytest.fixture(scope="module")
def enh():
    return init_enhancement(CodecConfig(), SHAPE, seed=3)


@pytest.fixture(scope="module")
def base():
    return init_base(BaseConfig(), SHAPE, seed=4)


def _img(rng, shape=SHAPE, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float32)


# -- layer plans -------------------------------------------------------------


def _conv_count(cin, cout, k):
    return cout * cin * k * k + cout


def test_encoder_param_count_regression():
    # conv5 3->32, gdn32, conv5 32->64, gdn64, resblock64, conv5 64->4
    expected = (_conv_count(3, 32, 5) + 32 + 32 * 32 + _conv_count(32, 64, 5) + 64 + 64 * 64
                + 2 * _conv_count(64, 64, 3) + _conv_count(64, 4, 5))
    assert plan.param_count(CodecConfig().encoder_plan()) == expected == 139172


def test_param_count_matches_initialized_tensors(enh):
    cfg = CodecConfig()
    for prefix, p in (("enc", cfg.encoder_plan()), ("dec", cfg.decoder_plan()), ("sum", cfg.sumnet_plan())):
        assert enh.count(prefix + ".") == plan.param_count(p)


def test_adjacent_layers_must_agree():
    with pytest.raises(ValueError, match="expects 8 channels"):
        plan.validate([plan.conv(3, 4), plan.conv(8, 8)])


@given(st.sampled_from([(16, 16), (24, 40), (32, 32), (64, 48)]), st.integers(1, 8), st.sampled_from([(8, 16), (32, 64)]))
def test_encoder_decoder_shape_duality(hw, latent, widths):
    cfg = CodecConfig(widths=widths, latent_channels=latent)
    shape = (3, *hw)
    lat = cfg.latent_shape(shape)
    assert lat == (latent, hw[0] // 8, hw[1] // 8)
    assert plan.output_shape(cfg.decoder_plan(), lat) == shape


def test_desk_latent_gives_one_sixteenth_bpp(enh):
    assert tuple(enh.meta["latent_shape"]) == (4, 4, 4)
    assert np.prod(enh.meta["latent_shape"]) / (32 * 32) == 0.0625


# -- enhancement blocks ------------------------------------------------------


def test_zero_residual_latent_is_finite_and_bounded(enh):
    with no_grad():
        z = bresnet_encode(enh, Tensor(np.zeros(SHAPE, np.float32))).data
    assert np.all(np.isfinite(z)) and np.all(np.abs(z) <= 1.0)


def test_encode_rejects_wrong_shape(enh):
    with pytest.raises(ShapeError):
        bresnet_encode(enh, Tensor(np.zeros((3, 16, 16), np.float32)))
    with pytest.raises(ShapeError):
        bresnet_decode(enh, Tensor(np.zeros((4, 2, 2), np.float32)))


def test_decode_shape_range_and_determinism(enh, rng):
    bits = Tensor(np.where(rng.random((4, 4, 4)) < 0.5, -1.0, 1.0).astype(np.float32))
    with no_grad():
        a = bresnet_decode(enh, bits).data
        b = bresnet_decode(enh, bits).data
    assert a.shape == SHAPE
    assert np.all(np.abs(a) <= 2.0)
    assert np.array_equal(a, b)


def test_single_bit_flip_is_local(enh, rng):
    bits = np.where(rng.random((4, 4, 4)) < 0.5, -1.0, 1.0).astype(np.float32)
    flipped = bits.copy()
    flipped[1, 0, 0] *= -1
    with no_grad():
        a = bresnet_decode(enh, Tensor(bits)).data
        b = bresnet_decode(enh, Tensor(flipped)).data
    changed = np.any(a != b, axis=0)
    assert 0 < changed.sum() < changed.size
    # a corner latent cannot reach the opposite corner
    assert not changed[-8:, -8:].any()


def test_sumnet_is_clamped_plain_sum_at_init(enh, rng):
    xp, rh = _img(rng), _img(rng, lo=-2, hi=2)
    with no_grad():
        out = sumnet(enh, Tensor(xp), Tensor(rh)).data
    assert np.array_equal(out, np.clip(xp + rh, -1, 1))


def test_sumnet_rejects_mismatch(enh):
    with pytest.raises(ShapeError):
        sumnet(enh, Tensor(np.zeros(SHAPE, np.float32)), Tensor(np.zeros((3, 16, 32), np.float32)))


@given(st.integers(0, 2**31 - 1))
def test_sumnet_output_in_range(seed):
    enh = init_enhancement(CodecConfig(widths=(8, 8), sumnet_width=4), (3, 16, 16), seed=seed % 7)
    params = enh.clone()
    r = np.random.default_rng(seed)
    for k in params.names("sum."):
        params[k].data[...] = r.normal(size=params[k].shape)
    with no_grad():
        out = sumnet(params, Tensor(_img(r, (3, 16, 16))), Tensor(_img(r, (3, 16, 16), -2, 2))).data
    assert out.min() >= -1.0 and out.max() <= 1.0


# -- base layer --------------------------------------------------------------


def test_compnet_constant_image_is_exact():
    x = Tensor(np.full(SHAPE, 0.3, np.float32))
    c, cp = compnet_coarse(x, 4)
    assert c.shape == (3, 8, 8)
    np.testing.assert_allclose(cp.data, x.data, atol=1e-7)


def test_compnet_rejects_indivisible():
    with pytest.raises(ShapeError):
        compnet_coarse(Tensor(np.zeros((3, 30, 32), np.float32)), 4)


def test_learned_compnet_matches_fixed_at_init(base, rng):
    x = Tensor(_img(rng))
    c0, cp0 = compnet_coarse(x, 4)
    c1, cp1 = compnet_coarse(x, 4, "learned", base)
    assert np.array_equal(c0.data, c1.data)
    assert np.array_equal(cp0.data, cp1.data)


def test_finenet_identity_at_init(base, rng):
    b = Tensor(_img(rng))
    f, refined = finenet_step(base, 0, None, b)
    assert not f.data.any()
    assert np.array_equal(refined.data, b.data)
    outs = synthesize(base, b)
    assert len(outs) == 2 and all(o.shape == SHAPE for o in outs)


def test_finenet_semantic_channel(rng):
    params = init_base(BaseConfig(semantic=True), SHAPE, seed=1)
    b = Tensor(_img(rng))
    s = Tensor(_img(rng, (1, 32, 32)))
    assert finenet_step(params, 0, s, b)[1].shape == SHAPE
    with pytest.raises(ShapeError):
        finenet_step(params, 0, Tensor(np.zeros((1, 16, 16), np.float32)), b)
    with pytest.raises(ShapeError):
        finenet_step(params, 0, None, b)


def test_discnet_scores_in_unit_interval_and_deterministic(base, rng):
    cp, cand = Tensor(_img(rng, (2, *SHAPE))), Tensor(_img(rng, (2, *SHAPE)))
    a = [t.data for t in discnet_scores(base, 1, None, cp, cand)]
    b = [t.data for t in discnet_scores(base, 1, None, cp, cand)]
    assert len(a) == 3
    for x, y in zip(a, b):
        assert x.shape == (2,)
        assert np.all((x > 0) & (x < 1))
        assert np.array_equal(x, y)
    with pytest.raises(ShapeError):
        discnet_scores(base, 0, None, cp, Tensor(_img(rng, (2, 3, 16, 16))))


# -- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip_is_bitwise(enh, tmp_path):
    meta = dict(enh.meta, pe_train=8.0)
    params = type(enh)(enh.tensors, meta)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_params(params, p1)
    loaded = load_params(p1)
    save_params(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.meta["pe_train"] == 8.0
    for k, t in params.tensors.items():
        assert loaded[k].data.dtype == t.data.dtype
        assert np.array_equal(loaded[k].data, t.data)


def test_checkpoint_float64_round_trip(tmp_path):
    params = init_enhancement(CodecConfig(widths=(8, 8)), (3, 16, 16), seed=0, dtype=np.float64)
    save_params(params, tmp_path / "x.ckpt")
    assert load_params(tmp_path / "x.ckpt").digest() == params.digest()


def test_truncated_checkpoint_raises(enh, tmp_path):
    data = ckpt.dumps(enh)
    for cut in (len(data) - 1, len(data) // 2, 20):
        with pytest.raises(ChecksumError):
            ckpt.loads(data[:cut])


def test_flipped_byte_raises(enh):
    data = bytearray(ckpt.dumps(enh))
    data[len(data) // 3] ^= 0x10
    with pytest.raises(ChecksumError):
        ckpt.loads(bytes(data))


def test_bad_magic_and_version(enh):
    with pytest.raises(CheckpointError, match="magic"):
        ckpt.loads(b"NOT-A-CKPT" + bytes(40))
    import struct
    import zlib
    body = bytearray(ckpt.dumps(enh)[:-4])
    struct.pack_into("<H", body, len(ckpt.MAGIC), 99)
    forged = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(VersionError):
        ckpt.loads(forged)


def test_binarized_latent_decodes(enh, rng):
    with no_grad():
        z = bresnet_encode(enh, Tensor(_img(rng, lo=-2, hi=2)))
        bits = binarize(z)
        out = bresnet_decode(enh, Tensor(bits.values))
    assert out.shape == SHAPE
