import numpy as np
import pytest

from bda import backbone as bb
from bda.tensor import ShapeError, Tensor, backward, tsum

SMALL = bb.BackboneConfig((2, 3, 4, 4, 5), (4, 3, 3, 2))


def test_desk_shapes(rng):
    m = bb.build(bb.BackboneConfig.desk(), "single", 0)
    x = Tensor(rng.random((3, 64, 64)))
    feats = bb.forward_encoder(m, x)
    assert [f.shape for f in feats] == [(8, 32, 32), (16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]
    assert bb.forward(m, x).shape == (1, 64, 64)


def test_dual_output_and_batch(rng):
    m = bb.build(SMALL, "dual", 0, mff=True, fusion_levels=bb.FUSION_LEVELS)
    pre, post = rng.random((2, 3, 32, 32)), rng.random((2, 3, 32, 32))
    out = bb.forward(m, Tensor(pre), Tensor(post))
    assert out.shape == (2, 5, 32, 32)
    one = bb.forward(m, Tensor(pre[1]), Tensor(post[1]))
    np.testing.assert_allclose(out.data[1], one.data, rtol=1e-10, atol=1e-12)


def test_encoder_extents_helper():
    assert bb.encoder_extents(64, 96) == [(32, 48), (16, 24), (8, 12), (4, 6), (2, 3)]


def test_extent_must_divide_by_32():
    m = bb.build(SMALL, "single", 0)
    with pytest.raises(ShapeError):
        bb.forward(m, Tensor(np.zeros((3, 48, 48))))


def test_full_scale_layer_widths():
    s1, s2 = bb.BackboneConfig.full_stage1(), bb.BackboneConfig.full_stage2()
    assert s1.encoder_channels == (64, 256, 512, 1024, 2048)
    assert s1.decoder_channels == (512, 256, 96, 32)
    assert s2.decoder_channels == (1024, 512, 192, 32)
    assert s1.stage1_out_channels == 1 and s2.stage2_out_channels == 5


def test_parameter_count_matches_build():
    for kw in ({}, {"mff": True}):
        assert bb.parameter_count(SMALL, "single", **kw) == bb.build(SMALL, "single", 0, **kw).num_parameters()
    kw = dict(mff=True, fusion_levels=bb.FUSION_LEVELS)
    assert bb.parameter_count(SMALL, "dual", **kw) == bb.build(SMALL, "dual", 0, **kw).num_parameters()


def test_desk_parameter_counts_frozen():
    desk = bb.BackboneConfig.desk()
    assert bb.parameter_count(desk, "single") == 454_889
    assert bb.parameter_count(desk, "dual", mff=True, fusion_levels=bb.FUSION_LEVELS) == 468_832


def test_init_is_seeded_per_name():
    a = bb.build(SMALL, "dual", 3)
    b = bb.build(SMALL, "dual", 3, mff=True, fusion_levels=("dconv2",))
    for name, p in a.params.items():
        assert np.array_equal(p.data, b[name].data), name
    c = bb.build(SMALL, "dual", 4)
    assert not np.array_equal(a["enc1.conv1.w"].data, c["enc1.conv1.w"].data)


def test_he_init_scale():
    m = bb.build(bb.BackboneConfig.desk(), "single", 0)
    w = m["enc3.conv2.w"].data
    assert w.std() == pytest.approx(np.sqrt(2 / (32 * 9)), rel=0.05)


def test_ablation_identity(rng):
    """Flags off reproduce the bare network exactly, even if fusion weights exist."""
    pre, post = Tensor(rng.random((3, 32, 32))), Tensor(rng.random((3, 32, 32)))
    bare = bb.build(SMALL, "dual", 1)
    full = bb.build(SMALL, "dual", 1, mff=True, fusion_levels=bb.FUSION_LEVELS)
    off = bb.forward_decoder(full, (bb.forward_encoder(full, pre, mff=False), bb.forward_encoder(full, post, mff=False)),
                             fusion=lambda level, p, q: (p, q))
    assert np.array_equal(off.data, bb.forward(bare, pre, post).data)
    assert not np.array_equal(bb.forward(full, pre, post).data, off.data)


def test_weight_transfer_bitwise(rng):
    s1 = bb.build(SMALL, "single", 11)
    s2 = bb.build(SMALL, "dual", 22, mff=True, fusion_levels=bb.FUSION_LEVELS)
    copied = bb.transfer_weights(s1, s2)
    assert "head.out.w" not in copied and "enc1.conv1.w" in copied
    x = Tensor(rng.random((3, 32, 32)))
    for a, b in zip(bb.forward_encoder(s1, x), bb.forward_encoder(s2, x, mff=False)):
        assert np.array_equal(a.data, b.data)


def test_transfer_needs_overlap():
    other = bb.build(bb.BackboneConfig((7, 7, 7, 7, 7), (6, 6, 6, 6)), "single", 0)
    with pytest.raises(ValueError):
        bb.transfer_weights(other, bb.build(SMALL, "dual", 0))


@pytest.mark.parametrize("kind", ["se-channel", "se-spatial", "se-both"])
def test_se_fusion_runs(rng, kind):
    m = bb.build(SMALL, "dual", 0, fusion_levels=("dconv1",), fusion_kind=kind)
    out = bb.forward(m, Tensor(rng.random((3, 32, 32))), Tensor(rng.random((3, 32, 32))))
    assert out.shape == (5, 32, 32)


def test_build_validation():
    with pytest.raises(ValueError):
        bb.build(SMALL, "triple")
    with pytest.raises(ValueError):
        bb.build(SMALL, "single", fusion_levels=("dconv1",))
    with pytest.raises(ValueError):
        bb.build(SMALL, "dual", fusion_levels=("dconv4",))
    with pytest.raises(ValueError):
        bb.BackboneConfig((1, 2, 3), (1, 2, 3, 4))
    with pytest.raises(ValueError):
        bb.BackboneConfig(first_kernel=4)


def test_every_parameter_receives_gradient(rng):
    m = bb.build(SMALL, "dual", 0, mff=True, fusion_levels=bb.FUSION_LEVELS)
    out = bb.forward(m, Tensor(rng.random((3, 32, 32))), Tensor(rng.random((3, 32, 32))))
    grads = backward(tsum(out * Tensor(rng.standard_normal(out.shape))))
    missing = [n for n, p in m.params.items() if p not in grads]
    assert not missing


def test_describe_and_hash_stable():
    a = bb.build(SMALL, "dual", 0, mff=True)
    b = bb.build(SMALL, "dual", 5, mff=True)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != bb.build(SMALL, "dual", 0).config_hash()
    assert a.describe()["config"]["encoder_channels"] == [2, 3, 4, 4, 5]
