import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bda import augment as A
from bda.dataset import SamplePair


def sample(rng, h=16, w=16, sid="s", classes=(0, 1)):
    pre = rng.integers(0, 256, (3, h, w), dtype=np.uint8)
    post = rng.integers(0, 256, (3, h, w), dtype=np.uint8)
    label = rng.choice(np.asarray(classes, dtype=np.uint8), (h, w))
    return SamplePair(pre, post, label, sid)


def same(a, b):
    return np.array_equal(a.pre, b.pre) and np.array_equal(a.post, b.post) and np.array_equal(a.label, b.label)


def test_config_validation():
    with pytest.raises(ValueError):
        A.AugmentConfig(cutmix_probability=1.5)
    with pytest.raises(ValueError):
        A.AugmentConfig(area_ratio_range=(0.4, 0.1))
    with pytest.raises(ValueError):
        A.AugmentConfig(difficult_classes={0})
    assert A.AugmentConfig(difficult_classes={3, 2}).difficult_classes == (2, 3)


def test_mask_map_and_bounds():
    m = A.CutMixMask(2, 3, 4, 5, (10, 12))
    mm = m.as_map()
    assert mm.shape == (1, 10, 12)
    assert int((mm == 0).sum()) == 20 and m.area == 20
    assert m.ratio == pytest.approx(20 / 120)
    with pytest.raises(ValueError):
        A.CutMixMask(8, 0, 4, 4, (10, 10))


def test_cutmix_identities(rng):
    a, b = sample(rng, sid="a"), sample(rng, sid="b")
    assert same(A.cutmix(a, b, A.CutMixMask.empty(a.extent)), a)
    assert same(A.cutmix(a, b, A.CutMixMask.full(a.extent)), b)


def test_cutmix_extent_mismatch(rng):
    with pytest.raises(ValueError):
        A.cutmix(sample(rng), sample(rng, 8, 8), A.CutMixMask.empty((16, 16)))


def histogram(label):
    return np.bincount(label.reshape(-1), minlength=5)


@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 16), st.integers(0, 16), st.integers(0, 999))
def test_cutmix_conservation_and_histogram(top, left, h, w, seed):
    h, w = min(h, 16 - top), min(w, 16 - left)
    rng = np.random.default_rng(seed)
    a = sample(rng, classes=(0, 1, 4))
    b = sample(rng, classes=(2, 3))
    mask = A.CutMixMask(top, left, h, w, (16, 16))
    out = A.cutmix(a, b, mask)
    inside = mask.as_map()[0] == 0
    # pixels from B = rectangle area, on all three planes
    from_b = np.isin(out.label, (2, 3))
    assert int(from_b.sum()) == mask.area
    np.testing.assert_array_equal(from_b, inside)
    # histogram oracle: A outside + B inside, counted directly
    expected = histogram(a.label[~inside]) + histogram(b.label[inside])
    np.testing.assert_array_equal(histogram(out.label), expected)
    np.testing.assert_array_equal(out.pre[:, inside], b.pre[:, inside])
    np.testing.assert_array_equal(out.post[:, ~inside], a.post[:, ~inside])


def test_cutmix_planted_markers(rng):
    a, b = sample(rng, sid="a"), sample(rng, sid="b")
    for s, val in ((a, 17), (b, 201)):
        s.pre[:, 5, 6] = val
        s.post[:, 5, 6] = val
        s.label[5, 6] = 4 if val == 201 else 1
    for mask, src in ((A.CutMixMask(4, 4, 4, 4, (16, 16)), 201), (A.CutMixMask(0, 0, 3, 3, (16, 16)), 17)):
        out = A.cutmix(a, b, mask)
        assert out.pre[0, 5, 6] == src and out.post[0, 5, 6] == src
        assert out.label[5, 6] == (4 if src == 201 else 1)


def test_forced_difficult_source(rng):
    data = [sample(rng, sid=f"s{i}") for i in range(10)]
    data[7] = sample(rng, sid="s7", classes=(0, 2))
    cfg = A.AugmentConfig()
    for k in range(20):
        src, mask = A.sample_difficult_source(data, cfg, np.random.default_rng(k))
        assert src.id == "s7"
        inside = mask.as_map()[0] == 0
        assert np.isin(src.label[inside], cfg.difficult_classes).any()
        lo, hi = cfg.area_ratio_range
        assert lo - 1e-9 <= mask.ratio <= hi + 1e-9


def test_difficult_source_deterministic(rng):
    data = [sample(rng, sid=f"s{i}", classes=(0, 1, 2, 3)) for i in range(6)]
    seq = lambda: [A.sample_difficult_source(data, A.AugmentConfig(), A.sample_rng(0, 0, i)) for i in range(8)]
    first, second = seq(), seq()
    assert [(s.id, m) for s, m in first] == [(s.id, m) for s, m in second]


def test_no_difficult_sample_disables(rng, caplog):
    data = [sample(rng, classes=(0, 1)) for _ in range(3)]
    with caplog.at_level(logging.WARNING):
        assert A.sample_difficult_source(data, A.AugmentConfig(), rng) is None
    assert "disabled" in caplog.text


@given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 10_000))
def test_rectangle_invariants(cy, cx, seed):
    rng = np.random.default_rng(seed)
    lo, hi = 0.1, 0.4
    m = A.draw_rect(rng, (64, 64), (cy, cx), (lo, hi))
    assert 0 <= m.top and m.top + m.height <= 64 and 0 <= m.left and m.left + m.width <= 64
    assert lo <= m.ratio <= hi
    assert m.contains(cy, cx)


def test_involutions(rng):
    s = sample(rng)
    assert same(A.hflip(A.hflip(s)), s)
    assert same(A.vflip(A.vflip(s)), s)
    assert same(A.rot90(s, 4), s)
    assert same(A.rot90(A.rot90(s, 1), 3), s)


def test_rotation_skipped_when_not_square(rng):
    s = sample(rng, 8, 16)
    assert A.rot90(s, 1) is s


@given(st.integers(0, 10_000))
def test_marker_moves_identically(seed):
    rng = np.random.default_rng(seed)
    s = sample(rng, 8, 8, classes=(0,))
    r, c = rng.integers(0, 8, 2)
    s.pre[:] = 0
    s.post[:] = 0
    s.pre[:, r, c] = 255
    s.post[:, r, c] = 255
    s.label[r, c] = 3
    out = A.basic_augment(s, np.random.default_rng(seed))
    loc = lambda plane: np.argwhere(plane).tolist()
    assert loc(out.label == 3) == loc(out.pre[0] == 255) == loc(out.post[2] == 255) != []


def test_sample_rng_independent_of_call_order():
    a = [A.sample_rng(5, 2, i).random() for i in range(4)]
    b = [A.sample_rng(5, 2, i).random() for i in reversed(range(4))][::-1]
    assert a == b
    assert A.sample_rng(5, 2, 0).random() != A.sample_rng(5, 3, 0).random()


def test_random_crop(rng):
    s = sample(rng, 16, 16)
    c = A.random_crop(s, 8, np.random.default_rng(0))
    assert c.extent == (8, 8)
    with pytest.raises(ValueError):
        A.random_crop(s, 32, rng)
