import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from framescope.core import (
    ClassId,
    DimensionMismatch,
    MaskSet,
    StageId,
    as_image,
    read_mask_png,
    read_png,
    resize_canonical,
    write_mask_png,
    write_png,
)


def test_class_ids_are_stable():
    assert [int(c) for c in ClassId] == [0, 1, 2, 3]
    assert [c.name for c in ClassId] == ["WINDOW_FRAME", "DENT", "BEND", "SCRATCH"]


def test_stage_canonical_order():
    assert sorted([StageId.CE, StageId.SR, StageId.IN, StageId.CN]) == [StageId.SR, StageId.CN, StageId.IN, StageId.CE]


@pytest.mark.parametrize("bad", [np.zeros((4, 4)), np.zeros((4, 4, 4)), np.full((2, 2, 3), 1.5), np.full((2, 2, 3), -0.1)])
def test_as_image_rejects_invalid(bad):
    with pytest.raises((DimensionMismatch, ValueError)):
        as_image(bad)


def test_resize_same_side_is_bit_exact(rng):
    img = rng.random((500, 500, 3))
    out = resize_canonical(img, 500)
    assert np.array_equal(out, img)
    assert out is not img


def test_resize_shape_only():
    out = resize_canonical(np.full((100, 100, 3), 0.3), 50)
    assert out.shape == (50, 50, 3)


def test_resize_large_shape():
    out = resize_canonical(np.zeros((1000, 1000, 3)), 500)
    assert out.shape == (500, 500, 3)


def test_resize_block_means():
    # 4x4 made of 2x2 constant blocks {0, 1; 1, 0}
    blocks = np.array([[0.0, 1.0], [1.0, 0.0]])
    img = np.repeat(np.repeat(blocks, 2, axis=0), 2, axis=1)[..., None].repeat(3, axis=2)
    out = resize_canonical(img, 2)
    np.testing.assert_allclose(out[..., 0], blocks, atol=1e-15)


def test_resize_area_average_fractional():
    # 3 -> 2 along each axis: output cells cover 1.5 input pixels
    row = np.array([0.0, 0.6, 0.9])
    img = np.tile(row, (3, 1))[..., None].repeat(3, axis=2)
    out = resize_canonical(img, 2)
    # (0 * 1 + 0.6 * 0.5) / 1.5 and (0.6 * 0.5 + 0.9 * 1) / 1.5
    np.testing.assert_allclose(out[0, :, 0], [0.2, 0.8], atol=1e-12)


def test_resize_enlarge_bilinear():
    img = np.zeros((2, 2, 3))
    img[:, 1] = 1.0
    out = resize_canonical(img, 4)
    # centres map to source x = -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1
    np.testing.assert_allclose(out[0, :, 0], [0.0, 0.25, 0.75, 1.0], atol=1e-12)


def test_resize_stretches_non_square(rng):
    out = resize_canonical(rng.random((30, 60, 3)), 20)
    assert out.shape == (20, 20, 3)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)), elements=st.floats(0, 1)),
    st.integers(1, 10),
)
def test_resize_idempotent_and_in_range(img, side):
    once = resize_canonical(img, side)
    assert once.shape == (side, side, 3)
    assert once.min() >= 0.0 and once.max() <= 1.0
    assert np.array_equal(resize_canonical(once, side), once)


def test_mask_labels_priority():
    planes = np.zeros((4, 2, 2), dtype=bool)
    planes[ClassId.WINDOW_FRAME] = True
    planes[ClassId.BEND, 0, 0] = True
    planes[ClassId.DENT, 0, 0] = True
    planes[ClassId.SCRATCH, 1, 1] = True
    m = MaskSet(planes)
    assert m.labels().tolist() == [[ClassId.DENT + 1, ClassId.WINDOW_FRAME + 1], [ClassId.WINDOW_FRAME + 1, ClassId.SCRATCH + 1]]
    resolved = m.resolved()
    assert resolved.planes.sum(axis=0).max() == 1


def test_mask_set_is_read_only():
    m = MaskSet.empty(3, 3)
    with pytest.raises(ValueError):
        m.planes[0, 0, 0] = True


def test_png_roundtrip(tmp_path, rng):
    img = np.floor(rng.random((7, 5, 3)) * 255 + 0.5) / 255
    write_png(tmp_path / "a.png", img)
    assert np.array_equal(read_png(tmp_path / "a.png"), img)
    plane = rng.random((7, 5)) > 0.5
    write_mask_png(tmp_path / "m.png", plane)
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), plane)
