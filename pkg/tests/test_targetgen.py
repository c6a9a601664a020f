import numpy as np
import pytest

from cellseg import targetgen
from cellseg.errors import PipelineError
from cellseg.targetgen import CLASS_BACKGROUND, CLASS_BOUNDARY, CLASS_CELL, MorphParams

from oracles import alg1_tertiary, brute_dilate, brute_erode, chebyshev_dilate


def random_label_map(rng, size=32, max_instances=5):
    """Random rectangles, later ids only on free pixels."""
    labels = np.zeros((size, size), dtype=np.int32)
    for cid in range(1, rng.integers(1, max_instances + 1) + 1):
        h = rng.integers(2, max(3, size // 3))
        w = rng.integers(2, max(3, size // 3))
        y = rng.integers(0, size - h + 1)
        x = rng.integers(0, size - w + 1)
        region = labels[y : y + h, x : x + w]
        region[region == 0] = cid
    return labels


# -- dilation / erosion


def test_dilate_single_pixel():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    out = targetgen.dilate(mask, 1, "square")
    expect = np.zeros((5, 5), dtype=bool)
    expect[1:4, 1:4] = True
    assert np.array_equal(out, expect)


def test_dilate_empty_stays_empty():
    assert not targetgen.dilate(np.zeros((6, 6), dtype=bool), 3).any()


def test_dilate_matches_chebyshev_neighborhood_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mask = rng.random((16, 16)) < 0.2
        out = targetgen.dilate(mask, 2, "square")
        assert np.array_equal(out, chebyshev_dilate(mask, 2))


def test_dilate_grows_only():
    rng = np.random.default_rng(1)
    mask = rng.random((12, 12)) < 0.3
    out = targetgen.dilate(mask, 1)
    assert np.all(out[mask])


def test_erode_block_to_center():
    mask = np.zeros((5, 5), dtype=bool)
    mask[1:4, 1:4] = True
    out = targetgen.erode(mask, 1, "square")
    expect = np.zeros((5, 5), dtype=bool)
    expect[2, 2] = True
    assert np.array_equal(out, expect)


def test_erode_full_mask_loses_border_ring():
    mask = np.ones((6, 7), dtype=bool)
    out = targetgen.erode(mask, 1, "square")
    expect = np.zeros((6, 7), dtype=bool)
    expect[1:-1, 1:-1] = True
    assert np.array_equal(out, expect)


def test_erode_equals_complement_dilate_complement():
    # duality with the complement extended by ones outside the frame
    rng = np.random.default_rng(2)
    iters = 2
    pad = iters + 1
    for _ in range(20):
        mask = rng.random((16, 16)) < 0.6
        comp = np.pad(~mask, pad, constant_values=True)
        dual = ~targetgen.dilate(comp, iters, "square")[pad:-pad, pad:-pad]
        assert np.array_equal(targetgen.erode(mask, iters, "square"), dual)


def test_erode_matches_brute_force():
    rng = np.random.default_rng(3)
    for element in ("square", "cross"):
        mask = rng.random((16, 16)) < 0.6
        assert np.array_equal(targetgen.erode(mask, 2, element), brute_erode(mask, 2, element))
        assert np.array_equal(targetgen.dilate(mask, 2, element), brute_dilate(mask, 2, element))


# -- tertiary targets


def test_tertiary_all_zero_map():
    out = targetgen.build_tertiary(np.zeros((10, 10), dtype=np.int32))
    assert (out == CLASS_BACKGROUND).all()


def test_tertiary_single_square():
    labels = np.zeros((20, 20), dtype=np.int32)
    labels[7:13, 7:13] = 1
    out = targetgen.build_tertiary(labels)
    assert (out[labels > 0] == CLASS_CELL).all()  # all 36 instance pixels stay cell
    ring = targetgen.dilate(labels > 0, 2) & (labels == 0)
    assert (out[ring] == CLASS_BOUNDARY).all()
    assert (out[~(ring | (labels > 0))] == CLASS_BACKGROUND).all()


def test_tertiary_touching_squares_disconnected():
    labels = np.zeros((20, 20), dtype=np.int32)
    labels[5:10, 3:8] = 1
    labels[5:10, 8:13] = 2  # edge contact
    out = targetgen.build_tertiary(labels)
    assert np.array_equal(out, alg1_tertiary(labels))
    # facing band pixels become boundary, cells stay 8-disconnected
    from oracles import flood_components

    cells = flood_components(out == CLASS_CELL, connectivity=8)
    assert cells.max() == 2
    # some pixels of each instance were reassigned to boundary
    assert (out[labels == 1] == CLASS_BOUNDARY).any()
    assert (out[labels == 2] == CLASS_BOUNDARY).any()


def test_tertiary_matches_oracle_on_random_maps():
    rng = np.random.default_rng(4)
    for _ in range(30):
        labels = random_label_map(rng, size=24, max_instances=6)
        assert np.array_equal(targetgen.build_tertiary(labels), alg1_tertiary(labels))


def test_tertiary_cross_element_matches_oracle():
    rng = np.random.default_rng(5)
    params = MorphParams(element="cross")
    for _ in range(10):
        labels = random_label_map(rng, size=24)
        expect = alg1_tertiary(labels, element="cross")
        assert np.array_equal(targetgen.build_tertiary(labels, params), expect)


def test_tertiary_conservation():
    # no background pixel of the input becomes cell
    rng = np.random.default_rng(6)
    for _ in range(10):
        labels = random_label_map(rng)
        out = targetgen.build_tertiary(labels)
        assert not ((out == CLASS_CELL) & (labels == 0)).any()


def test_tertiary_instance_order_invariance():
    rng = np.random.default_rng(7)
    labels = random_label_map(rng, size=24, max_instances=6)
    permuted = np.zeros_like(labels)
    ids = [i for i in np.unique(labels) if i > 0]
    for new, old in zip(rng.permutation(len(ids)) + 1, ids):
        permuted[labels == old] = new
    assert np.array_equal(
        targetgen.build_tertiary(labels), targetgen.build_tertiary(permuted)
    )


def test_morph_params_validation():
    with pytest.raises(PipelineError):
        MorphParams(dilate_iters=-1)
    with pytest.raises(PipelineError):
        MorphParams(contact_distance=0)
    with pytest.raises(PipelineError):
        MorphParams(element="diamond")
    assert MorphParams.for_dimensionality("3D").dilate_iters == 5
    assert MorphParams.for_dimensionality("2D").dilate_iters == 2
