import numpy as np
import pytest

from vitfill.masking import MaskSpec, apply_mask, sample_mask
from vitfill.tensor import DimensionError


def test_forced_full_mask():
    m = sample_mask(0, 64, 64, MaskSpec(64, 64, 64, 64))
    assert np.all(m == 1)


def test_single_pixel_mask():
    m = sample_mask(3, 64, 64, MaskSpec(1, 1, 1, 1))
    assert m.sum() == 1


def test_default_min_is_quarter_of_max():
    spec = MaskSpec(32, 32)
    assert (spec.lo_h, spec.lo_w) == (8, 8)
    assert MaskSpec().to_dict()["max_h"] == 128


def test_spec_larger_than_image_rejected():
    with pytest.raises(ValueError):
        sample_mask(0, 64, 64, MaskSpec())


def test_deterministic_given_seed():
    spec = MaskSpec(32, 32)
    assert np.array_equal(sample_mask([4, 2], 64, 64, spec), sample_mask([4, 2], 64, 64, spec))


def test_hole_area_monte_carlo():
    spec = MaskSpec(32, 32, 16, 16)
    areas = np.array([sample_mask(s, 64, 64, spec).sum() for s in range(10_000)])
    # side ~ uniform integer on [16, 32]: E = 24, E[side^2] = 24 + 24^2 = 600
    mean_area = 24.0**2
    var_area = 600.0**2 - 24.0**4
    assert 16**2 <= areas.mean() <= 32**2
    assert abs(areas.mean() - mean_area) <= 3 * np.sqrt(var_area / len(areas))


def test_holes_are_rectangles_inside_bounds():
    spec = MaskSpec(32, 32, 8, 8)
    for s in range(10_000):
        m = sample_mask(s, 64, 48, spec)
        rows, cols = np.nonzero(m)
        hh, hw = rows.max() - rows.min() + 1, cols.max() - cols.min() + 1
        assert m.sum() == hh * hw
        assert 8 <= hh <= 32 and 8 <= hw <= 32
        assert set(np.unique(m)) == {0.0, 1.0}


def test_apply_mask_extremes(rng):
    y = rng.uniform(size=(3, 8, 8)).astype(np.float32)
    assert np.array_equal(apply_mask(y, np.zeros((8, 8))), y)
    assert np.all(apply_mask(y, np.ones((8, 8))) == 0)


def test_apply_mask_elementwise_oracle(rng):
    y = rng.uniform(size=(3, 9, 7)).astype(np.float32)
    m = (rng.uniform(size=(9, 7)) > 0.5).astype(np.float32)
    x = apply_mask(y, m)
    for c in range(3):
        for i in range(9):
            for j in range(7):
                assert x[c, i, j] == y[c, i, j] * (1 - m[i, j])
    assert np.array_equal(apply_mask(x, m), x)


def test_apply_mask_batched_and_does_not_modify(rng):
    y = rng.uniform(size=(2, 3, 4, 4)).astype(np.float32)
    keep = y.copy()
    m = np.stack([np.eye(4), np.ones((4, 4))]).astype(np.float32)
    x = apply_mask(y, m)
    assert np.array_equal(y, keep)
    assert np.all(x[1] == 0) and np.array_equal(x[0], apply_mask(y[0], m[0]))


def test_apply_mask_shape_mismatch():
    with pytest.raises(DimensionError):
        apply_mask(np.zeros((3, 8, 8)), np.zeros((8, 7)))
