import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activetest.geometry import Box, Mask


def test_box_validation():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 5)
    with pytest.raises(ValueError):
        Box(3, 2, 1, 5)
    assert Box(0, 0, 2, 3).area == 6


def test_mask_encode_decode_small():
    grid = np.array([[0, 1, 1], [1, 0, 0]], dtype=bool)
    m = Mask.encode(grid)
    assert m.width == 3 and m.height == 2
    assert sum(m.runs) == 6
    np.testing.assert_array_equal(m.decode(), grid)


def test_mask_runs_sum_mismatch_rejected():
    with pytest.raises(ValueError):
        Mask(width=3, height=2, runs=(1, 2))


def test_mask_leading_one():
    grid = np.array([[1, 1, 0, 0]], dtype=bool)
    m = Mask.encode(grid)
    assert m.runs[0] == 0  # canonical leading zero-run
    np.testing.assert_array_equal(m.decode(), grid)


def test_mask_area_and_tight_box():
    grid = np.zeros((8, 8), dtype=bool)
    grid[2:5, 3:7] = True
    m = Mask.encode(grid)
    assert m.area == 12
    assert m.tight_box().to_list() == [3.0, 2.0, 7.0, 5.0]


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.integers(0, 2**31 - 1),
)
def test_mask_roundtrip_bit_exact(width, height, seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((height, width)) < 0.5
    m = Mask.encode(grid)
    np.testing.assert_array_equal(m.decode(), grid)
    again = Mask.encode(m.decode())
    assert again.runs == m.runs and (again.width, again.height) == (m.width, m.height)
