from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from refvid.errors import DataError
from refvid.rle import decode_mask, encode_mask


def test_counts_start_with_zero_run():
    mask = np.array([[1, 1], [0, 0]], dtype=bool)
    rle = encode_mask(mask)
    assert rle["counts"] == [0, 2, 2]
    assert rle["size"] == [2, 2]


def test_leading_background_counted_first():
    mask = np.array([[0, 0, 1], [1, 0, 0]], dtype=bool)
    rle = encode_mask(mask)
    assert rle["counts"] == [2, 2, 2]


def test_empty_and_full_masks():
    empty = np.zeros((3, 5), dtype=bool)
    assert encode_mask(empty)["counts"] == [15]
    full = np.ones((3, 5), dtype=bool)
    assert encode_mask(full)["counts"] == [0, 15]


def test_round_trip_simple():
    mask = np.zeros((6, 6), dtype=bool)
    mask[2:5, 1:4] = True
    assert np.array_equal(decode_mask(encode_mask(mask)), mask)


def test_decode_rejects_bad_total():
    with pytest.raises(DataError):
        decode_mask({"size": [2, 2], "counts": [5]})


def test_decode_rejects_malformed():
    with pytest.raises(DataError):
        decode_mask({"counts": [1]})


@given(
    arrays(dtype=bool, shape=st.tuples(st.integers(1, 12), st.integers(1, 12)))
)
@settings(max_examples=200, deadline=None)
def test_round_trip_property(mask):
    assert np.array_equal(decode_mask(encode_mask(mask)), mask)


@given(
    arrays(dtype=bool, shape=st.tuples(st.integers(1, 8), st.integers(1, 8)))
)
@settings(max_examples=100, deadline=None)
def test_counts_positive_after_first(mask):
    counts = encode_mask(mask)["counts"]
    assert all(c > 0 for c in counts[1:])
    assert sum(counts) == mask.size
