import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shvc.tensors import (ShapeError, SubBlockLayout, f_g_permutation,
                          pixel_shuffle_f_inv, pixel_unshuffle_f,
                          subblock_view, subpixel_shuffle_g_inv,
                          subpixel_unshuffle_g)


def coded_tensor(c, h, w):
    """Tensor whose value at (c, h, w) is 100c + 10h + w."""
    ch, hh, ww = np.meshgrid(np.arange(c), np.arange(h), np.arange(w),
                             indexing="ij")
    return 100 * ch + 10 * hh + ww


def test_offset_grouped_reorder_known_values():
    t = coded_tensor(3, 2, 2)
    g = subpixel_unshuffle_g(t, 2)
    assert g.shape == (12, 1, 1)
    assert g[:, 0, 0].tolist() == [0, 100, 200, 1, 101, 201,
                                   10, 110, 210, 11, 111, 211]


def test_channel_grouped_reorder_known_values():
    t = coded_tensor(3, 2, 2)
    f = pixel_unshuffle_f(t, 2)
    assert f[:, 0, 0].tolist() == [0, 1, 10, 11, 100, 101, 110, 111,
                                   200, 201, 210, 211]


def test_permutation_between_reorders_known_values():
    assert f_g_permutation(3, 2).tolist() == [0, 4, 8, 1, 5, 9, 2, 6, 10,
                                              3, 7, 11]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3),
       st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_reorders_are_bijections(c, k, hb, wb, seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 256, size=(c, k * hb, k * wb))
    assert np.array_equal(pixel_shuffle_f_inv(pixel_unshuffle_f(t, k), k, c), t)
    assert np.array_equal(
        subpixel_shuffle_g_inv(subpixel_unshuffle_g(t, k), k, c), t)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3),
       st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_permutation_relates_the_reorders(c, k, hb, wb, seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 256, size=(c, k * hb, k * wb))
    perm = f_g_permutation(c, k)
    assert np.array_equal(subpixel_unshuffle_g(t, k),
                          pixel_unshuffle_f(t, k)[perm])


def test_subblock_view_slices_offset_groups():
    t = coded_tensor(3, 4, 4)
    g = subpixel_unshuffle_g(t, 2)
    for i in range(4):
        assert np.array_equal(subblock_view(g, i, 3), g[3 * i:3 * (i + 1)])


def test_subblock_view_is_a_view():
    g = subpixel_unshuffle_g(coded_tensor(2, 2, 2), 2).copy()
    v = subblock_view(g, 1, 2)
    v[:] = -1
    assert (g[2:4] == -1).all()


def test_layout_invariants():
    lay = SubBlockLayout(k=2, channels=3)
    assert lay.num_subblocks == 4
    assert lay.subblock_order() == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert lay.total_channels == 12
    with pytest.raises(ValueError):
        SubBlockLayout(k=0, channels=3)


def test_indivisible_dims_rejected():
    t = coded_tensor(3, 3, 4)
    with pytest.raises(ShapeError):
        subpixel_unshuffle_g(t, 2)
    with pytest.raises(ShapeError):
        pixel_unshuffle_f(t, 2)
