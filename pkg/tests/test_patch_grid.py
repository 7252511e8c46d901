import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctforensics import FAKE, REAL
from ctforensics.errors import ConfigError, GeometryError
from ctforensics.patch_grid import (GridSpec, SamplerSpec, box_offsets, extract_patch, extract_patches, full_grid,
                                    row_centers, row_x_centers, sample_centers, sample_training_patches)

from oracles import grid_by_enumeration, inside_circle, window_in_frame


def test_row_centers_examples():
    rows = row_centers(GridSpec(512, 32, 4))
    assert (rows[0], rows[-1], len(rows)) == (16, 496, 121)
    assert row_centers(GridSpec(512, 32, 480)) == [16, 496]
    assert row_centers(GridSpec(64, 32, 4)) == [16, 20, 24, 28, 32, 36, 40, 44, 48]


def test_row_x_centers_examples():
    spec = GridSpec(512, 32, 4)
    mid = row_x_centers(256, spec)
    assert (mid[0], mid[-1], len(mid)) == (16, 496, 121)
    assert mid == sorted(512 - x for x in mid)
    top = row_x_centers(16, spec)
    assert (top[0], top[-1], len(top)) == (184, 328, 37)
    # chord at y = 0 is zero wide
    assert row_x_centers(0, spec) == []


def test_full_grid_matches_enumeration_oracle():
    for ct, img, stride in [(512, 32, 4), (128, 32, 4), (256, 32, 8), (100, 20, 6)]:
        pts = full_grid(GridSpec(ct, img, stride)).points()
        as_set = {(int(x), int(y)) for x, y in pts}
        assert len(as_set) == len(pts)
        assert as_set == grid_by_enumeration(ct, img, stride)


def test_full_grid_inside_circle_and_frame():
    spec = GridSpec(512, 32, 4)
    pts = full_grid(spec).points()
    assert all(inside_circle(x, y, 512) for x, y in pts)
    assert all(window_in_frame(x, y, 32, 512) for x, y in pts)


def test_single_window_grid():
    assert full_grid(GridSpec(64, 64, 4)).points().tolist() == [[32, 32]]


def test_literal_rows_only_right_half():
    spec = GridSpec(512, 32, 4, literal_rows=True)
    xs = row_x_centers(16, spec)
    assert xs and min(xs) == 256
    assert row_x_centers(300, spec) == []


def test_grid_spec_validation():
    for bad in (dict(stride=0), dict(img_size=31), dict(img_size=600)):
        with pytest.raises(ConfigError):
            GridSpec(**{**dict(ct_size=512, img_size=32, stride=4), **bad})


def test_extract_patch_examples():
    img = np.full((512, 512), 0.3, dtype=np.float32)
    assert np.all(extract_patch(img, (200, 300)).values == np.float32(0.3))
    delta = np.zeros((512, 512))
    delta[100, 100] = 1.0
    p = extract_patch(delta, (100, 100))
    assert p.values.shape == (32, 32)
    assert p.values[16, 16] == 1.0 and p.values.sum() == 1.0
    with pytest.raises(GeometryError):
        extract_patch(img, (10, 10))


@settings(max_examples=100, deadline=None)
@given(st.integers(16, 112), st.integers(16, 112))
def test_extract_patch_index_formula(x, y):
    img = np.arange(128 * 128, dtype=np.int64).reshape(128, 128)
    v = extract_patch(img, (x, y)).values
    r, c = 5, 27
    assert v[r, c] == img[y - 16 + r, x - 16 + c]


def test_extract_patches_agrees_with_single(rng):
    img = rng.random((128, 128))
    pts = full_grid(GridSpec(128, 32, 4)).points()
    stack = extract_patches(img, pts)
    for i in (0, 17, len(pts) - 1):
        assert np.array_equal(stack[i], extract_patch(img, pts[i]).values)
    with pytest.raises(GeometryError):
        extract_patches(img, [(5, 64)])


def test_fake_slice_gives_5x5_lattice():
    img = np.zeros((512, 512))
    patches = sample_training_patches(img, (256, 256), SamplerSpec(), GridSpec(), rng_seed=1)
    assert len(patches) == 25
    assert {p.label for p in patches} == {FAKE}
    centers = {p.center for p in patches}
    assert centers == {(256 + dx, 256 + dy) for dx in range(-2, 3) for dy in range(-2, 3)}


def test_real_slice_near_and_random_negatives():
    img = np.zeros((512, 512))
    sampler = SamplerSpec()
    patches = sample_training_patches(img, (256, 256), sampler, GridSpec(), rng_seed=7, fake=False)
    assert len(patches) == 10 + sampler.negatives_random_per_slice
    assert {p.label for p in patches} == {REAL}
    centers = [p.center for p in patches]
    assert len(set(centers)) == len(centers)
    near = {(256 + dx, 256 + dy) for dx, dy in box_offsets(sampler.negative_near_box)}
    assert set(centers[:10]) <= near
    grid = {tuple(p) for p in full_grid(GridSpec()).points().tolist()}
    assert set(centers[10:]) <= grid


def test_real_slice_without_pairing_only_random():
    img = np.zeros((128, 128))
    patches = sample_training_patches(img, None, SamplerSpec(), GridSpec(128), rng_seed=0)
    assert len(patches) == 15 and {p.label for p in patches} == {REAL}


def test_sampling_is_deterministic():
    a = sample_centers((512, 512), (200, 220), False, SamplerSpec(), GridSpec(), rng_seed=99)
    b = sample_centers((512, 512), (200, 220), False, SamplerSpec(), GridSpec(), rng_seed=99)
    c = sample_centers((512, 512), (200, 220), False, SamplerSpec(), GridSpec(), rng_seed=100)
    assert a == b and a != c


def test_sampling_errors():
    with pytest.raises(GeometryError):
        sample_centers((512, 512), (17, 256), True, SamplerSpec(), GridSpec(), 0)
    with pytest.raises(GeometryError):
        sample_centers((512, 512), None, True, SamplerSpec(), GridSpec(), 0)
    with pytest.raises(ConfigError):
        SamplerSpec(negative_ratio_n=11)
    with pytest.raises(ConfigError):
        SamplerSpec(positive_shift_box=(2, 0, -2, 0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 3))
def test_positive_lattice_size(a, b, c, d):
    box = (-a, -b, c, d)
    cs = sample_centers((512, 512), (256, 256), True, SamplerSpec(positive_shift_box=box), GridSpec(), 0)
    assert len(cs) == (a + c + 1) * (b + d + 1) == len(set(cs))
