import numpy as np
import pytest

from ctforensics.errors import AlignmentError, DomainError, DuplicationError, GeometryError, LoadError
from ctforensics.heatmap import (Heatmap, assemble, assemble_arrays, cell_of, export_png, load_heatmap, peak_cell,
                                 save_heatmap, to_overlay_coords)
from ctforensics.patch_grid import GridSpec, full_grid

from oracles import grid_by_enumeration

SPEC = GridSpec(512, 32, 4)


def test_empty_and_single():
    hm = assemble([], SPEC)
    assert hm.grid.shape == (121, 121) and not hm.grid.any()
    hm = assemble([((16, 16), 0.9)], SPEC)
    assert hm.grid[0, 0] == 0.9 and np.count_nonzero(hm.grid) == 1


def test_full_grid_of_ones_matches_oracle_cardinality():
    pts = full_grid(SPEC).points()
    hm = assemble_arrays(pts, np.ones(len(pts)), SPEC)
    assert np.count_nonzero(hm.grid) == len(grid_by_enumeration(512, 32, 4))
    # both assembly routes agree
    slow = assemble([((x, y), 1.0) for x, y in pts], SPEC)
    assert np.array_equal(slow.grid, hm.grid)


def test_row_is_y_cell():
    hm = assemble([((16 + 4 * 3, 16 + 4 * 7), 0.5)], SPEC)
    assert hm.grid[7, 3] == 0.5


def test_overlay_coords_examples_and_round_trip():
    assert to_overlay_coords((0, 0), SPEC) == (16, 16)
    assert to_overlay_coords((120, 120), SPEC) == (496, 496)
    for gx in range(121):
        for gy in (0, 33, 120):
            assert cell_of(to_overlay_coords((gx, gy), SPEC), SPEC) == (gx, gy)
    with pytest.raises(GeometryError):
        to_overlay_coords((121, 0), SPEC)


def test_assembly_errors():
    with pytest.raises(AlignmentError):
        assemble([((17, 16), 0.1)], SPEC)
    with pytest.raises(AlignmentError):
        assemble([((500, 16), 0.1)], SPEC)
    with pytest.raises(DuplicationError):
        assemble([((16, 16), 0.1), ((16, 16), 0.2)], SPEC)
    with pytest.raises(DuplicationError):
        assemble_arrays([(16, 16), (16, 16)], [0.1, 0.2], SPEC)
    with pytest.raises(DomainError):
        assemble([((16, 16), 1.5)], SPEC)


def test_order_invariance(rng):
    pts = full_grid(GridSpec(128)).points()
    p = rng.random(len(pts))
    perm = rng.permutation(len(pts))
    a = assemble_arrays(pts, p, GridSpec(128))
    b = assemble_arrays(pts[perm], p[perm], GridSpec(128))
    assert np.array_equal(a.grid, b.grid)


def test_file_round_trip(tmp_path, rng):
    spec = GridSpec(128)
    grid = rng.random((spec.cells, spec.cells)).astype(np.float32).astype(np.float64)
    hm = Heatmap(grid, spec)
    path = save_heatmap(hm, tmp_path / "a.hmap")
    assert path.stat().st_size == 4 + 2 + 4 * 4 + 4 * spec.cells ** 2
    back = load_heatmap(path)
    assert back.spec == spec and np.array_equal(back.grid, grid)
    png = export_png(hm, tmp_path / "a.png", upscale=True)
    assert png.stat().st_size > 0


def test_corrupt_files(tmp_path):
    (tmp_path / "short.hmap").write_bytes(b"HM")
    with pytest.raises(LoadError):
        load_heatmap(tmp_path / "short.hmap")
    path = save_heatmap(Heatmap(np.zeros((25, 25)), GridSpec(128)), tmp_path / "t.hmap")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(LoadError):
        load_heatmap(path)


def test_peak_cell_finds_plateau_centre():
    spec = GridSpec(128)
    grid = np.zeros((25, 25))
    grid[8:15, 3:10] = 1.0  # saturated block centred at (gx 6, gy 11)
    grid[20, 20] = 1.0  # isolated spike
    hm = Heatmap(grid, spec)
    assert peak_cell(hm) == (6, 11)
    assert peak_cell(hm, smooth_sigma=0) == (3, 8)
