import math
import struct
from collections import defaultdict

import numpy as np
import pytest

from surftopo.planefit import ProjectedPoints
from surftopo.raster import (AllInvalid, CorruptGridFile, EmptyProjection, GridMap,
                             GridTooLarge, fill_holes, rasterize, rasterize_with_counts,
                             read_gm1, write_gm1)


def _proj(u, v, d):
    return ProjectedPoints(np.asarray(u, float), np.asarray(v, float), np.asarray(d, float))


def test_single_cell_mean():
    grid = rasterize(_proj([0.0, 0.01, 0.02, 0.01], [0.0, 0.02, 0.01, 0.0], [1, 2, 3, 4]),
                     pixel_size=0.1)
    assert grid.valid.sum() == 1
    assert grid.values[grid.valid][0] == 2.5


def test_exact_grid_one_point_per_cell():
    p = 0.25
    uu, vv = np.meshgrid(np.arange(10) * p, np.arange(7) * p)
    d = np.arange(70, dtype=float).reshape(7, 10)
    grid = rasterize(_proj(uu.ravel(), vv.ravel(), d.ravel()), pixel_size=p)
    assert grid.shape == (7 + 2, 10 + 2)
    np.testing.assert_array_equal(grid.values[1:-1, 1:-1], d)
    assert grid.valid[1:-1, 1:-1].all()
    assert not grid.valid[0].any() and not grid.valid[:, -1].any()


def test_random_points_match_hashmap_oracle(rng):
    u = rng.uniform(-3, 7, 100_000)
    v = rng.uniform(2, 5, 100_000)
    d = rng.normal(size=100_000)
    p = 0.07
    grid = rasterize(_proj(u, v, d), p)
    ou, ov = u.min() - p, v.min() - p
    acc = defaultdict(lambda: [0.0, 0])
    for a, b, c in zip(u.tolist(), v.tolist(), d.tolist()):
        key = (math.floor((b - ov) / p + 0.5), math.floor((a - ou) / p + 0.5))
        acc[key][0] += c
        acc[key][1] += 1
    assert grid.valid.sum() == len(acc)
    for (r, c), (s, n) in acc.items():
        assert grid.valid[r, c]
        assert abs(grid.values[r, c] - s / n) <= 1e-12


def test_mass_preservation(rng):
    u, v = rng.uniform(0, 3, (2, 5000))
    d = rng.normal(size=5000)
    grid, counts = rasterize_with_counts(_proj(u, v, d), 0.1)
    total = (grid.values * counts)[grid.valid].sum()
    assert abs(total - d.sum()) <= 1e-9 * np.abs(d).sum()


def test_rasterize_errors():
    with pytest.raises(EmptyProjection):
        rasterize(_proj([], [], []), 0.1)
    with pytest.raises(GridTooLarge):
        rasterize(_proj([0, 100], [0, 100], [0, 0]), 0.1, max_cells=1000)


def test_resolution_halving_preserves_block_means(rng):
    u, v = rng.uniform(0, 20, (2, 200_000))
    d = 0.5 * np.sin(u / 4) + 0.1 * v
    coarse = rasterize(_proj(u, v, d), 0.2)
    fine = rasterize(_proj(u, v, d), 0.1)

    def window_mean(g):
        cu = g.origin_u + np.arange(g.width) * g.pixel_size
        cv = g.origin_v + np.arange(g.height) * g.pixel_size
        m = ((cv[:, None] >= 5) & (cv[:, None] < 15) & (cu[None, :] >= 5) & (cu[None, :] < 15))
        return g.values[m & g.valid].mean()

    assert abs(window_mean(coarse) - window_mean(fine)) < 5e-3


def _grid(values, valid=None):
    values = np.asarray(values, dtype=float)
    valid = np.ones(values.shape, bool) if valid is None else np.asarray(valid, bool)
    return GridMap(np.where(valid, values, 0.0), valid, 1.0)


def test_fill_single_hole():
    valid = np.ones((3, 3), bool)
    valid[1, 1] = False
    out, left = fill_holes(_grid(np.full((3, 3), 7.0), valid))
    assert left == 0
    assert out.values[1, 1] == 7.0


def test_fill_fully_valid_is_identity(rng):
    g = _grid(rng.normal(size=(6, 5)))
    out, left = fill_holes(g)
    assert left == 0
    np.testing.assert_array_equal(out.values, g.values)


def test_fill_ramp_hole_close_to_truth():
    yy, xx = np.mgrid[0:5, 0:5]
    ramp = 10.0 + xx + yy
    valid = np.ones((5, 5), bool)
    valid[1:4, 1:4] = False
    out, left = fill_holes(_grid(ramp, valid))
    assert left == 0
    rel = np.abs(out.values - ramp) / ramp
    assert rel[1:4, 1:4].max() <= 0.10
    np.testing.assert_array_equal(out.values[valid], ramp[valid])


def test_fill_never_touches_valid_and_is_idempotent(rng):
    values = rng.normal(size=(30, 30))
    valid = rng.uniform(size=(30, 30)) > 0.3
    g = _grid(values, valid)
    once, _ = fill_holes(g)
    np.testing.assert_array_equal(once.values[valid], g.values[valid])
    twice, _ = fill_holes(once)
    np.testing.assert_array_equal(twice.values, once.values)
    np.testing.assert_array_equal(twice.valid, once.valid)


def test_fill_reports_unreachable_cells():
    valid = np.zeros((5, 5), bool)
    valid[0, 0] = True
    out, left = fill_holes(_grid(np.ones((5, 5)), valid))
    # A lone valid corner never gives any neighbour three valid cells.
    assert left == 24
    with pytest.raises(AllInvalid):
        fill_holes(_grid(np.ones((2, 2)), np.zeros((2, 2), bool)))


def test_gm1_layout_and_roundtrip(tmp_path, rng):
    values = rng.normal(size=(4, 6))
    valid = rng.uniform(size=(4, 6)) > 0.2
    g = GridMap(np.where(valid, values, 0), valid, 0.065, -1.5, 2.25)
    write_gm1(tmp_path / "m.gm1", g)
    raw = (tmp_path / "m.gm1").read_bytes()
    assert len(raw) == 24 + 5 * 24
    magic, w, h, px, ou, ov = struct.unpack_from("<4sIIfff", raw)
    assert (magic, w, h) == (b"GM1\x00", 6, 4)
    assert px == np.float32(0.065) and ou == -1.5 and ov == 2.25
    vals = np.frombuffer(raw, "<f4", 24, 24).reshape(4, 6)
    np.testing.assert_array_equal(vals, np.where(valid, values, 0).astype(np.float32))
    assert raw[24 + 96:] == valid.astype(np.uint8).tobytes()

    back = read_gm1(tmp_path / "m.gm1")
    np.testing.assert_array_equal(back.values, vals.astype(np.float64))
    np.testing.assert_array_equal(back.valid, valid)
    write_gm1(tmp_path / "m2.gm1", back)
    assert (tmp_path / "m2.gm1").read_bytes() == raw


def test_gm1_corruption(tmp_path):
    write_gm1(tmp_path / "m.gm1", _grid(np.ones((3, 3))))
    raw = (tmp_path / "m.gm1").read_bytes()
    (tmp_path / "bad1.gm1").write_bytes(b"XX" + raw[2:])
    (tmp_path / "bad2.gm1").write_bytes(raw[:-1])
    for name in ("bad1.gm1", "bad2.gm1"):
        with pytest.raises(CorruptGridFile):
            read_gm1(tmp_path / name)
