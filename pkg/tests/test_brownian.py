import io

import numpy as np
import pytest

from truncmilstein import PathGrid, UsageError, coarsen, sample_path
from truncmilstein.brownian import (LATTICE, coarsen_increments, dump_path, load_path,
                                    sample_increments, standard_normals)


class TestGrid:
    def test_step(self):
        g = PathGrid(2.0, 8)
        assert g.step * g.steps == 2.0
        assert g.times[-1] == 2.0

    def test_dyadic(self):
        assert PathGrid.dyadic(2.0, 10).steps == 2048
        with pytest.raises(UsageError):
            PathGrid.dyadic(0.3, 2)

    def test_invalid(self):
        with pytest.raises(UsageError):
            PathGrid(1.0, 0)
        with pytest.raises(UsageError):
            PathGrid(-1.0, 4)


class TestSamplePath:
    def test_deterministic(self):
        g = PathGrid(1.0, 4)
        a = sample_path(g, 1, 42, 0)
        b = sample_path(g, 1, 42, 0)
        np.testing.assert_array_equal(a.increments, b.increments)
        assert a.increments.shape == (4, 1)

    def test_stream_depends_only_on_key(self):
        # entry (k, j) is the same whatever the path length
        z_short = standard_normals(9, 5, 8, 3)
        z_long = standard_normals(9, 5, 64, 3)
        np.testing.assert_array_equal(z_short, z_long[:8])

    def test_batch_equals_single(self):
        g = PathGrid(1.0, 16)
        batch = sample_increments(g, 2, 3, [4, 0, 7])
        for row, idx in enumerate([4, 0, 7]):
            np.testing.assert_array_equal(batch[row], sample_path(g, 2, 3, idx).increments)

    def test_different_indices_differ(self):
        g = PathGrid(1.0, 16)
        assert not np.array_equal(sample_path(g, 1, 3, 0).increments,
                                  sample_path(g, 1, 3, 1).increments)

    def test_mean_and_variance(self):
        delta = 0.01
        g = PathGrid(delta * 10_000, 10_000)
        inc = sample_increments(g, 1, 2024, range(100)).ravel()
        assert inc.size == 10**6
        assert abs(inc.mean()) <= 4 * np.sqrt(delta / 1e6)
        assert abs(inc.var() / delta - 1) <= 0.01

    def test_independence_across_samples(self):
        g = PathGrid(1.0, 1)
        inc = sample_increments(g, 1, 77, range(2 * 10**5))[:, 0, 0]
        a, b = inc[0::2], inc[1::2]
        assert abs(np.corrcoef(a, b)[0, 1]) <= 0.01

    def test_lattice(self):
        inc = sample_path(PathGrid(1.0, 32), 2, 1, 1).increments
        np.testing.assert_array_equal(np.rint(inc / LATTICE) * LATTICE, inc)

    def test_seed_range(self):
        with pytest.raises(UsageError):
            sample_path(PathGrid(1.0, 2), 1, -1, 0)


class TestCoarsen:
    def test_identity(self):
        p = sample_path(PathGrid(1.0, 8), 1, 1, 0)
        np.testing.assert_array_equal(coarsen(p, 1).increments, p.increments)

    def test_definition(self):
        inc = np.array([[1.0], [2.0], [3.0], [4.0]])
        np.testing.assert_array_equal(coarsen_increments(inc, 2, axis=0), [[3.0], [7.0]])

    def test_composition_bitwise(self):
        p = sample_path(PathGrid(2.0, 1024), 2, 5, 3)
        np.testing.assert_array_equal(coarsen(coarsen(p, 2), 2).increments,
                                      coarsen(p, 4).increments)
        np.testing.assert_array_equal(coarsen(coarsen(p, 8), 16).increments,
                                      coarsen(p, 128).increments)

    def test_telescoping_left_to_right(self):
        p = sample_path(PathGrid(2.0, 4096), 2, 5, 3)
        c = coarsen(p, 64)
        for j in range(2):
            fine_total = 0.0
            for v in p.increments[:, j]:
                fine_total += v
            coarse_total = 0.0
            for v in c.increments[:, j]:
                coarse_total += v
            assert fine_total == coarse_total
            assert fine_total == p.increments[:, j].sum()

    def test_grid(self):
        p = sample_path(PathGrid(2.0, 16), 1, 1, 0)
        c = coarsen(p, 4)
        assert c.grid.t_end == 2.0 and c.grid.steps == 4

    def test_bad_factor(self):
        p = sample_path(PathGrid(1.0, 12), 1, 1, 0)
        with pytest.raises(UsageError):
            coarsen(p, 8)
        with pytest.raises(UsageError):
            coarsen(p, 3)


def test_dump_roundtrip():
    p = sample_path(PathGrid(2.0, 16), 2, 11, 4)
    buf = io.BytesIO()
    dump_path(p, buf)
    assert len(buf.getvalue()) == 48 + 16 * 2 * 8
    buf.seek(0)
    q = load_path(buf)
    assert q.grid == p.grid and q.master_seed == 11 and q.sample_index == 4
    np.testing.assert_array_equal(q.increments, p.increments)
