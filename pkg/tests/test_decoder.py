"""Coarse decoder: UNet shape contracts, grid/point correspondence, and
gradient checks."""

import numpy as np
import pytest

from pcfold import decoder, fsnet, geometry, tensor as T
from pcfold.params import named_tensors

import oracles

F64 = np.dtype(np.float64)


def _sfm(rng, heads=4, k=16, d=16):
    return fsnet.StructuredFeatureMap(T.Tensor(rng.normal(size=(heads, k, d))))


class TestDecode:
    def test_desk_shape_contract(self):
        rng = np.random.default_rng(0)
        p = decoder.DecoderParams.init(rng, 4, 16, 16, 32, F64)
        res = decoder.decode(_sfm(rng), p)
        assert res.coarse_features.data.shape == (32, 16, 16)
        assert res.grid.data.shape == (3, 8, 8)
        assert res.coarse_points.data.shape == (64, 3)

    def test_zero_params_give_zero_points(self):
        rng = np.random.default_rng(1)
        p = decoder.DecoderParams.init(rng, 4, 8, 8, 16, F64)
        for _, t in named_tensors(p):
            t.data = np.zeros_like(t.data)
        res = decoder.decode(_sfm(rng, 4, 8, 8), p)
        assert not res.coarse_points.data.any()

    def test_points_are_row_major_grid_reshape(self):
        rng = np.random.default_rng(2)
        p = decoder.DecoderParams.init(rng, 4, 8, 8, 16, F64)
        res = decoder.decode(_sfm(rng, 4, 8, 8), p)
        g = res.grid.data
        w = g.shape[2]
        for i in range(res.coarse_points.data.shape[0]):
            assert np.array_equal(res.coarse_points.data[i], g[:, i // w, i % w])

    def test_odd_dimensions_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            decoder.DecoderParams.init(rng, 4, 15, 16, 32, F64)
        with pytest.raises(ValueError):
            decoder.DecoderParams.init(rng, 4, 2, 2, 32, F64)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        p = decoder.DecoderParams.init(rng, 4, 8, 8, 16, F64)
        sfm = _sfm(rng, 4, 8, 8)
        a = decoder.decode(sfm, p).coarse_points.data
        b = decoder.decode(sfm, p).coarse_points.data
        assert np.array_equal(a, b)

    def test_chamfer_gradient_through_decoder(self):
        rng = np.random.default_rng(5)
        p = decoder.DecoderParams.init(rng, 2, 4, 4, 8, F64)
        sfm = _sfm(rng, 2, 4, 4)
        target = T.Tensor(rng.uniform(-0.5, 0.5, size=(6, 3)))

        def loss():
            return geometry.chamfer_t(decoder.decode(sfm, p).coarse_points, target)

        named = list(named_tensors(p))
        for _, t in named:
            t.grad = None
        T.backward(loss())
        check_rng = np.random.default_rng(6)
        for name, t in named:
            assert t.grad is not None, name
            flat = t.data.reshape(-1)
            for i in check_rng.choice(flat.size, size=3, replace=False):
                fd = oracles.central_difference(lambda: float(loss().data), flat, i)
                g = float(t.grad.reshape(-1)[i])
                assert abs(fd - g) <= 1e-4 * max(abs(fd), abs(g), 1e-4), name


class TestPatchRegion:
    def _grid(self):
        rng = np.random.default_rng(7)
        return rng.normal(size=(3, 4, 6))

    def test_full_window_returns_all_points(self):
        g = self._grid()
        pts = decoder.extract_patch_region(g, (0, 0, 4, 6))
        assert pts.shape == (24, 3)
        assert np.array_equal(pts, g.reshape(3, -1).T)

    def test_single_cell_window(self):
        g = self._grid()
        pts = decoder.extract_patch_region(g, (2, 3, 1, 1))
        assert np.array_equal(pts[0], g[:, 2, 3])

    def test_disjoint_windows(self):
        g = self._grid()
        a = decoder.extract_patch_region(g, (0, 0, 2, 3))
        b = decoder.extract_patch_region(g, (2, 3, 2, 3))
        assert a.shape == b.shape == (6, 3)
        # index sets are disjoint, so no row of a can appear in b
        assert not any(np.array_equal(ra, rb) for ra in a for rb in b)

    def test_out_of_bounds_rejected(self):
        g = self._grid()
        for window in [(-1, 0, 2, 2), (0, 0, 5, 6), (3, 5, 2, 2), (0, 0, 0, 1)]:
            with pytest.raises(ValueError):
                decoder.extract_patch_region(g, window)
