"""Parity between the numba kernels and their pure-numpy reference.

Both backends are imported directly, bypassing the CANOPY_METRICS_BACKEND
dispatch, so the pair is exercised no matter which one the rest of the
suite runs on.  Integer and boolean outputs must agree bitwise; float
outputs within tight relative tolerance.
"""

import os

import numpy as np
import pytest

from canopy_metrics.heatmap import build_filter_bank
from canopy_metrics.kernels import BACKEND
from canopy_metrics.kernels import numpy_backend as npk

numba = pytest.importorskip("numba")
from canopy_metrics.kernels import numba_backend as nbk  # noqa: E402


def test_backend_flag_respects_environment():
    choice = os.environ.get("CANOPY_METRICS_BACKEND", "auto").lower()
    if choice in ("numba", "numpy"):
        assert BACKEND == choice
    else:
        assert BACKEND in ("numba", "numpy")


class TestSplatGaussianMax:
    def test_parity(self, rng):
        rows = rng.integers(0, 40, size=8).astype(np.int64)
        cols = rng.integers(0, 50, size=8).astype(np.int64)
        sigmas = rng.uniform(0.5, 4.0, size=8)
        a = np.zeros((40, 50))
        b = np.zeros((40, 50))
        npk.splat_gaussian_max(a, rows, cols, sigmas)
        nbk.splat_gaussian_max(b, rows, cols, sigmas)
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=0.0)
        assert a.max() == 1.0

    def test_parity_at_borders(self, rng):
        rows = np.array([0, 39, 0, 39], dtype=np.int64)
        cols = np.array([0, 49, 49, 0], dtype=np.int64)
        sigmas = np.array([3.0, 1.0, 2.5, 0.7])
        a = np.zeros((40, 50))
        b = np.zeros((40, 50))
        npk.splat_gaussian_max(a, rows, cols, sigmas)
        nbk.splat_gaussian_max(b, rows, cols, sigmas)
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=0.0)


class TestWindowPeakMask:
    def test_parity_random(self, rng):
        # quantized values create natural plateaus and exact ties
        values = rng.integers(0, 100, size=(48, 56)).astype(np.float64) / 100.0
        for window, threshold in ((11, 0.6), (5, 0.3), (3, 0.0)):
            a = npk.window_peak_mask(values, window, threshold)
            b = nbk.window_peak_mask(values, window, threshold)
            np.testing.assert_array_equal(b, a)

    def test_plateau_tie_goes_row_major_first(self):
        values = np.zeros((16, 16))
        values[4, 4] = values[4, 7] = values[6, 5] = 0.9
        for backend in (npk, nbk):
            mask = backend.window_peak_mask(values, 11, 0.5)
            assert np.argwhere(mask).tolist() == [[4, 4]]


class TestZnccBest:
    def test_parity(self, rng):
        values = rng.random((64, 64))
        bank = build_filter_bank(n=8, sigma_min=0.5, sigma_max=6.0, window=9)
        rows = np.array([0, 4, 31, 63, 60, 10], dtype=np.int64)
        cols = np.array([0, 63, 32, 63, 2, 10], dtype=np.int64)
        ai, ac = npk.zncc_best(values, rows, cols, bank.kernels, 4)
        bi, bc = nbk.zncc_best(values, rows, cols, bank.kernels, 4)
        np.testing.assert_array_equal(bi, ai)
        np.testing.assert_allclose(bc, ac, rtol=1e-10)

    def test_zero_variance_patch(self):
        # 0.5 is exact in binary, so the demeaned patch is exactly zero
        values = np.full((32, 32), 0.5)
        bank = build_filter_bank(n=4, sigma_min=0.5, sigma_max=3.0, window=9)
        rows = np.array([16], dtype=np.int64)
        cols = np.array([16], dtype=np.int64)
        for backend in (npk, nbk):
            idx, corr = backend.zncc_best(values, rows, cols, bank.kernels, 4)
            assert idx[0] == 0
            assert corr[0] == -np.inf

    def test_duplicate_kernel_tie_takes_lowest_index(self, rng):
        values = rng.random((32, 32))
        bank = build_filter_bank(n=4, sigma_min=0.5, sigma_max=3.0, window=9)
        kernels = np.concatenate([bank.kernels[:1], bank.kernels], axis=0)
        rows = np.array([16], dtype=np.int64)
        cols = np.array([16], dtype=np.int64)
        for backend in (npk, nbk):
            idx, _ = backend.zncc_best(values, rows, cols, kernels, 4)
            assert idx[0] in (0, 2, 3, 4)  # never the duplicate at 1
        ai, _ = npk.zncc_best(values, rows, cols, kernels, 4)
        bi, _ = nbk.zncc_best(values, rows, cols, kernels, 4)
        assert ai[0] == bi[0]


class TestPointInPolygonMask:
    def test_parity(self):
        # concave polygon with one horizontal edge
        poly_x = np.array([0.0, 4.0, 4.0, 2.0, 0.0])
        poly_y = np.array([0.0, 0.0, 3.0, 1.5, 3.0])
        a = npk.point_in_polygon_mask(poly_x, poly_y, 30, 25, -0.5, -0.5, 0.2)
        b = nbk.point_in_polygon_mask(poly_x, poly_y, 30, 25, -0.5, -0.5, 0.2)
        np.testing.assert_array_equal(b, a)
        assert a.any() and not a.all()

    def test_parity_random_polygons(self, rng):
        for _ in range(5):
            n = int(rng.integers(3, 9))
            ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
            rad = rng.uniform(0.5, 2.0, size=n)
            poly_x = rad * np.cos(ang)
            poly_y = rad * np.sin(ang)
            a = npk.point_in_polygon_mask(poly_x, poly_y, 40, 40, -2.5, -2.5, 0.125)
            b = nbk.point_in_polygon_mask(poly_x, poly_y, 40, 40, -2.5, -2.5, 0.125)
            np.testing.assert_array_equal(b, a)


class TestMajorityFilter:
    def test_parity(self, rng):
        labels = rng.integers(0, 4, size=(32, 40)).astype(np.int64)
        for window in (3, 7, 23):
            a = npk.majority_filter_labels(labels, window)
            b = nbk.majority_filter_labels(labels, window)
            np.testing.assert_array_equal(b, a)

    def test_tie_goes_to_smaller_label(self):
        labels = np.array([[1, 2]], dtype=np.int64)
        for backend in (npk, nbk):
            out = backend.majority_filter_labels(labels, 3)
            assert out.tolist() == [[1, 1]]

    def test_background_untouched(self, rng):
        labels = rng.integers(0, 3, size=(20, 20)).astype(np.int64)
        for backend in (npk, nbk):
            out = backend.majority_filter_labels(labels, 5)
            np.testing.assert_array_equal(out == 0, labels == 0)


class TestNearestCandidate:
    def test_parity(self, rng):
        rows = rng.integers(0, 100, size=200).astype(np.int64)
        cols = rng.integers(0, 100, size=200).astype(np.int64)
        cr = rng.integers(0, 100, size=9).astype(np.int64)
        cc = rng.integers(0, 100, size=9).astype(np.int64)
        a = npk.nearest_candidate(rows, cols, cr, cc)
        b = nbk.nearest_candidate(rows, cols, cr, cc)
        np.testing.assert_array_equal(b, a)

    def test_equidistant_tie_takes_first(self):
        rows = np.array([5], dtype=np.int64)
        cols = np.array([5], dtype=np.int64)
        cr = np.array([5, 5], dtype=np.int64)
        cc = np.array([3, 7], dtype=np.int64)
        for backend in (npk, nbk):
            assert backend.nearest_candidate(rows, cols, cr, cc)[0] == 0
