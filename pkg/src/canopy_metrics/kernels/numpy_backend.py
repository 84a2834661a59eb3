"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba backend: every function here has a numba
twin with the same signature, and the pair is held together by parity tests.
"""

import numpy as np


def splat_gaussian_max(grid, rows, cols, sigmas):
    """Max-combine isotropic pixel-space Gaussians (peak 1.0) into grid.

    rows/cols are integer peak pixels, sigmas are per-peak standard
    deviations in pixels.  Each Gaussian is rendered out to 4.5 sigma
    (values beyond are < 4e-5 and cannot move any peak or threshold).
    Modifies grid in place.
    """
    h, w = grid.shape
    for r, c, sigma in zip(rows, cols, sigmas):
        reach = int(np.ceil(4.5 * sigma)) + 1
        r0, r1 = max(r - reach, 0), min(r + reach + 1, h)
        c0, c1 = max(c - reach, 0), min(c + reach + 1, w)
        if r0 >= r1 or c0 >= c1:
            continue
        dr = np.arange(r0, r1, dtype=np.float64) - r
        dc = np.arange(c0, c1, dtype=np.float64) - c
        d2 = dr[:, None] ** 2 + dc[None, :] ** 2
        patch = np.exp(-d2 / (2.0 * sigma * sigma))
        np.maximum(grid[r0:r1, c0:c1], patch, out=grid[r0:r1, c0:c1])


def _window_max(values, window):
    # separable: max over a centered window = row-max of col-maxes
    half = window // 2
    padded = np.pad(values, half, mode="constant", constant_values=-np.inf)
    view = np.lib.stride_tricks.sliding_window_view(padded, window, axis=1)
    colmax = view.max(axis=2)
    view = np.lib.stride_tricks.sliding_window_view(colmax, window, axis=0)
    return view.max(axis=2)


def window_peak_mask(values, window, threshold):
    """Boolean mask of surviving local maxima.

    A pixel survives iff its value exceeds threshold, equals the max of the
    centered window x window neighbourhood, and the pixel itself is the
    first (row-major) position attaining that max within the neighbourhood.
    The last clause breaks plateau ties deterministically: of two equal
    peaks inside one window, only the row-major-first survives.
    """
    h, w = values.shape
    half = window // 2
    cand = (values > threshold) & (values == _window_max(values, window))
    mask = np.zeros((h, w), dtype=bool)
    for r, c in zip(*np.nonzero(cand)):
        r0, c0 = max(r - half, 0), max(c - half, 0)
        sub = values[r0 : min(r + half + 1, h), c0 : min(c + half + 1, w)]
        k = int(np.argmax(sub))
        if r0 + k // sub.shape[1] == r and c0 + k % sub.shape[1] == c:
            mask[r, c] = True
    return mask


def zncc_best(values, rows, cols, kernels, half):
    """Best zero-normalized cross-correlation over a kernel bank.

    For each peak, crops a (2*half+1)^2 patch (clipped at borders, the
    kernels cropped identically), and returns (best_idx, best_corr) with
    ties going to the lowest kernel index.  Zero-variance patches get
    best_corr = -inf and best_idx = 0.
    """
    n_peaks = len(rows)
    n_k = kernels.shape[0]
    best_idx = np.zeros(n_peaks, dtype=np.int64)
    best_corr = np.full(n_peaks, -np.inf)
    h, w = values.shape
    for p in range(n_peaks):
        r, c = int(rows[p]), int(cols[p])
        r0, r1 = max(r - half, 0), min(r + half + 1, h)
        c0, c1 = max(c - half, 0), min(c + half + 1, w)
        patch = values[r0:r1, c0:c1].astype(np.float64).ravel()
        pv = patch - patch.mean()
        pn = np.sqrt(np.dot(pv, pv))
        if pn == 0.0:
            continue
        kr0, kr1 = r0 - (r - half), r1 - (r - half)
        kc0, kc1 = c0 - (c - half), c1 - (c - half)
        crops = kernels[:, kr0:kr1, kc0:kc1].reshape(n_k, -1).astype(np.float64)
        kv = crops - crops.mean(axis=1, keepdims=True)
        kn = np.sqrt((kv * kv).sum(axis=1))
        scores = np.full(n_k, -np.inf)
        ok = kn > 0.0
        scores[ok] = (kv[ok] @ pv) / (kn[ok] * pn)
        best = int(np.argmax(scores))
        best_idx[p] = best
        best_corr[p] = scores[best]
    return best_idx, best_corr


def point_in_polygon_mask(poly_x, poly_y, width, height, x0, y0, res):
    """Even-odd rasterization of a polygon onto pixel centers.

    Pixel (row, col) tests the world point (x0+(col+.5)*res,
    y0+(row+.5)*res).  Horizontal edges never cross the test ray and are
    skipped.
    """
    px = x0 + (np.arange(width, dtype=np.float64) + 0.5) * res
    py = y0 + (np.arange(height, dtype=np.float64) + 0.5) * res
    px = px[None, :]
    py = py[:, None]
    inside = np.zeros((height, width), dtype=bool)
    n = len(poly_x)
    for i in range(n):
        x1, y1 = poly_x[i], poly_y[i]
        x2, y2 = poly_x[(i + 1) % n], poly_y[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xi)
    return inside


def majority_filter_labels(labels, window):
    """Window-majority vote over positive labels.

    Each positive pixel takes the label most frequent among positive labels
    in its centered window (border-cropped); ties go to the smallest label.
    Zero (background) pixels are left untouched and never vote.
    """
    h, w = labels.shape
    out = labels.copy()
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        return out
    half = window // 2
    rr = np.arange(h)
    cc = np.arange(w)
    r0 = np.clip(rr - half, 0, h)[:, None]
    r1 = np.clip(rr + half + 1, 0, h)[:, None]
    c0 = np.clip(cc - half, 0, w)[None, :]
    c1 = np.clip(cc + half + 1, 0, w)[None, :]
    counts = np.empty((ids.size, h, w), dtype=np.int64)
    for k, lab in enumerate(ids):
        ii = np.zeros((h + 1, w + 1), dtype=np.int64)
        ii[1:, 1:] = (labels == lab).cumsum(axis=0).cumsum(axis=1)
        counts[k] = ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0]
    # ids ascend, so argmax-first-occurrence = smallest label on ties
    winner = ids[np.argmax(counts, axis=0)]
    pos = labels > 0
    out[pos] = winner[pos]
    return out


def nearest_candidate(rows, cols, cand_rows, cand_cols):
    """Index of the nearest candidate per query pixel (squared distance,
    first occurrence on ties)."""
    dr = rows.astype(np.int64)[:, None] - cand_rows.astype(np.int64)[None, :]
    dc = cols.astype(np.int64)[:, None] - cand_cols.astype(np.int64)[None, :]
    return np.argmin(dr * dr + dc * dc, axis=1)
