"""Numba implementations of the hot kernels.

Same contracts as numpy_backend; see that module for the reference
semantics.  Import fails if numba is missing, and kernels/__init__ then
falls back (unless CANOPY_METRICS_BACKEND=numba forces this path).
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def splat_gaussian_max(grid, rows, cols, sigmas):
    h, w = grid.shape
    for i in range(len(rows)):
        r, c, sigma = rows[i], cols[i], sigmas[i]
        reach = int(math.ceil(4.5 * sigma)) + 1
        r0, r1 = max(r - reach, 0), min(r + reach + 1, h)
        c0, c1 = max(c - reach, 0), min(c + reach + 1, w)
        inv = 1.0 / (2.0 * sigma * sigma)
        for rr in range(r0, r1):
            dr = float(rr - r)
            for cc in range(c0, c1):
                dc = float(cc - c)
                v = math.exp(-(dr * dr + dc * dc) * inv)
                if v > grid[rr, cc]:
                    grid[rr, cc] = v


@njit(cache=True)
def window_peak_mask(values, window, threshold):
    h, w = values.shape
    half = window // 2
    mask = np.zeros((h, w), dtype=np.bool_)
    for r in range(h):
        for c in range(w):
            v = values[r, c]
            if v <= threshold:
                continue
            r0, r1 = max(r - half, 0), min(r + half + 1, h)
            c0, c1 = max(c - half, 0), min(c + half + 1, w)
            # survive iff (r, c) is the row-major-first argmax of its window
            br, bc = r0, c0
            best = values[r0, c0]
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    if values[rr, cc] > best:
                        best = values[rr, cc]
                        br, bc = rr, cc
            if br == r and bc == c:
                mask[r, c] = True
    return mask


@njit(cache=True)
def zncc_best(values, rows, cols, kernels, half):
    n_peaks = len(rows)
    n_k = kernels.shape[0]
    best_idx = np.zeros(n_peaks, dtype=np.int64)
    best_corr = np.full(n_peaks, -np.inf)
    h, w = values.shape
    for p in range(n_peaks):
        r, c = rows[p], cols[p]
        r0, r1 = max(r - half, 0), min(r + half + 1, h)
        c0, c1 = max(c - half, 0), min(c + half + 1, w)
        m = (r1 - r0) * (c1 - c0)
        psum = 0.0
        for rr in range(r0, r1):
            for cc in range(c0, c1):
                psum += values[rr, cc]
        pmean = psum / m
        pnorm2 = 0.0
        for rr in range(r0, r1):
            for cc in range(c0, c1):
                d = values[rr, cc] - pmean
                pnorm2 += d * d
        pn = math.sqrt(pnorm2)
        if pn == 0.0:
            continue
        kr0 = r0 - (r - half)
        kc0 = c0 - (c - half)
        for k in range(n_k):
            ksum = 0.0
            for rr in range(r1 - r0):
                for cc in range(c1 - c0):
                    ksum += kernels[k, kr0 + rr, kc0 + cc]
            kmean = ksum / m
            knorm2 = 0.0
            dot = 0.0
            for rr in range(r1 - r0):
                for cc in range(c1 - c0):
                    kd = kernels[k, kr0 + rr, kc0 + cc] - kmean
                    knorm2 += kd * kd
                    dot += kd * (values[r0 + rr, c0 + cc] - pmean)
            if knorm2 == 0.0:
                continue
            score = dot / (math.sqrt(knorm2) * pn)
            if score > best_corr[p]:
                best_corr[p] = score
                best_idx[p] = k
    return best_idx, best_corr


@njit(cache=True)
def point_in_polygon_mask(poly_x, poly_y, width, height, x0, y0, res):
    inside = np.zeros((height, width), dtype=np.bool_)
    n = len(poly_x)
    for row in range(height):
        py = y0 + (row + 0.5) * res
        for col in range(width):
            px = x0 + (col + 0.5) * res
            hit = False
            for i in range(n):
                x1, y1 = poly_x[i], poly_y[i]
                j = i + 1
                if j == n:
                    j = 0
                x2, y2 = poly_x[j], poly_y[j]
                if y1 == y2:
                    continue
                if (y1 > py) != (y2 > py):
                    xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                    if px < xi:
                        hit = not hit
            inside[row, col] = hit
    return inside


@njit(cache=True)
def majority_filter_labels(labels, window):
    h, w = labels.shape
    out = labels.copy()
    top = labels.max()
    if top <= 0:
        return out
    half = window // 2
    counts = np.zeros(top + 1, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            if labels[r, c] <= 0:
                continue
            r0, r1 = max(r - half, 0), min(r + half + 1, h)
            c0, c1 = max(c - half, 0), min(c + half + 1, w)
            counts[:] = 0
            for rr in range(r0, r1):
                for cc in range(c0, c1):
                    lab = labels[rr, cc]
                    if lab > 0:
                        counts[lab] += 1
            best = 0
            bestlab = 0
            for lab in range(1, top + 1):
                if counts[lab] > best:  # strict: ties keep the smaller label
                    best = counts[lab]
                    bestlab = lab
            out[r, c] = bestlab
    return out


@njit(cache=True)
def nearest_candidate(rows, cols, cand_rows, cand_cols):
    n = len(rows)
    m = len(cand_rows)
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        best = np.int64(2**62)
        for j in range(m):
            dr = rows[i] - cand_rows[j]
            dc = cols[i] - cand_cols[j]
            d2 = dr * dr + dc * dc
            if d2 < best:  # strict: ties keep the first candidate
                best = d2
                out[i] = j
    return out
