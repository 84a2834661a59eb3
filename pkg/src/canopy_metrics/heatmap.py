"""Gaussian-heatmap codec for center detection.

Encoding renders one isotropic Gaussian per tree (peak 1 at the tree's
pixel, sigma tied to crown diameter) and combines overlaps by per-pixel
max.  Decoding finds NMS peaks and sizes each one by zero-normalized
cross-correlation against a log-spaced filter bank.  Also here: the
CenterNet-style size-map decoder, EDT-based instance separation for
binary masks, heatmap merging for test-time augmentation, and the HMAP/
SMAP raster file format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import RasterSpec, TreeRecord, cd_to_ca
from .kernels import (
    majority_filter_labels,
    nearest_candidate,
    point_in_polygon_mask,
    splat_gaussian_max,
    window_peak_mask,
    zncc_best,
)

__all__ = [
    "Heatmap",
    "SizeMap",
    "FilterBank",
    "DecodeParams",
    "default_sigma_of_cd",
    "default_cd_of_sigma",
    "encode",
    "build_filter_bank",
    "nms_peaks",
    "zncc",
    "decode_heatmap",
    "decode_centernet",
    "separate_instances",
    "merge_heatmaps",
    "write_raster",
    "read_raster",
]


@dataclass(frozen=True)
class Heatmap:
    spec: RasterSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.height, self.spec.width):
            raise ValueError(
                f"heatmap shape {v.shape} does not match spec "
                f"{(self.spec.height, self.spec.width)}"
            )
        object.__setattr__(self, "values", np.clip(v, 0.0, 1.0))


@dataclass(frozen=True)
class SizeMap:
    """Per-pixel crown diameter in pixels; non-positive entries are
    invalid."""

    spec: RasterSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.spec.height, self.spec.width):
            raise ValueError("size map shape does not match spec")
        object.__setattr__(self, "values", v)

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class FilterBank:
    sigmas: np.ndarray
    kernels: np.ndarray
    window: int

    def __post_init__(self):
        if np.any(np.diff(self.sigmas) <= 0):
            raise ValueError("bank sigmas must be strictly increasing")

    @property
    def step_ratio(self) -> float:
        return float(self.sigmas[1] / self.sigmas[0])


@dataclass(frozen=True)
class DecodeParams:
    nms_window: int = 11
    peak_threshold: float = 0.6
    patch_window: int = 25

    def __post_init__(self):
        for w in (self.nms_window, self.patch_window):
            if w < 3 or w % 2 == 0:
                raise ValueError(f"windows must be odd and >= 3, got {w}")
        if not 0.0 < self.peak_threshold < 1.0:
            raise ValueError(
                f"peak threshold must be in (0, 1), got {self.peak_threshold!r}"
            )


def default_sigma_of_cd(cd_px: float) -> float:
    """Target kernel sigma from crown diameter, both in pixels."""
    return cd_px / 4.0


def default_cd_of_sigma(sigma_px: float) -> float:
    """Inverse of default_sigma_of_cd."""
    return 4.0 * sigma_px


def _gauss_patch(dr0, dr1, dc0, dc1, sigma):
    dr = np.arange(dr0, dr1, dtype=np.float64)
    dc = np.arange(dc0, dc1, dtype=np.float64)
    return np.exp(-(dr[:, None] ** 2 + dc[None, :] ** 2) / (2.0 * sigma * sigma))


def encode(
    trees,
    spec: RasterSpec,
    sigma_of_cd=default_sigma_of_cd,
    clip_to_polygons: bool = False,
) -> Heatmap:
    """Render trees into a Gaussian heatmap.

    Each tree contributes a peak of exactly 1 at its containing pixel
    (which is also the nearest pixel center); overlapping trees combine
    by max.  With clip_to_polygons, a tree that has a polygon is zeroed
    outside it.
    """
    grid = np.zeros((spec.height, spec.width), dtype=np.float64)
    rows, cols, sigmas = [], [], []
    clipped = []
    for t in trees:
        r, c = spec.world_to_pixel(*t.center)
        if not (0 <= r < spec.height and 0 <= c < spec.width):
            raise ValueError(f"tree center {t.center} falls outside the raster")
        sigma = sigma_of_cd(t.crown_diameter / spec.resolution)
        if sigma <= 0:
            raise ValueError("sigma_of_cd must return a positive sigma")
        if clip_to_polygons and t.polygon is not None:
            clipped.append((r, c, sigma, t.polygon))
        else:
            rows.append(r)
            cols.append(c)
            sigmas.append(sigma)
    if rows:
        splat_gaussian_max(
            grid,
            np.array(rows, dtype=np.int64),
            np.array(cols, dtype=np.int64),
            np.array(sigmas, dtype=np.float64),
        )
    for r, c, sigma, poly in clipped:
        reach = int(math.ceil(4.5 * sigma)) + 1
        r0, r1 = max(r - reach, 0), min(r + reach + 1, spec.height)
        c0, c1 = max(c - reach, 0), min(c + reach + 1, spec.width)
        patch = _gauss_patch(r0 - r, r1 - r, c0 - c, c1 - c, sigma)
        xs = np.array([v[0] for v in poly.vertices])
        ys = np.array([v[1] for v in poly.vertices])
        mask = point_in_polygon_mask(
            xs,
            ys,
            c1 - c0,
            r1 - r0,
            spec.origin[0] + c0 * spec.resolution,
            spec.origin[1] + r0 * spec.resolution,
            spec.resolution,
        )
        np.maximum(grid[r0:r1, c0:c1], patch * mask, out=grid[r0:r1, c0:c1])
    return Heatmap(spec=spec, values=grid)


def build_filter_bank(
    n: int = 48, sigma_min: float = 0.3, sigma_max: float = 25.0, window: int = 25
) -> FilterBank:
    """Log-spaced Gaussian kernels, peak 1 at the window center."""
    if n < 2:
        raise ValueError("bank needs at least 2 filters")
    if not 0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    i = np.arange(n)
    sigmas = sigma_min * (sigma_max / sigma_min) ** (i / (n - 1))
    half = window // 2
    kernels = np.stack(
        [_gauss_patch(-half, half + 1, -half, half + 1, s) for s in sigmas]
    )
    return FilterBank(sigmas=sigmas, kernels=kernels, window=window)


def nms_peaks(hm: Heatmap, params: DecodeParams):
    """(rows, cols) of surviving peaks in lexicographic order.

    A pixel survives when it exceeds the threshold and is the row-major
    first argmax of its nms_window neighbourhood, so a plateau inside one
    window yields exactly one peak.
    """
    mask = window_peak_mask(hm.values, params.nms_window, params.peak_threshold)
    rows, cols = np.nonzero(mask)
    return rows.astype(np.int64), cols.astype(np.int64)


def zncc(patch_a: np.ndarray, patch_b: np.ndarray) -> float:
    """Zero-normalized cross-correlation of two equal-size patches;
    -inf when either patch has zero variance."""
    a = np.asarray(patch_a, dtype=np.float64).ravel()
    b = np.asarray(patch_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("patches must have the same size")
    av = a - a.mean()
    bv = b - b.mean()
    na = np.sqrt(np.dot(av, av))
    nb = np.sqrt(np.dot(bv, bv))
    if na == 0.0 or nb == 0.0:
        return -math.inf
    return float(np.dot(av, bv) / (na * nb))


def decode_heatmap(
    hm: Heatmap,
    bank: FilterBank,
    params: DecodeParams | None = None,
    cd_of_sigma=default_cd_of_sigma,
    patch_id: str = "0",
) -> list[TreeRecord]:
    """Peaks to trees: NMS for centers, best-ZNCC filter for sizes.

    The ZNCC patch and the kernels are cropped identically at raster
    borders.  sigma_best converts to crown diameter through cd_of_sigma
    (inverse of the encoder's mapping) and the raster resolution.
    """
    if params is None:
        params = DecodeParams()
    if bank.window != params.patch_window:
        raise ValueError("bank window must equal params.patch_window")
    rows, cols = nms_peaks(hm, params)
    if rows.size == 0:
        return []
    best_idx, _ = zncc_best(
        hm.values, rows, cols, bank.kernels, params.patch_window // 2
    )
    trees = []
    res = hm.spec.resolution
    for r, c, k in zip(rows.tolist(), cols.tolist(), best_idx.tolist()):
        cd_m = cd_of_sigma(float(bank.sigmas[k])) * res
        trees.append(
            TreeRecord(
                patch_id=patch_id,
                center=hm.spec.pixel_to_world(r, c),
                crown_area=cd_to_ca(cd_m),
                score=float(hm.values[r, c]),
            )
        )
    return trees


def decode_centernet(
    hm: Heatmap,
    size_map: SizeMap,
    params: DecodeParams | None = None,
    patch_id: str = "0",
):
    """Peaks to trees with sizes read off a size map.

    Returns (trees, dropped): peaks whose size-map entry is invalid
    (non-positive) are dropped and tallied, not errored.
    """
    if params is None:
        params = DecodeParams(peak_threshold=0.5)
    if size_map.spec != hm.spec:
        raise ValueError("heatmap and size map must share a raster spec")
    rows, cols = nms_peaks(hm, params)
    trees = []
    dropped = 0
    res = hm.spec.resolution
    for r, c in zip(rows.tolist(), cols.tolist()):
        cd_px = float(size_map.values[r, c])
        if cd_px <= 0:
            dropped += 1
            continue
        trees.append(
            TreeRecord(
                patch_id=patch_id,
                center=hm.spec.pixel_to_world(r, c),
                crown_area=cd_to_ca(cd_px * res),
                score=float(hm.values[r, c]),
            )
        )
    return trees, dropped


def separate_instances(
    mask: np.ndarray,
    spec: RasterSpec,
    w_max: int = 15,
    w_maj: int = 23,
    patch_id: str = "0",
):
    """Split a binary mask into tree instances.

    Candidate centers are local maxima of the Euclidean distance
    transform (window w_max, one per plateau); every positive pixel joins
    its nearest candidate; a w_maj majority vote then smooths the
    boundaries.  Returns (instance label raster, trees): labels are
    1-based, 0 is background, and each tree gets the instance centroid
    and CA = pixel count * resolution^2.
    """
    mask = np.asarray(mask).astype(bool)
    labels = np.zeros(mask.shape, dtype=np.int64)
    if not mask.any():
        return labels, []
    edt = ndimage.distance_transform_edt(mask)
    peak = window_peak_mask(edt, w_max, 0.0)
    cand_r, cand_c = np.nonzero(peak)
    pos_r, pos_c = np.nonzero(mask)
    owner = nearest_candidate(
        pos_r.astype(np.int64),
        pos_c.astype(np.int64),
        cand_r.astype(np.int64),
        cand_c.astype(np.int64),
    )
    labels[pos_r, pos_c] = owner + 1
    labels = majority_filter_labels(labels, w_maj)
    trees = []
    res = spec.resolution
    for lab in range(1, cand_r.size + 1):
        rr, cc = np.nonzero(labels == lab)
        if rr.size == 0:
            continue
        cy = spec.origin[1] + (rr.mean() + 0.5) * res
        cx = spec.origin[0] + (cc.mean() + 0.5) * res
        trees.append(
            TreeRecord(
                patch_id=patch_id,
                center=(cx, cy),
                crown_area=rr.size * res * res,
            )
        )
    return labels, trees


def _invert_transform(values: np.ndarray, transform) -> np.ndarray:
    if transform in (None, "identity"):
        return values
    if transform == "hflip":
        return values[:, ::-1]
    if transform == "vflip":
        return values[::-1, :]
    if transform in ("rot90", "rot180", "rot270"):
        k = {"rot90": 1, "rot180": 2, "rot270": 3}[transform]
        return np.rot90(values, k=-k)
    if isinstance(transform, tuple) and transform[0] == "rescale":
        # bilinear resample back to the size the map had before scaling
        factor = float(transform[1])
        h = int(round(values.shape[0] / factor))
        w = int(round(values.shape[1] / factor))
        src_r = (np.arange(h) + 0.5) * values.shape[0] / h - 0.5
        src_c = (np.arange(w) + 0.5) * values.shape[1] / w - 0.5
        rr, cc = np.meshgrid(src_r, src_c, indexing="ij")
        return ndimage.map_coordinates(
            values, [rr, cc], order=1, mode="nearest"
        )
    raise ValueError(f"unknown transform {transform!r}")


def merge_heatmaps(heatmaps, transforms=None) -> Heatmap:
    """Per-pixel mean after undoing each map's declared transform.

    Transforms: identity, hflip, vflip, rot90/180/270 (counter-clockwise,
    as applied to the input), or ("rescale", factor)."""
    if not heatmaps:
        raise ValueError("nothing to merge")
    if transforms is None:
        transforms = [None] * len(heatmaps)
    if len(transforms) != len(heatmaps):
        raise ValueError("one transform per heatmap required")
    base_spec = heatmaps[0].spec
    restored = []
    for hm, tf in zip(heatmaps, transforms):
        values = _invert_transform(hm.values, tf)
        if values.shape != (base_spec.height, base_spec.width):
            raise ValueError("heatmaps do not align after inverting transforms")
        restored.append(values)
    return Heatmap(spec=base_spec, values=np.mean(restored, axis=0))


def write_raster(path, raster) -> None:
    """HMAP/SMAP container: ASCII header 'TAG <w> <h> <res>', then
    width*height little-endian float32, row-major, top row first."""
    if isinstance(raster, Heatmap):
        tag = "HMAP"
    elif isinstance(raster, SizeMap):
        tag = "SMAP"
    else:
        raise TypeError(f"cannot serialize {type(raster).__name__}")
    spec = raster.spec
    header = f"{tag} {spec.width} {spec.height} {spec.resolution!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(raster.values.astype("<f4").tobytes())


def read_raster(path):
    """Inverse of write_raster; returns a Heatmap or SizeMap."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError("truncated raster header")
            if ch == b"\n":
                break
            header.extend(ch)
        parts = header.decode("ascii").split()
        if len(parts) != 4 or parts[0] not in ("HMAP", "SMAP"):
            raise ValueError(f"bad raster header {header!r}")
        tag, width, height, res = parts[0], int(parts[1]), int(parts[2]), float(parts[3])
        payload = fh.read()
    expected = width * height * 4
    if len(payload) != expected:
        raise ValueError(
            f"raster payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)
    spec = RasterSpec(width=width, height=height, resolution=res)
    if tag == "HMAP":
        return Heatmap(spec=spec, values=values)
    return SizeMap(spec=spec, values=values)
