"""Shape primitives for tree maps.

Crown area / crown diameter conversion, polygon measures, IoU between
disks, boxes and polygons, and the best-achievable IoU of a centroid
centered disk against a polygon (the ceiling imposed by circular
approximation).  All coordinates are local patch meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import point_in_polygon_mask

__all__ = [
    "TreeRecord",
    "Disk",
    "AxisBox",
    "Polygon",
    "RasterSpec",
    "ca_to_cd",
    "cd_to_ca",
    "polygon_area",
    "polygon_centroid",
    "rasterize",
    "shape_iou",
    "disk_iou_upper_bound",
    "box_iou",
    "box_nms",
]


def ca_to_cd(ca: float) -> float:
    """Crown diameter of the equal-area disk, CD = 2*sqrt(CA/pi)."""
    if not (math.isfinite(ca) and ca > 0):
        raise ValueError(f"crown area must be positive and finite, got {ca!r}")
    return 2.0 * math.sqrt(ca / math.pi)


def cd_to_ca(cd: float) -> float:
    """Crown area of the disk with diameter cd, CA = pi*(CD/2)^2."""
    if not (math.isfinite(cd) and cd > 0):
        raise ValueError(f"crown diameter must be positive and finite, got {cd!r}")
    return math.pi * (0.5 * cd) ** 2


def _signed_area(vertices) -> float:
    total = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def _segments_cross(p1, p2, p3, p4) -> bool:
    # proper crossing only; shared endpoints between adjacent edges are fine
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0


@dataclass(frozen=True)
class Polygon:
    """Simple closed ring, stored counter-clockwise.

    A repeated closing vertex (WKT convention) is dropped on construction,
    and clockwise input is reversed, so the shoelace area is always
    positive.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = [(float(x), float(y)) for x, y in self.vertices]
        if len(verts) >= 2 and verts[0] == verts[-1]:
            verts = verts[:-1]
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 distinct vertices")
        for x, y in verts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError("polygon vertices must be finite")
        signed = _signed_area(verts)
        if signed == 0.0:
            raise ValueError("degenerate polygon: zero area")
        if signed < 0.0:
            verts = verts[::-1]
        n = len(verts)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue  # adjacent edges share a vertex by design
                if _segments_cross(
                    verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n]
                ):
                    raise ValueError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", tuple(verts))

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> tuple[float, float]:
        a = 0.0
        cx = 0.0
        cy = 0.0
        n = len(self.vertices)
        for i in range(n):
            x1, y1 = self.vertices[i]
            x2, y2 = self.vertices[(i + 1) % n]
            cross = x1 * y2 - x2 * y1
            a += cross
            cx += (x1 + x2) * cross
            cy += (y1 + y2) * cross
        a *= 0.5
        return cx / (6.0 * a), cy / (6.0 * a)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        x, y = self.center
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("disk center must be finite")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"disk radius must be positive, got {self.radius!r}")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x, y = self.center
        r = self.radius
        return x - r, y - r, x + r, y + r


@dataclass(frozen=True)
class AxisBox:
    min_corner: tuple[float, float]
    max_corner: tuple[float, float]

    def __post_init__(self):
        x0, y0 = self.min_corner
        x1, y1 = self.max_corner
        if not all(math.isfinite(v) for v in (x0, y0, x1, y1)):
            raise ValueError("box corners must be finite")
        if not (x1 > x0 and y1 > y0):
            raise ValueError("box max corner must exceed min corner on both axes")

    @property
    def width(self) -> float:
        return self.max_corner[0] - self.min_corner[0]

    @property
    def height(self) -> float:
        return self.max_corner[1] - self.min_corner[1]

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (*self.min_corner, *self.max_corner)


@dataclass(frozen=True)
class TreeRecord:
    """One tree (label or prediction) in a patch.

    Crown diameter is never stored; use .crown_diameter which derives it
    from crown_area on every access.
    """

    patch_id: str
    center: tuple[float, float]
    crown_area: float
    score: float | None = None
    polygon: Polygon | None = None

    def __post_init__(self):
        x, y = self.center
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError("tree center must be finite")
        if not (math.isfinite(self.crown_area) and self.crown_area > 0):
            raise ValueError(f"crown area must be positive, got {self.crown_area!r}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score!r}")

    @property
    def crown_diameter(self) -> float:
        return ca_to_cd(self.crown_area)


@dataclass(frozen=True)
class RasterSpec:
    """Pixel grid over patch coordinates.

    Pixel (row, col) has its center at origin + ((col+0.5)*res,
    (row+0.5)*res); y grows with the row index.
    """

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("raster must be at least 1x1")
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ValueError(f"resolution must be positive, got {self.resolution!r}")

    @classmethod
    def cover(cls, bounds, resolution, margin=0.0) -> "RasterSpec":
        xmin, ymin, xmax, ymax = bounds
        x0, y0 = xmin - margin, ymin - margin
        width = max(1, int(math.ceil((xmax + margin - x0) / resolution)))
        height = max(1, int(math.ceil((ymax + margin - y0) / resolution)))
        return cls(width=width, height=height, resolution=resolution, origin=(x0, y0))

    def pixel_centers(self):
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    def world_to_pixel(self, x: float, y: float) -> tuple[int, int]:
        col = int(math.floor((x - self.origin[0]) / self.resolution))
        row = int(math.floor((y - self.origin[1]) / self.resolution))
        return row, col

    def pixel_to_world(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )


def polygon_area(poly: Polygon) -> float:
    return poly.area


def polygon_centroid(poly: Polygon) -> tuple[float, float]:
    return poly.centroid


def _area_of(shape) -> float:
    return shape.area


def rasterize(shape, spec: RasterSpec) -> np.ndarray:
    """Boolean occupancy mask; a pixel is in the shape iff its center is."""
    if isinstance(shape, Polygon):
        xs = np.array([v[0] for v in shape.vertices])
        ys = np.array([v[1] for v in shape.vertices])
        return point_in_polygon_mask(
            xs, ys, spec.width, spec.height, spec.origin[0], spec.origin[1], spec.resolution
        )
    cx, cy = spec.pixel_centers()
    gx = cx[None, :]
    gy = cy[:, None]
    if isinstance(shape, Disk):
        x, y = shape.center
        return (gx - x) ** 2 + (gy - y) ** 2 <= shape.radius**2
    if isinstance(shape, AxisBox):
        x0, y0 = shape.min_corner
        x1, y1 = shape.max_corner
        return (gx >= x0) & (gx <= x1) & (gy >= y0) & (gy <= y1)
    raise TypeError(f"cannot rasterize {type(shape).__name__}")


def _disk_disk_iou(a: Disk, b: Disk) -> float:
    # canonical argument order keeps the result bitwise symmetric
    if (a.radius, a.center) > (b.radius, b.center):
        a, b = b, a
    d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
    ra, rb = a.radius, b.radius
    if d >= ra + rb:
        return 0.0
    if d <= abs(ra - rb):
        small, big = min(ra, rb), max(ra, rb)
        return (small / big) ** 2
    lens = (
        ra * ra * math.acos((d * d + ra * ra - rb * rb) / (2.0 * d * ra))
        + rb * rb * math.acos((d * d + rb * rb - ra * ra) / (2.0 * d * rb))
        - 0.5
        * math.sqrt(
            (-d + ra + rb) * (d + ra - rb) * (d - ra + rb) * (d + ra + rb)
        )
    )
    # cancellation at tiny separations can push the ratio past 1 by an ulp
    return min(1.0, max(0.0, lens / (math.pi * ra * ra + math.pi * rb * rb - lens)))


def _auto_spec(a, b) -> RasterSpec:
    cd_large = ca_to_cd(max(_area_of(a), _area_of(b)))
    res = min(max(cd_large / 200.0, 0.001), 0.1)
    ax0, ay0, ax1, ay1 = a.bounds
    bx0, by0, bx1, by1 = b.bounds
    bounds = (min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1))
    return RasterSpec.cover(bounds, res, margin=res)


def shape_iou(a, b, spec: RasterSpec | None = None) -> float:
    """Intersection over union of two shapes.

    Disk pairs are solved analytically (lens area); any other pair is
    rasterized on spec, or on an auto grid at resolution CD/200 of the
    larger shape clamped to [0.001, 0.1] m/px.
    """
    if isinstance(a, Disk) and isinstance(b, Disk):
        return _disk_disk_iou(a, b)
    if spec is None:
        spec = _auto_spec(a, b)
    ma = rasterize(a, spec)
    mb = rasterize(b, spec)
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        raise ValueError("empty union: both shapes rasterize to nothing")
    inter = int(np.count_nonzero(ma & mb))
    return inter / union


def box_iou(a: AxisBox, b: AxisBox) -> float:
    ix = min(a.max_corner[0], b.max_corner[0]) - max(a.min_corner[0], b.min_corner[0])
    iy = min(a.max_corner[1], b.max_corner[1]) - max(a.min_corner[1], b.min_corner[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def box_nms(boxes, iou_threshold: float):
    """Greedy non-max suppression over (AxisBox, score) pairs.

    Keeps boxes in descending score order (stable on ties) and drops any
    box whose IoU with an already kept box exceeds iou_threshold.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i][1], i))
    kept: list = []
    for i in order:
        box, score = boxes[i]
        if all(box_iou(box, kb) <= iou_threshold for kb, _ in kept):
            kept.append((box, score))
    return kept


def _iou_profile(poly: Polygon, raster_res: float | None):
    """Sorted centroid distances of polygon pixels, for O(log n) disk IoU."""
    cx, cy = poly.centroid
    cd = ca_to_cd(poly.area)
    if raster_res is None:
        raster_res = min(max(cd / 200.0, 0.001), 0.1)
    px0, py0, px1, py1 = poly.bounds
    reach = 4.0 * cd
    bounds = (
        min(px0, cx - reach),
        min(py0, cy - reach),
        max(px1, cx + reach),
        max(py1, cy + reach),
    )
    spec = RasterSpec.cover(bounds, raster_res, margin=raster_res)
    mask = rasterize(poly, spec)
    xs, ys = spec.pixel_centers()
    dist = np.hypot(xs[None, :] - cx, ys[:, None] - cy)[mask]
    if dist.size == 0:
        raise ValueError("polygon rasterizes to no pixels at this resolution")
    dist.sort()
    poly_area = dist.size * raster_res**2
    return dist, poly_area


def disk_iou_upper_bound(
    poly: Polygon,
    mode: str = "continuous",
    sigmas: np.ndarray | None = None,
    resolution: float | None = None,
    raster_res: float | None = None,
) -> float:
    """Best IoU a centroid-centered disk can reach against the polygon.

    continuous mode optimizes the radius by golden-section search over
    (0, 4*CD] (coarse bracketing first, radius resolved to 1e-3 m); bank
    mode restricts the radius to 2*sigma*resolution for each filter sigma
    (pixels); box mode fixes it to (w+h)/4 of the polygon's bounding box.
    """
    dist, poly_area = _iou_profile(poly, raster_res)

    def iou_at(r: float) -> float:
        inter = float(np.searchsorted(dist, r, side="right")) * (
            poly_area / dist.size
        )
        return inter / (poly_area + math.pi * r * r - inter)

    cd = ca_to_cd(poly.area)
    if mode == "bank":
        if sigmas is None or resolution is None:
            raise ValueError("bank mode needs sigmas (px) and resolution (m/px)")
        return max(iou_at(2.0 * float(s) * resolution) for s in sigmas)
    if mode == "box":
        x0, y0, x1, y1 = poly.bounds
        return iou_at(((x1 - x0) + (y1 - y0)) / 4.0)
    if mode != "continuous":
        raise ValueError(f"unknown mode {mode!r}")

    lo, hi = 1e-6, 4.0 * cd
    # coarse scan guards the golden section against the step plateaus of
    # the rasterized profile
    grid = np.linspace(lo, hi, 65)
    vals = [iou_at(r) for r in grid]
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = iou_at(c), iou_at(d)
    while b - a > 1e-3:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = iou_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = iou_at(d)
    return max(fc, fd)
