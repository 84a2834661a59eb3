import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canopy_metrics.geometry import (
    AxisBox,
    Disk,
    Polygon,
    RasterSpec,
    TreeRecord,
    box_iou,
    box_nms,
    ca_to_cd,
    cd_to_ca,
    disk_iou_upper_bound,
    polygon_area,
    polygon_centroid,
    rasterize,
    shape_iou,
)

# two equal unit disks, centers one radius apart: lens area
# 2*acos(1/2) - (1/2)*sqrt(3), union 2*pi - lens
LENS = 2.0 * math.acos(0.5) - 0.5 * math.sqrt(3.0)
LENS_IOU = LENS / (2.0 * math.pi - LENS)  # 0.24300979377486326


class TestConversions:
    def test_round_numbers(self):
        assert ca_to_cd(math.pi) == pytest.approx(2.0, rel=1e-12)
        assert cd_to_ca(2.0) == pytest.approx(math.pi, rel=1e-12)

    @given(st.floats(min_value=1e-3, max_value=1e5))
    def test_inverse(self, ca):
        assert cd_to_ca(ca_to_cd(ca)) == pytest.approx(ca, rel=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ca_to_cd(0.0)
        with pytest.raises(ValueError):
            cd_to_ca(-1.0)


class TestTreeRecord:
    def test_crown_diameter(self):
        t = TreeRecord(patch_id="p", center=(0.0, 0.0), crown_area=math.pi)
        assert t.crown_diameter == pytest.approx(2.0, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            TreeRecord(patch_id="p", center=(0.0, 0.0), crown_area=0.0)
        with pytest.raises(ValueError):
            TreeRecord(patch_id="p", center=(math.nan, 0.0), crown_area=1.0)


class TestPolygon:
    def test_square_area_centroid(self):
        sq = Polygon(vertices=((0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)))
        assert sq.area == pytest.approx(4.0)
        assert polygon_centroid(sq) == pytest.approx((1.0, 1.0))

    def test_shoelace_l_shape(self):
        p = Polygon(
            vertices=(
                (0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)
            )
        )
        assert polygon_area(p) == pytest.approx(3.0)

    def test_cw_normalized_to_ccw(self):
        cw = Polygon(vertices=((0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)))
        # signed shoelace of the stored ring is positive after normalization
        v = cw.vertices
        signed = 0.5 * sum(
            v[i][0] * v[(i + 1) % 4][1] - v[(i + 1) % 4][0] * v[i][1] for i in range(4)
        )
        assert signed > 0

    def test_closing_vertex_stripped(self):
        p = Polygon(
            vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0))
        )
        assert len(p.vertices) == 4

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Polygon(vertices=((0.0, 0.0), (1.0, 0.0)))
        with pytest.raises(ValueError):
            Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)))
        with pytest.raises(ValueError):
            Polygon(vertices=((0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)))


class TestRasterSpec:
    def test_pixel_centers(self):
        spec = RasterSpec(width=4, height=3, resolution=0.5, origin=(10.0, 20.0))
        assert spec.pixel_to_world(0, 0) == pytest.approx((10.25, 20.25))
        assert spec.pixel_to_world(2, 3) == pytest.approx((11.75, 21.25))

    def test_world_to_pixel_floor(self):
        spec = RasterSpec(width=4, height=4, resolution=0.5)
        assert spec.world_to_pixel(0.49, 0.01) == (0, 0)
        assert spec.world_to_pixel(0.51, 1.99) == (3, 1)

    def test_rasterize_square(self):
        spec = RasterSpec(width=20, height=20, resolution=0.1)
        sq = Polygon(vertices=((0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5)))
        mask = rasterize(sq, spec)
        assert int(mask.sum()) == 100

    def test_rasterize_disk_area(self):
        spec = RasterSpec(width=200, height=200, resolution=0.01)
        mask = rasterize(Disk(radius=0.5, center=(1.0, 1.0)), spec)
        assert mask.sum() * 0.0001 == pytest.approx(math.pi * 0.25, rel=0.01)


class TestShapeIou:
    def test_identical_disks(self):
        d = Disk(radius=1.0, center=(0.0, 0.0))
        assert shape_iou(d, d) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint(self):
        a = Disk(radius=1.0, center=(0.0, 0.0))
        b = Disk(radius=1.0, center=(5.0, 0.0))
        assert shape_iou(a, b) == 0.0

    def test_lens_value(self):
        a = Disk(radius=1.0, center=(0.0, 0.0))
        b = Disk(radius=1.0, center=(1.0, 0.0))
        assert shape_iou(a, b) == pytest.approx(LENS_IOU, abs=1e-12)

    def test_nested_double_radius(self):
        a = Disk(radius=1.0, center=(0.0, 0.0))
        b = Disk(radius=2.0, center=(0.0, 0.0))
        assert shape_iou(a, b) == pytest.approx(0.25, abs=1e-12)

    def test_symmetry(self):
        a = Disk(radius=1.3, center=(0.0, 0.0))
        b = Disk(radius=0.8, center=(1.1, 0.4))
        assert shape_iou(a, b) == shape_iou(b, a)

    def test_raster_matches_analytic(self):
        # disk pair rendered at radius/100 stays within 2% of closed form
        a = Disk(radius=1.0, center=(0.0, 0.0))
        b = Disk(radius=1.0, center=(1.0, 0.0))
        spec = RasterSpec(width=320, height=240, resolution=0.01, origin=(-1.1, -1.1))
        ma = rasterize(a, spec)
        mb = rasterize(b, spec)
        raster = (ma & mb).sum() / (ma | mb).sum()
        assert raster == pytest.approx(LENS_IOU, rel=0.02)
        # a polygon operand forces the rasterized path inside shape_iou
        sq = Polygon(vertices=((-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)))
        mixed = shape_iou(sq, Disk(radius=0.5642, center=(0.0, 0.0)))
        assert mixed == pytest.approx(0.8291, abs=0.01)


def _square_disk_iou(r: float) -> float:
    """Independent closed form: unit square against a concentric disk."""
    a = 0.5
    if r <= a:
        inter = math.pi * r * r
    elif r * r >= 2 * a * a:
        inter = 1.0
    else:
        seg = r * r * math.acos(a / r) - a * math.sqrt(r * r - a * a)
        inter = math.pi * r * r - 4.0 * seg
    return inter / (1.0 + math.pi * r * r - inter)


class TestDiskUpperBound:
    def test_polygonal_circle_near_one(self):
        ang = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
        poly = Polygon(vertices=tuple((math.cos(t), math.sin(t)) for t in ang))
        assert disk_iou_upper_bound(poly, mode="continuous") >= 0.99

    def test_unit_square_optimum(self):
        # fine sweep of the analytic overlap as the oracle
        rs = np.linspace(0.01, 1.0, 20000)
        oracle = max(_square_disk_iou(float(r)) for r in rs)
        assert oracle == pytest.approx(0.8370303, abs=1e-4)
        sq = Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
        assert disk_iou_upper_bound(sq, mode="continuous") == pytest.approx(
            oracle, abs=0.005
        )

    def test_bank_mode_bounded_by_continuous(self):
        sq = Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
        cont = disk_iou_upper_bound(sq, mode="continuous")
        sig = np.array([0.5, 1.0, 2.0, 4.0])
        bank = disk_iou_upper_bound(sq, mode="bank", sigmas=sig, resolution=0.2)
        assert bank <= cont + 1e-9

    def test_bank_monotone_in_candidates(self):
        sq = Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
        small = np.array([0.5, 1.0])
        big = np.array([0.5, 1.0, 1.4, 2.0])
        lo = disk_iou_upper_bound(sq, mode="bank", sigmas=small, resolution=0.2)
        hi = disk_iou_upper_bound(sq, mode="bank", sigmas=big, resolution=0.2)
        assert hi >= lo

    def test_box_mode_unit_square(self):
        sq = Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
        # (w+h)/4 = 0.5: inscribed disk, IoU pi/4
        got = disk_iou_upper_bound(sq, mode="box")
        assert got == pytest.approx(math.pi / 4.0, abs=0.01)

    def test_unknown_mode(self):
        sq = Polygon(vertices=((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
        with pytest.raises(ValueError):
            disk_iou_upper_bound(sq, mode="best")


def _box(x0, y0, x1, y1):
    return AxisBox(min_corner=(x0, y0), max_corner=(x1, y1))


class TestBoxes:
    def test_box_iou(self):
        a = _box(0.0, 0.0, 2.0, 2.0)
        b = _box(1.0, 1.0, 3.0, 3.0)
        assert box_iou(a, b) == pytest.approx(1.0 / 7.0)
        assert box_iou(a, a) == 1.0
        assert box_iou(a, _box(5.0, 5.0, 6.0, 6.0)) == 0.0

    def test_nms_single(self):
        a = (_box(0.0, 0.0, 1.0, 1.0), 0.9)
        assert box_nms([a], 0.01) == [a]

    def test_nms_identical_keeps_higher_score(self):
        b = _box(0.0, 0.0, 1.0, 1.0)
        kept = box_nms([(b, 0.8), (b, 0.9)], 0.01)
        assert kept == [(b, 0.9)]

    def test_nms_trace(self):
        a = _box(0.0, 0.0, 2.0, 2.0)
        b = _box(0.0, 0.0, 2.0, 1.0)  # nested, IoU(a, b) = 2/4 = 0.5
        c = _box(10.0, 10.0, 11.0, 11.0)
        assert box_iou(a, b) == pytest.approx(0.5)
        kept = box_nms([(a, 0.9), (b, 0.8), (c, 0.1)], 0.01)
        assert [s for _, s in kept] == [0.9, 0.1]

    def test_nms_empty(self):
        assert box_nms([], 0.5) == []


@settings(deadline=None, max_examples=50)
@given(
    st.floats(min_value=0.2, max_value=3.0),
    st.floats(min_value=0.2, max_value=3.0),
    st.floats(min_value=0.0, max_value=4.0),
)
def test_disk_iou_properties(r1, r2, d):
    a = Disk(radius=r1, center=(0.0, 0.0))
    b = Disk(radius=r2, center=(d, 0.0))
    v = shape_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == shape_iou(b, a)
    if d >= r1 + r2:
        assert v == 0.0
