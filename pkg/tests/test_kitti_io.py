import io
import struct

import numpy as np
import pytest

from monodist.errors import (
    MalformedCalib,
    MalformedLabel,
    MissingCalibKey,
    SchemaViolation,
    TruncatedScan,
)
from monodist.geometry import Pixel
from monodist.kitti_io import (
    ExtendedAnnotation,
    KittiLabel,
    format_calib_file,
    format_label_file,
    parse_calib_file,
    parse_label_file,
    read_extended_annotations,
    read_velodyne_bin,
    write_extended_annotations,
    write_velodyne_bin,
)

CAR_LINE = "Car 0.0 0 -1.57 100.0 150.0 200.0 250.0 1.5 1.6 3.9 2.0 1.7 10.0 -1.57"


class TestLabelParsing:
    def test_positional_mapping(self):
        (lb,) = parse_label_file(CAR_LINE)
        assert lb.category == "Car"
        assert lb.bbox == (100.0, 150.0, 200.0, 250.0)
        assert lb.dims == (1.5, 1.6, 3.9)
        assert lb.location == (2.0, 1.7, 10.0)
        assert lb.rotation_y == -1.57
        assert lb.occluded == 0

    def test_empty_file(self):
        assert parse_label_file("") == []
        assert parse_label_file("\n\n") == []

    def test_wrong_field_count(self):
        with pytest.raises(MalformedLabel) as exc:
            parse_label_file("Car 0.0 0 -1.57 100 150 200 250 1.5 1.6 3.9 2.0 1.7 10.0")
        assert exc.value.line_no == 1

    def test_non_numeric_field(self):
        bad = CAR_LINE.replace("10.0", "ten")
        with pytest.raises(MalformedLabel):
            parse_label_file(bad)

    def test_line_numbers_skip_blanks(self):
        text = CAR_LINE + "\n\n" + "Van 0 0 0 1 2 3 4 5 6 7 8 9 10 nope"
        with pytest.raises(MalformedLabel) as exc:
            parse_label_file(text)
        assert exc.value.line_no == 3

    def test_format_round_trip(self):
        labels = parse_label_file(CAR_LINE + "\nDontCare -1.0 -1 -10.0 10 20 30 40 -1 -1 -1 -1000 -1000 -1000 -10")
        again = parse_label_file(format_label_file(labels))
        for a, b in zip(labels, again):
            assert a.category == b.category
            assert np.allclose(a.bbox, b.bbox, atol=1e-6)
            assert np.allclose(a.location, b.location, atol=1e-6)


MINIMAL_CALIB = """P2: 1 0 0 0 0 1 0 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0
"""


class TestCalibParsing:
    def test_identity_records(self):
        calib = parse_calib_file(MINIMAL_CALIB)
        assert np.array_equal(calib.P2.entries,
                              [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]])
        assert np.array_equal(calib.R0_rect.rotation, np.eye(3))
        assert np.array_equal(calib.Tr_velo_to_cam.rotation, np.eye(3))
        assert np.array_equal(calib.Tr_velo_to_cam.translation, np.zeros(3))

    def test_default_image_size_is_kitti(self):
        calib = parse_calib_file(MINIMAL_CALIB)
        assert (calib.P2.image_width, calib.P2.image_height) == (1242, 375)

    def test_img_size_record_wins(self):
        calib = parse_calib_file(MINIMAL_CALIB + "IMG_SIZE: 320 96\n")
        assert (calib.P2.image_width, calib.P2.image_height) == (320, 96)

    def test_explicit_size_overrides(self):
        calib = parse_calib_file(MINIMAL_CALIB, image_size=(640, 480))
        assert calib.P2.image_width == 640

    def test_missing_record(self):
        text = MINIMAL_CALIB.replace("Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n", "")
        with pytest.raises(MissingCalibKey):
            parse_calib_file(text)

    def test_wrong_value_count(self):
        with pytest.raises(MalformedCalib):
            parse_calib_file(MINIMAL_CALIB.replace("R0_rect: 1 0 0 0 1 0 0 0 1",
                                                   "R0_rect: 1 0 0 0 1 0 0 0"))

    def test_calib_round_trip(self):
        calib = parse_calib_file(MINIMAL_CALIB + "IMG_SIZE: 320 96\n")
        again = parse_calib_file(format_calib_file(calib))
        assert np.allclose(again.P2.entries, calib.P2.entries)
        assert again.P2.image_width == 320

    def test_real_style_calib(self):
        # excerpt shaped like a real KITTI calib file (extra keys ignored)
        text = (
            "P0: 721.5377 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0\n"
            "P2: 721.5377 0 609.5593 44.85728 0 721.5377 172.854 0.2163791 0 0 1 0.002745884\n"
            "R0_rect: 0.9999239 0.00983776 -0.007445048 -0.009869795 0.9999421 -0.004278459 0.007402527 0.004351614 0.9999631\n"
            "Tr_velo_to_cam: 0.007533745 -0.9999714 -0.000616602 -0.004069766 0.01480249 0.0007280733 -0.9998902 -0.07631618 0.9998621 0.00752379 0.01480755 -0.2717806\n"
        )
        calib = parse_calib_file(text)
        assert calib.P2.entries[0, 0] == pytest.approx(721.5377)


class TestVelodyne:
    def test_single_point_decode(self):
        data = struct.pack("<4f", 1.0, 2.0, 3.0, 0.5)
        cloud = read_velodyne_bin(data)
        assert len(cloud) == 1
        assert np.allclose(cloud.points[0], (1.0, 2.0, 3.0, 0.5))

    def test_empty(self):
        assert len(read_velodyne_bin(b"")) == 0

    def test_truncated(self):
        with pytest.raises(TruncatedScan):
            read_velodyne_bin(b"\x00" * 17)

    def test_count_exact(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((37, 4)).astype("<f4")
        cloud = read_velodyne_bin(pts.tobytes())
        assert len(cloud) == 37

    def test_reflectance_clamped(self):
        data = struct.pack("<4f", 0.0, 0.0, 0.0, 1.5) + struct.pack("<4f", 0, 0, 0, -0.25)
        cloud = read_velodyne_bin(data)
        assert cloud.points[0, 3] == 1.0
        assert cloud.points[1, 3] == 0.0

    def test_write_read_identity(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-50, 50, size=(100, 4)).astype("<f4")
        pts[:, 3] = rng.uniform(0, 1, 100)
        cloud = read_velodyne_bin(pts.tobytes())
        assert np.array_equal(read_velodyne_bin(write_velodyne_bin(cloud)).points,
                              cloud.points)


def random_annotation(rng, image_id="000042"):
    return ExtendedAnnotation(
        image_id=image_id,
        category=rng.choice(["Car", "Pedestrian", "Cyclist", "Van", "Truck"]),
        truncated=float(rng.uniform(0, 1)),
        occluded=int(rng.integers(0, 4)),
        alpha=float(rng.uniform(-np.pi, np.pi)),
        bbox=tuple(np.sort(rng.uniform(0, 1200, 2)).tolist() + [0, 0])[:2]
             + tuple(np.sort(rng.uniform(0, 370, 2)).tolist())[:2],
        dims=tuple(rng.uniform(0.5, 4.0, 3).tolist()),
        location=tuple(rng.uniform(-20, 60, 3).tolist()),
        rotation_y=float(rng.uniform(-np.pi, np.pi)),
        distance=float(rng.uniform(1, 80)),
        keypoint=Pixel(float(rng.uniform(0, 1242)), float(rng.uniform(0, 375))),
    )


class TestExtendedAnnotations:
    def test_round_trip_100_random(self):
        rng = np.random.default_rng(5)
        anns = [random_annotation(rng, image_id=f"{i:06d}") for i in range(100)]
        buf = io.StringIO()
        write_extended_annotations(anns, buf)
        back = read_extended_annotations(io.StringIO(buf.getvalue()))
        assert len(back) == len(anns)
        for a, b in zip(anns, back):  # order preserved
            assert a.image_id == b.image_id
            assert a.category == b.category
            assert a.occluded == b.occluded
            for fa, fb in [(a.truncated, b.truncated), (a.alpha, b.alpha),
                           (a.rotation_y, b.rotation_y), (a.distance, b.distance)]:
                assert fa == pytest.approx(fb, abs=1e-6)
            assert np.allclose(a.bbox, b.bbox, atol=1e-6)
            assert np.allclose(a.dims, b.dims, atol=1e-6)
            assert np.allclose(a.location, b.location, atol=1e-6)
            assert np.allclose(a.keypoint, b.keypoint, atol=1e-6)

    def test_empty_list(self):
        buf = io.StringIO()
        write_extended_annotations([], buf)
        assert buf.getvalue() == ""
        assert read_extended_annotations(io.StringIO("")) == []

    def test_missing_key_rejected(self):
        rng = np.random.default_rng(6)
        buf = io.StringIO()
        write_extended_annotations([random_annotation(rng)], buf)
        line = buf.getvalue().replace("distance=", "dist=")
        with pytest.raises(SchemaViolation) as exc:
            read_extended_annotations(io.StringIO(line))
        assert exc.value.line_no == 1

    def test_non_numeric_value_rejected(self):
        rng = np.random.default_rng(7)
        buf = io.StringIO()
        write_extended_annotations([random_annotation(rng)], buf)
        import re
        line = re.sub(r"distance=[0-9.]+", "distance=far", buf.getvalue())
        with pytest.raises(SchemaViolation):
            read_extended_annotations(io.StringIO(line))

    def test_golden_record_format(self):
        ann = ExtendedAnnotation(
            image_id="000007", category="Car", truncated=0.0, occluded=1,
            alpha=-1.5, bbox=(100.0, 150.0, 200.0, 250.0),
            dims=(1.5, 1.6, 3.9), location=(2.0, 1.7, 10.0), rotation_y=-1.57,
            distance=9.25, keypoint=Pixel(151.5, 199.25),
        )
        buf = io.StringIO()
        write_extended_annotations([ann], buf)
        expected = (
            "image_id=000007 category=Car truncated=0.000000 occluded=1 "
            "alpha=-1.500000 bbox_left=100.000000 bbox_top=150.000000 "
            "bbox_right=200.000000 bbox_bottom=250.000000 dim_height=1.500000 "
            "dim_width=1.600000 dim_length=3.900000 loc_x=2.000000 "
            "loc_y=1.700000 loc_z=10.000000 rotation_y=-1.570000 "
            "distance=9.250000 keypoint_u=151.500000 keypoint_v=199.250000\n"
        )
        assert buf.getvalue() == expected

    def test_path_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        anns = [random_annotation(rng) for _ in range(5)]
        path = tmp_path / "anns.txt"
        write_extended_annotations(anns, path)
        assert len(read_extended_annotations(path)) == 5
