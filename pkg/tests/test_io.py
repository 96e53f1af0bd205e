import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import inside_box
from prop3d.energy import ClassModel, build_scene_grids, potentials_array
from prop3d.geometry import CameraCalib, OrientedBox3D, PointCloud
from prop3d.ground import GroundPlane, ransac_plane
from prop3d.io.depth import (HHA_RANGES, DepthError, depth_to_cloud, encode_hha, hha_channels, read_cloud_csv,
                             read_pnm, write_cloud_csv, write_pnm)
from prop3d.io.kitti import (KittiFormatError, box_to_label, labels_to_boxes, parse_label_line,
                             read_calib, read_labels, read_velodyne, write_calib, write_labels, write_velodyne)
from prop3d.io.synthetic import (OWNER_GROUND, SyntheticError, SyntheticSceneSpec, generate_synthetic_scene,
                                 ray_hits_box, visible_face_points)
from prop3d.voxels import GridSpec

# KITTI object training frame 000000, verbatim
LABEL_000000 = "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01\n"
CALIB_000000 = """P0: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 0.000000000000e+00 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P1: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.875744000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00
P2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03
P3: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 -3.395242000000e+02 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.199936000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.729905000000e-03
R0_rect: 9.999239000000e-01 9.837760000000e-03 -7.445048000000e-03 -9.869795000000e-03 9.999421000000e-01 -4.278459000000e-03 7.402527000000e-03 4.351614000000e-03 9.999631000000e-01
Tr_velo_to_cam: 7.533745000000e-03 -9.999714000000e-01 -6.166020000000e-04 -4.069766000000e-03 1.480249000000e-02 7.280733000000e-04 -9.998902000000e-01 -7.631618000000e-02 9.998621000000e-01 7.523790000000e-03 1.480755000000e-02 -2.717806000000e-01
Tr_imu_to_velo: 9.999976000000e-01 7.553071000000e-04 -2.035826000000e-03 -8.086759000000e-01 -7.854027000000e-04 9.998898000000e-01 -1.482298000000e-02 3.195559000000e-01 2.024406000000e-03 1.482454000000e-02 9.998881000000e-01 -7.997231000000e-01
"""


def small_calib(w=8, h=6, f=100.0):
    # integer principal point so one pixel sits exactly on the optical axis
    return CameraCalib(np.array([[f, 0, 4, 0], [0, f, 3, 0], [0, 0, 1, 0.0]]), w, h)


class TestVelodyne:
    def test_empty(self, tmp_path):
        (tmp_path / "e.bin").write_bytes(b"")
        assert len(read_velodyne(tmp_path / "e.bin")) == 0

    def test_two_points(self, tmp_path):
        (tmp_path / "p.bin").write_bytes(struct.pack("<8f", 1.5, -2.0, 0.25, 0.9, 10.0, 0.0, -1.75, 0.1))
        pts = read_velodyne(tmp_path / "p.bin").points
        np.testing.assert_array_equal(pts, [[1.5, -2.0, 0.25], [10.0, 0.0, -1.75]])

    def test_round_trip_bitwise(self, tmp_path, rng):
        xyz = rng.normal(0, 20, (1000, 3)).astype(np.float32)
        write_velodyne(tmp_path / "r.bin", xyz, rng.random(1000))
        back = read_velodyne(tmp_path / "r.bin").points
        assert back.astype(np.float32).tobytes() == xyz.tobytes()

    def test_truncated(self, tmp_path):
        (tmp_path / "t.bin").write_bytes(struct.pack("<5f", 1, 2, 3, 4, 5))
        with pytest.raises(KittiFormatError, match="byte offset 16"):
            read_velodyne(tmp_path / "t.bin")

    def test_to_camera_frame(self, tmp_path):
        (tmp_path / "calib.txt").write_text(CALIB_000000)
        cal = read_calib(tmp_path / "calib.txt")
        write_velodyne(tmp_path / "v.bin", [[10.0, 1.0, -1.0]])
        cam = read_velodyne(tmp_path / "v.bin", cal).points[0]
        # forward velodyne x maps to camera z
        assert cam[2] == pytest.approx(10.0 - 0.27, abs=0.05)
        np.testing.assert_allclose(cam, cal.velo_to_cam(np.array([[10.0, 1.0, -1.0]]))[0])


class TestLabels:
    def test_fixture_fields(self, tmp_path):
        lab = parse_label_line(LABEL_000000)
        assert lab.type == "Pedestrian"
        assert (lab.truncation, lab.occlusion, lab.alpha) == (0.0, 0, -0.2)
        assert lab.bbox == (712.40, 143.00, 810.73, 307.92)
        assert lab.dimensions == (1.89, 0.48, 1.20)
        assert lab.location == (1.84, 1.47, 8.41)
        assert lab.rotation_y == 0.01 and lab.score is None
        b = lab.to_box()
        assert b.center == pytest.approx((1.84, 1.47 - 0.945, 8.41))
        assert b.size == pytest.approx((1.20, 1.89, 0.48))
        assert b.azimuth == pytest.approx(0.01)

    def test_center_lift(self):
        lab = parse_label_line("Car 0 0 0 0 0 10 10 1.5 1.6 3.9 0 1.65 10 0")
        assert lab.to_box().center[1] == pytest.approx(0.9)

    def test_dont_care_excluded(self, tmp_path):
        p = tmp_path / "l.txt"
        p.write_text(LABEL_000000 + "DontCare -1 -1 -10 503.89 169.71 590.61 190.13 -1 -1 -1 -1000 -1000 -1000 -10\n")
        labels = read_labels(p)
        assert len(labels) == 2 and labels[1].is_dont_care
        assert len(labels_to_boxes(labels)) == 1

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text(LABEL_000000 + "Car 0 0 0 1 2 3\n")
        with pytest.raises(KittiFormatError, match=r"bad\.txt:2"):
            read_labels(p)
        p.write_text("Car 0 0 x 0 0 10 10 1.5 1.6 3.9 0 1.65 10 0\n")
        with pytest.raises(KittiFormatError, match=":1"):
            read_labels(p)
        p.write_text("Car 0 0 0 0 0 10 10 0 1.6 3.9 0 1.65 10 0\n")
        with pytest.raises(KittiFormatError):
            read_labels(p)

    @given(st.floats(-20, 20), st.floats(0, 2), st.floats(3, 60), st.floats(0.3, 5), st.floats(0.3, 3),
           st.floats(0.3, 5), st.sampled_from([0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]))
    def test_box_label_round_trip(self, x, y, z, sx, sy, sz, az):
        b = OrientedBox3D((x, y, z), (sx, sy, sz), az)
        back = box_to_label(b, "Car").to_box()
        np.testing.assert_allclose(back.as_array()[:6], b.as_array()[:6], atol=1e-12)
        assert math.cos(back.azimuth - b.azimuth) == pytest.approx(1.0)

    def test_write_read(self, tmp_path):
        labs = [parse_label_line(LABEL_000000), parse_label_line("Car 0.5 1 0 1 2 3 4 1.5 1.6 3.9 0 1.65 10 0 0.75")]
        write_labels(labs, tmp_path / "w.txt")
        assert read_labels(tmp_path / "w.txt") == labs


class TestCalib:
    def test_fields(self, tmp_path):
        (tmp_path / "c.txt").write_text(CALIB_000000)
        c = read_calib(tmp_path / "c.txt")
        assert c.camera.P[0, 3] == pytest.approx(44.85728)
        assert c.camera.focal == pytest.approx(721.5377)
        assert c.R0_rect[0, 1] == pytest.approx(9.837760e-03)
        assert c.Tr_velo_to_cam[2, 3] == pytest.approx(-2.717806e-01)
        assert (c.camera.width, c.camera.height) == (1242, 375)

    def test_missing_and_malformed(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("R0_rect: 1 0 0 0 1 0 0 0 1\n")
        with pytest.raises(KittiFormatError, match="P2"):
            read_calib(p)
        p.write_text("P2: 1 2 3\n")
        with pytest.raises(KittiFormatError):
            read_calib(p)
        p.write_text("P2 1 2 3\n")
        with pytest.raises(KittiFormatError, match=":1"):
            read_calib(p)

    def test_write_read(self, tmp_path):
        (tmp_path / "c.txt").write_text(CALIB_000000)
        c = read_calib(tmp_path / "c.txt")
        write_calib(c, tmp_path / "d.txt")
        d = read_calib(tmp_path / "d.txt")
        np.testing.assert_array_equal(d.camera.P, c.camera.P)
        np.testing.assert_array_equal(d.Tr_velo_to_cam, c.Tr_velo_to_cam)

    def test_velo_cam_identity(self, tmp_path, rng):
        (tmp_path / "c.txt").write_text(CALIB_000000)
        c = read_calib(tmp_path / "c.txt")
        pts = rng.uniform(-80, 80, (5000, 3))
        assert np.abs(c.cam_to_velo(c.velo_to_cam(pts)) - pts).max() < 1e-9


class TestDepth:
    def test_principal_point_pixel(self):
        cal = small_calib()
        d = np.zeros((6, 8))
        d[3, 4] = 10.0
        np.testing.assert_array_equal(depth_to_cloud(d, cal).points, [[0.0, 0.0, 10.0]])

    def test_constant_depth(self):
        cloud = depth_to_cloud(np.full((6, 8), 7.5), small_calib())
        assert len(cloud) == 48 and np.all(cloud.points[:, 2] == 7.5)

    def test_disparity_mode(self):
        cal = small_calib()
        disp = np.zeros((6, 8))
        disp[3, 4] = 5.4
        disp[0, 0] = -1.0
        pts = depth_to_cloud(disp, cal, mode="disparity", baseline=0.5).points
        np.testing.assert_allclose(pts, [[0, 0, 100 * 0.5 / 5.4]])

    def test_random_against_per_pixel(self, rng):
        cal = small_calib()
        d = rng.uniform(1, 40, (6, 8))
        d[rng.random((6, 8)) < 0.3] = 0
        got = depth_to_cloud(d, cal).points
        want = [((u - 4) * d[v, u] / 100, (v - 3) * d[v, u] / 100, d[v, u])
                for v in range(6) for u in range(8) if d[v, u] > 0]
        np.testing.assert_allclose(got, want, rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(DepthError):
            depth_to_cloud(np.ones((5, 8)), small_calib())


def plane_depth(calib, plane, w, h):
    """Per-pixel ray/plane intersection depth (0 where the ray misses in front)."""
    n, d = np.asarray(plane.normal), plane.offset
    out = np.zeros((h, w))
    for v in range(h):
        for u in range(w):
            ray = np.array([(u - calib.P[0, 2]) / calib.P[0, 0], (v - calib.P[1, 2]) / calib.P[1, 1], 1.0])
            denom = n @ ray
            if denom != 0 and -d / denom > 0:
                out[v, u] = -d / denom
    return out


class TestHha:
    def setup_method(self):
        self.cal = CameraCalib(np.array([[50.0, 0, 20, 0], [0, 50.0, 5, 0], [0, 0, 1, 0]]), 40, 30)
        self.road = GroundPlane.horizontal(1.65)

    def test_ground_pixels(self):
        d = plane_depth(self.cal, self.road, 40, 30)
        raw = hha_channels(d, self.cal, self.road)
        below = d > 0
        # the normal needs valid neighbours on both axes
        inner = below.copy()
        inner[1:-1, 1:-1] &= below[:-2, 1:-1] & below[2:, 1:-1] & below[1:-1, :-2] & below[1:-1, 2:]
        inner[[0, -1], :] = False
        inner[:, [0, -1]] = False
        assert inner.sum() > 100
        np.testing.assert_allclose(raw[..., 1][below], 0.0, atol=1e-12)
        np.testing.assert_allclose(raw[..., 2][inner], 0.0, atol=1e-6)
        np.testing.assert_allclose(raw[..., 0][below], self.cal.focal * 0.54 / d[below])

    def test_wall_facing_camera(self):
        raw = hha_channels(np.full((30, 40), 12.0), self.cal, self.road)
        np.testing.assert_allclose(raw[..., 2], 0.5 * math.pi, atol=1e-9)
        ys = (np.arange(30) - 5) * 12.0 / 50
        np.testing.assert_allclose(raw[:, 0, 1], 1.65 - ys)

    def test_ramp(self):
        tilt = math.radians(12)
        ramp = GroundPlane((0, -math.cos(tilt), -math.sin(tilt)), 1.65)
        d = plane_depth(self.cal, ramp, 40, 30)
        raw = hha_channels(d, self.cal, self.road)
        ok = d > 0
        pts = np.stack([(np.arange(40)[None] - 20) * d / 50, (np.arange(30)[:, None] - 5) * d / 50, d], -1)
        np.testing.assert_allclose(raw[..., 1][ok], (1.65 - pts[..., 1])[ok], atol=1e-9)
        inner = ok.copy()
        inner[1:-1, 1:-1] &= ok[:-2, 1:-1] & ok[2:, 1:-1] & ok[1:-1, :-2] & ok[1:-1, 2:]
        inner[[0, -1], :] = False
        inner[:, [0, -1]] = False
        np.testing.assert_allclose(raw[..., 2][inner], tilt, atol=1e-6)

    def test_encoded_ranges_and_invalid(self):
        d = np.full((30, 40), 12.0)
        d[0, 0] = 0
        img = encode_hha(d, self.cal, self.road)
        assert img.dtype == np.uint8 and img.shape == (30, 40, 3)
        assert np.all(img[0, 0] == 0)
        lo, hi = HHA_RANGES["angle"]
        assert img[15, 20, 2] == round((0.5 * math.pi - lo) / (hi - lo) * 255)
        disp = 50 * 0.54 / 12.0
        assert img[15, 20, 0] == round(disp / 64.0 * 255)

    def test_height_consistent_on_noisy_ground(self, rng):
        d = plane_depth(self.cal, self.road, 40, 30)
        ok = d > 0
        noisy = np.where(ok, d * (1 + rng.normal(0, 0.001, d.shape)), 0)
        raw = hha_channels(noisy, self.cal, self.road)
        assert np.nanmean(np.abs(raw[..., 1][ok])) < 0.02


class TestNetpbm:
    @pytest.mark.parametrize("dtype,shape", [(np.uint8, (5, 7)), (np.uint16, (4, 3)), (np.uint8, (3, 4, 3))])
    def test_round_trip(self, tmp_path, rng, dtype, shape):
        img = rng.integers(0, np.iinfo(dtype).max, shape).astype(dtype)
        write_pnm(tmp_path / "i.pnm", img)
        np.testing.assert_array_equal(read_pnm(tmp_path / "i.pnm"), img)

    def test_plain_with_comment(self, tmp_path):
        (tmp_path / "p.pgm").write_bytes(b"P2\n# c\n3 2\n255\n0 1 2\n3 4 255\n")
        np.testing.assert_array_equal(read_pnm(tmp_path / "p.pgm"), [[0, 1, 2], [3, 4, 255]])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.pnm").write_bytes(b"P9\n1 1\n255\n\0")
        with pytest.raises(DepthError):
            read_pnm(tmp_path / "x.pnm")


class TestCloudCsv:
    def test_round_trip(self, tmp_path, rng):
        c = PointCloud(np.round(rng.uniform(-50, 50, (100, 3)), 6))
        write_cloud_csv(c, tmp_path / "c.csv")
        np.testing.assert_allclose(read_cloud_csv(tmp_path / "c.csv").points, c.points, atol=1e-9)

    def test_empty_and_bad(self, tmp_path):
        write_cloud_csv(PointCloud.empty(), tmp_path / "e.csv")
        assert len(read_cloud_csv(tmp_path / "e.csv")) == 0
        (tmp_path / "b.csv").write_text("x,y\n1,2\n")
        with pytest.raises(DepthError):
            read_cloud_csv(tmp_path / "b.csv")


class TestSynthetic:
    def test_zero_objects_plane_recovered(self):
        spec = SyntheticSceneSpec(seed=4, n_objects=(0, 0), pitch_deg=1.5, camera_height=1.7)
        sc = generate_synthetic_scene(spec)
        assert sc.boxes == [] and np.all(sc.owner == OWNER_GROUND)
        est = ransac_plane(sc.cloud, iterations=200, inlier_threshold=0.05, seed=0)
        assert est.angle_to(sc.plane) < 0.2
        assert abs(est.y_at(0, 10) - sc.plane.y_at(0, 10)) < 0.01

    @pytest.mark.parametrize("seed", [0, 1, 2, 54])
    def test_pcd_peak_localizes_object(self, seed):
        # only camera-facing faces carry points and they sit on the GT boundary, so the
        # occupancy peak over same-size boxes is compared near vs. far from the GT
        sc = generate_synthetic_scene(SyntheticSceneSpec(seed=seed, n_objects=(1, 1), distance=(5.0, 50.0)))
        model = ClassModel("car", (-1, -1, -1, 0), [(3.9, 1.56, 1.6)], 0.78, 0.05)
        grids = build_scene_grids(sc.cloud, GridSpec.kitti_default(), sc.plane, [model])
        g = np.arange(-3, 3.01, 0.1)
        offsets = np.array([(dx, dz) for dx in g for dz in g])
        near = np.hypot(offsets[:, 0], offsets[:, 1]) < 1.0
        boxes = np.repeat(sc.boxes[0].as_array()[None], len(offsets), axis=0)
        boxes[:, [0, 2]] += offsets
        pcd = potentials_array(grids, boxes, model)[:, 0]
        assert pcd[near].max() >= pcd[~near].max() > 0

    def test_deterministic(self):
        spec = SyntheticSceneSpec.kitti_scale(7)
        a, b = generate_synthetic_scene(spec), generate_synthetic_scene(spec)
        assert a.cloud.points.tobytes() == b.cloud.points.tobytes()
        assert [x.as_array().tolist() for x in a.boxes] == [x.as_array().tolist() for x in b.boxes]

    @pytest.mark.parametrize("seed", range(4))
    def test_object_points_inside_inflated_box(self, seed):
        noise = 0.05
        sc = generate_synthetic_scene(SyntheticSceneSpec(seed=seed, n_objects=(2, 4), noise=noise))
        for i, b in enumerate(sc.boxes):
            pts = sc.cloud.points[sc.owner == i]
            assert len(pts) > 0
            row = b.as_array()
            row[3:6] += 2 * 3 * noise + 1e-9
            assert np.all(inside_box(pts, row))

    def test_only_visible_faces(self, rng):
        b = OrientedBox3D((0, 0.9, 15), (3.9, 1.56, 1.6))
        pts = visible_face_points(b, 200, rng)
        # straight ahead and below the camera: only the front (z-) and top (y-) faces face it
        assert np.all((np.isclose(pts[:, 2], 14.2)) | (np.isclose(pts[:, 1], 0.12)))
        assert not np.any(ray_hits_box(pts, b, t_max=1.0 - 1e-6) & ~np.isclose(pts[:, 2], 14.2)
                          & ~np.isclose(pts[:, 1], 0.12))

    def test_occlusion_removes_hidden_points(self):
        sc = generate_synthetic_scene(SyntheticSceneSpec(seed=1, n_objects=(3, 5)))
        for i, b in enumerate(sc.boxes):
            others = sc.cloud.points[sc.owner != i]
            # noise can push a visible point a hair inside; no point sits deep behind an object
            deep = ray_hits_box(others, OrientedBox3D(b.center, tuple(s - 0.3 for s in b.size), b.azimuth))
            assert not deep.any()
        assert all(f <= 0.5 for f in sc.occluded_fraction)

    def test_bad_spec(self):
        with pytest.raises(SyntheticError):
            SyntheticSceneSpec(noise=-1)
        with pytest.raises(SyntheticError):
            SyntheticSceneSpec(n_objects=(3, 1))
        with pytest.raises(SyntheticError):
            SyntheticSceneSpec(yaw_mode="free")

    def test_crowding_error(self):
        spec = SyntheticSceneSpec(seed=0, n_objects=(40, 40), distance=(5.0, 7.0))
        with pytest.raises(SyntheticError):
            generate_synthetic_scene(spec)
