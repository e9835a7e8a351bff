import json
import math

import numpy as np
import pytest

from mtmc.geometry import Anchor
from mtmc.ingest import IngestConfig, load_detections, load_track_rows
from mtmc.metrics import evaluate, trajectories_from_rows
from mtmc.simulator import (
    CameraSpec,
    NoiseSpec,
    OcclusionEvent,
    ScenarioSpec,
    VehicleSpec,
    camera_projection,
    demo_spec,
    export_homography,
    footprint_corners,
    generate,
    ground_homography,
    identity_embeddings,
    local_to_gps_matrix,
    spec_from_dict,
    spec_from_json,
    vehicle_pose,
)

CAM_A = CameraSpec(camera_id=0, position=(30.0, 0.0, 8.0), look_at=(0.0, 0.0), focal_px=600.0)
CAM_B = CameraSpec(camera_id=1, position=(-30.0, 0.0, 8.0), look_at=(0.0, 0.0), focal_px=600.0)


def crossing_vehicle(vehicle_id=1, entry=0, lane=0.0, speed=1.0):
    return VehicleSpec(
        vehicle_id=vehicle_id,
        entry_frame=entry,
        waypoints=((-20.0, lane), (20.0, lane)),
        speed=speed,
    )


def small_scenario(**overrides):
    base = dict(
        seed=11,
        duration=40,
        cameras=(CAM_A, CAM_B),
        vehicles=(crossing_vehicle(),),
    )
    base.update(overrides)
    return ScenarioSpec(**base)


def load_scenario(paths, score_threshold=0.0):
    config = IngestConfig(score_threshold=score_threshold)
    dets = {
        cam: load_detections(p, cam, config, paths["features"][cam])
        for cam, p in paths["detections"].items()
    }
    gt = {cam: load_track_rows(p) for cam, p in paths["ground_truth"].items()}
    return dets, gt


class TestCameraGeometry:
    def test_look_at_point_hits_principal_point(self):
        proj = camera_projection(CAM_A)
        uvw = proj @ np.array([0.0, 0.0, 0.0, 1.0])
        u, v = uvw[0] / uvw[2], uvw[1] / uvw[2]
        assert u == pytest.approx(CAM_A.frame_width / 2)
        assert v == pytest.approx(CAM_A.frame_height / 2)

    def test_depth_positive_in_front(self):
        proj = camera_projection(CAM_A)
        in_front = proj @ np.array([0.0, 0.0, 0.0, 1.0])
        behind = proj @ np.array([60.0, 0.0, 0.0, 1.0])
        assert in_front[2] > 0
        assert behind[2] < 0

    def test_straight_down_rejected(self):
        cam = CameraSpec(camera_id=0, position=(5.0, 5.0, 10.0), look_at=(5.0, 5.0), focal_px=600.0)
        with pytest.raises(ValueError):
            camera_projection(cam)

    def test_underground_camera_rejected(self):
        with pytest.raises(ValueError):
            CameraSpec(camera_id=0, position=(0.0, 0.0, -1.0), look_at=(5.0, 0.0), focal_px=600.0)

    def test_ground_homography_agrees_with_projection(self):
        rng = np.random.default_rng(71)
        proj = camera_projection(CAM_A)
        hom = ground_homography(CAM_A)
        for _ in range(50):
            x, y = rng.uniform(-25, 25, size=2)
            full = proj @ np.array([x, y, 0.0, 1.0])
            flat = hom @ np.array([x, y, 1.0])
            np.testing.assert_allclose(flat / flat[2], full / full[2], rtol=1e-9)

    def test_export_homography_round_trip(self):
        anchor = Anchor(lat=45.0, lon=7.0)
        exported = export_homography(CAM_A, anchor)
        hom = ground_homography(CAM_A)
        rng = np.random.default_rng(72)
        for _ in range(50):
            east, north = rng.uniform(-25, 25, size=2)
            pix = hom @ np.array([east, north, 1.0])
            pix /= pix[2]
            gps = exported @ pix
            gps /= gps[2]
            want_lat, want_lon = anchor.from_local(east, north)
            assert gps[0] == pytest.approx(want_lat, abs=1e-9)
            assert gps[1] == pytest.approx(want_lon, abs=1e-9)

    def test_local_to_gps_matrix_matches_anchor(self):
        anchor = Anchor(lat=45.0, lon=7.0)
        m = local_to_gps_matrix(anchor)
        out = m @ np.array([100.0, 250.0, 1.0])
        want = anchor.from_local(100.0, 250.0)
        assert out[0] == pytest.approx(want[0]) and out[1] == pytest.approx(want[1])


class TestVehicleMotion:
    def test_not_entered(self):
        assert vehicle_pose(crossing_vehicle(entry=10), 9) is None

    def test_entry_frame_at_first_waypoint(self):
        center, heading = vehicle_pose(crossing_vehicle(entry=10), 10)
        np.testing.assert_allclose(center, [-20.0, 0.0])
        np.testing.assert_allclose(heading, [1.0, 0.0])

    def test_constant_speed_progress(self):
        center, _ = vehicle_pose(crossing_vehicle(speed=1.5), 4)
        np.testing.assert_allclose(center, [-14.0, 0.0])

    def test_exits_after_polyline(self):
        # 40 meters of route at 1 m per frame
        assert vehicle_pose(crossing_vehicle(), 40) is not None
        assert vehicle_pose(crossing_vehicle(), 41) is None

    def test_turns_onto_second_segment(self):
        vehicle = VehicleSpec(
            vehicle_id=1,
            entry_frame=0,
            waypoints=((0.0, 0.0), (10.0, 0.0), (10.0, 10.0)),
            speed=1.0,
        )
        center, heading = vehicle_pose(vehicle, 14)
        np.testing.assert_allclose(center, [10.0, 4.0])
        np.testing.assert_allclose(heading, [0.0, 1.0])

    def test_footprint_dimensions(self):
        vehicle = crossing_vehicle()
        corners = footprint_corners(vehicle, np.array([3.0, 7.0]), np.array([1.0, 0.0]))
        assert corners.shape == (8, 3)
        assert set(corners[:, 2]) == {0.0, vehicle.height}
        assert corners[:, 0].max() - corners[:, 0].min() == pytest.approx(vehicle.length)
        assert corners[:, 1].max() - corners[:, 1].min() == pytest.approx(vehicle.width)
        np.testing.assert_allclose(corners.mean(axis=0), [3.0, 7.0, vehicle.height / 2])


class TestSpecValidation:
    def test_needs_two_cameras(self):
        with pytest.raises(ValueError):
            small_scenario(cameras=(CAM_A,))

    def test_duplicate_vehicle_ids(self):
        with pytest.raises(ValueError):
            small_scenario(vehicles=(crossing_vehicle(1), crossing_vehicle(1)))

    def test_occlusion_event_unknown_vehicle(self):
        event = OcclusionEvent(camera_id=0, frame_start=0, frame_end=5, vehicle_id=99)
        with pytest.raises(ValueError, match="unknown vehicle"):
            small_scenario(occlusion_events=(event,))

    def test_short_polyline_rejected(self):
        with pytest.raises(ValueError):
            VehicleSpec(vehicle_id=1, entry_frame=0, waypoints=((0.0, 0.0),), speed=1.0)

    def test_miss_probability_range(self):
        with pytest.raises(ValueError):
            NoiseSpec(miss_probability=1.5)


class TestGenerate:
    def test_deterministic_output(self, tmp_path):
        spec = small_scenario(vehicles=(crossing_vehicle(1), crossing_vehicle(2, entry=5, lane=4.0)))
        noise = NoiseSpec(bbox_jitter_std=0.8, miss_probability=0.1, false_positive_rate=0.3,
                          feature_noise_std=0.1, camera_bias_std=0.05)
        paths_a = generate(spec, noise, tmp_path / "a")
        paths_b = generate(spec, noise, tmp_path / "b")
        for kind in ("detections", "features", "ground_truth"):
            for cam in paths_a[kind]:
                assert paths_a[kind][cam].read_bytes() == paths_b[kind][cam].read_bytes()
        assert paths_a["calibration"].read_bytes() == paths_b["calibration"].read_bytes()

    def test_zero_noise_detections_match_ground_truth(self, tmp_path):
        paths = generate(small_scenario(), NoiseSpec(), tmp_path)
        dets, gt = load_scenario(paths)
        for cam in dets:
            assert len(dets[cam]) == len(gt[cam])
            for det, row in zip(dets[cam], gt[cam]):
                assert det.frame == row.frame
                assert det.score == 1.0
                assert det.bbox == row.bbox

    def test_full_miss_probability_empties_detections(self, tmp_path):
        paths = generate(small_scenario(), NoiseSpec(miss_probability=1.0), tmp_path)
        dets, gt = load_scenario(paths)
        assert all(len(v) == 0 for v in dets.values())
        assert any(len(v) > 0 for v in gt.values())

    def test_occlusion_removes_exactly_event_rows(self, tmp_path):
        event = OcclusionEvent(camera_id=0, frame_start=10, frame_end=14, vehicle_id=1)
        clean = generate(small_scenario(), NoiseSpec(), tmp_path / "clean")
        occluded = generate(small_scenario(occlusion_events=(event,)), NoiseSpec(), tmp_path / "occ")
        dets_clean, gt_clean = load_scenario(clean)
        dets_occ, gt_occ = load_scenario(occluded)
        # ground truth unaffected
        for cam in gt_clean:
            assert [(r.frame, r.bbox) for r in gt_clean[cam]] == [(r.frame, r.bbox) for r in gt_occ[cam]]
        # suppressed camera loses frames 10..14, the other camera is untouched
        frames_clean = [d.frame for d in dets_clean[0]]
        frames_occ = [d.frame for d in dets_occ[0]]
        assert sorted(set(frames_clean) - set(frames_occ)) == [10, 11, 12, 13, 14]
        assert [d.frame for d in dets_occ[1]] == [d.frame for d in dets_clean[1]]

    def test_overlapping_occlusion_events_idempotent(self, tmp_path):
        events = (
            OcclusionEvent(camera_id=0, frame_start=10, frame_end=14, vehicle_id=1),
            OcclusionEvent(camera_id=0, frame_start=12, frame_end=16, vehicle_id=1),
        )
        paths = generate(small_scenario(occlusion_events=events), NoiseSpec(), tmp_path)
        dets, _ = load_scenario(paths)
        frames = [d.frame for d in dets[0]]
        assert not any(10 <= f <= 16 for f in frames)
        assert len(frames) == len(set(frames))

    def test_desync_shifts_detection_frames(self, tmp_path):
        noise = NoiseSpec(desync={1: 3})
        paths = generate(small_scenario(), noise, tmp_path)
        dets, gt = load_scenario(paths)
        assert [d.frame for d in dets[1]] == [r.frame + 3 for r in gt[1]]
        assert [d.frame for d in dets[0]] == [r.frame for r in gt[0]]

    def test_negative_desync_drops_underflow(self, tmp_path):
        noise = NoiseSpec(desync={0: -5})
        paths = generate(small_scenario(), noise, tmp_path)
        dets, gt = load_scenario(paths)
        kept = [r.frame - 5 for r in gt[0] if r.frame >= 5]
        assert [d.frame for d in dets[0]] == kept

    def test_false_positives_carry_half_score(self, tmp_path):
        noise = NoiseSpec(false_positive_rate=1.5)
        paths = generate(small_scenario(), noise, tmp_path)
        all_dets, gt = load_scenario(paths)
        scores = {d.score for dets in all_dets.values() for d in dets}
        assert scores == {1.0, 0.5}
        # thresholding recovers exactly the real detections
        real, _ = load_scenario(paths, score_threshold=0.6)
        for cam in real:
            assert len(real[cam]) == len(gt[cam])

    def test_features_identify_vehicles(self, tmp_path):
        spec = small_scenario(vehicles=(crossing_vehicle(1), crossing_vehicle(2, lane=5.0)))
        noise = NoiseSpec(feature_dim=8, feature_noise_std=0.01)
        paths = generate(spec, noise, tmp_path)
        rng = np.random.default_rng(spec.seed)
        embeddings = identity_embeddings(spec, noise, rng)
        dets, gt = load_scenario(paths)
        for cam in dets:
            assert len(dets[cam]) == len(gt[cam])
            for det, row in zip(dets[cam], gt[cam]):
                dists = {vid: np.linalg.norm(det.feature - e) for vid, e in embeddings.items()}
                assert min(dists, key=dists.get) == row.track_id

    def test_embeddings_have_configured_norm(self):
        spec = small_scenario(vehicles=tuple(crossing_vehicle(i) for i in range(1, 6)))
        noise = NoiseSpec(feature_dim=12, embedding_norm=2.5)
        embeddings = identity_embeddings(spec, noise, np.random.default_rng(3))
        assert set(embeddings) == {1, 2, 3, 4, 5}
        for e in embeddings.values():
            assert np.linalg.norm(e) == pytest.approx(2.5)
        gaps = [
            np.linalg.norm(a - b)
            for i, a in embeddings.items()
            for j, b in embeddings.items()
            if i < j
        ]
        assert min(gaps) > 0.1

    def test_ground_truth_is_self_consistent(self, tmp_path):
        paths = generate(small_scenario(), NoiseSpec(), tmp_path)
        _, gt = load_scenario(paths)
        trajs = trajectories_from_rows(gt)
        report = evaluate(trajs, trajs, tau_iou=0.5)
        assert report.idf1 == 1.0

    def test_visibility_polygon_limits_ground_truth(self, tmp_path):
        gated = CameraSpec(
            camera_id=0,
            position=(30.0, 0.0, 8.0),
            look_at=(0.0, 0.0),
            focal_px=600.0,
            visibility_polygon=((0.0, -10.0), (25.0, -10.0), (25.0, 10.0), (0.0, 10.0)),
        )
        spec = small_scenario(cameras=(gated, CAM_B))
        paths = generate(spec, NoiseSpec(), tmp_path)
        _, gt = load_scenario(paths)
        vehicle = spec.vehicles[0]
        for row in gt[0]:
            center, _ = vehicle_pose(vehicle, row.frame)
            # boundary points may land either way; everything else must be inside
            assert 0.0 <= center[0] <= 25.0
        # the ungated camera still sees frames outside the polygon
        gated_frames = {r.frame for r in gt[0]}
        open_frames = {r.frame for r in gt[1]}
        assert open_frames - gated_frames

    def test_calibration_file_loads(self, tmp_path):
        from mtmc.geometry import load_calibration

        paths = generate(small_scenario(), NoiseSpec(), tmp_path)
        calib = load_calibration(paths["calibration"])
        assert calib.camera_ids() == [0, 1]
        assert calib.anchor.lat == 45.0 and calib.anchor.lon == 7.0

    def test_gt_positions_round_trip_through_calibration(self, tmp_path):
        from mtmc.geometry import load_calibration

        paths = generate(small_scenario(), NoiseSpec(), tmp_path)
        calib = load_calibration(paths["calibration"])
        _, gt = load_scenario(paths)
        vehicle = small_scenario().vehicles[0]
        anchor = calib.anchor
        for row in gt[0][:10]:
            center, _ = vehicle_pose(vehicle, row.frame)
            east, north = anchor.to_local(row.lat, row.lon)
            assert east == pytest.approx(center[0], abs=1e-6)
            assert north == pytest.approx(center[1], abs=1e-6)


class TestSpecParsing:
    def test_demo_spec_parses_and_validates(self):
        scenario, noise = spec_from_dict(demo_spec())
        assert len(scenario.cameras) == 4
        assert len(scenario.vehicles) == 6
        assert noise.feature_dim == 16

    def test_json_file_round_trip(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(demo_spec()))
        from_file = spec_from_json(path)
        from_dict = spec_from_dict(demo_spec())
        assert from_file == from_dict

    def test_occlusion_and_desync_fields(self):
        data = demo_spec()
        data["occlusion_events"] = [
            {"camera": 0, "frame_start": 5, "frame_end": 9, "vehicle": 1}
        ]
        data["noise"]["desync"] = {"2": -1}
        scenario, noise = spec_from_dict(data)
        assert scenario.occlusion_events[0].frame_end == 9
        assert noise.desync == {2: -1}
