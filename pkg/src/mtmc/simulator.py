"""Deterministic synthetic scenario generator: a desk-scale stand-in for a
real multi-camera deployment.

Cameras are simple pinholes placed in a local metric ground frame. The
ground-plane restriction of each projection gives an exact meters-to-pixels
homography, which is inverted and composed with the flat-earth GPS map on
export, so the generated calibration matches the pixels-to-GPS convention
the engine ingests. Vehicle boxes are projected 3D footprints rather than
points, which gives occlusion experiments meaningful IoU targets.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Anchor, METERS_PER_DEGREE
from .ingest import BBox, Detection, TrackRow, save_detections, save_track_rows

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera in the local ground frame (meters, z up)."""

    camera_id: int
    position: tuple[float, float, float]
    look_at: tuple[float, float]
    focal_px: float
    frame_width: int = 1280
    frame_height: int = 960
    visibility_polygon: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ValueError("camera must sit above the ground plane")
        if self.focal_px <= 0:
            raise ValueError("focal length must be positive")


@dataclass(frozen=True)
class VehicleSpec:
    vehicle_id: int
    entry_frame: int
    waypoints: tuple[tuple[float, float], ...]
    speed: float
    length: float = 4.5
    width: float = 2.0
    height: float = 1.5

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("waypoint polyline needs at least 2 points")
        if self.speed <= 0:
            raise ValueError("speed must be positive")


@dataclass(frozen=True)
class OcclusionEvent:
    """Suppresses one vehicle's detections in one camera over a frame span
    (inclusive). Ground truth is unaffected."""

    camera_id: int
    frame_start: int
    frame_end: int
    vehicle_id: int


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    duration: int
    cameras: tuple[CameraSpec, ...]
    vehicles: tuple[VehicleSpec, ...]
    fps: float = 10.0
    anchor_lat: float = 45.0
    anchor_lon: float = 7.0
    occlusion_events: tuple[OcclusionEvent, ...] = ()

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("a scenario needs at least 2 cameras")
        cam_ids = [c.camera_id for c in self.cameras]
        if len(set(cam_ids)) != len(cam_ids):
            raise ValueError("duplicate camera ids")
        veh_ids = [v.vehicle_id for v in self.vehicles]
        if len(set(veh_ids)) != len(veh_ids):
            raise ValueError("duplicate vehicle ids")
        if self.duration < 1:
            raise ValueError("duration must be at least 1 frame")
        for event in self.occlusion_events:
            if event.vehicle_id not in veh_ids:
                raise ValueError(f"occlusion event names unknown vehicle {event.vehicle_id}")
            if event.camera_id not in cam_ids:
                raise ValueError(f"occlusion event names unknown camera {event.camera_id}")


@dataclass(frozen=True)
class NoiseSpec:
    bbox_jitter_std: float = 0.0
    miss_probability: float = 0.0
    false_positive_rate: float = 0.0
    feature_dim: int = 16
    embedding_norm: float = 1.0
    feature_noise_std: float = 0.0
    camera_bias_std: float = 0.0
    desync: dict = field(default_factory=dict)  # camera_id -> frame offset

    def __post_init__(self):
        if not 0.0 <= self.miss_probability <= 1.0:
            raise ValueError("miss_probability must be in [0, 1]")
        if self.false_positive_rate < 0:
            raise ValueError("false_positive_rate must be non-negative")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be at least 2")
        if min(self.bbox_jitter_std, self.feature_noise_std, self.camera_bias_std) < 0:
            raise ValueError("noise stds must be non-negative")
        if self.embedding_norm <= 0:
            raise ValueError("embedding_norm must be positive")


def camera_projection(cam: CameraSpec) -> np.ndarray:
    """3x4 pinhole projection P = K [R | -R C], v axis pointing down."""
    c = np.array(cam.position, dtype=float)
    target = np.array([cam.look_at[0], cam.look_at[1], 0.0])
    forward = target - c
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("camera position coincides with its target")
    forward /= norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-9:
        raise ValueError("camera looking straight down is degenerate")
    right /= right_norm
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    k = np.array([
        [cam.focal_px, 0.0, cam.frame_width / 2.0],
        [0.0, cam.focal_px, cam.frame_height / 2.0],
        [0.0, 0.0, 1.0],
    ])
    return k @ np.hstack([r, -(r @ c)[:, None]])


def ground_homography(cam: CameraSpec) -> np.ndarray:
    """Meters-to-pixels homography: the projection restricted to z = 0."""
    p = camera_projection(cam)
    h = p[:, [0, 1, 3]]
    if abs(np.linalg.det(h / np.max(np.abs(h)))) < 1e-12:
        raise ValueError(f"camera {cam.camera_id}: ground plane projects degenerately")
    return h


def local_to_gps_matrix(anchor: Anchor) -> np.ndarray:
    """Homogeneous affine map (east, north, 1) -> (lat, lon, 1)."""
    cos0 = math.cos(math.radians(anchor.lat))
    return np.array([
        [0.0, 1.0 / METERS_PER_DEGREE, anchor.lat],
        [1.0 / (METERS_PER_DEGREE * cos0), 0.0, anchor.lon],
        [0.0, 0.0, 1.0],
    ])


def export_homography(cam: CameraSpec, anchor: Anchor) -> np.ndarray:
    """Pixels-to-GPS homography for the calibration file."""
    return local_to_gps_matrix(anchor) @ np.linalg.inv(ground_homography(cam))


def vehicle_pose(vehicle: VehicleSpec, frame: int):
    """(center_xy, heading unit vector) at the given frame, or None when the
    vehicle has not entered or has exited its polyline."""
    s = (frame - vehicle.entry_frame) * vehicle.speed
    if s < 0:
        return None
    pts = [np.array(p, dtype=float) for p in vehicle.waypoints]
    for a, b in zip(pts, pts[1:]):
        seg = b - a
        seg_len = float(np.linalg.norm(seg))
        if seg_len == 0:
            continue
        if s <= seg_len:
            heading = seg / seg_len
            return a + heading * s, heading
        s -= seg_len
    return None


def footprint_corners(vehicle: VehicleSpec, center: np.ndarray, heading: np.ndarray) -> np.ndarray:
    """8x3 world corners of the vehicle's 3D box."""
    perp = np.array([-heading[1], heading[0]])
    half_l = heading * vehicle.length / 2.0
    half_w = perp * vehicle.width / 2.0
    corners = []
    for sl in (-1.0, 1.0):
        for sw in (-1.0, 1.0):
            xy = center + sl * half_l + sw * half_w
            corners.append([xy[0], xy[1], 0.0])
            corners.append([xy[0], xy[1], vehicle.height])
    return np.array(corners)


def _point_in_polygon(x: float, y: float, polygon) -> bool:
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + t * (x2 - x1):
                inside = not inside
    return inside


def project_vehicle(cam: CameraSpec, proj: np.ndarray, vehicle: VehicleSpec, center, heading):
    """Ground-truth pixel bbox of the vehicle in this camera, or None when
    not visible (behind the camera, base center out of frame, or outside the
    visibility polygon)."""
    if cam.visibility_polygon is not None and not _point_in_polygon(
        center[0], center[1], cam.visibility_polygon
    ):
        return None
    corners = footprint_corners(vehicle, center, heading)
    homog = proj @ np.hstack([corners, np.ones((8, 1))]).T
    if np.any(homog[2] <= 1e-6):
        return None
    us = homog[0] / homog[2]
    vs = homog[1] / homog[2]
    x, y = float(us.min()), float(vs.min())
    w, h = float(us.max() - x), float(vs.max() - y)
    if w <= 0 or h <= 0:
        return None
    base = proj @ np.array([center[0], center[1], 0.0, 1.0])
    if base[2] <= 1e-6:
        return None
    bu, bv = base[0] / base[2], base[1] / base[2]
    if not (0 <= bu < cam.frame_width and 0 <= bv < cam.frame_height):
        return None
    return BBox(x=x, y=y, w=w, h=h)


def identity_embeddings(spec: ScenarioSpec, noise: NoiseSpec, rng: np.random.Generator) -> dict:
    """Fixed unit embedding per vehicle identity, scaled to the configured
    norm. Drawn in sorted id order so the stream is reproducible."""
    out = {}
    for vehicle in sorted(spec.vehicles, key=lambda v: v.vehicle_id):
        e = rng.normal(size=noise.feature_dim)
        out[vehicle.vehicle_id] = e / np.linalg.norm(e) * noise.embedding_norm
    return out


def _occluded(spec: ScenarioSpec, camera_id: int, frame: int, vehicle_id: int) -> bool:
    return any(
        ev.camera_id == camera_id
        and ev.vehicle_id == vehicle_id
        and ev.frame_start <= frame <= ev.frame_end
        for ev in spec.occlusion_events
    )


def generate(spec: ScenarioSpec, noise: NoiseSpec, out_dir) -> dict:
    """Write detection, feature, ground-truth, and calibration files.

    Deterministic for a fixed (spec, noise): the RNG stream is consumed in a
    fixed order (embeddings, camera biases, then camera-major frame-major
    rows). Returns the paths keyed by kind and camera id.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    anchor = Anchor(lat=spec.anchor_lat, lon=spec.anchor_lon)
    embeddings = identity_embeddings(spec, noise, rng)
    cameras = sorted(spec.cameras, key=lambda c: c.camera_id)
    biases = {
        cam.camera_id: rng.normal(size=noise.feature_dim) * noise.camera_bias_std
        for cam in cameras
    }
    projections = {cam.camera_id: camera_projection(cam) for cam in cameras}

    calibration = {
        "cameras": [
            {
                "id": cam.camera_id,
                "homography": [float(v) for v in export_homography(cam, anchor).reshape(-1)],
                "frame_width": cam.frame_width,
                "frame_height": cam.frame_height,
            }
            for cam in cameras
        ],
        "anchor": {"phi": spec.anchor_lat, "lambda": spec.anchor_lon},
    }
    calib_path = out_dir / "calibration.json"
    calib_path.write_text(json.dumps(calibration, indent=2))

    paths = {
        "calibration": calib_path,
        "detections": {},
        "features": {},
        "ground_truth": {},
    }
    vehicles = sorted(spec.vehicles, key=lambda v: v.vehicle_id)
    seen_anywhere = set()
    for cam in cameras:
        proj = projections[cam.camera_id]
        offset = int(noise.desync.get(cam.camera_id, 0))
        gt_rows: list[TrackRow] = []
        detections: list[Detection] = []
        for frame in range(spec.duration):
            for vehicle in vehicles:
                pose = vehicle_pose(vehicle, frame)
                if pose is None:
                    continue
                center, heading = pose
                bbox = project_vehicle(cam, proj, vehicle, center, heading)
                if bbox is None:
                    continue
                seen_anywhere.add(vehicle.vehicle_id)
                lat, lon = anchor.from_local(center[0], center[1])
                gt_rows.append(
                    TrackRow(
                        frame=frame,
                        track_id=vehicle.vehicle_id,
                        bbox=bbox,
                        lat=lat,
                        lon=lon,
                        synthetic=False,
                    )
                )
                if _occluded(spec, cam.camera_id, frame, vehicle.vehicle_id):
                    continue
                if rng.random() < noise.miss_probability:
                    continue
                jitter = rng.normal(size=4) * noise.bbox_jitter_std
                feat = (
                    embeddings[vehicle.vehicle_id]
                    + rng.normal(size=noise.feature_dim) * noise.feature_noise_std
                    + biases[cam.camera_id]
                )
                det_frame = frame + offset
                if det_frame < 0:
                    continue
                detections.append(
                    Detection(
                        camera_id=cam.camera_id,
                        frame=det_frame,
                        bbox=BBox(
                            x=bbox.x + jitter[0],
                            y=bbox.y + jitter[1],
                            w=max(bbox.w + jitter[2], 1.0),
                            h=max(bbox.h + jitter[3], 1.0),
                        ),
                        score=1.0,
                        feature=feat,
                    )
                )
            for _ in range(rng.poisson(noise.false_positive_rate)):
                w = rng.uniform(20.0, 120.0)
                h = rng.uniform(20.0, 120.0)
                x = rng.uniform(0.0, cam.frame_width - w)
                y = rng.uniform(0.0, cam.frame_height - h)
                feat = rng.normal(size=noise.feature_dim)
                feat = feat / np.linalg.norm(feat) * noise.embedding_norm
                det_frame = frame + offset
                if det_frame < 0:
                    continue
                detections.append(
                    Detection(
                        camera_id=cam.camera_id,
                        frame=det_frame,
                        bbox=BBox(x=x, y=y, w=w, h=h),
                        score=0.5,
                        feature=feat,
                    )
                )
        detections.sort(key=lambda d: d.frame)
        det_path = out_dir / f"det_cam{cam.camera_id}.csv"
        feat_path = out_dir / f"feat_cam{cam.camera_id}.csv"
        gt_path = out_dir / f"gt_cam{cam.camera_id}.csv"
        save_detections(det_path, feat_path, detections)
        save_track_rows(gt_path, gt_rows)
        paths["detections"][cam.camera_id] = det_path
        paths["features"][cam.camera_id] = feat_path
        paths["ground_truth"][cam.camera_id] = gt_path

    for vehicle in vehicles:
        if vehicle.vehicle_id not in seen_anywhere:
            log.warning("vehicle %d is outside every camera view", vehicle.vehicle_id)
    return paths


def spec_from_json(path) -> tuple[ScenarioSpec, NoiseSpec]:
    """Read a scenario spec file (see README for the schema)."""
    with open(path) as fh:
        data = json.load(fh)
    return spec_from_dict(data)


def spec_from_dict(data: dict) -> tuple[ScenarioSpec, NoiseSpec]:
    cameras = tuple(
        CameraSpec(
            camera_id=int(c["id"]),
            position=tuple(float(v) for v in c["position"]),
            look_at=tuple(float(v) for v in c["look_at"]),
            focal_px=float(c["focal_px"]),
            frame_width=int(c.get("frame_width", 1280)),
            frame_height=int(c.get("frame_height", 960)),
            visibility_polygon=(
                tuple((float(x), float(y)) for x, y in c["visibility_polygon"])
                if c.get("visibility_polygon")
                else None
            ),
        )
        for c in data["cameras"]
    )
    vehicles = tuple(
        VehicleSpec(
            vehicle_id=int(v["id"]),
            entry_frame=int(v["entry_frame"]),
            waypoints=tuple((float(x), float(y)) for x, y in v["waypoints"]),
            speed=float(v["speed"]),
            length=float(v.get("length", 4.5)),
            width=float(v.get("width", 2.0)),
            height=float(v.get("height", 1.5)),
        )
        for v in data["vehicles"]
    )
    events = tuple(
        OcclusionEvent(
            camera_id=int(e["camera"]),
            frame_start=int(e["frame_start"]),
            frame_end=int(e["frame_end"]),
            vehicle_id=int(e["vehicle"]),
        )
        for e in data.get("occlusion_events", [])
    )
    anchor = data.get("anchor", {})
    scenario = ScenarioSpec(
        seed=int(data["seed"]),
        duration=int(data["duration"]),
        fps=float(data.get("fps", 10.0)),
        cameras=cameras,
        vehicles=vehicles,
        anchor_lat=float(anchor.get("phi", 45.0)),
        anchor_lon=float(anchor.get("lambda", 7.0)),
        occlusion_events=events,
    )
    n = data.get("noise", {})
    noise = NoiseSpec(
        bbox_jitter_std=float(n.get("bbox_jitter_std", 0.0)),
        miss_probability=float(n.get("miss_probability", 0.0)),
        false_positive_rate=float(n.get("false_positive_rate", 0.0)),
        feature_dim=int(n.get("feature_dim", 16)),
        embedding_norm=float(n.get("embedding_norm", 1.0)),
        feature_noise_std=float(n.get("feature_noise_std", 0.0)),
        camera_bias_std=float(n.get("camera_bias_std", 0.0)),
        desync={int(k): int(v) for k, v in n.get("desync", {}).items()},
    )
    return scenario, noise


def demo_spec() -> dict:
    """A small ready-to-run intersection scenario, as spec-file JSON."""
    return {
        "seed": 7,
        "duration": 300,
        "fps": 10.0,
        "anchor": {"phi": 45.0, "lambda": 7.0},
        "cameras": [
            {"id": 0, "position": [45.0, 0.0, 10.0], "look_at": [0.0, 0.0], "focal_px": 900.0},
            {"id": 1, "position": [-45.0, 0.0, 10.0], "look_at": [0.0, 0.0], "focal_px": 900.0},
            {"id": 2, "position": [0.0, 45.0, 10.0], "look_at": [0.0, 0.0], "focal_px": 900.0},
            {"id": 3, "position": [0.0, -45.0, 10.0], "look_at": [0.0, 0.0], "focal_px": 900.0},
        ],
        "vehicles": [
            {
                "id": i + 1,
                "entry_frame": 20 * i,
                "waypoints": [[-60.0, lane], [60.0, lane]] if i % 2 == 0 else [[lane, -60.0], [lane, 60.0]],
                "speed": 1.0 + 0.1 * (i % 3),
            }
            for i, lane in enumerate([-3.0, 3.0, -6.0, 6.0, 0.0, -3.0])
        ],
        "noise": {
            "feature_dim": 16,
            "feature_noise_std": 0.05,
            "miss_probability": 0.02,
            "bbox_jitter_std": 1.0,
        },
    }
