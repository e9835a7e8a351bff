"""Ground-plane geometry: homography projection between camera pixels and GPS
coordinates, and a flat-earth local metric frame for distance computation.

All engine distances are computed in meters in the local frame; raw degrees
mix units across axes (a degree of longitude shrinks with latitude).
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Meters per degree of latitude under the flat-earth approximation.
METERS_PER_DEGREE = 111320.0

# Condition-number ceiling for homography validation. Legitimate
# pixels-to-GPS maps are badly scaled (degrees per pixel ~1e-8 next to a
# unit homogeneous row) and reach ~1e10; genuinely singular matrices sit at
# 1e16 and beyond.
COND_LIMIT = 1e13


class DegenerateProjection(ValueError):
    """Raised when a projected point lands at (or near) infinity."""


@dataclass(frozen=True)
class Anchor:
    """Reference GPS point anchoring the local east/north metric frame."""

    lat: float
    lon: float

    def __post_init__(self):
        if not abs(self.lat) < 90.0:
            raise ValueError(f"anchor latitude must satisfy |lat| < 90, got {self.lat}")

    def to_local(self, lat: float, lon: float) -> tuple[float, float]:
        """Convert GPS degrees to (east, north) meters about this anchor."""
        north = (lat - self.lat) * METERS_PER_DEGREE
        east = (lon - self.lon) * METERS_PER_DEGREE * math.cos(math.radians(self.lat))
        return east, north

    def from_local(self, east: float, north: float) -> tuple[float, float]:
        """Exact inverse of :meth:`to_local`."""
        lat = self.lat + north / METERS_PER_DEGREE
        lon = self.lon + east / (METERS_PER_DEGREE * math.cos(math.radians(self.lat)))
        return lat, lon

    def ground_point(self, lat: float, lon: float) -> "GroundPoint":
        east, north = self.to_local(lat, lon)
        return GroundPoint(lat=lat, lon=lon, east=east, north=north)


@dataclass(frozen=True)
class GroundPoint:
    """A position on the common ground plane, in GPS degrees and local meters."""

    lat: float
    lon: float
    east: float
    north: float


def ground_distance(a: GroundPoint, b: GroundPoint) -> float:
    """Euclidean distance in meters between two points sharing an anchor."""
    return math.hypot(a.east - b.east, a.north - b.north)


class Homography:
    """3x3 invertible map from homogeneous image pixels to homogeneous GPS
    (latitude, longitude). The inverse is precomputed for back-projection."""

    def __init__(self, m):
        m = np.asarray(m, dtype=float)
        if m.shape == (9,):
            m = m.reshape(3, 3)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography entries must be finite")
        svals = np.linalg.svd(m, compute_uv=False)
        if svals[-1] == 0.0 or svals[0] / svals[-1] > COND_LIMIT:
            raise ValueError("homography is singular or nearly singular")
        self.m = m
        self.m_inv = np.linalg.inv(m)

    def __repr__(self):
        return f"Homography({self.m.tolist()})"


def _apply(m: np.ndarray, x: float, y: float) -> tuple[float, float]:
    u, v, w = m @ (x, y, 1.0)
    if abs(w) <= 1e-12 * max(1.0, abs(u), abs(v)):
        raise DegenerateProjection(f"point ({x}, {y}) maps to infinity")
    return u / w, v / w


def project_point(h: Homography, x: float, y: float) -> tuple[float, float]:
    """Project one pixel through the homography, returning (lat, lon)."""
    return _apply(h.m, x, y)


def project_to_gps(h: Homography, bbox) -> tuple[float, float]:
    """Project a bounding box to GPS by mapping the middle point of its base
    (bottom-center pixel) through the homography."""
    return _apply(h.m, bbox.x + bbox.w / 2.0, bbox.y + bbox.h)


def back_project(h: Homography, lat: float, lon: float) -> tuple[float, float]:
    """Map a GPS point back to image pixels via the inverse homography."""
    return _apply(h.m_inv, lat, lon)


@dataclass(frozen=True)
class CameraCalibration:
    camera_id: int
    homography: Homography
    frame_width: int
    frame_height: int


@dataclass(frozen=True)
class Calibration:
    """Per-camera homographies plus the scenario anchor."""

    cameras: dict[int, CameraCalibration]
    anchor: Anchor

    def camera_ids(self) -> list[int]:
        return sorted(self.cameras)


def default_anchor(cameras: dict[int, CameraCalibration]) -> Anchor:
    """Centroid of every camera's principal-point projection.

    Any fixed nearby anchor works under the flat-earth approximation; this
    default is deterministic so repeated runs agree.
    """
    if not cameras:
        raise ValueError("cannot derive an anchor without cameras")
    points = []
    for cam in cameras.values():
        points.append(
            project_point(cam.homography, cam.frame_width / 2.0, cam.frame_height / 2.0)
        )
    lat = sum(p[0] for p in points) / len(points)
    lon = sum(p[1] for p in points) / len(points)
    return Anchor(lat=lat, lon=lon)


def load_calibration(path) -> Calibration:
    """Load the calibration JSON (see README for the schema).

    Homographies map pixels to GPS. The anchor is optional; when absent it
    defaults to the centroid of the cameras' principal-point projections.
    """
    with open(path) as fh:
        data = json.load(fh)
    cameras = {}
    for entry in data["cameras"]:
        cam_id = int(entry["id"])
        cameras[cam_id] = CameraCalibration(
            camera_id=cam_id,
            homography=Homography(entry["homography"]),
            frame_width=int(entry["frame_width"]),
            frame_height=int(entry["frame_height"]),
        )
    if "anchor" in data and data["anchor"] is not None:
        anchor = Anchor(lat=float(data["anchor"]["phi"]), lon=float(data["anchor"]["lambda"]))
    else:
        anchor = default_anchor(cameras)
    return Calibration(cameras=cameras, anchor=anchor)


def save_calibration(path, calibration: Calibration) -> None:
    data = {
        "cameras": [
            {
                "id": cam.camera_id,
                "homography": [float(v) for v in cam.homography.m.reshape(-1)],
                "frame_width": cam.frame_width,
                "frame_height": cam.frame_height,
            }
            for _, cam in sorted(calibration.cameras.items())
        ],
        "anchor": {"phi": calibration.anchor.lat, "lambda": calibration.anchor.lon},
    }
    Path(path).write_text(json.dumps(data, indent=2))
