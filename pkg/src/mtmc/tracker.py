"""Temporal association: constant-velocity Kalman tracks over cluster
centroids, Hungarian matching, track lifecycle, and occlusion handling.

Track motion is estimated in the local metric frame (meters); GPS degrees
mix units across axes. Conversion is exact under the flat-earth anchor.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import ClusterSet
from .geometry import Calibration, DegenerateProjection, back_project
from .ingest import BBox, FrameBatch, TrackRow

# One-frame constant-velocity transition and position-only measurement model.
F = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
])
H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])

# Variance granted to the unknown initial velocity of a fresh track.
INITIAL_VELOCITY_VAR = 100.0

# Matched positions kept per track; older history lives in the output files.
HISTORY_LIMIT = 32


@dataclass(frozen=True)
class KalmanState:
    """mean = [east, north, v_east, v_north]; covariance 4x4 SPD."""

    mean: np.ndarray
    covariance: np.ndarray


def process_noise_matrix(q: float) -> np.ndarray:
    """Piecewise-constant acceleration noise for a unit frame step."""
    return q * q * np.array([
        [0.25, 0.0, 0.5, 0.0],
        [0.0, 0.25, 0.0, 0.5],
        [0.5, 0.0, 1.0, 0.0],
        [0.0, 0.5, 0.0, 1.0],
    ])


def initial_state(east: float, north: float, measurement_noise: float) -> KalmanState:
    mean = np.array([east, north, 0.0, 0.0])
    r2 = measurement_noise * measurement_noise
    cov = np.diag([r2, r2, INITIAL_VELOCITY_VAR, INITIAL_VELOCITY_VAR])
    return KalmanState(mean=mean, covariance=cov)


def predict(state: KalmanState, process_noise: float) -> KalmanState:
    mean = F @ state.mean
    cov = F @ state.covariance @ F.T + process_noise_matrix(process_noise)
    cov = (cov + cov.T) / 2.0
    return KalmanState(mean=mean, covariance=cov)


def update(state: KalmanState, measurement, measurement_noise: float) -> KalmanState:
    z = np.asarray(measurement, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"non-finite measurement {measurement}")
    r = measurement_noise * measurement_noise * np.eye(2)
    innovation = z - H @ state.mean
    s = H @ state.covariance @ H.T + r
    gain = np.linalg.solve(s.T, H @ state.covariance).T
    mean = state.mean + gain @ innovation
    # Joseph form keeps the covariance positive-definite under roundoff
    ikh = np.eye(4) - gain @ H
    cov = ikh @ state.covariance @ ikh.T + gain @ r @ gain.T
    cov = (cov + cov.T) / 2.0
    return KalmanState(mean=mean, covariance=cov)


@dataclass(frozen=True)
class TrackerConfig:
    gate: float = 8.0
    max_age: int = 10
    min_hits: int = 2
    occlusion_mode: str = "blind"
    process_noise: float = 1.0
    measurement_noise: float = 0.5

    def __post_init__(self):
        if not self.gate > 0:
            raise ValueError("gate must be positive")
        if self.max_age < 0 or self.min_hits < 1:
            raise ValueError("max_age must be >= 0 and min_hits >= 1")
        if self.occlusion_mode not in ("none", "blind", "reprojection"):
            raise ValueError(f"unknown occlusion_mode {self.occlusion_mode!r}")

    @property
    def effective_max_age(self) -> int:
        # "none" disables gap survival entirely: one miss terminates
        return self.max_age if self.occlusion_mode != "none" else 0


@dataclass
class Track:
    id: int
    state: KalmanState
    hits: int = 1
    confirmed: bool = False
    frames_since_update: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=HISTORY_LIMIT))
    last_boxes: dict = field(default_factory=dict)  # camera -> (frame, BBox)

    def position(self) -> tuple[float, float]:
        return float(self.state.mean[0]), float(self.state.mean[1])


def associate_cost(cost: np.ndarray, gate: float):
    """Minimum-total-cost one-to-one assignment with post-hoc gating.

    Returns (matches, unmatched_rows, unmatched_cols); assigned pairs whose
    cost exceeds the gate are demoted to unmatched on both sides.
    """
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return [], list(range(n_rows)), list(range(n_cols))
    rows, cols = linear_sum_assignment(cost)
    matches = []
    matched_rows, matched_cols = set(), set()
    for i, j in zip(rows, cols):
        if cost[i, j] <= gate:
            matches.append((int(i), int(j)))
            matched_rows.add(int(i))
            matched_cols.add(int(j))
    unmatched_rows = [i for i in range(n_rows) if i not in matched_rows]
    unmatched_cols = [j for j in range(n_cols) if j not in matched_cols]
    return matches, unmatched_rows, unmatched_cols


def associate(tracks: list[Track], clusters: ClusterSet, gate: float):
    """Match predicted track positions to cluster centroids by ground
    distance."""
    cost = np.zeros((len(tracks), len(clusters.clusters)))
    for i, track in enumerate(tracks):
        east, north = track.position()
        for j, cluster in enumerate(clusters.clusters):
            cost[i, j] = np.hypot(east - cluster.centroid.east, north - cluster.centroid.north)
    return associate_cost(cost, gate)


class Tracker:
    """Single-caller frame-ordered state machine over cluster sets."""

    def __init__(self, config: TrackerConfig, calibration: Calibration):
        self.config = config
        self.calibration = calibration
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame = None

    @property
    def tracks_created(self) -> int:
        return self._next_id - 1

    def _new_track(self, cluster, batch: FrameBatch, frame: int) -> Track:
        state = initial_state(
            cluster.centroid.east, cluster.centroid.north, self.config.measurement_noise
        )
        track = Track(id=self._next_id, state=state, confirmed=self.config.min_hits <= 1)
        self._next_id += 1
        self._record_match(track, cluster, batch, frame)
        return track

    def _record_match(self, track: Track, cluster, batch: FrameBatch, frame: int):
        dets = tuple(batch.detections[i] for i in cluster.members)
        track.history.append((frame, cluster.centroid, dets))
        for det in dets:
            track.last_boxes[det.camera_id] = (frame, det.bbox)

    def _row(self, track: Track, frame: int, bbox: BBox, synthetic: bool) -> TrackRow:
        east, north = track.position()
        lat, lon = self.calibration.anchor.from_local(east, north)
        return TrackRow(
            frame=frame, track_id=track.id, bbox=bbox, lat=lat, lon=lon, synthetic=synthetic
        )

    def _artificial_rows(self, track: Track, frame: int, seen_now: set[int]) -> list[tuple[int, TrackRow]]:
        """Reprojected boxes for cameras that recently saw this track but
        lost it: cached size, base midpoint at the back-projected position."""
        east, north = track.position()
        lat, lon = self.calibration.anchor.from_local(east, north)
        rows = []
        for cam_id, (last_frame, box) in sorted(track.last_boxes.items()):
            if cam_id in seen_now:
                continue
            if frame - last_frame > self.config.max_age:
                continue
            cam = self.calibration.cameras[cam_id]
            try:
                u, v = back_project(cam.homography, lat, lon)
            except DegenerateProjection:
                continue
            if not (0 <= u < cam.frame_width and 0 <= v < cam.frame_height):
                continue
            bbox = BBox(x=u - box.w / 2.0, y=v - box.h, w=box.w, h=box.h)
            rows.append((cam_id, self._row(track, frame, bbox, synthetic=True)))
        return rows

    def step(self, batch: FrameBatch, clusters: ClusterSet) -> list[tuple[int, TrackRow]]:
        """Advance one frame; returns (camera_id, row) pairs for output.

        Must be called with strictly increasing frame indices; empty frames
        still advance prediction and ageing.
        """
        frame = clusters.frame
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame {frame} not after {self._last_frame}")
        self._last_frame = frame
        cfg = self.config

        for track in self.tracks:
            track.state = predict(track.state, cfg.process_noise)

        matches, unmatched_tracks, unmatched_clusters = associate(self.tracks, clusters, cfg.gate)

        rows: list[tuple[int, TrackRow]] = []
        survivors: list[Track] = []

        matched_members: dict[int, object] = {}
        for ti, cj in matches:
            track = self.tracks[ti]
            cluster = clusters.clusters[cj]
            track.state = update(
                track.state, (cluster.centroid.east, cluster.centroid.north), cfg.measurement_noise
            )
            track.frames_since_update = 0
            track.hits += 1
            if track.hits >= cfg.min_hits:
                track.confirmed = True
            self._record_match(track, cluster, batch, frame)
            matched_members[ti] = cluster
            survivors.append(track)

        for ti in unmatched_tracks:
            track = self.tracks[ti]
            if not track.confirmed:
                continue  # tentative tracks die on their first miss
            track.frames_since_update += 1
            track.hits = 0
            if track.frames_since_update <= cfg.effective_max_age:
                survivors.append(track)

        spawned: list[tuple[Track, object]] = []
        for cj in unmatched_clusters:
            cluster = clusters.clusters[cj]
            track = self._new_track(cluster, batch, frame)
            spawned.append((track, cluster))
            survivors.append(track)

        emit = [(self.tracks[ti], matched_members[ti]) for ti, _ in matches] + spawned
        for track, cluster in emit:
            if not track.confirmed:
                continue
            seen_now = set()
            for i in cluster.members:
                det = batch.detections[i]
                seen_now.add(det.camera_id)
                rows.append((det.camera_id, self._row(track, frame, det.bbox, synthetic=False)))
            if cfg.occlusion_mode == "reprojection":
                rows.extend(self._artificial_rows(track, frame, seen_now))

        if cfg.occlusion_mode == "reprojection":
            for track in survivors:
                if track.confirmed and track.frames_since_update > 0:
                    rows.extend(self._artificial_rows(track, frame, set()))

        self.tracks = survivors
        return rows
