"""End-to-end online tracking loop: per frame, project detections to the
ground plane, cluster across cameras, and feed the tracker.

The loop pulls batches from its iterator one at a time and finishes each
frame's work (including output rows) before touching the next: the engine is
online by construction, never reading ahead of the frame it is emitting.
"""

import time
from collections import defaultdict
from dataclasses import dataclass, field

from .affinity import build_connectivity
from .clustering import build_dendrogram, cluster_frame
from .geometry import Calibration, project_to_gps
from .ingest import FrameBatch, TrackRow
from .tracker import Tracker, TrackerConfig


class PipelineError(RuntimeError):
    """Tracking aborted; the message names the offending frame."""


@dataclass
class RunStats:
    frames: int = 0
    tracks_created: int = 0
    frame_seconds: list = field(default_factory=list)

    def mean_ms(self) -> float:
        if not self.frame_seconds:
            return 0.0
        return 1000.0 * sum(self.frame_seconds) / len(self.frame_seconds)

    def p99_ms(self) -> float:
        if not self.frame_seconds:
            return 0.0
        ordered = sorted(self.frame_seconds)
        idx = min(len(ordered) - 1, int(0.99 * (len(ordered) - 1) + 0.999999))
        return 1000.0 * ordered[idx]


def project_batch(batch: FrameBatch, calibration: Calibration):
    """Ground point for each detection via its camera's homography."""
    grounds = []
    for det in batch.detections:
        cam = calibration.cameras.get(det.camera_id)
        if cam is None:
            raise PipelineError(f"frame {batch.frame}: no calibration for camera {det.camera_id}")
        lat, lon = project_to_gps(cam.homography, det.bbox)
        grounds.append(calibration.anchor.ground_point(lat, lon))
    return grounds


def track_stream(
    batches,
    calibration: Calibration,
    r: float,
    config: TrackerConfig,
    fixed_cut_height: float | None = None,
    on_dendrogram=None,
) -> tuple[dict[int, list[TrackRow]], RunStats]:
    """Run the tracker over an iterable of FrameBatch in frame order.

    Returns per-camera output rows and run statistics. Batches are consumed
    lazily; callers may pass a generator that produces frames on demand.
    """
    tracker = Tracker(config, calibration)
    rows_by_camera: dict[int, list[TrackRow]] = defaultdict(list)
    stats = RunStats()
    for batch in batches:
        start = time.perf_counter()
        try:
            grounds = project_batch(batch, calibration)
            theta = build_connectivity(batch, grounds, r)
            dendro = build_dendrogram(theta)
            if on_dendrogram is not None:
                on_dendrogram(batch.frame, dendro)
            clusters = cluster_frame(
                batch, grounds, theta, calibration.anchor, fixed_cut_height, dendro
            )
            for camera_id, row in tracker.step(batch, clusters):
                rows_by_camera[camera_id].append(row)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"frame {batch.frame}: {exc}") from exc
        stats.frame_seconds.append(time.perf_counter() - start)
        stats.frames += 1
    stats.tracks_created = tracker.tracks_created
    for cam_id in calibration.cameras:
        rows_by_camera.setdefault(cam_id, [])
    return dict(rows_by_camera), stats
