"""Identity-based evaluation: globally matched trajectory overlap, reported
as IDP / IDR / IDF1."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ingest import BBox, TrackRow

# A trajectory maps (camera, frame) -> BBox; a trajectory set maps id -> trajectory.
Trajectory = dict[tuple[int, int], BBox]
TrajectorySet = dict[int, Trajectory]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    x1 = max(a.x, b.x)
    y1 = max(a.y, b.y)
    x2 = min(a.x + a.w, b.x + b.w)
    y2 = min(a.y + a.h, b.y + b.h)
    if x2 <= x1 or y2 <= y1:
        return 0.0
    inter = (x2 - x1) * (y2 - y1)
    return inter / (a.area + b.area - inter)


def frame_overlap(gt: Trajectory, pred: Trajectory, tau_iou: float) -> int:
    """Count of (camera, frame) keys where both boxes exist and IoU strictly
    exceeds the threshold."""
    if not 0.0 < tau_iou < 1.0:
        raise ValueError(f"tau_iou must be in (0, 1), got {tau_iou}")
    count = 0
    for key, box in gt.items():
        other = pred.get(key)
        if other is not None and iou(box, other) > tau_iou:
            count += 1
    return count


@dataclass(frozen=True)
class IdReport:
    idtp: int
    idfp: int
    idfn: int
    idp: float
    idr: float
    idf1: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(gt: TrajectorySet, pred: TrajectorySet, tau_iou: float) -> IdReport:
    """Global minimum-cost one-to-one trajectory matching.

    Pairing cost is (gt length + pred length - 2 * overlap); dummy partners
    cost the unmatched trajectory's full length, so minimizing total cost
    maximizes total matched overlap.
    """
    gt_ids = sorted(gt)
    pred_ids = sorted(pred)
    n_gt, n_pred = len(gt_ids), len(pred_ids)
    total_gt = sum(len(gt[i]) for i in gt_ids)
    total_pred = sum(len(pred[j]) for j in pred_ids)

    idtp = 0
    if n_gt and n_pred:
        size = n_gt + n_pred
        cost = np.zeros((size, size))
        overlaps = np.zeros((n_gt, n_pred), dtype=int)
        for i, gid in enumerate(gt_ids):
            for j, pid in enumerate(pred_ids):
                overlaps[i, j] = frame_overlap(gt[gid], pred[pid], tau_iou)
                cost[i, j] = len(gt[gid]) + len(pred[pid]) - 2 * overlaps[i, j]
        for i, gid in enumerate(gt_ids):
            cost[i, n_pred:] = len(gt[gid])
        for j, pid in enumerate(pred_ids):
            cost[n_gt:, j] = len(pred[pid])
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if i < n_gt and j < n_pred:
                idtp += int(overlaps[i, j])

    idfn = total_gt - idtp
    idfp = total_pred - idtp
    idp = idtp / (idtp + idfp) if idtp + idfp > 0 else 0.0
    idr = idtp / (idtp + idfn) if idtp + idfn > 0 else 0.0
    denom = 2 * idtp + idfp + idfn
    idf1 = 2 * idtp / denom if denom > 0 else 0.0
    return IdReport(idtp=idtp, idfp=idfp, idfn=idfn, idp=idp, idr=idr, idf1=idf1)


def trajectories_from_rows(
    rows_by_camera: dict[int, list[TrackRow]], include_synthetic: bool = True
) -> TrajectorySet:
    """Group per-camera track rows into trajectories keyed by track id."""
    out: TrajectorySet = {}
    for camera_id, rows in rows_by_camera.items():
        for row in rows:
            if row.synthetic and not include_synthetic:
                continue
            traj = out.setdefault(row.track_id, {})
            key = (camera_id, row.frame)
            if key in traj:
                raise ValueError(
                    f"track {row.track_id} has two boxes at camera {camera_id} frame {row.frame}"
                )
            traj[key] = row.bbox
    return out
