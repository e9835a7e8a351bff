"""Constrained connectivity: pairwise appearance distances gated by camera
identity and ground-plane proximity.

Forbidden pairs (same camera, or farther apart than the association radius)
carry INF, a categorical sentinel: downstream clustering must never merge
across it, and no finite "large" value could guarantee that.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import GroundPoint
from .ingest import FrameBatch

INF = np.inf


def appearance_distance(f, g) -> float:
    """Euclidean distance between two appearance feature vectors."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape:
        raise ValueError(f"feature dimension mismatch: {f.shape} vs {g.shape}")
    return float(np.linalg.norm(f - g))


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric D x D matrix: finite appearance distance where a merge is
    allowed, INF where it is forbidden, zero diagonal."""

    entries: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def build_connectivity(batch: FrameBatch, grounds: list[GroundPoint], r: float) -> ConnectivityMatrix:
    """Build the connectivity matrix for one frame.

    entry(d, d') = ||f_d - f_d'|| iff the two detections come from different
    cameras and their ground positions are within r meters (inclusive);
    INF otherwise.
    """
    if len(grounds) != len(batch.detections):
        raise ValueError(
            f"{len(batch.detections)} detections but {len(grounds)} ground points"
        )
    if not r > 0:
        raise ValueError(f"association radius must be positive, got {r}")
    n = len(batch.detections)
    if n == 0:
        return ConnectivityMatrix(entries=np.zeros((0, 0)))
    feats = np.stack([d.feature for d in batch.detections])
    diff = feats[:, None, :] - feats[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    cams = np.array([d.camera_id for d in batch.detections])
    east = np.array([g.east for g in grounds])
    north = np.array([g.north for g in grounds])
    ground = np.hypot(east[:, None] - east[None, :], north[:, None] - north[None, :])

    forbidden = (cams[:, None] == cams[None, :]) | (ground > r)
    dist[forbidden] = INF
    np.fill_diagonal(dist, 0.0)
    return ConnectivityMatrix(entries=dist)
