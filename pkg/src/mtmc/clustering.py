"""Per-frame cross-camera clustering: complete-linkage agglomeration over the
connectivity matrix, cut selection by Dunn index.

Complete linkage is load-bearing: a cluster-pair linkage is the *maximum*
pairwise entry, so a single INF (forbidden pair) makes the merge INF and it
is never performed. The constraints need no separate enforcement step.
"""

from dataclasses import dataclass

import numpy as np

from .affinity import ConnectivityMatrix
from .geometry import Anchor, GroundPoint
from .ingest import FrameBatch


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    node: int


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge sequence. Leaves are 0..n_leaves-1; merge i
    creates node n_leaves+i. May be a forest: merging stops at INF."""

    n_leaves: int
    merges: tuple[Merge, ...]

    def partition_after(self, n_merges: int) -> tuple[tuple[int, ...], ...]:
        """Partition of leaf indices after applying the first n_merges."""
        members = {i: (i,) for i in range(self.n_leaves)}
        for merge in self.merges[:n_merges]:
            merged = tuple(sorted(members.pop(merge.left) + members.pop(merge.right)))
            members[merge.node] = merged
        return tuple(sorted(members.values()))


def build_dendrogram(theta: ConnectivityMatrix) -> Dendrogram:
    """Complete-linkage agglomeration until only INF linkages remain.

    Ties break toward the lexicographically smallest active pair, so the
    result is deterministic.
    """
    n = theta.size
    dist = theta.entries.astype(float).copy()
    np.fill_diagonal(dist, np.inf)
    node_ids = list(range(n))
    active = list(range(n))
    merges = []
    next_node = n
    while len(active) > 1:
        sub = dist[np.ix_(active, active)]
        flat = int(np.argmin(sub))
        i, j = divmod(flat, len(active))
        height = sub[i, j]
        if not np.isfinite(height):
            break
        if i > j:
            i, j = j, i
        ai, aj = active[i], active[j]
        # max-linkage update: INF in either row survives, keeping merges hard
        merged_row = np.maximum(dist[ai], dist[aj])
        dist[ai] = merged_row
        dist[:, ai] = merged_row
        dist[ai, ai] = np.inf
        left, right = sorted((node_ids[ai], node_ids[aj]))
        merges.append(Merge(left=left, right=right, height=float(height), node=next_node))
        node_ids[ai] = next_node
        next_node += 1
        active.pop(j)
    return Dendrogram(n_leaves=n, merges=tuple(merges))


def enumerate_cuts(dendro: Dendrogram) -> list[tuple[tuple[int, ...], ...]]:
    """All candidate partitions: all-singletons plus one per merge prefix."""
    seen = set()
    out = []
    for k in range(len(dendro.merges) + 1):
        part = dendro.partition_after(k)
        if part not in seen:
            seen.add(part)
            out.append(part)
    return out


def cut_at_height(dendro: Dendrogram, height: float) -> tuple[tuple[int, ...], ...]:
    """Partition from applying every merge at or below the given height."""
    k = sum(1 for m in dendro.merges if m.height <= height)
    return dendro.partition_after(k)


def dunn_index(partition, theta: ConnectivityMatrix):
    """Minimum finite inter-cluster entry over maximum cluster diameter.

    Returns None (undefined) for the all-singletons partition: there is no
    merge to validate. A partition with merges but no finite inter-cluster
    entry scores +inf; its clusters are perfectly separated, every remaining
    pair being forbidden by the hard constraints.
    """
    entries = theta.entries
    if all(len(c) == 1 for c in partition):
        return None
    diameter = 0.0
    for cluster in partition:
        idx = np.array(cluster)
        if len(idx) > 1:
            diameter = max(diameter, float(entries[np.ix_(idx, idx)].max()))
    inter = np.inf
    for a in range(len(partition)):
        for b in range(a + 1, len(partition)):
            block = entries[np.ix_(np.array(partition[a]), np.array(partition[b]))]
            finite = block[np.isfinite(block)]
            if finite.size:
                inter = min(inter, float(finite.min()))
    if not np.isfinite(inter):
        return np.inf
    if diameter == 0.0:
        return np.inf if inter > 0.0 else 0.0
    return inter / diameter


def select_partition(dendro: Dendrogram, theta: ConnectivityMatrix) -> tuple[tuple[int, ...], ...]:
    """Best-Dunn cut; ties favor fewer clusters, then the earlier cut.

    Falls back to all-singletons when no candidate has a defined index.
    """
    candidates = enumerate_cuts(dendro)
    best = None
    best_score = None
    for part in candidates:
        score = dunn_index(part, theta)
        if score is None:
            continue
        if best_score is None or score > best_score or (
            score == best_score and len(part) < len(best)
        ):
            best, best_score = part, score
    if best is None:
        return candidates[0]
    return best


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]
    centroid: GroundPoint
    cameras: frozenset[int]


@dataclass(frozen=True)
class ClusterSet:
    frame: int
    clusters: tuple[Cluster, ...]


def centroid(points: list[GroundPoint], anchor: Anchor) -> GroundPoint:
    """Component-wise mean in the local metric frame, mapped back to GPS."""
    if not points:
        raise ValueError("centroid of zero points")
    east = sum(p.east for p in points) / len(points)
    north = sum(p.north for p in points) / len(points)
    lat, lon = anchor.from_local(east, north)
    return GroundPoint(lat=lat, lon=lon, east=east, north=north)


def cluster_frame(
    batch: FrameBatch,
    grounds: list[GroundPoint],
    theta: ConnectivityMatrix,
    anchor: Anchor,
    fixed_cut_height: float | None = None,
    dendro: Dendrogram | None = None,
) -> ClusterSet:
    """Cluster one frame's detections and attach centroids."""
    if dendro is None:
        dendro = build_dendrogram(theta)
    if fixed_cut_height is None:
        partition = select_partition(dendro, theta)
    else:
        partition = cut_at_height(dendro, fixed_cut_height)
    clusters = []
    for members in partition:
        pts = [grounds[i] for i in members]
        clusters.append(
            Cluster(
                members=members,
                centroid=centroid(pts, anchor),
                cameras=frozenset(batch.detections[i].camera_id for i in members),
            )
        )
    return ClusterSet(frame=batch.frame, clusters=tuple(clusters))


def dendrogram_to_json(dendro: Dendrogram) -> dict:
    """JSON-friendly dump for the per-frame debug flag."""
    return {
        "n_leaves": dendro.n_leaves,
        "merges": [
            {"left": m.left, "right": m.right, "height": m.height, "node": m.node}
            for m in dendro.merges
        ],
    }
