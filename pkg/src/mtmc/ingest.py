"""Input parsing and validation: detection CSVs, appearance-feature sidecar
files, and track CSVs, plus score/size filtering and per-frame batching."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class IngestError(ValueError):
    """Malformed input file (bad row shape, non-numeric field, misaligned
    feature sidecar)."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned image box: upper-left corner, width, height (pixels)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"bbox needs positive extent, got w={self.w}, h={self.h}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("bbox corner must be finite")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def base_midpoint(self) -> tuple[float, float]:
        """Bottom-center pixel: where the object meets the ground plane."""
        return self.x + self.w / 2.0, self.y + self.h


@dataclass(eq=False)
class Detection:
    camera_id: int
    frame: int
    bbox: BBox
    score: float
    feature: np.ndarray

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"frame must be non-negative, got {self.frame}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        self.feature = np.asarray(self.feature, dtype=float)


@dataclass
class FrameBatch:
    """All detections (across cameras) sharing one frame index."""

    frame: int
    detections: list[Detection] = field(default_factory=list)


@dataclass(frozen=True)
class IngestConfig:
    score_threshold: float = 0.0
    min_area_fraction: float = 0.0
    frame_width: int = 1280
    frame_height: int = 960
    feature_dim: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")
        if not 0.0 <= self.min_area_fraction < 1.0:
            raise ValueError("min_area_fraction must be in [0, 1)")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError("frame dimensions must be positive")


def _is_header(row: list[str]) -> bool:
    try:
        float(row[0])
    except ValueError:
        return True
    return False


def _parse_detection_row(row: list[str], line_no: int) -> tuple[int, float, float, float, float, float]:
    if len(row) != 8:
        raise IngestError(f"line {line_no}: expected 8 columns, got {len(row)}")
    try:
        frame = int(row[0])
        int(row[1])  # id column: kept for format compatibility, value unused
        x, y, w, h = (float(v) for v in row[2:6])
        score = float(row[6])
        int(row[7])  # class column, unused
    except ValueError as exc:
        raise IngestError(f"line {line_no}: non-numeric field ({exc})") from exc
    return frame, x, y, w, h, score


def _load_features(path, expected_dim: int | None) -> list[np.ndarray]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("k="):
            raise IngestError(f"{path}: feature file must start with 'k=<dim>'")
        try:
            k = int(first[2:])
        except ValueError as exc:
            raise IngestError(f"{path}: bad feature dimension {first!r}") from exc
        if k <= 0:
            raise IngestError(f"{path}: feature dimension must be positive, got {k}")
        if expected_dim is not None and k != expected_dim:
            raise IngestError(f"{path}: feature dimension {k} != configured {expected_dim}")
        rows = []
        for line_no, row in enumerate(csv.reader(fh), start=2):
            if not row:
                continue
            if len(row) != k:
                raise IngestError(f"{path} line {line_no}: expected {k} values, got {len(row)}")
            try:
                rows.append(np.array([float(v) for v in row]))
            except ValueError as exc:
                raise IngestError(f"{path} line {line_no}: non-numeric feature ({exc})") from exc
    return rows


def load_detections(path, camera_id: int, config: IngestConfig, features_path) -> list[Detection]:
    """Load one camera's detections with their row-aligned feature sidecar.

    Rows failing the score or relative-area filters are dropped; the
    remainder is returned in ascending frame order.
    """
    features = _load_features(features_path, config.feature_dim)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if line_no == 1 and _is_header(row):
                continue
            rows.append(_parse_detection_row(row, line_no))
    if len(rows) != len(features):
        raise IngestError(
            f"{path}: {len(rows)} detection rows but {len(features)} feature rows"
        )
    frame_area = config.frame_width * config.frame_height
    out = []
    for (frame, x, y, w, h, score), feat in zip(rows, features):
        if score < config.score_threshold:
            continue
        if w * h < config.min_area_fraction * frame_area:
            continue
        out.append(
            Detection(camera_id=camera_id, frame=frame, bbox=BBox(x, y, w, h), score=score, feature=feat)
        )
    out.sort(key=lambda d: d.frame)
    return out


def save_detections(path, features_path, detections: list[Detection]) -> None:
    """Inverse of load_detections (modulo filtering): detection CSV plus
    aligned feature sidecar. Float fields use repr so reload is exact."""
    if detections:
        k = len(detections[0].feature)
    else:
        k = 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for d in detections:
            writer.writerow(
                [d.frame, -1, repr(float(d.bbox.x)), repr(float(d.bbox.y)), repr(float(d.bbox.w)),
                 repr(float(d.bbox.h)), repr(float(d.score)), 0]
            )
    with open(features_path, "w", newline="") as fh:
        fh.write(f"k={k}\n")
        writer = csv.writer(fh)
        for d in detections:
            writer.writerow([repr(float(v)) for v in d.feature])


def batch_by_frame(detections: list[Detection], frame_range: tuple[int, int]):
    """Yield one FrameBatch per frame in [start, end] inclusive, merging all
    cameras. Frames with no detections yield empty batches so downstream
    state estimation still advances."""
    start, end = frame_range
    by_frame: dict[int, list[Detection]] = {}
    for det in detections:
        by_frame.setdefault(det.frame, []).append(det)
    for frame in range(start, end + 1):
        dets = by_frame.get(frame, [])
        dets.sort(key=lambda d: d.camera_id)
        yield FrameBatch(frame=frame, detections=dets)


@dataclass(frozen=True)
class TrackRow:
    """One row of a track output file (a single camera's view of a track)."""

    frame: int
    track_id: int
    bbox: BBox
    lat: float
    lon: float
    synthetic: bool = False


def load_track_rows(path) -> list[TrackRow]:
    """Read a track CSV; the synthetic column is optional (defaults to 0)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if line_no == 1 and _is_header(row):
                continue
            if len(row) not in (8, 9):
                raise IngestError(f"{path} line {line_no}: expected 8 or 9 columns, got {len(row)}")
            try:
                frame = int(row[0])
                track_id = int(row[1])
                x, y, w, h = (float(v) for v in row[2:6])
                lat, lon = float(row[6]), float(row[7])
                synthetic = bool(int(row[8])) if len(row) == 9 else False
            except ValueError as exc:
                raise IngestError(f"{path} line {line_no}: non-numeric field ({exc})") from exc
            rows.append(TrackRow(frame, track_id, BBox(x, y, w, h), lat, lon, synthetic))
    return rows


def save_track_rows(path, rows: list[TrackRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "track_id", "x", "y", "w", "h", "phi", "lambda", "synthetic"])
        for r in rows:
            writer.writerow(
                [
                    r.frame,
                    r.track_id,
                    repr(float(r.bbox.x)),
                    repr(float(r.bbox.y)),
                    repr(float(r.bbox.w)),
                    repr(float(r.bbox.h)),
                    repr(float(r.lat)),
                    repr(float(r.lon)),
                    int(r.synthetic),
                ]
            )
