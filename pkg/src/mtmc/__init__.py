"""Online multi-camera vehicle tracking.

Per-camera detections with appearance features are projected onto a shared
GPS ground plane, clustered across cameras under hard spatial constraints,
and associated over time with per-cluster Kalman filters. Includes a
synthetic scenario generator and identity-based evaluation.
"""

__version__ = "0.1.0"
