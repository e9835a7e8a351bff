"""Command-line entry points: simulate, track, evaluate, pipeline, sweep."""

import argparse
import csv
import dataclasses
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import __version__
from .clustering import dendrogram_to_json
from .geometry import load_calibration
from .ingest import IngestConfig, batch_by_frame, load_detections, load_track_rows, save_track_rows
from .metrics import evaluate, trajectories_from_rows
from .pipeline import PipelineError, track_stream
from .simulator import demo_spec, generate, spec_from_dict, spec_from_json
from .tracker import TrackerConfig

log = logging.getLogger("mtmc")

_CAM_FILE = re.compile(r"^(?:gt|track)_cam(\d+)\.csv$")


def _setup_logging():
    level = os.environ.get("MTMC_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(
        gate=args.gate_meters if args.gate_meters is not None else args.r_meters,
        max_age=args.max_age,
        min_hits=args.min_hits,
        occlusion_mode=args.occlusion,
        process_noise=args.process_noise,
        measurement_noise=args.measurement_noise,
    )


def _add_tracking_flags(parser):
    parser.add_argument("--r-meters", type=float, default=8.0, help="association radius in meters")
    parser.add_argument("--gate-meters", type=float, default=None, help="temporal gate in meters (default: r)")
    parser.add_argument("--max-age", type=int, default=10, help="frames a track survives unmatched")
    parser.add_argument("--min-hits", type=int, default=2, help="consecutive matches to confirm a track")
    parser.add_argument("--occlusion", choices=["none", "blind", "reprojection"], default="blind")
    parser.add_argument("--process-noise", type=float, default=1.0)
    parser.add_argument("--measurement-noise", type=float, default=0.5)
    parser.add_argument("--score-threshold", type=float, default=0.0)
    parser.add_argument("--min-area-fraction", type=float, default=0.0)
    parser.add_argument("--dump-dendrograms", action="store_true", help="write per-frame dendrogram JSONL")
    parser.add_argument("--fixed-cut-height", type=float, default=None, help="bypass Dunn selection with a fixed dendrogram cut")


def _load_spec(args):
    if args.demo:
        spec, noise = spec_from_dict(demo_spec())
    elif args.spec:
        spec, noise = spec_from_json(args.spec)
    else:
        raise SystemExit("either --spec or --demo is required")
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    return spec, noise


def _discover_track_files(directory: Path) -> dict[int, Path]:
    files = {}
    for path in sorted(directory.iterdir()):
        m = _CAM_FILE.match(path.name)
        if m:
            cam = int(m.group(1))
            # prefer track_* over gt_* when both exist in one directory
            if cam not in files or path.name.startswith("track_"):
                files[cam] = path
    return files


def _run_track(args, data_dir: Path, out_dir: Path) -> dict:
    calib = load_calibration(data_dir / "calibration.json")
    detections = []
    for cam_id, cam in sorted(calib.cameras.items()):
        det_path = data_dir / f"det_cam{cam_id}.csv"
        feat_path = data_dir / f"feat_cam{cam_id}.csv"
        if not det_path.exists() or not feat_path.exists():
            raise SystemExit(f"missing detection or feature file for camera {cam_id} in {data_dir}")
        config = IngestConfig(
            score_threshold=args.score_threshold,
            min_area_fraction=args.min_area_fraction,
            frame_width=cam.frame_width,
            frame_height=cam.frame_height,
        )
        detections.extend(load_detections(det_path, cam_id, config, feat_path))

    out_dir.mkdir(parents=True, exist_ok=True)
    dendro_fh = None
    on_dendrogram = None
    if args.dump_dendrograms:
        dendro_fh = open(out_dir / "dendrograms.jsonl", "w")

        def on_dendrogram(frame, dendro, _fh=dendro_fh):
            _fh.write(json.dumps({"frame": frame, **dendrogram_to_json(dendro)}) + "\n")

    config = _tracker_config(args)
    last_frame = max((d.frame for d in detections), default=-1)
    batches = batch_by_frame(detections, (0, last_frame))
    try:
        rows_by_camera, stats = track_stream(
            batches, calib, args.r_meters, config,
            fixed_cut_height=args.fixed_cut_height, on_dendrogram=on_dendrogram,
        )
    finally:
        if dendro_fh is not None:
            dendro_fh.close()

    for cam_id in sorted(calib.cameras):
        save_track_rows(out_dir / f"track_cam{cam_id}.csv", rows_by_camera.get(cam_id, []))
    manifest = {
        "frames": stats.frames,
        "tracks_created": stats.tracks_created,
        "frame_ms_mean": stats.mean_ms(),
        "frame_ms_p99": stats.p99_ms(),
        "config": {
            "r_meters": args.r_meters,
            "gate_meters": config.gate,
            "max_age": config.max_age,
            "min_hits": config.min_hits,
            "occlusion_mode": config.occlusion_mode,
            "process_noise": config.process_noise,
            "measurement_noise": config.measurement_noise,
            "score_threshold": args.score_threshold,
            "min_area_fraction": args.min_area_fraction,
            "fixed_cut_height": args.fixed_cut_height,
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    log.info("tracked %d frames, %d tracks, %.2f ms/frame mean",
             stats.frames, stats.tracks_created, stats.mean_ms())
    return manifest


def _run_evaluate(gt_dir: Path, pred_dir: Path, taus, out_dir: Path, include_synthetic: bool) -> list[dict]:
    gt_files = _discover_track_files(gt_dir)
    pred_files = _discover_track_files(pred_dir)
    if set(gt_files) != set(pred_files):
        raise SystemExit(
            f"camera sets differ: ground truth {sorted(gt_files)} vs predictions {sorted(pred_files)}"
        )
    gt_rows = {cam: load_track_rows(path) for cam, path in gt_files.items()}
    pred_rows = {cam: load_track_rows(path) for cam, path in pred_files.items()}
    gt = trajectories_from_rows(gt_rows, include_synthetic=True)
    pred = trajectories_from_rows(pred_rows, include_synthetic=include_synthetic)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for tau in taus:
        report = evaluate(gt, pred, tau)
        payload = {"tau_iou": tau, **report.to_dict()}
        reports.append(payload)
        path = out_dir / f"report_tau{tau:g}.json"
        path.write_text(json.dumps(payload, indent=2))
        log.info("tau=%g idf1=%.4f idp=%.4f idr=%.4f", tau, report.idf1, report.idp, report.idr)
    with open(out_dir / "reports.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tau_iou", "idtp", "idfp", "idfn", "idp", "idr", "idf1"])
        writer.writeheader()
        writer.writerows(reports)
    return reports


def cmd_simulate(args) -> int:
    spec, noise = _load_spec(args)
    paths = generate(spec, noise, args.out)
    log.info("scenario written to %s (%d cameras, %d vehicles, %d frames)",
             args.out, len(spec.cameras), len(spec.vehicles), spec.duration)
    print(str(paths["calibration"]))
    return 0


def cmd_track(args) -> int:
    try:
        _run_track(args, Path(args.data_dir), Path(args.out))
    except PipelineError as exc:
        log.error("%s", exc)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    _run_evaluate(
        Path(args.gt_dir), Path(args.pred_dir), args.tau_iou, Path(args.out),
        include_synthetic=not args.exclude_synthetic,
    )
    return 0


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    spec, noise = _load_spec(args)
    scenario_dir = out / "scenario"
    generate(spec, noise, scenario_dir)
    try:
        _run_track(args, scenario_dir, out / "tracks")
    except PipelineError as exc:
        log.error("%s", exc)
        return 1
    _run_evaluate(scenario_dir, out / "tracks", args.tau_iou, out / "reports",
                  include_synthetic=not args.exclude_synthetic)
    return 0


def cmd_sweep(args) -> int:
    out = Path(args.out)
    spec, noise = _load_spec(args)
    scenario_dir = out / "scenario"
    generate(spec, noise, scenario_dir)
    rows = []
    for r in args.r_meters:
        for occlusion in args.occlusion:
            run = argparse.Namespace(**vars(args))
            run.r_meters = r
            run.occlusion = occlusion
            run.gate_meters = args.gate_meters
            label = f"r{r:g}_{occlusion}"
            track_dir = out / f"tracks_{label}"
            try:
                _run_track(run, scenario_dir, track_dir)
            except PipelineError as exc:
                log.error("%s", exc)
                return 1
            reports = _run_evaluate(scenario_dir, track_dir, args.tau_iou, out / f"reports_{label}",
                                    include_synthetic=not args.exclude_synthetic)
            for report in reports:
                rows.append({"r_meters": r, "occlusion": occlusion, **report})
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["r_meters", "occlusion", "tau_iou", "idtp", "idfp", "idfn", "idp", "idr", "idf1"]
        )
        writer.writeheader()
        writer.writerows(rows)
    log.info("sweep written to %s", out / "sweep.csv")
    return 0


def _tau_list(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v]


def _float_list(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtmc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mtmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--spec", help="scenario spec JSON")
    p.add_argument("--demo", action="store_true", help="use the built-in demo scenario")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the tracker over a scenario directory")
    p.add_argument("--data-dir", required=True, help="directory with calibration.json and det/feat files")
    p.add_argument("--out", required=True)
    _add_tracking_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--tau-iou", type=_tau_list, default=[0.2, 0.5])
    p.add_argument("--exclude-synthetic", action="store_true", help="drop reprojected boxes before scoring")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="simulate, track, and evaluate in one run")
    p.add_argument("--spec", help="scenario spec JSON")
    p.add_argument("--demo", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tau-iou", type=_tau_list, default=[0.2, 0.5])
    p.add_argument("--exclude-synthetic", action="store_true")
    p.add_argument("--out", required=True)
    _add_tracking_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="grid over r and occlusion modes, emitting one CSV")
    p.add_argument("--spec", help="scenario spec JSON")
    p.add_argument("--demo", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--r-meters", type=_float_list, default=[5.0, 6.5, 8.0, 9.5])
    p.add_argument("--occlusion", type=lambda s: s.split(","), default=["blind"])
    p.add_argument("--gate-meters", type=float, default=None)
    p.add_argument("--max-age", type=int, default=10)
    p.add_argument("--min-hits", type=int, default=2)
    p.add_argument("--process-noise", type=float, default=1.0)
    p.add_argument("--measurement-noise", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--min-area-fraction", type=float, default=0.0)
    p.add_argument("--dump-dendrograms", action="store_true")
    p.add_argument("--fixed-cut-height", type=float, default=None)
    p.add_argument("--tau-iou", type=_tau_list, default=[0.5])
    p.add_argument("--exclude-synthetic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
