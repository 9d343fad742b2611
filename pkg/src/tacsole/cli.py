"""Command-line entry point: ``tacsole <subcommand> [flags]``.

Every run writes ``manifest.json`` into ``--out`` with the parsed
configuration, seed, library versions and the files it produced.
Exit codes: 0 success, 1 pipeline error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import TacsoleError

log = logging.getLogger("tacsole")

SUBCOMMANDS = ("synth", "calibrate", "train-depth", "depth", "shear", "pose", "cop",
               "train-terrain", "classify", "confusion", "simulate", "matrix", "replay")
PIPELINES = ("cop", "depth", "shear", "pose", "terrain")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def parse_geometry(text: str | None):
    from .frame_io import SensorGeometry

    if not text:
        return SensorGeometry()
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--geometry expects WxH, got {text!r}") from None
    return SensorGeometry(roi_width=w, roi_height=h)


def _json_config(path: str | None) -> dict:
    if not path or path == "default":
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _dataclass_from(cls, overrides: dict):
    known = cls.__dataclass_fields__
    bad = set(overrides) - set(known)
    if bad:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(bad)}")
    return cls(**overrides)


def _require(args, name: str):
    v = getattr(args, name)
    if v is None:
        raise UsageError(f"{args.command} requires --{name.replace('_', '-')}")
    return v


def iter_frames(spec: str, fps: float = 30.0, realtime: bool = False, max_frames: int | None = None):
    """Frames from a single image file, a replay directory, or an MJPEG URL."""
    from .frame_io import MJPEGSource, SourceError, load_frame, open_source

    s = str(spec)
    if not s.startswith(("http://", "https://")) and Path(s).is_file():
        yield load_frame(s)
        return
    if not s.startswith(("http://", "https://")) and not Path(s).exists():
        raise SourceError(f"{s} does not exist")
    src = open_source(s, fps=fps, realtime=realtime) if not s.startswith("http") else MJPEGSource(s, max_frames=max_frames)
    for k, frame in enumerate(src):
        if max_frames is not None and k >= max_frames:
            return
        yield frame


def fit_roi(frame, geom):
    """Crop full camera frames to the ROI; ROI-sized frames pass through."""
    from .frame_io import crop_roi

    if (frame.height, frame.width) == geom.shape:
        return frame
    return crop_roi(frame, geom)


class Run:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.summary: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(name)
        return p

    def manifest(self) -> None:
        import scipy

        cfg = {k: v for k, v in sorted(vars(self.args).items()) if k != "func"}
        doc = {
            "subcommand": self.args.command,
            "seed": self.args.seed,
            "config": cfg,
            "versions": {
                "tacsole": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "outputs": sorted(set(self.outputs)),
            "summary": self.summary,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n",
                                                encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _load_reference(args, required: bool = True):
    from .frame_io import load_frame

    if args.reference is None:
        if required:
            raise UsageError(f"{args.command} requires --reference")
        return None
    return load_frame(args.reference)


# --------------------------------------------------------------------------- subcommands


def cmd_synth(args, run: Run) -> None:
    from . import synth
    from .pnm import write_pnm
    from .terrain import write_dataset

    geom = parse_geometry(args.geometry)
    rng = np.random.default_rng(args.seed)
    n = args.count
    kind = args.kind
    if kind == "terrain-dataset":
        write_dataset(run.out, {c: n for c in synth.TERRAIN_CLASSES}, args.seed, not args.no_blur, geom)
        run.outputs += ["reference.ppm", *(f"{c}/" for c in synth.TERRAIN_CLASSES)]
        return
    rows = []
    if kind == "press":
        write_pnm(run.path("reference.ppm"), synth.press_reference(geom).pixels)
        for i in range(n):
            off = args.offset if args.offset is not None else float(rng.uniform(-0.6, 0.6))
            frame, truth = synth.render_press(off, geom, seed=int(rng.integers(2**31)))
            write_pnm(run.path(f"frames/frame_{i:06d}.ppm"), frame.pixels)
            _write_truth_surface(run, i, truth)
            rows.append([i, f"{off:.6f}", truth.extra["n_contacts"]])
        _write_csv(run.path("truth.csv"), ["frame_index", "offset_fraction", "n_contacts"], rows)
    elif kind == "terrain":
        write_pnm(run.path("reference.ppm"), synth.terrain_reference(geom).pixels)
        for i in range(n):
            cls = args.terrain_class or synth.TERRAIN_CLASSES[i % 4]
            frame, truth = synth.render_terrain(cls, not args.no_blur, int(rng.integers(2**31)), geom)
            write_pnm(run.path(f"frames/frame_{i:06d}.ppm"), frame.pixels)
            _write_truth_surface(run, i, truth)
            run.path(f"labels/frame_{i:06d}.txt").write_text(cls + "\n", encoding="utf-8")
            rows.append([i, cls])
        _write_csv(run.path("truth.csv"), ["frame_index", "label"], rows)
    elif kind == "markers":
        shape = geom.shape
        rest, _ = synth.render_marker_grid(np.zeros((synth.N_MARKERS, 2)), shape=shape, seed=args.seed)
        write_pnm(run.path("reference.ppm"), rest.pixels)
        shift = np.array([float(v) for v in args.shift.split(",")]) if args.shift else None
        for i in range(n):
            t = shift if shift is not None else rng.uniform(-5, 5, 2)
            frame, truth = synth.render_marker_grid(np.tile(t, (synth.N_MARKERS, 1)), args.dropout,
                                                    int(rng.integers(2**31)), shape)
            write_pnm(run.path(f"frames/frame_{i:06d}.ppm"), frame.pixels)
            _write_csv(run.path(f"shear_truth/frame_{i:06d}.csv"),
                       ["node_row", "node_col", "x_px", "y_px", "dx_px", "dy_px", "occluded"],
                       [[k // synth.MARKER_COLS, k % synth.MARKER_COLS, f"{x:.4f}", f"{y:.4f}",
                         f"{v[0]:.6f}", f"{v[1]:.6f}", int(o)]
                        for k, ((x, y), v, o) in enumerate(zip(truth.nominal, truth.vectors, truth.occluded))])
            rows.append([i, f"{t[0]:.6f}", f"{t[1]:.6f}", int(truth.occluded.sum())])
        _write_csv(run.path("truth.csv"), ["frame_index", "dx_px", "dy_px", "n_occluded"], rows)
    elif kind in ("sphere", "calibration"):
        shape = geom.shape
        write_pnm(run.path("reference.ppm"), synth.reference_image(shape))
        images = synth.render_calibration_images(n, args.seed, shape,
                                                 flicker_fraction=args.flicker if kind == "calibration" else 0.0)
        for i, (frame, ann) in enumerate(images):
            write_pnm(run.path(f"frames/frame_{i:06d}.ppm"), frame.pixels)
            rows.append([i, f"{ann.center_px[0]:.6f}", f"{ann.center_px[1]:.6f}", f"{ann.diameter_px:.6f}",
                         f"{ann.radius_mm:.6f}", f"{ann.pitch_mm:.6f}"])
        _write_csv(run.path("annotations.csv"),
                   ["frame_index", "center_x", "center_y", "diameter_px", "radius_mm", "pitch_mm"], rows)
    run.summary["frames"] = n


def _write_truth_surface(run: Run, i: int, truth) -> None:
    from .depth import write_depth_pgm, write_gradients_csv

    write_depth_pgm(run.path(f"depth/frame_{i:06d}.pgm"), truth.depth)
    write_gradients_csv(run.path(f"gradients/frame_{i:06d}.csv"), truth.gx, truth.gy)


def _read_annotations(path: Path):
    from .synth import SphereAnnotation

    anns = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            anns[int(r["frame_index"])] = SphereAnnotation(
                (float(r["center_x"]), float(r["center_y"])), float(r["diameter_px"]),
                float(r["radius_mm"]), float(r["pitch_mm"]))
    return anns


def _calibration_set(args):
    from .depth import CalibrationConfig, build_calibration_set
    from .frame_io import DirectorySource, load_frame
    from .synth import reference_image, render_calibration_images
    from .frame_io import TactileFrame

    cfg = _dataclass_from(CalibrationConfig, {"seed": args.seed, **_json_config(args.config).get("calibration", {})})
    if args.input:
        root = Path(args.input)
        anns = _read_annotations(root / "annotations.csv")
        ref = load_frame(args.reference or root / "reference.ppm")
        frames_dir = root / "frames" if (root / "frames").is_dir() else root
        images = ((f, anns[f.frame_index]) for f in DirectorySource(frames_dir))
    else:
        geom = parse_geometry(args.geometry)
        ref = TactileFrame(reference_image(geom.shape))
        images = render_calibration_images(args.count, args.seed, geom.shape, flicker_fraction=args.flicker)
    return build_calibration_set(images, ref, cfg)


def _save_calibration(cal, path: Path) -> None:
    np.savez(path, features=cal.features, targets=cal.targets, train=cal.train, image_id=cal.image_id,
             image_shape=np.array(cal.image_shape), culled=np.array(cal.culled, dtype=np.int64))


def _load_calibration(path: Path):
    from .depth import CalibrationSet

    with np.load(path) as z:
        return CalibrationSet(z["features"], z["targets"], z["train"], z["image_id"],
                              image_shape=tuple(int(v) for v in z["image_shape"]),
                              culled=[int(v) for v in z["culled"]])


def cmd_calibrate(args, run: Run) -> None:
    cal = _calibration_set(args)
    _save_calibration(cal, run.path("calibration.npz"))
    run.summary.update(n_train=cal.n_train, n_test=cal.n_test, culled=len(cal.culled))


def cmd_train_depth(args, run: Run) -> None:
    from .depth import TrainConfig, save_model, train_gradient_mlp

    if args.input and Path(args.input).is_file():
        cal = _load_calibration(Path(args.input))
    else:
        cal = _calibration_set(args)
    cfg = _dataclass_from(TrainConfig, {"seed": args.seed, **_json_config(args.config).get("train", {})})
    model = train_gradient_mlp(cal, cfg)
    save_model(model, run.path("gradient_mlp.bin"))
    _write_csv(run.path("depth_training.csv"), ["epoch", "loss"],
               [[i + 1, f"{v:.9e}"] for i, v in enumerate(model.history["epoch_loss"])])
    run.summary.update(train_mse=model.history["train_mse"], test_mse=model.history["test_mse"],
                       n_train=cal.n_train, n_test=cal.n_test)
    print(f"test MSE {model.history['test_mse']:.6f}")


def cmd_depth(args, run: Run) -> None:
    from .depth import integrate_poisson, load_model, predict_gradients, write_depth_pgm, write_gradients_csv

    model = load_model(_require(args, "model"))
    rows = []
    for frame in iter_frames(_require(args, "input")):
        g = predict_gradients(model, frame)
        dm, info = integrate_poisson(g, args.boundary, pitch_mm=args.pitch_mm)
        z = dm.z
        r, c = np.unravel_index(int(np.argmax(z)), z.shape)
        write_depth_pgm(run.path(f"depth/depth_{frame.frame_index:06d}.pgm"), z)
        if args.gradients:
            write_gradients_csv(run.path(f"gradients/grad_{frame.frame_index:06d}.csv"), g.gx, g.gy, False)
        rows.append([frame.frame_index, r, c, f"{z[r, c]:.6f}", info.iterations, f"{info.residual:.3e}", info.stop])
    _write_csv(run.path("depth.csv"),
               ["frame_index", "peak_row", "peak_col", "peak_depth", "iterations", "residual", "stop"], rows)
    run.summary["frames"] = len(rows)


def cmd_shear(args, run: Run) -> None:
    from .pnm import write_pnm
    from .shear import detect_markers, interpolate_missing, render_shear_overlay, track_displacements

    rest = detect_markers(_load_reference(args))
    n = 0
    for frame in iter_frames(_require(args, "input")):
        field = track_displacements(rest, detect_markers(frame, threshold=args.threshold), frame.timestamp)
        if (~field.detected).any():
            field = interpolate_missing(field)
        field.to_csv(run.path(f"shear/shear_{frame.frame_index:06d}.csv"))
        write_pnm(run.path(f"shear/shear_{frame.frame_index:06d}.ppm"),
                  render_shear_overlay(frame, field, args.gain))
        n += 1
    run.summary["frames"] = n


def cmd_pose(args, run: Run) -> None:
    from .contact import DEFAULT_THRESHOLD, estimate_pose, render_pose_overlay, segment_contact
    from .frame_io import diff_reference
    from .pnm import write_pnm

    ref = _load_reference(args, required=args.diff_mode == "reference")
    thr = DEFAULT_THRESHOLD if args.threshold is None else int(args.threshold)
    rows = []
    prev = ref
    for frame in iter_frames(_require(args, "input")):
        base = ref if args.diff_mode == "reference" else (prev if prev is not None else frame)
        poses = estimate_pose(segment_contact(diff_reference(frame, base), thr, args.min_area))
        for i, p in enumerate(poses, start=1):
            rows.append([frame.frame_index, i, f"{p.centroid[0]:.4f}", f"{p.centroid[1]:.4f}",
                         f"{p.orientation_deg:.4f}", f"{p.major:.4f}", f"{p.minor:.4f}", p.area, int(p.degenerate)])
        if args.overlays:
            write_pnm(run.path(f"pose/pose_{frame.frame_index:06d}.ppm"), render_pose_overlay(frame, poses))
        prev = frame
    _write_csv(run.path("pose.csv"), ["frame_index", "component", "centroid_row", "centroid_col",
                                      "orientation_deg", "major", "minor", "area", "degenerate"], rows)
    run.summary["rows"] = len(rows)


def _cop_band(args) -> tuple[int, int]:
    from .cop import BAND

    return (int(args.threshold), 255) if args.threshold is not None else BAND


def cmd_cop(args, run: Run) -> None:
    from .cop import cop_from_frame, render_cop_overlay, write_trace
    from .pnm import write_pnm

    geom = parse_geometry(args.geometry)
    ests = []
    for frame in iter_frames(_require(args, "input")):
        frame = fit_roi(frame, geom)
        est = cop_from_frame(frame, geom, args.safe_fraction, _cop_band(args), args.cop_mode)
        ests.append(est)
        if args.overlays:
            write_pnm(run.path(f"cop/cop_{frame.frame_index:06d}.ppm"), render_cop_overlay(frame, est))
    write_trace(ests, run.path("cop_trace.csv"))
    run.summary["frames"] = len(ests)
    run.summary["unsafe"] = sum(e.status == "unsafe" for e in ests)


def _terrain_xy(path: str | None, counts: dict, seed: int, args):
    from .terrain import load_dataset_features, synth_features

    geom = parse_geometry(args.geometry)
    if path:
        ref = _load_reference(args, required=False)
        return load_dataset_features(path, ref, geom)
    return synth_features(counts, seed, not args.no_blur, geom)


def cmd_train_terrain(args, run: Run) -> None:
    from .synth import TERRAIN_CLASSES
    from .terrain import PAPER_COUNTS, TerrainTrainConfig, save_model, train_classifier

    counts = PAPER_COUNTS if args.count is None else {c: args.count for c in TERRAIN_CLASSES}
    X, y = _terrain_xy(args.input, counts, args.seed, args)
    Xv, yv = _terrain_xy(args.val, {c: 100 for c in TERRAIN_CLASSES}, args.seed + 1, args)
    cfg = _dataclass_from(TerrainTrainConfig, {"seed": args.seed, **_json_config(args.config).get("train", {})})
    model = train_classifier(X, y, Xv, yv, cfg)
    save_model(model, run.path("terrain_model.bin"))
    h = model.history
    _write_csv(run.path("terrain_training.csv"), ["epoch", "train_loss", "val_loss", "val_acc"],
               [[i + 1, f"{a:.9e}", f"{b:.9e}", f"{c:.6f}"]
                for i, (a, b, c) in enumerate(zip(h["train_loss"], h["val_loss"], h["val_acc"]))])
    run.summary.update(train_acc=h["train_acc"], val_acc=h["val_acc"][h["best_epoch"] - 1],
                       best_epoch=h["best_epoch"], n_train=len(X), n_val=len(Xv))
    print(f"validation accuracy {run.summary['val_acc']:.4f}")


def cmd_classify(args, run: Run) -> None:
    from .terrain import classify, load_model

    model = load_model(_require(args, "model"))
    ref = _load_reference(args)
    geom = parse_geometry(args.geometry)
    rows = []
    for frame in iter_frames(_require(args, "input")):
        p = classify(model, frame, ref, geom)
        rows.append([frame.frame_index, p.label, *(f"{p.confidence[c]:.6f}" for c in model.classes)])
    _write_csv(run.path("classify.csv"), ["frame_index", "label", *(f"p_{c}" for c in model.classes)], rows)
    run.summary["frames"] = len(rows)


def cmd_confusion(args, run: Run) -> None:
    from .pnm import write_pnm
    from .synth import TERRAIN_CLASSES
    from .terrain import confusion_heatmap, confusion_matrix, load_model, write_confusion_csv

    model = load_model(_require(args, "model"))
    n = 100 if args.count is None else args.count
    X, y = _terrain_xy(args.input, {c: n for c in TERRAIN_CLASSES}, args.seed + 2, args)
    cm = confusion_matrix(model, X, y)
    write_confusion_csv(cm, model.classes, run.path("confusion.csv"))
    write_pnm(run.path("confusion.ppm"), confusion_heatmap(cm))
    run.summary["diagonal"] = {c: float(cm[i, i]) for i, c in enumerate(model.classes)}
    print(" ".join(f"{c}={cm[i, i]:.1f}%" for i, c in enumerate(model.classes)))


def _balance_config(args):
    from .balance import load_config

    return load_config(args.config, seed=args.seed, mode=args.mode, safe_fraction=args.safe_fraction)


def cmd_simulate(args, run: Run) -> None:
    from .balance import PlatformScenario, run_trial

    cfg = _balance_config(args)
    sc = PlatformScenario(args.angle, args.speed, args.direction)
    res = run_trial(sc, not args.no_feedback, cfg, parse_geometry(args.geometry))
    res.write_trace(run.path("trial_trace.csv"))
    run.summary.update(scenario=sc.name, feedback=res.feedback, success=res.success,
                       max_abs_offset=res.max_abs_offset, mode=cfg.mode)
    print(f"{sc.name} feedback={'on' if res.feedback else 'off'} -> {'success' if res.success else 'failure'}")


def cmd_matrix(args, run: Run) -> None:
    from .balance import run_matrix, write_matrix_outputs

    cfg = _balance_config(args)
    results = run_matrix(cfg, parse_geometry(args.geometry))
    files = write_matrix_outputs(results, cfg, run.out)
    run.outputs += list(files.values())
    on = [r for r in results if r.feedback]
    run.summary.update(mode=cfg.mode, scale_deg=cfg.scale_deg,
                       successes_feedback_on=sum(r.success for r in on),
                       successes_feedback_off=sum(r.success for r in results if not r.feedback))
    for r in results:
        print(f"{r.scenario.name:28s} feedback={'on ' if r.feedback else 'off'} "
              f"{'success' if r.success else 'failure'}")


def _replay_handlers(args, geom, pipelines):
    """Per-pipeline (header, fn(frame) -> rows) pairs."""
    handlers = {}
    ref = None
    if set(pipelines) & {"shear", "pose", "terrain"}:
        ref = fit_roi(_load_reference(args), geom)
    if "cop" in pipelines:
        from .cop import TRACE_COLUMNS, cop_from_frame, cop_row_fields

        band = _cop_band(args)
        handlers["cop"] = (TRACE_COLUMNS,
                           lambda f: [cop_row_fields(cop_from_frame(f, geom, args.safe_fraction, band, args.cop_mode))])
    if "depth" in pipelines:
        from .depth import integrate_poisson, load_model, predict_gradients

        model = load_model(_require(args, "model"))

        def _depth(f):
            dm, info = integrate_poisson(predict_gradients(model, f), args.boundary, pitch_mm=args.pitch_mm)
            r, c = np.unravel_index(int(np.argmax(dm.z)), dm.z.shape)
            return [[f.frame_index, r, c, f"{dm.z[r, c]:.6f}", info.iterations]]

        handlers["depth"] = (["frame_index", "peak_row", "peak_col", "peak_depth", "iterations"], _depth)
    if "shear" in pipelines:
        from .shear import detect_markers, interpolate_missing, track_displacements

        rest = detect_markers(ref)

        def _shear(f):
            fld = track_displacements(rest, detect_markers(f), f.timestamp)
            if (~fld.detected).any() and fld.detected.sum() >= 3:
                fld = interpolate_missing(fld)
            return [[f.frame_index, i, f"{fld.vectors[i, 0]:.4f}", f"{fld.vectors[i, 1]:.4f}", fld.provenance[i]]
                    for i in range(len(fld.vectors))]

        handlers["shear"] = (["frame_index", "node", "dx_px", "dy_px", "provenance"], _shear)
    if "pose" in pipelines:
        from .contact import DEFAULT_THRESHOLD, estimate_pose, segment_contact
        from .frame_io import diff_reference

        def _pose(f):
            poses = estimate_pose(segment_contact(diff_reference(f, ref), DEFAULT_THRESHOLD, args.min_area))
            return [[f.frame_index, i, f"{p.centroid[0]:.4f}", f"{p.centroid[1]:.4f}", f"{p.orientation_deg:.4f}",
                     p.area] for i, p in enumerate(poses, start=1)]

        handlers["pose"] = (["frame_index", "component", "centroid_row", "centroid_col", "orientation_deg", "area"],
                            _pose)
    if "terrain" in pipelines:
        from .terrain import classify, load_model as load_terrain

        tmodel = load_terrain(_require(args, "terrain_model"))

        def _terrain(f):
            p = classify(tmodel, f, ref, geom)
            return [[f.frame_index, p.label, f"{p.top:.6f}"]]

        handlers["terrain"] = (["frame_index", "label", "confidence"], _terrain)
    return handlers


def cmd_replay(args, run: Run) -> None:
    from .frame_io import LatestFrameBuffer, pump

    geom = parse_geometry(args.geometry)
    pipelines = [p.strip() for p in args.pipelines.split(",") if p.strip()]
    bad = [p for p in pipelines if p not in PIPELINES]
    if not pipelines or bad:
        raise UsageError(f"--pipelines must name one or more of {','.join(PIPELINES)}")
    handlers = _replay_handlers(args, geom, pipelines)
    rows = {p: [] for p in pipelines}
    lat = {p: [] for p in pipelines}
    lat_rows = []
    source = iter_frames(_require(args, "input"), args.fps, args.realtime, args.max_frames)
    if args.realtime:
        buf = LatestFrameBuffer()
        pump(source, buf)

        def frames():
            while True:
                f = buf.get()
                if f is None:
                    return
                yield f

        feed = frames()
    else:
        feed = source
    n = 0
    for frame in feed:
        frame = fit_roi(frame, geom)
        for p in pipelines:
            t0 = time.perf_counter()
            out = handlers[p][1](frame)
            ms = (time.perf_counter() - t0) * 1e3
            rows[p].extend(out)
            lat[p].append(ms)
            lat_rows.append([frame.frame_index, p, f"{ms:.3f}"])
        n += 1
    for p in pipelines:
        _write_csv(run.path(f"replay_{p}.csv"), handlers[p][0], rows[p])
    _write_csv(run.path("latency.csv"), ["frame_index", "pipeline", "ms"], lat_rows)
    stats = {}
    for p in pipelines:
        a = np.array(lat[p]) if lat[p] else np.array([np.nan])
        stats[p] = {"median_ms": float(np.median(a)), "p95_ms": float(np.percentile(a, 95))}
        print(f"{p}: {len(lat[p])} frames, median {stats[p]['median_ms']:.2f} ms, p95 {stats[p]['p95_ms']:.2f} ms")
    run.summary.update(frames=n, latency=stats)


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="image file, frame directory, dataset directory or MJPEG URL")
    common.add_argument("--reference", help="reference (no-contact / rest) frame")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON config file, or 'default'")
    common.add_argument("--geometry", help="ROI size as WxH (default 114x143)")
    common.add_argument("--threshold", type=float, help="segmentation threshold (meaning per subcommand)")
    common.add_argument("--safe-fraction", type=float, default=0.25)
    common.add_argument("--mode", choices=("full", "direct"), help="balance loop mode")
    common.add_argument("--pipelines", default="cop", help="replay pipelines, comma separated")

    p = argparse.ArgumentParser(prog="tacsole", description="Tactile foot-sole perception and balance toolkit.")
    p.add_argument("--version", action="version", version=f"tacsole {__version__}")
    sub = p.add_subparsers(dest="command", metavar="subcommand")

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func)
        return sp

    s = add("synth", cmd_synth, "render synthetic frames with ground truth")
    s.add_argument("--kind", choices=("press", "terrain", "terrain-dataset", "markers", "sphere", "calibration"),
                   default="press")
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--offset", type=float, help="press: fixed CoP offset fraction")
    s.add_argument("--terrain-class", choices=("blank", "rock", "spike", "tile"))
    s.add_argument("--no-blur", action="store_true", help="terrain: disable fabric blur")
    s.add_argument("--shift", help="markers: uniform translation dx,dy in px")
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--flicker", type=float, default=0.1, help="calibration: fraction of bad-lighting images")

    for name, func, help_ in (("calibrate", cmd_calibrate, "build the gradient calibration set"),
                              ("train-depth", cmd_train_depth, "train the gradient MLP")):
        s = add(name, func, help_)
        s.add_argument("--count", type=int, default=5000, help="synthetic calibration images when no --input")
        s.add_argument("--flicker", type=float, default=0.1)

    s = add("depth", cmd_depth, "reconstruct depth maps from frames")
    s.add_argument("--model", help="gradient MLP file")
    s.add_argument("--boundary", choices=("dirichlet", "neumann"), default="dirichlet")
    s.add_argument("--pitch-mm", type=float, default=0.5)
    s.add_argument("--gradients", action="store_true", help="also write per-pixel gradient CSVs")

    s = add("shear", cmd_shear, "track marker displacements against the rest frame")
    s.add_argument("--gain", type=float, default=3.0)

    s = add("pose", cmd_pose, "contact pose from frame differences")
    s.add_argument("--diff-mode", choices=("reference", "previous"), default="reference")
    s.add_argument("--min-area", type=int, default=20)
    s.add_argument("--overlays", action="store_true")

    s = add("cop", cmd_cop, "centre of pressure trace")
    s.add_argument("--cop-mode", choices=("pixel", "contour"), default="pixel")
    s.add_argument("--overlays", action="store_true")

    s = add("train-terrain", cmd_train_terrain, "train the terrain classifier")
    s.add_argument("--count", type=int, help="synthetic images per class (default: reference dataset counts)")
    s.add_argument("--val", help="validation dataset directory")
    s.add_argument("--no-blur", action="store_true")

    s = add("classify", cmd_classify, "classify terrain frames")
    s.add_argument("--model", help="terrain model file")

    s = add("confusion", cmd_confusion, "row-normalised confusion matrix on a test set")
    s.add_argument("--model", help="terrain model file")
    s.add_argument("--count", type=int, help="synthetic test images per class (default 100)")
    s.add_argument("--no-blur", action="store_true")

    s = add("simulate", cmd_simulate, "run one balance trial")
    s.add_argument("--direction", choices=("declined", "inclined"), default="declined")
    s.add_argument("--angle", type=float, default=5.0)
    s.add_argument("--speed", type=float, default=0.1)
    s.add_argument("--no-feedback", action="store_true")

    add("matrix", cmd_matrix, "run the full balance experiment matrix")

    s = add("replay", cmd_replay, "run perception pipelines over a frame source")
    s.add_argument("--model", help="gradient MLP file (depth pipeline)")
    s.add_argument("--terrain-model", help="terrain model file (terrain pipeline)")
    s.add_argument("--cop-mode", choices=("pixel", "contour"), default="pixel")
    s.add_argument("--boundary", choices=("dirichlet", "neumann"), default="dirichlet")
    s.add_argument("--pitch-mm", type=float, default=0.5)
    s.add_argument("--min-area", type=int, default=20)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--realtime", action="store_true", help="pace the source and keep only the latest frame")
    s.add_argument("--max-frames", type=int)
    return p


def setup_logging() -> None:
    level = os.environ.get("TACSOLE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    run = Run(args)
    try:
        args.func(args, run)
    except UsageError as exc:
        print(f"tacsole {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (TacsoleError, OSError, ValueError, KeyError) as exc:
        print(f"tacsole {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        run.manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
