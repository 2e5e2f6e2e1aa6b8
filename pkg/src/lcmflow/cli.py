"""Command-line pipeline: synth, calibrate, evalfit, egomotion, report.

Every command writes ``run.json`` next to its outputs with the full
configuration, the seed and SHA-256 hashes of the files it produced.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .egomotion import (LCMSAC_LEVEL, RANSAC_THRESHOLD, TEXTURE_CUTOFF, LcmsacEgomotion,
                        RansacEgomotion, drift_rate, run_odometry, write_trajectory)
from .exceptions import CalibrationError, DomainError, NumericalError
from .flow import LkParams
from .geometry import CameraModel
from .likelihood import LcmLikelihood, ParamLut, TrainingSet
from .likelihood.evaluation import binned_ks
from .synth import SceneSpec, SynthDataset, TrajectorySpec, build_dataset, collect_training_set

log = logging.getLogger("lcmflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options that have none."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this pipeline reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_run(out_dir, command, args, artifacts):
    """Echo the configuration and hash every artifact into ``out_dir/run.json``."""
    out_dir = Path(out_dir)
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    hashes = {str(Path(a).relative_to(out_dir)): sha256_file(a) for a in sorted(artifacts)}
    write_json(out_dir / "run.json", {"command": command, "version": __version__,
                                      "seed": config.get("seed"), "config": config,
                                      "artifacts": hashes})


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x):
    return "nan" if x is None or not np.isfinite(x) else repr(float(x))


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    out = Path(args.out or f"synth-{args.traj}-{args.seed}")
    camera = CameraModel(args.width, args.height, np.deg2rad(args.fov_deg))
    scene = SceneSpec(args.distance, args.band_low, args.band_high, args.contrast, args.seed,
                      args.coverage)
    traj = TrajectorySpec(args.traj, args.span, args.frames, args.frame_rate)
    lk = LkParams(args.window, args.max_level, args.max_iters, args.eps)
    manifest = build_dataset(out, scene, traj, camera, lk, sparse_step=args.sparse_step,
                             structure_window=args.window, pair_step=args.pair_step,
                             pair_offset=args.pair_offset)
    artifacts = sorted(p for p in out.iterdir() if p.name != "run.json")
    write_run(out, "synth", args, artifacts)
    log.info("wrote %d frame pairs to %s", manifest["pairs"], out)
    return EXIT_OK


def _training_set(args):
    data = collect_training_set([SynthDataset(p) for p in args.data], args.flow)
    if len(data) == 0:
        raise DomainError("no usable flow samples in the given datasets")
    if args.max_samples and len(data) > args.max_samples:
        rng = np.random.default_rng(args.seed)
        keep = np.sort(rng.choice(len(data), args.max_samples, replace=False))
        data = TrainingSet(data.z[keep], data.t[keep])
    return data


def cmd_calibrate(args):
    data = _training_set(args)
    model = LcmLikelihood(n_knots=args.knots, min_bin_samples=args.min_bin_samples,
                          n_restarts=args.restarts, random_state=args.seed)
    model.fit(data.t, data.z)
    out = _out_dir(args.out)
    lut_path = out / "lut.json"
    model.lut_.save(lut_path)
    rows = binned_ks(data, model.lut_, min_samples=args.min_bin_samples)
    bins_path = out / "bins.csv"
    with open(bins_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["knot", "bin_lo", "bin_hi", "n", "median_abs_z", "beta", "gamma", "w_l",
                    "ks_lcm", "ks_gauss", "ks_loglogistic"])
        for k, (beta, gamma, w_l), row in zip(model.lut_.knots, model.lut_.entries, rows):
            w.writerow([_fmt(k), _fmt(row.lo), _fmt(row.hi), row.n, _fmt(row.median_abs),
                        _fmt(beta), _fmt(gamma), _fmt(w_l), _fmt(row.ks_lcm),
                        _fmt(row.ks_gauss), _fmt(row.ks_loglogistic)])
    summary = {"n_samples": len(data), "cost": model.cost_, "initial_cost": model.initial_cost_,
               "dropped_knots": {repr(k): v for k, v in model.dropped_knots_.items()}}
    write_json(out / "fit.json", summary)
    write_run(out, "calibrate", args, [lut_path, bins_path, out / "fit.json"])
    if model.dropped_knots_:
        log.warning("dropped starved knots: %s", summary["dropped_knots"])
    return EXIT_OK


def cmd_evalfit(args):
    lut = ParamLut.load(args.lut)
    data = _training_set(args)
    rows = binned_ks(data, lut, min_samples=args.min_bin_samples)
    out = _out_dir(args.out)
    path = out / "ks.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "n", "ks_lcm", "ks_gauss", "ks_loglogistic"])
        for row in rows:
            w.writerow([_fmt(row.lo), _fmt(row.hi), row.n, _fmt(row.ks_lcm), _fmt(row.ks_gauss),
                        _fmt(row.ks_loglogistic)])
    write_run(out, "evalfit", args, [path])
    return EXIT_OK


def make_estimator(name, flow, lut, seed, max_iters=200, confidence=0.99, threshold=None,
                   texture_cutoff=TEXTURE_CUTOFF):
    """Estimator configured as the benchmark runs it: LCMSAC drops low texture on dense flow."""
    if name == "ransac":
        return RansacEgomotion(max_iters=max_iters, confidence=confidence,
                               inlier_threshold=threshold or RANSAC_THRESHOLD, random_state=seed)
    if lut is None:
        raise UsageError("lcmsac needs --lut")
    return LcmsacEgomotion(lut, max_iters=max_iters, confidence=confidence,
                           inlier_threshold=threshold or LCMSAC_LEVEL,
                           texture_cutoff=texture_cutoff if flow == "dense" else None,
                           random_state=seed)


def odometry_metrics(result, truth, *, estimator, flow, seed, trajectory):
    """Drift and per-frame errors of an odometry run, as a JSON-ready dict."""
    est = result.poses
    per_frame = []
    for k in range(1, len(truth)):
        step_est = est[k].position - est[k - 1].position
        step_true = truth[k].position - truth[k - 1].position
        per_frame.append({
            "k": k,
            "position_error_m": float(np.linalg.norm(est[k].position - truth[k].position)),
            "step_error_m": float(np.linalg.norm(step_est - step_true)),
            "attitude_error_rad": float(np.max(np.abs(
                np.angle(np.exp(1j * (est[k].orientation - truth[k].orientation)))))),
            "inlier_ratio": result.inlier_ratios[k - 1],
            "n_trials": result.n_trials[k - 1],
            "success": result.success[k - 1],
        })
    pos = np.array([p.position for p in truth])
    return {
        "estimator": estimator, "flow": flow, "seed": seed, "trajectory": trajectory,
        "frames": len(truth),
        "path_length_m": float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1))),
        "drift_percent": drift_rate(est, truth),
        "final_error_m": per_frame[-1]["position_error_m"],
        "mean_inlier_ratio": float(np.mean(result.inlier_ratios)),
        "per_frame": per_frame,
    }


def cmd_egomotion(args):
    if args.estimator == "lcmsac" and not args.lut:
        raise UsageError("lcmsac needs --lut")
    ds = SynthDataset(args.data)
    if not ds.consecutive:
        raise DomainError(f"{args.data} skips frame pairs (pair_step > 1); odometry needs all")
    lut = ParamLut.load(args.lut) if args.lut else None
    estimator = make_estimator(args.estimator, args.flow, lut, args.seed, args.max_iters,
                               args.confidence, args.threshold, args.texture_cutoff)
    stride = args.dense_stride if args.flow in ("dense", "gt") else 1
    result = run_odometry(ds.pairs(args.flow, stride), estimator, ds.camera, ds.poses[0])
    metrics = odometry_metrics(result, ds.poses, estimator=args.estimator, flow=args.flow,
                               seed=args.seed, trajectory=ds.trajectory.kind)
    metrics["dataset"] = str(args.data)
    out = _out_dir(args.out)
    traj_path, metrics_path = out / "trajectory.csv", out / "metrics.json"
    write_trajectory(traj_path, result.poses)
    write_json(metrics_path, metrics)
    write_run(out, "egomotion", args, [traj_path, metrics_path])
    log.info("%s/%s drift %.3f%%", args.estimator, args.flow, metrics["drift_percent"])
    return EXIT_OK


REPORT_COLUMNS = ["label", "trajectory", "flow", "estimator", "seed", "drift_pct",
                  "delta_pct", "reduction_pct"]


def report_rows(metrics, labels):
    """Rows for the summary table; deltas are against the first row."""
    ref = metrics[0]["drift_percent"]
    rows = []
    for label, m in zip(labels, metrics):
        d = m["drift_percent"]
        red = 100.0 * (1.0 - d / ref) if ref > 0 else float("nan")
        rows.append([label, m.get("trajectory", ""), m.get("flow", ""), m.get("estimator", ""),
                     str(m.get("seed", "")), f"{d:.3f}", f"{d - ref:+.3f}", f"{red:.3f}"])
    return rows


def format_table(header, rows):
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in [header] + rows]
    return "\n".join(lines) + "\n"


def cmd_report(args):
    metrics, labels = [], []
    for path in args.metrics:
        path = Path(path)
        metrics.append(json.loads(path.read_text()))
        labels.append(path.parent.name or path.stem)
    rows = report_rows(metrics, labels)
    text = format_table(REPORT_COLUMNS, rows)
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args.out)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(rows)
        (out / "report.txt").write_text(text)
        write_run(out, "report", args, [out / "report.csv", out / "report.txt"])
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    parser = _Parser(prog="lcmflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        return sub.add_parser(name, help=help, description=help,
                              formatter_class=_HelpFormatter)

    p = command("synth", "render a synthetic dataset")
    p.add_argument("--out", type=Path, help="output directory; synth-<traj>-<seed> if omitted")
    p.add_argument("--traj", choices=["straight", "fig8"], default="straight",
                   help="camera trajectory")
    p.add_argument("--frames", type=int, default=50,
                   help="number of frames")
    p.add_argument("--span", type=float, default=10.0,
                   help="trajectory extent in metres")
    p.add_argument("--frame-rate", type=float, default=60.0,
                   help="frames per second")
    p.add_argument("--seed", type=int, default=0,
                   help="random seed")
    p.add_argument("--distance", type=float, default=5.0,
                   help="wall distance in metres")
    p.add_argument("--band-low", type=float, default=SceneSpec.band_low,
                   help="lowest texture frequency, cycles/m")
    p.add_argument("--band-high", type=float, default=SceneSpec.band_high,
                   help="highest texture frequency, cycles/m")
    p.add_argument("--contrast", type=float, default=SceneSpec.contrast,
                   help="texture amplitude in intensity units")
    p.add_argument("--coverage", type=float, default=1.0,
                   help="fraction of the wall carrying texture")
    p.add_argument("--width", type=int, default=640,
                   help="image width in pixels")
    p.add_argument("--height", type=int, default=360,
                   help="image height in pixels")
    p.add_argument("--fov-deg", type=float, default=120.0,
                   help="horizontal field of view in degrees")
    p.add_argument("--sparse-step", type=int, default=8,
                   help="grid spacing of sparse LK points")
    p.add_argument("--pair-step", type=int, default=1,
                   help="keep every N-th frame pair only (calibration sets)")
    p.add_argument("--pair-offset", type=int, default=0,
                   help="first pair kept when --pair-step > 1")
    p.add_argument("--window", type=int, default=LkParams.window,
                   help="LK and structure-tensor window")
    p.add_argument("--max-level", type=int, default=LkParams.max_level,
                   help="deepest LK pyramid level")
    p.add_argument("--max-iters", type=int, default=LkParams.max_iters,
                   help="LK iterations per level")
    p.add_argument("--eps", type=float, default=LkParams.eps,
                   help="LK update-norm stopping threshold (px)")
    p.set_defaults(func=cmd_synth)

    def data_args(p):
        p.add_argument("--data", type=Path, nargs="+", required=True,
                       help="dataset directory(s)")
        p.add_argument("--flow", choices=["dense", "sparse"], default="dense",
                       help="which flow field to use")
        p.add_argument("--max-samples", type=int, default=None,
                       help="seeded random subsample of the pooled errors")
        p.add_argument("--min-bin-samples", type=int, default=100,
                       help="samples a texture bin needs to be fitted or scored")
        p.add_argument("--seed", type=int, default=0,
                       help="random seed")
        p.add_argument("--out", type=Path, required=True,
                       help="output directory")

    p = command("calibrate", "fit the LCM lookup table")
    data_args(p)
    p.add_argument("--knots", type=int, default=8,
                   help="number of lookup-table knots")
    p.add_argument("--restarts", type=int, default=5,
                   help="random restarts per knot")
    p.set_defaults(func=cmd_calibrate)

    p = command("evalfit", "K-S table for LCM, Gaussian and log-logistic fits")
    data_args(p)
    p.add_argument("--lut", type=Path, required=True,
                   help="lookup table JSON from calibrate")
    p.set_defaults(func=cmd_evalfit)

    p = command("egomotion", "sequential odometry with RANSAC or LCMSAC")
    p.add_argument("--data", type=Path, required=True,
                   help="dataset directory")
    p.add_argument("--lut", type=Path,
                   help="lookup table JSON from calibrate")
    p.add_argument("--estimator", choices=["ransac", "lcmsac"], required=True,
                   help="robust estimator")
    p.add_argument("--flow", choices=["dense", "sparse", "gt"], default="dense",
                   help="which flow field to use")
    p.add_argument("--seed", type=int, default=0,
                   help="random seed")
    p.add_argument("--dense-stride", type=int, default=1,
                   help="use every n-th pixel of gridded flow in each direction")
    p.add_argument("--max-iters", type=int, default=200,
                   help="maximum sampling trials")
    p.add_argument("--confidence", type=float, default=0.99,
                   help="confidence for the adaptive trial count")
    p.add_argument("--threshold", type=float, default=None,
                   help="RANSAC gate in pixels (0.5) or LCMSAC confidence level (0.9)")
    p.add_argument("--texture-cutoff", type=float, default=TEXTURE_CUTOFF,
                   help="LCMSAC drops dense samples below this texture")
    p.add_argument("--out", type=Path, required=True,
                   help="output directory")
    p.set_defaults(func=cmd_egomotion)

    p = command("report", "summary table of metrics files")
    p.add_argument("--metrics", type=Path, nargs="+", required=True,
                   help="metrics.json files; the first is the baseline")
    p.add_argument("--out", type=Path,
                   help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lcmflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CalibrationError as exc:
        print(f"lcmflow: calibration failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lcmflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, OSError, ValueError, KeyError) as exc:
        print(f"lcmflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
