"""Command-line entry points: ``simulate``, ``fuse``, ``eval``, ``export-plots``.

Exit codes: 0 success, 2 I/O error, 3 parse error, 4 evaluation undefined.
Reports are written twice, as ``<report>.txt`` (``key: value`` lines) and
``<report>.json`` (one object).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .evaluation import MetricError, TrajectoryPair, evaluate, truth_in_session_frame
from .pipeline import (FusedTrajectory, UnsortedInputError, assemble_map, read_trajectory_csv, run,
                       write_point_cloud, write_trajectory_csv)
from .records import RecordParseError, read_jsonl, read_scans, write_jsonl, write_scans
from .simulator import simulate, simulate_scans

log = logging.getLogger("gpslio")

EXIT_OK, EXIT_IO, EXIT_PARSE, EXIT_EVAL = 0, 2, 3, 4

FUSE_REPORT_KEYS = ("mode", "uncertainty_source", "thresholds", "poses", "lio_records", "datum",
                    "dropout_count", "dropout_intervals", "gate_switches", "max_jump",
                    "switch_events", "counters", "warnings", "map_points")
EVAL_REPORT_KEYS = ("estimate", "reference", "frame", "planar", "rmse", "rmse_x", "rmse_y",
                    "rmse_z", "end_to_end", "multi_run_dispersion", "matches", "unmatched")
POSITION_SERIES_SUFFIX = "_positions.csv"
UNCERTAINTY_SERIES_SUFFIX = "_uncertainty.csv"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def meta_path(log_path) -> Path:
    return Path(str(log_path) + ".meta.json")


def _prepare_output(path) -> Path:
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create directory for {p}: {exc}") from exc
    return p


def _write_text(path, text: str) -> None:
    try:
        with open(_prepare_output(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _kv_text(d: dict) -> str:
    lines = []
    for k, v in d.items():
        lines.append(f"{k}: {json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v}")
    return "\n".join(lines) + "\n"


def write_report(stem, d: dict) -> tuple[Path, Path]:
    stem = str(stem)
    txt, js = Path(stem + ".txt"), Path(stem + ".json")
    _write_text(txt, _kv_text(d))
    _write_text(js, json.dumps(d, indent=1, sort_keys=True) + "\n")
    return txt, js


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{path}: line {exc.lineno}: {exc.msg}") from exc


# -- configuration ------------------------------------------------------------

def _parse_thresholds(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be x,y,z numbers, got {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("thresholds need exactly three values")
    return vals


def resolve_config(args) -> RunConfig:
    """Config file first, then flags (flags win)."""
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {args.config}: {exc}") from exc
    try:
        if getattr(args, "seed", None) is not None:
            cfg.scenario = replace(cfg.scenario, seed=args.seed)
        pc = cfg.pipeline
        if getattr(args, "thresholds", None) is not None:
            x, y, z = args.thresholds
            pc = replace(pc, thresholds=replace(pc.thresholds, threshold_x=x, threshold_y=y, threshold_z=z))
        if getattr(args, "uncertainty_source", None):
            pc = replace(pc, uncertainty_source=args.uncertainty_source)
        if getattr(args, "mode", None):
            pc = replace(pc, mode="lio" if args.mode == "lio-only" else args.mode)
        cfg.pipeline = pc
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    for name in ("log", "scans", "trajectory", "map", "report"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg.paths, name, val)
    if getattr(args, "planar", False):
        cfg.evaluation.planar = True
    return cfg


# -- simulate -----------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out=sys.stdout) -> dict:
    res = simulate(cfg.scenario)
    records = res.records(include_truth=True)
    log_path = _prepare_output(cfg.paths.log)
    try:
        n = write_jsonl(log_path, records)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {log_path}: {exc}") from exc
    meta = res.meta()
    counts = {k: 0 for k in ("gps", "imu", "lio", "truth")}
    for r in records:
        counts[r.kind] += 1
    meta["record_counts"] = counts
    if cfg.paths.scans:
        scans = simulate_scans(res.truth, cfg.scenario)
        try:
            write_scans(_prepare_output(cfg.paths.scans), scans)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {cfg.paths.scans}: {exc}") from exc
        meta["scan_count"] = len(scans)
    _write_text(meta_path(log_path), json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(f"wrote {n} records to {log_path}", file=out)
    for k, v in counts.items():
        print(f"  {k}: {v}", file=out)
    return meta


# -- fuse -----------------------------------------------------------------------

def _datum_dict(traj: FusedTrajectory):
    d = traj.datum
    if d is None:
        return None
    u = d.utm0
    return {"easting": u.easting, "northing": u.northing, "altitude": u.altitude, "zone": u.zone,
            "hemisphere": u.hemisphere, "roll": d.roll0, "pitch": d.pitch0, "yaw": d.yaw0}


def fuse_report(traj: FusedTrajectory, cfg: RunConfig, map_points: int | None) -> dict:
    pc = cfg.pipeline
    jumps = [s.jump for s in traj.switches]
    return {
        "mode": pc.mode,
        "uncertainty_source": pc.uncertainty_source,
        "thresholds": list(pc.thresholds.as_tuple()),
        "poses": len(traj),
        "lio_records": traj.counters.get("lio", 0),
        "datum": _datum_dict(traj),
        "dropout_count": len(traj.dropout_intervals),
        "dropout_intervals": [{"start": iv.start, "end": iv.end, "axes": sorted(iv.axes)}
                              for iv in traj.dropout_intervals],
        "gate_switches": len(traj.switches),
        "max_jump": max(jumps) if jumps else 0.0,
        "switch_events": [{"t": s.timestamp, "axis": s.axis, "to": s.to_source, "jump": s.jump}
                          for s in traj.switches],
        "counters": dict(sorted(traj.counters.items())),
        "warnings": list(traj.warnings),
        "map_points": map_points,
    }


def cmd_fuse(cfg: RunConfig, out=sys.stdout) -> dict:
    try:
        records = read_jsonl(cfg.paths.log)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {cfg.paths.log}: {exc}") from exc
    except RecordParseError as exc:
        raise CliError(EXIT_PARSE, f"{cfg.paths.log}: {exc}") from exc
    try:
        traj = run(records, cfg.pipeline)
    except UnsortedInputError as exc:
        raise CliError(EXIT_PARSE, f"{cfg.paths.log}: {exc}") from exc
    traj_path = _prepare_output(cfg.paths.trajectory)
    try:
        write_trajectory_csv(traj_path, traj)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {traj_path}: {exc}") from exc
    n_points = None
    if cfg.paths.scans and cfg.paths.map:
        try:
            scans = read_scans(cfg.paths.scans)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {cfg.paths.scans}: {exc}") from exc
        except RecordParseError as exc:
            raise CliError(EXIT_PARSE, f"{cfg.paths.scans}: {exc}") from exc
        cloud = assemble_map(traj, scans, cfg.voxel_leaf)
        try:
            write_point_cloud(_prepare_output(cfg.paths.map), cloud)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot write {cfg.paths.map}: {exc}") from exc
        n_points = int(len(cloud))
    report = fuse_report(traj, cfg, n_points)
    write_report(cfg.paths.report, report)
    print(f"wrote {len(traj)} poses to {traj_path}", file=out)
    print(f"  dropout intervals: {report['dropout_count']}, gate switches: {report['gate_switches']}",
          file=out)
    for w in traj.warnings:
        print(f"  warning: {w}", file=out)
    return report


# -- eval -------------------------------------------------------------------------

def _load_reference(path):
    """Returns (t, p, meta) from a JSONL log's truth records or a trajectory file."""
    p = Path(path)
    if p.suffix == ".jsonl":
        try:
            recs = [r for r in read_jsonl(p) if r.kind == "truth"]
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read {p}: {exc}") from exc
        except RecordParseError as exc:
            raise CliError(EXIT_PARSE, f"{p}: {exc}") from exc
        t = np.array([r.timestamp for r in recs])
        pos = np.array([r.payload.position for r in recs]).reshape(-1, 3)
        meta = _read_json(meta_path(p)) if meta_path(p).exists() else None
        return t, pos, meta, None
    tf = _load_trajectory(p)
    return tf.timestamps, tf.positions, None, tf.datum


def _load_trajectory(path):
    try:
        return read_trajectory_csv(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc


def cmd_eval(estimate, reference, cfg: RunConfig, report=None, out=sys.stdout) -> dict:
    est = _load_trajectory(estimate)
    ref_t, ref_p, meta, _ = _load_reference(reference)
    frame = "as_given"
    if meta is not None and est.datum is not None:
        # simulator truth lives in the true-start frame; move it to the session frame
        ref_p = truth_in_session_frame(ref_p, meta["true_origin_utm"], meta["true_initial_rpy"], est.datum)
        frame = "session_datum"
    loop_period = meta.get("loop_period") if meta else None
    try:
        pair = TrajectoryPair(est.timestamps, est.positions, ref_t, ref_p, cfg.evaluation.tolerance)
        closure = ref_p[0] if len(ref_p) else None
        m = evaluate(pair, loop_period=loop_period, planar=cfg.evaluation.planar,
                     align=cfg.evaluation.align, expected_closure=closure)
    except MetricError as exc:
        raise CliError(EXIT_EVAL, f"evaluation undefined: {exc}") from exc
    d = {"estimate": str(estimate), "reference": str(reference), "frame": frame,
         "planar": cfg.evaluation.planar}
    d.update(m.to_dict())
    if report:
        write_report(report, d)
    for k in ("rmse", "end_to_end", "multi_run_dispersion", "matches"):
        print(f"{k}: {d[k]}", file=out)
    return d


# -- export-plots ---------------------------------------------------------------

def cmd_export_plots(trajectories, report, out_stem, labels=None, out=sys.stdout) -> tuple[Path, Path]:
    """Positions of every trajectory resampled on the first one's timestamps,
    and the first trajectory's variance series with a dropout column."""
    if not trajectories:
        raise CliError(EXIT_PARSE, "export-plots needs at least one trajectory")
    files = [_load_trajectory(p) for p in trajectories]
    labels = list(labels) if labels else [Path(p).stem for p in trajectories]
    if len(labels) != len(files):
        raise CliError(EXIT_PARSE, "one label per trajectory is required")
    base = files[0]
    t = base.timestamps
    header = ["t"] + [f"{lab}_{ax}" for lab in labels for ax in "xyz"]
    cols = [t]
    for f in files:
        for i in range(3):
            cols.append(np.interp(t, f.timestamps, f.positions[:, i]) if len(f.timestamps) else
                        np.full(len(t), np.nan))
    pos_rows = np.stack(cols, axis=1) if len(t) else np.zeros((0, len(header)))
    intervals = []
    if report:
        rep = _read_json(report)
        try:
            intervals = [(float(iv["start"]), float(iv["end"])) for iv in rep["dropout_intervals"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(EXIT_PARSE, f"{report}: bad dropout_intervals: {exc}") from exc
    flag = np.zeros(len(t), dtype=int)
    for a, b in intervals:
        flag[(t >= a) & (t <= b)] = 1
    pos_path = Path(str(out_stem) + POSITION_SERIES_SUFFIX)
    unc_path = Path(str(out_stem) + UNCERTAINTY_SERIES_SUFFIX)
    _write_text(pos_path, _series_text(header, pos_rows))
    unc_rows = [[ti, *v, f] for ti, v, f in zip(t, base.variances, flag)]
    _write_text(unc_path, _series_text(["t", "var_x", "var_y", "var_z", "dropout"], unc_rows))
    print(f"wrote {pos_path} and {unc_path}", file=out)
    return pos_path, unc_path


def _series_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        vals = [str(int(v)) if i == len(row) - 1 and header[-1] == "dropout" else repr(float(v))
                for i, v in enumerate(row)]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpslio", description="GPS / LIO fusion toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")

    s = sub.add_parser("simulate", help="generate a sensor log from a scenario")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--log", help="output JSONL log (overrides [paths] log)")
    s.add_argument("--scans", help="output scan file (overrides [paths] scans)")

    f = sub.add_parser("fuse", help="run the fusion pipeline on a sensor log")
    common(f)
    f.add_argument("--log")
    f.add_argument("--scans")
    f.add_argument("--trajectory")
    f.add_argument("--map")
    f.add_argument("--report", help="report path stem; .txt and .json are written")
    f.add_argument("--thresholds", type=_parse_thresholds, metavar="X,Y,Z")
    f.add_argument("--uncertainty-source", choices=("filter", "gps_message"))
    f.add_argument("--mode", choices=("gated", "fusion", "lio-only", "lio"))

    e = sub.add_parser("eval", help="compare an estimated trajectory with a reference")
    common(e)
    e.add_argument("estimate")
    e.add_argument("reference", help="trajectory file, or a JSONL log with truth records")
    e.add_argument("--report", help="report path stem")
    e.add_argument("--planar", action="store_true", help="2-D RMSE")

    x = sub.add_parser("export-plots", help="write CSV series for plotting")
    x.add_argument("trajectories", nargs="+")
    x.add_argument("--report", help="fuse report JSON for dropout annotation")
    x.add_argument("--labels", help="comma-separated labels, one per trajectory")
    x.add_argument("--out", required=True, help="output path stem")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "export-plots":
            labels = args.labels.split(",") if args.labels else None
            cmd_export_plots(args.trajectories, args.report, args.out, labels)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.verb == "simulate":
            cmd_simulate(cfg)
        elif args.verb == "fuse":
            cmd_fuse(cfg)
        elif args.verb == "eval":
            cmd_eval(args.estimate, args.reference, cfg, args.report)
    except CliError as exc:
        print(f"gpslio {args.verb}: error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
