"""Simulate, fuse (gated and LIO-only), evaluate and export plot series for
one config. Usage: python scripts/run_default_experiment.py [config] [outdir]
"""

import json
import sys
from pathlib import Path

from gpslio.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(config: Path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    log = ["--log", str(out / "log.jsonl"), "--scans", str(out / "scans.jsonl")]
    steps = [
        ["simulate", "--config", str(config), *log],
        ["fuse", "--config", str(config), *log, "--trajectory", str(out / "gated.csv"),
         "--map", str(out / "gated_map.xyz"), "--report", str(out / "gated_fuse")],
        ["fuse", "--config", str(config), *log, "--mode", "lio-only", "--trajectory", str(out / "lio.csv"),
         "--map", str(out / "lio_map.xyz"), "--report", str(out / "lio_fuse")],
        ["eval", "--config", str(config), str(out / "gated.csv"), str(out / "log.jsonl"),
         "--report", str(out / "gated_eval")],
        ["eval", "--config", str(config), str(out / "lio.csv"), str(out / "log.jsonl"),
         "--report", str(out / "lio_eval")],
        ["export-plots", str(out / "gated.csv"), str(out / "lio.csv"), "--labels", "gated,lio",
         "--report", str(out / "gated_fuse.json"), "--out", str(out / "series")],
    ]
    for argv in steps:
        print("$ gpslio " + " ".join(argv))
        code = main(argv)
        if code:
            sys.exit(code)
    summary = {k: json.loads((out / f"{k}_eval.json").read_text()) for k in ("gated", "lio")}
    print()
    print(f"{'':8s}{'rmse':>10s}{'rmse_z':>10s}{'end_to_end':>12s}{'dispersion':>12s}")
    for k, d in summary.items():
        disp = d["multi_run_dispersion"]
        print(f"{k:8s}{d['rmse']:10.3f}{d['rmse_z']:10.3f}{d['end_to_end']:12.3f}"
              f"{disp if disp is None else round(disp, 3)!s:>12s}")
    return summary


if __name__ == "__main__":
    cfg = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "configs" / "default.ini"
    outdir = Path(sys.argv[2]) if len(sys.argv) > 2 else ROOT / "out" / cfg.stem
    run(cfg, outdir)
