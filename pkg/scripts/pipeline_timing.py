"""Time synth -> train -> select -> evaluate through the command line.

    python scripts/pipeline_timing.py --out /tmp/pipe --trees 10 --runs 1

The default dataset is 12 homes x 47 days at about 2000 flows per home-day.
Each step runs as its own ``python -m iotdrift`` process.
"""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

FULL = {"n_homes": 12, "n_classes": 8, "days": 47, "flows_per_class_per_day": 250,
        "context_offset_scale": 0.5, "n_contexts": 3, "noise_sigma": 1.0, "seed": 0}
SEEN = "H01,H02,H03,H04,H05"


def steps(out: Path, trees: int, runs: int, seed: int) -> list[list[str]]:
    data, reg, rep = str(out / "data"), str(out / "registry"), str(out / "report")
    forest = ["--trees", str(trees), "--seed", str(seed)]
    return [
        ["synth", "--spec", str(out / "spec.json"), "--data", data, "--seed", str(seed)],
        ["train", "--data", data, "--registry", reg, "--homes", SEEN, *forest],
        ["select", "--data", data, "--registry", reg, "--report", str(out / "select"),
         "--policy", "distance", "--metric", "ks", "--regime", "dynamic", "--seed", str(seed)],
        ["evaluate", "--data", data, "--report", rep, "--runs", str(runs), "--n-seen", "5", *forest],
    ]


def run_pipeline(out: Path, spec: dict, trees: int, runs: int, seed: int) -> dict[str, float]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec, sort_keys=True))
    times = {}
    for argv in steps(out, trees, runs, seed):
        t0 = time.perf_counter()
        subprocess.run([sys.executable, "-m", "iotdrift", *argv], check=True, stdout=subprocess.DEVNULL)
        times[argv[0]] = time.perf_counter() - t0
    times["total"] = sum(times.values())
    return times


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--trees", type=int, default=10)
    ap.add_argument("--runs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--flows-per-class", type=float, default=FULL["flows_per_class_per_day"])
    args = ap.parse_args()
    spec = {**FULL, "flows_per_class_per_day": args.flows_per_class}
    times = run_pipeline(args.out, spec, args.trees, args.runs, args.seed)
    for step, secs in times.items():
        print(f"{step:>8}: {secs:7.1f}s")


if __name__ == "__main__":
    main()
