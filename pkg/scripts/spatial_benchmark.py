"""Spatial drift benchmark: how close score-distance selection gets to the oracle.

    python scripts/spatial_benchmark.py --runs 10 --out /tmp/spatial

Eight synthetic homes in three contexts; five are seen in each run. Prints the
summary tables and, with --out, writes the per-run CSVs next to them.
"""
from __future__ import annotations

import argparse
import time

from iotdrift.evaluation import ExperimentConfig, run_experiment, summary_text, write_reports
from iotdrift.synthgen import DriftSpec, generate_tables


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--offset", type=float, default=0.5, help="context_offset_scale")
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--flows-per-class", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--data-seed", type=int, default=11)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    spec = DriftSpec(n_homes=8, n_classes=6, days=47, flows_per_class_per_day=args.flows_per_class,
                     context_offset_scale=args.offset, n_contexts=3, noise_sigma=args.noise, seed=args.data_seed)
    cfg = ExperimentConfig(n_seen=5, n_runs=args.runs, n_trees=args.trees, seed=args.seed)
    t0 = time.perf_counter()
    reports = run_experiment(generate_tables(spec), cfg)
    print(summary_text(reports, cfg))
    if args.out:
        write_reports(reports, args.out, cfg)
    print(f"{args.runs} runs in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
