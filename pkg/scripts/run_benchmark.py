#!/usr/bin/env python3
"""Run the synthetic length sweep and print a summary table.

Writes the per-run rows to <out-dir>/report.csv and the aggregates to
<out-dir>/summary.csv, then prints one summary line per (length, algorithm).
"""

import argparse
import pathlib
import sys
import time

from betahmm import FtdConfig, SynthConfig, run_benchmark


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--states", type=int, default=4)
    parser.add_argument("--cells", type=int, default=1)
    parser.add_argument(
        "--lengths",
        type=lambda s: tuple(int(x) for x in s.split(",")),
        default=(128, 256, 512, 1024, 2048, 4096, 8192),
        help="comma-separated sequence lengths",
    )
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--coverage", type=float, default=25.0)
    parser.add_argument("--diag-weight", type=float, default=0.2)
    parser.add_argument("--granularity", type=int, default=30)
    parser.add_argument("--threads", type=int, default=4)
    parser.add_argument("--out-dir", type=pathlib.Path, default=pathlib.Path("bench_out"))
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    cfg = SynthConfig(
        num_states=args.states,
        num_cells=args.cells,
        diag_weight=args.diag_weight,
        coverage_mean=args.coverage,
        lengths=args.lengths,
        trials=args.trials,
        seed=args.seed,
        ftd=FtdConfig(granularity=args.granularity),
    )
    start = time.perf_counter()
    report = run_benchmark(cfg, threads=args.threads)
    elapsed = time.perf_counter() - start

    args.out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out_dir / "report.csv")
    report.write_summary_csv(args.out_dir / "summary.csv")

    header = f"{'length':>7} {'algo':>5} {'ok':>5} {'mean_err':>9} {'std_err':>9} {'mean_sec':>9}"
    print(header)
    print("-" * len(header))
    for row in report.summarize():
        print(
            f"{row['length']:>7} {row['algorithm']:>5} "
            f"{row['ok']:>2}/{row['trials']:<2} "
            f"{row['mean_error']:>9.4f} {row['std_error']:>9.4f} "
            f"{row['mean_seconds']:>9.3f}"
        )
    print(f"\ntotal wall time: {elapsed:.1f}s; wrote {args.out_dir}/report.csv and summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
