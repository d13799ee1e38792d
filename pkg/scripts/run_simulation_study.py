#!/usr/bin/env python3
"""Run the full simulation study and write the summary tables.

Fits every model variant to replicated synthetic datasets for each
data-generating process and station count, then aggregates MSE, MAD,
coverage and CRPS into per-cell and summary CSVs plus a plain-text table.

At the reference protocol (30 replicates, 20,000 iterations) this is an
overnight job; use --replicates / --n-iter to scale it down.

Usage:
    python scripts/run_simulation_study.py --out study_out --replicates 3 \
        --generations translation diffeomorphism --station-counts 50
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from warpcal import io  # noqa: E402
from warpcal.evaluation import (GENERATIONS, Scenario, StudyConfig,  # noqa: E402
                                aggregate_study, run_study)
from warpcal.inference import VARIANTS  # noqa: E402
from warpcal.spatial import Grid  # noqa: E402


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="study_out", help="output directory")
    parser.add_argument("--seed", type=int, default=2015)
    parser.add_argument("--replicates", type=int, default=30)
    parser.add_argument("--generations", nargs="+", default=list(GENERATIONS),
                        choices=list(GENERATIONS))
    parser.add_argument("--station-counts", nargs="+", type=int, default=[25, 50, 100])
    parser.add_argument("--variants", nargs="+", default=list(VARIANTS),
                        choices=list(VARIANTS))
    parser.add_argument("--nx", type=int, default=64)
    parser.add_argument("--ny", type=int, default=48)
    parser.add_argument("--n-times", type=int, default=5)
    parser.add_argument("--train-frac", type=float, default=0.6)
    parser.add_argument("--n-iter", type=int, default=20000)
    parser.add_argument("--n-burn", type=int, default=10000)
    parser.add_argument("--n-jobs", type=int, default=2)
    return parser.parse_args()


def main():
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    study = StudyConfig(grid=Grid(args.nx, args.ny), n_times=args.n_times,
                        train_frac=args.train_frac, seed=args.seed,
                        n_iter=args.n_iter, n_burn=args.n_burn, n_jobs=args.n_jobs)
    scenarios = [Scenario(gen, n) for gen in args.generations
                 for n in args.station_counts]
    n_fits = len(scenarios) * len(args.variants) * args.replicates
    print(f"{len(scenarios)} scenarios x {len(args.variants)} variants "
          f"x {args.replicates} replicates = {n_fits} fits")
    started = time.time()
    rows = run_study(scenarios, args.variants, args.replicates, study)
    table = aggregate_study(rows)
    io.write_study_cells_csv(out / "study_cells.csv", rows)
    io.write_study_summary_csv(out / "study_summary.csv", table)
    (out / "study_summary.txt").write_text(io.format_study_text(table, args.variants))
    failed = sum(1 for r in rows if r.get("error"))
    print(f"done in {time.time() - started:.0f}s; {failed} flagged failures")
    print((out / "study_summary.txt").read_text())


if __name__ == "__main__":
    main()
